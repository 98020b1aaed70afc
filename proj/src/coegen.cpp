#include "coetal/coegen.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <chrono>
#include <map>
#include <sstream>
#include <stdexcept>
#include <thread>

#include <httplib.h>

#include "coetal/io.hpp"
#include "coetal/rng.hpp"

namespace coetal::coegen {

using nlohmann::json;

MockChatClient::MockChatClient(ClientRole role, std::vector<Rule> rules)
    : role_(role), rules_(std::move(rules)) {}

MockChatClient MockChatClient::from_json(const json& doc) {
    const ClientRole role = doc.at("role").get<std::string>() == "vlm" ? ClientRole::vlm
                                                                       : ClientRole::llm;
    std::vector<Rule> rules;
    for (const json& r : doc.at("rules")) {
        Rule rule;
        rule.pattern = r.at("pattern").get<std::string>();
        rule.responses = r.at("responses").get<std::vector<std::string>>();
        if (rule.responses.empty()) throw std::runtime_error("mock client rule has no responses");
        rules.push_back(std::move(rule));
    }
    return MockChatClient(role, std::move(rules));
}

std::string MockChatClient::complete(const std::string& prompt, const std::string& context,
                                     const std::vector<FramePayload>* frames) {
    (void)context;
    (void)frames;
    received_.push_back(prompt);
    for (Rule& rule : rules_) {
        if (rule.pattern == "*" || prompt.find(rule.pattern) != std::string::npos) {
            const size_t idx = std::min(rule.next, rule.responses.size() - 1);
            ++rule.next;
            return rule.responses[idx];
        }
    }
    throw std::runtime_error("mock client: no rule matches prompt");
}

HttpChatClient::HttpChatClient(ClientRole role, HttpOptions options)
    : role_(role), options_(std::move(options)) {
    if (options_.base_url.empty()) throw std::invalid_argument("HttpChatClient: base_url required");
}

std::string HttpChatClient::complete(const std::string& prompt, const std::string& context,
                                     const std::vector<FramePayload>* frames) {
    httplib::Client client(options_.base_url);
    client.set_connection_timeout(std::chrono::duration<double>(options_.timeout_s));
    client.set_read_timeout(std::chrono::duration<double>(options_.timeout_s));
    if (!options_.api_key_env.empty()) {
        if (const char* key = std::getenv(options_.api_key_env.c_str()))
            client.set_default_headers({{"Authorization", std::string("Bearer ") + key}});
    }
    json body{{"prompt", prompt}, {"context", context}};
    if (frames) {
        body["frames"] = json::array();
        for (const FramePayload& f : *frames)
            body["frames"].push_back({{"id", f.id}, {"data", f.data}});
    }
    std::string last_error;
    for (int attempt = 0; attempt <= options_.n_retry; ++attempt) {
        auto res = client.Post("/complete", body.dump(), "application/json");
        if (!res) {
            last_error = "transport error: " + httplib::to_string(res.error());
        } else if (res->status != 200) {
            last_error = "http status " + std::to_string(res->status);
        } else {
            json doc = json::parse(res->body, nullptr, false);
            if (doc.is_discarded() || !doc.contains("text"))
                throw std::runtime_error("chat endpoint returned malformed JSON");
            return doc.at("text").get<std::string>();
        }
        if (attempt < options_.n_retry)
            std::this_thread::sleep_for(std::chrono::milliseconds(50 * (attempt + 1)));
    }
    throw std::runtime_error("chat request failed after " + std::to_string(options_.n_retry + 1) +
                             " attempts (" + last_error + ")");
}

std::string run_stage(const Stage& stage, ChatClient& client,
                      const std::vector<FramePayload>* frames, const StageLogger& log) {
    if (stage.stage_id < 1 || stage.stage_id > 3)
        throw std::invalid_argument("run_stage: stage_id must be 1..3");
    if (stage.stage_id <= 2) {
        if (client.role() != ClientRole::vlm)
            throw std::invalid_argument("run_stage: stages 1-2 need a vision client");
        if (!frames || frames->empty())
            throw std::invalid_argument("run_stage: stages 1-2 need frames");
    } else {
        if (client.role() != ClientRole::llm)
            throw std::invalid_argument("run_stage: stage 3 needs a language client");
        if (stage.inputs.size() != 2)
            throw std::invalid_argument("run_stage: stage 3 needs both earlier outputs");
    }
    std::string context;
    for (size_t i = 0; i < stage.inputs.size(); ++i) {
        if (i > 0) context += "\n\n";
        context += stage.inputs[i];
    }
    const std::string output =
        client.complete(stage.prompt, context, stage.stage_id <= 2 ? frames : nullptr);
    if (log) log(stage.stage_id, fnv1a64(stage.prompt), fnv1a64(output));
    return output;
}

void VerificationConfig::validate() const {
    if (!(alpha > 0.0 && alpha < 1.0)) throw std::invalid_argument("verify: alpha must be in (0,1)");
    if (top_k < 1) throw std::invalid_argument("verify: top_k must be >= 1");
    if (!(fps > 0.0)) throw std::invalid_argument("verify: fps must be > 0");
    if (n_retry < 1) throw std::invalid_argument("verify: n_retry must be >= 1");
    if (min_words < 1) throw std::invalid_argument("verify: min_words must be >= 1");
    if (!(max_repeat_ratio > 0.0 && max_repeat_ratio <= 1.0))
        throw std::invalid_argument("verify: max_repeat_ratio must be in (0,1]");
}

static std::vector<std::string> split_sentences(const std::string& text) {
    std::vector<std::string> sentences;
    std::string cur;
    for (char c : text) {
        if (c == '.' || c == '!' || c == '?') {
            sentences.push_back(cur);
            cur.clear();
        } else {
            cur += c;
        }
    }
    if (!cur.empty()) sentences.push_back(cur);
    return sentences;
}

static std::string trimmed(const std::string& s) {
    size_t b = 0, e = s.size();
    while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
    while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
    return s.substr(b, e - b);
}

FilterResult auto_filter(const std::string& text, const VerificationConfig& cfg) {
    cfg.validate();
    // repetition first: a degenerate echo is "repeat" even when it is short
    std::vector<std::string> sentences;
    for (const std::string& s : split_sentences(text)) {
        const std::string t = trimmed(s);
        if (!t.empty()) sentences.push_back(t);
    }
    if (sentences.size() >= 2) {
        std::map<std::string, int> freq;
        int most = 0;
        for (const std::string& s : sentences) most = std::max(most, ++freq[s]);
        if (static_cast<double>(most) / static_cast<double>(sentences.size()) >
            cfg.max_repeat_ratio)
            return {false, "repeat"};
    }

    int words = 0;
    std::istringstream iss(text);
    std::string tok;
    while (iss >> tok) ++words;
    if (words < cfg.min_words) return {false, "too short"};
    return {true, ""};
}

const std::vector<std::string>& causal_connectors() {
    static const std::vector<std::string> connectors = {
        "which causes", "causing",  "leads to",    "leading to",
        "because",      "therefore", "as a result",
    };
    return connectors;
}

static std::string lowered(const std::string& s) {
    std::string out = s;
    std::transform(out.begin(), out.end(), out.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    return out;
}

static bool is_word_char(char c) {
    return std::isalnum(static_cast<unsigned char>(c)) != 0;
}

// positions inside `sentence` where a connector starts at a word boundary
static std::vector<size_t> connector_positions(const std::string& sentence) {
    const std::string low = lowered(sentence);
    std::vector<size_t> cuts;
    for (const std::string& conn : causal_connectors()) {
        size_t from = 0;
        while (true) {
            const size_t at = low.find(conn, from);
            if (at == std::string::npos) break;
            const bool left_ok = at == 0 || !is_word_char(low[at - 1]);
            const size_t end = at + conn.size();
            const bool right_ok = end >= low.size() || !is_word_char(low[end]);
            if (left_ok && right_ok) cuts.push_back(at);
            from = at + 1;
        }
    }
    std::sort(cuts.begin(), cuts.end());
    cuts.erase(std::unique(cuts.begin(), cuts.end()), cuts.end());
    return cuts;
}

std::vector<std::string> parse_sub_sentences(const std::string& text) {
    if (text.empty()) throw std::invalid_argument("parse_sub_sentences: empty text");
    std::vector<std::string> fragments;
    for (const std::string& sentence : split_sentences(text)) {
        std::vector<size_t> cuts = connector_positions(sentence);
        size_t begin = 0;
        for (size_t cut : cuts) {
            if (cut > begin) {
                const std::string frag = trimmed(sentence.substr(begin, cut - begin));
                if (!frag.empty()) fragments.push_back(frag);
                begin = cut;
            }
        }
        const std::string tail = trimmed(sentence.substr(begin));
        if (!tail.empty()) fragments.push_back(tail);
    }
    if (fragments.empty())
        throw std::runtime_error("parse_sub_sentences: text reduces to zero fragments");
    return fragments;
}

std::vector<SubSentenceScore> consistency_scores(const std::vector<std::string>& sub_sentences,
                                                 const std::vector<FramePayload>& frames,
                                                 EmbeddingProvider& provider,
                                                 const VerificationConfig& cfg) {
    cfg.validate();
    if (frames.empty()) throw std::invalid_argument("consistency_scores: no frames");
    if (sub_sentences.empty()) return {};

    const Mat text_emb = provider.encode_texts(sub_sentences);
    const Mat frame_emb = provider.encode_frames(frames);
    const int take = std::min<int>(cfg.top_k, static_cast<int>(frames.size()));

    std::vector<SubSentenceScore> out;
    out.reserve(sub_sentences.size());
    for (Eigen::Index j = 0; j < text_emb.rows(); ++j) {
        std::vector<double> sims;
        sims.reserve(static_cast<size_t>(frame_emb.rows()));
        const double tn = text_emb.row(j).norm();
        for (Eigen::Index f = 0; f < frame_emb.rows(); ++f) {
            const double fn = frame_emb.row(f).norm();
            const double denom = tn * fn;
            sims.push_back(denom > 0.0 ? text_emb.row(j).dot(frame_emb.row(f)) / denom : 0.0);
        }
        std::partial_sort(sims.begin(), sims.begin() + take, sims.end(), std::greater<>());
        double score = 0.0;
        for (int i = 0; i < take; ++i) score += sims[static_cast<size_t>(i)];
        score /= take;
        out.push_back({sub_sentences[static_cast<size_t>(j)], score, score < cfg.alpha});
    }
    return out;
}

std::string create_refinement_prompt(const std::string& prompt,
                                     const std::vector<std::string>& issues) {
    if (issues.empty()) throw std::invalid_argument("create_refinement_prompt: no issues");
    std::ostringstream out;
    out << prompt << "\n\nThe following parts of the previous answer did not match the video:\n";
    for (size_t i = 0; i < issues.size(); ++i)
        out << "  " << (i + 1) << ". " << issues[i] << "\n";
    out << "Revise only these parts, keeping the entities, scenes, and temporal flow of the "
           "rest of the answer unchanged.";
    return out.str();
}

static bool starts_with_connector(const std::string& fragment) {
    const std::string low = lowered(fragment);
    for (const std::string& conn : causal_connectors()) {
        if (low.size() >= conn.size() && low.compare(0, conn.size(), conn) == 0) {
            if (low.size() == conn.size() || !is_word_char(low[conn.size()])) return true;
        }
    }
    return false;
}

CoEDocument parse_coe_document(const std::string& text) {
    CoEDocument doc;
    doc.raw_text = text;
    const std::vector<std::string> fragments = parse_sub_sentences(text);
    for (size_t i = 0; i < fragments.size(); ++i) {
        CoEElement el;
        el.text = fragments[i];
        if (i > 0 && starts_with_connector(fragments[i])) {
            el.kind = CoEElement::Kind::causal_link;
            el.cause_index = static_cast<int>(i) - 1;
            el.effect_index = static_cast<int>(i);
        }
        doc.elements.push_back(std::move(el));
    }
    return doc;
}

HumanReviewQueue::HumanReviewQueue(std::optional<std::filesystem::path> path)
    : path_(std::move(path)) {}

void HumanReviewQueue::add(const std::string& video_id, int stage_id, const std::string& text,
                           const std::vector<std::string>& flagged, int attempts) {
    std::lock_guard<std::mutex> lock(mutex_);
    ++count_;
    if (path_)
        io::append_jsonl(*path_, json{{"video_id", video_id},
                                      {"stage_id", stage_id},
                                      {"text", text},
                                      {"flagged", flagged},
                                      {"attempts", attempts}});
}

size_t HumanReviewQueue::size() const {
    std::lock_guard<std::mutex> lock(mutex_);
    return count_;
}

PipelinePrompts PipelinePrompts::defaults() {
    PipelinePrompts p;
    p.stage1 = "Describe the video in detail, covering every visible event in the order it "
               "happens.";
    p.stage2 = "From the detailed description, extract only the key actions or unusual events, "
               "dropping redundant scenery details.";
    p.stage3 = "Using the detailed description and the key events, write a chain of evidence: "
               "state each event in order and connect consecutive events with causal phrases "
               "such as 'which causes' or 'leads to'.";
    return p;
}

const char* disposition_name(Disposition d) {
    switch (d) {
    case Disposition::accepted: return "accepted";
    case Disposition::refined: return "refined";
    case Disposition::human_review: return "human_review";
    }
    throw std::logic_error("bad disposition");
}

namespace {

struct StageOutcome {
    bool ok = false;
    std::string output;
    int attempts = 0;
    std::vector<SubSentenceScore> scores;
    std::vector<std::string> last_flagged;
    std::string fail_reason;
};

StageOutcome run_verified_stage(int stage_id, const std::string& base_prompt,
                                const std::vector<std::string>& inputs, ChatClient& client,
                                const std::vector<FramePayload>& frames,
                                EmbeddingProvider& provider, const VerificationConfig& cfg,
                                const StageLogger& log) {
    StageOutcome outcome;
    std::string prompt = base_prompt;
    for (int attempt = 1; attempt <= cfg.n_retry; ++attempt) {
        outcome.attempts = attempt;
        Stage stage{stage_id, prompt, inputs};
        outcome.output = run_stage(stage, client, stage_id <= 2 ? &frames : nullptr, log);

        const FilterResult filtered = auto_filter(outcome.output, cfg);
        std::vector<std::string> issues;
        if (!filtered.pass) {
            outcome.fail_reason = filtered.reason;
            issues.push_back("the whole answer (" + filtered.reason + ")");
            outcome.scores.clear();
        } else {
            const std::vector<std::string> subs = parse_sub_sentences(outcome.output);
            outcome.scores = consistency_scores(subs, frames, provider, cfg);
            for (const SubSentenceScore& s : outcome.scores)
                if (s.flagged) issues.push_back(s.text);
            if (!issues.empty()) outcome.fail_reason = "inconsistent";
        }

        if (issues.empty()) {
            outcome.ok = true;
            outcome.last_flagged.clear();
            return outcome;
        }
        outcome.last_flagged = issues;
        if (attempt < cfg.n_retry) prompt = create_refinement_prompt(prompt, issues);
    }
    return outcome;
}

} // namespace

PipelineResult generate_and_verify(const std::string& video_id,
                                   const std::vector<FramePayload>& frames, ChatClient& vlm,
                                   ChatClient& llm, const PipelinePrompts& prompts,
                                   EmbeddingProvider& provider, const VerificationConfig& cfg,
                                   HumanReviewQueue& queue, const StageLogger& log) {
    cfg.validate();
    PipelineResult result;
    result.report.per_stage_attempts.assign(3, 0);

    std::vector<std::string> outputs;
    const std::array<const std::string*, 3> stage_prompts = {&prompts.stage1, &prompts.stage2,
                                                             &prompts.stage3};
    for (int stage_id = 1; stage_id <= 3; ++stage_id) {
        std::vector<std::string> inputs;
        if (stage_id == 2) inputs = {outputs[0]};
        if (stage_id == 3) inputs = {outputs[0], outputs[1]};
        ChatClient& client = stage_id <= 2 ? vlm : llm;

        StageOutcome outcome =
            run_verified_stage(stage_id, *stage_prompts[static_cast<size_t>(stage_id - 1)],
                               inputs, client, frames, provider, cfg, log);
        result.report.per_stage_attempts[static_cast<size_t>(stage_id - 1)] = outcome.attempts;
        result.report.attempts = std::max(result.report.attempts, outcome.attempts);

        if (!outcome.ok) {
            queue.add(video_id, stage_id, outcome.output, outcome.last_flagged, outcome.attempts);
            result.report.pass = false;
            result.report.disposition = Disposition::human_review;
            result.report.fail_reason = outcome.fail_reason;
            result.report.scores = std::move(outcome.scores);
            result.document.raw_text = outcome.output;
            return result;
        }
        outputs.push_back(outcome.output);
        if (stage_id == 3) result.report.scores = outcome.scores;
    }

    result.report.pass = true;
    result.report.disposition =
        result.report.attempts > 1 ? Disposition::refined : Disposition::accepted;
    result.document = parse_coe_document(outputs[2]);
    result.document.scores = result.report.scores;
    return result;
}

} // namespace coetal::coegen
