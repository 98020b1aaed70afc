#pragma once

#include <filesystem>
#include <functional>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "coetal/providers.hpp"

namespace coetal::coegen {

enum class ClientRole { vlm, llm };

// Completion interface for the staged pipeline. `frames` accompany the
// request for vision-language clients only.
class ChatClient {
  public:
    virtual ~ChatClient() = default;
    virtual ClientRole role() const = 0;
    virtual std::string complete(const std::string& prompt, const std::string& context,
                                 const std::vector<FramePayload>* frames) = 0;
};

// Scripted client: rules of (pattern, canned responses). The first rule
// whose pattern is a substring of the prompt ("*" matches anything) answers;
// its responses are consumed in order and the last one repeats. Received
// prompts are recorded for assertions.
class MockChatClient final : public ChatClient {
  public:
    struct Rule {
        std::string pattern;
        std::vector<std::string> responses;
        size_t next = 0;
    };

    MockChatClient(ClientRole role, std::vector<Rule> rules);
    // script file: {"role": "vlm|llm", "rules": [{"pattern", "responses": [...]}]}
    static MockChatClient from_json(const nlohmann::json& doc);

    ClientRole role() const override { return role_; }
    std::string complete(const std::string& prompt, const std::string& context,
                         const std::vector<FramePayload>* frames) override;

    const std::vector<std::string>& received_prompts() const { return received_; }

  private:
    ClientRole role_;
    std::vector<Rule> rules_;
    std::vector<std::string> received_;
};

// JSON-over-HTTP client:
//   POST /complete {"prompt","context","frames"?: [{"id","data"}]} -> {"text"}
class HttpChatClient final : public ChatClient {
  public:
    HttpChatClient(ClientRole role, HttpOptions options);
    ClientRole role() const override { return role_; }
    std::string complete(const std::string& prompt, const std::string& context,
                         const std::vector<FramePayload>* frames) override;

  private:
    ClientRole role_;
    HttpOptions options_;
};

// One reasoning stage: its prompt, the prior outputs it consumes, and its
// completion.
struct Stage {
    int stage_id = 1; // 1..3
    std::string prompt;
    std::vector<std::string> inputs; // stage 3 carries both earlier outputs
};

using StageLogger =
    std::function<void(int stage_id, std::uint64_t prompt_hash, std::uint64_t output_hash)>;

// Runs one stage and returns the completion verbatim. Stages 1-2 need a
// vision client with frames; stage 3 needs a language client and both prior
// outputs.
std::string run_stage(const Stage& stage, ChatClient& client,
                      const std::vector<FramePayload>* frames, const StageLogger& log = {});

struct VerificationConfig {
    double alpha = 0.2;            // consistency threshold; calibrate on a seed set
    int top_k = 3;                 // similarities averaged per sub-sentence
    double fps = 1.0;              // frame sampling rate
    int n_retry = 5;               // generation attempts per stage
    int min_words = 5;             // auto-filter: shorter texts fail
    double max_repeat_ratio = 0.5; // auto-filter: most frequent sentence share

    void validate() const;
};

struct FilterResult {
    bool pass = false;
    std::string reason; // "too short" or "repeat" on failure
};

// Fails texts under min_words or, when there are at least two sentences,
// texts whose most frequent sentence exceeds max_repeat_ratio of them.
FilterResult auto_filter(const std::string& text, const VerificationConfig& cfg);

// Connectors that split causal clauses apart, checked case-insensitively at
// word boundaries.
const std::vector<std::string>& causal_connectors();

// Splits on sentence punctuation (. ! ?) and before causal connectors inside
// sentences; fragments are whitespace-trimmed and empties dropped. Throws
// when nothing remains.
std::vector<std::string> parse_sub_sentences(const std::string& text);

struct SubSentenceScore {
    std::string text;
    double score = 0.0;
    bool flagged = false; // score < alpha
};

// score_j = mean of the top-min(top_k, N_frame) cosine similarities between
// sub-sentence j and the frame embeddings.
std::vector<SubSentenceScore> consistency_scores(const std::vector<std::string>& sub_sentences,
                                                 const std::vector<FramePayload>& frames,
                                                 EmbeddingProvider& provider,
                                                 const VerificationConfig& cfg);

// Deterministic template carrying the original prompt, the flagged fragments
// verbatim in order, and the revise-only-these instruction.
std::string create_refinement_prompt(const std::string& prompt,
                                     const std::vector<std::string>& issues);

// Chain element: a standalone event clause, or a causal link tying the
// previous clause (cause_index) to this one (effect_index). Indices number
// the clauses in textual order.
struct CoEElement {
    enum class Kind { event, causal_link };
    Kind kind = Kind::event;
    std::string text;
    int cause_index = -1;
    int effect_index = -1;
};

struct CoEDocument {
    std::string raw_text;
    std::vector<CoEElement> elements;
    std::vector<SubSentenceScore> scores;
};

// A fragment opening with a causal connector becomes a link from the
// preceding clause; a leading connector with no predecessor stays an event.
CoEDocument parse_coe_document(const std::string& text);

// Append-only JSONL store {video_id, stage_id, text, flagged, attempts};
// safe for concurrent appenders.
class HumanReviewQueue {
  public:
    explicit HumanReviewQueue(std::optional<std::filesystem::path> path = std::nullopt);
    void add(const std::string& video_id, int stage_id, const std::string& text,
             const std::vector<std::string>& flagged, int attempts);
    size_t size() const;

  private:
    std::optional<std::filesystem::path> path_;
    mutable std::mutex mutex_;
    size_t count_ = 0;
};

struct PipelinePrompts {
    std::string stage1;
    std::string stage2;
    std::string stage3;

    static PipelinePrompts defaults();
};

enum class Disposition { accepted, refined, human_review };

const char* disposition_name(Disposition d);

struct VerificationReport {
    bool pass = false;
    std::vector<SubSentenceScore> scores; // final stage-3 sub-sentence scores
    std::vector<int> per_stage_attempts;  // attempts actually spent per stage
    int attempts = 0;                     // max over stages
    Disposition disposition = Disposition::human_review;
    std::string fail_reason;
};

struct PipelineResult {
    CoEDocument document;
    VerificationReport report;
};

// Three-stage generate -> filter -> consistency-check loop with refinement
// prompts and a bounded retry budget per stage; exhausting the budget routes
// the item to the review queue.
PipelineResult generate_and_verify(const std::string& video_id,
                                   const std::vector<FramePayload>& frames, ChatClient& vlm,
                                   ChatClient& llm, const PipelinePrompts& prompts,
                                   EmbeddingProvider& provider, const VerificationConfig& cfg,
                                   HumanReviewQueue& queue, const StageLogger& log = {});

} // namespace coetal::coegen
