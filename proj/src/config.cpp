#include "coetal/config.hpp"

#include <map>
#include <set>
#include <sstream>

#include "coetal/io.hpp"

namespace coetal::config {

using nlohmann::json;

namespace {

// allowed keys per config object; leaves map to an empty set
const std::map<std::string, std::set<std::string>>& schema() {
    static const std::map<std::string, std::set<std::string>> s = {
        {"", {"seed", "out_dir", "datapack", "stpe", "textfuse", "align", "learn", "locate",
              "coegen"}},
        {"datapack",
         {"classes", "videos_per_class", "t_snippets", "dim", "mu", "fg_sigma", "bg_sigma",
          "scene_coef", "duration_s", "min_event_len", "max_event_len", "splits"}},
        {"stpe", {"levels", "m_nodes", "n_blocks", "ffn_hidden"}},
        {"textfuse", {"provider", "provider_dim", "provider_seed", "http"}},
        {"align", {"head_hidden", "similarity", "use_text"}},
        {"learn",
         {"learning_rate", "epochs", "episodes_per_epoch", "batch_size", "shots", "val_episodes",
          "epsilon", "clamp_delta", "beta1", "beta2", "moment_eps"}},
        {"locate", {"thresholds", "min_len", "snms_iou", "snms_min_score", "iou_grid"}},
        {"coegen",
         {"alpha", "top_k", "fps", "n_retry", "min_words", "max_repeat_ratio", "vlm", "llm",
          "prompts"}},
        {"coegen.vlm", {"type", "script", "http"}},
        {"coegen.llm", {"type", "script", "http"}},
        {"coegen.prompts", {"stage1", "stage2", "stage3"}},
        {"http", {"base_url", "timeout_s", "n_retry", "api_key_env"}},
    };
    return s;
}

void check_keys(const json& obj, const std::string& section) {
    if (!obj.is_object()) throw ConfigError("config section '" + section + "' must be an object");
    const auto it = schema().find(section);
    if (it == schema().end()) return;
    for (auto kv = obj.begin(); kv != obj.end(); ++kv) {
        if (it->second.find(kv.key()) == it->second.end())
            throw ConfigError("unknown config key '" +
                              (section.empty() ? kv.key() : section + "." + kv.key()) + "'");
    }
}

template <typename T>
T get_or(const json& obj, const std::string& key, T fallback) {
    if (!obj.contains(key)) return fallback;
    try {
        return obj.at(key).get<T>();
    } catch (const json::exception&) {
        throw ConfigError("config key '" + key + "' has the wrong type");
    }
}

HttpOptions parse_http(const json& obj, const HttpOptions& defaults) {
    check_keys(obj, "http");
    HttpOptions h = defaults;
    h.base_url = get_or<std::string>(obj, "base_url", h.base_url);
    h.timeout_s = get_or<double>(obj, "timeout_s", h.timeout_s);
    h.n_retry = get_or<int>(obj, "n_retry", h.n_retry);
    h.api_key_env = get_or<std::string>(obj, "api_key_env", h.api_key_env);
    return h;
}

ClientConfig parse_client(const json& obj, const std::string& section) {
    check_keys(obj, section);
    ClientConfig c;
    c.type = get_or<std::string>(obj, "type", c.type);
    if (c.type != "mock" && c.type != "http")
        throw ConfigError(section + ".type must be 'mock' or 'http'");
    if (obj.contains("script")) c.script = obj.at("script").get<std::string>();
    if (obj.contains("http")) c.http = parse_http(obj.at("http"), c.http);
    if (c.type == "http" && c.http.base_url.empty())
        throw ConfigError(section + ": http client needs http.base_url");
    return c;
}

} // namespace

learn::ModelConfig RunConfig::model_config() const {
    learn::ModelConfig m;
    m.pyramid = pyramid;
    m.provider_dim = provider.dim;
    m.shots = train.shots;
    m.head_hidden = head_hidden;
    return m;
}

learn::ForwardOptions RunConfig::forward_options() const {
    learn::ForwardOptions o;
    o.use_text = use_text;
    o.similarity = similarity;
    return o;
}

RunConfig config_from_json(const json& doc) {
    check_keys(doc, "");
    RunConfig cfg;
    cfg.seed = get_or<std::uint64_t>(doc, "seed", cfg.seed);
    cfg.out_dir = get_or<std::string>(doc, "out_dir", cfg.out_dir);

    if (doc.contains("datapack")) {
        const json& d = doc.at("datapack");
        check_keys(d, "datapack");
        cfg.synth.classes = get_or<int>(d, "classes", cfg.synth.classes);
        cfg.synth.videos_per_class = get_or<int>(d, "videos_per_class", cfg.synth.videos_per_class);
        cfg.synth.t_snippets = get_or<int>(d, "t_snippets", cfg.synth.t_snippets);
        cfg.synth.dim = get_or<int>(d, "dim", cfg.synth.dim);
        cfg.synth.mu = get_or<double>(d, "mu", cfg.synth.mu);
        cfg.synth.fg_sigma = get_or<double>(d, "fg_sigma", cfg.synth.fg_sigma);
        cfg.synth.bg_sigma = get_or<double>(d, "bg_sigma", cfg.synth.bg_sigma);
        cfg.synth.scene_coef = get_or<double>(d, "scene_coef", cfg.synth.scene_coef);
        cfg.synth.duration_s = get_or<double>(d, "duration_s", cfg.synth.duration_s);
        cfg.synth.min_event_len = get_or<int>(d, "min_event_len", cfg.synth.min_event_len);
        cfg.synth.max_event_len = get_or<int>(d, "max_event_len", cfg.synth.max_event_len);
        if (d.contains("splits")) {
            for (auto it = d.at("splits").begin(); it != d.at("splits").end(); ++it)
                cfg.synth.splits[std::stoi(it.key())] =
                    datapack::split_from_name(it.value().get<std::string>());
        }
    }

    cfg.pyramid.dim = cfg.synth.dim;
    if (doc.contains("stpe")) {
        const json& s = doc.at("stpe");
        check_keys(s, "stpe");
        cfg.pyramid.levels = get_or<int>(s, "levels", cfg.pyramid.levels);
        cfg.pyramid.m_nodes = get_or<int>(s, "m_nodes", cfg.pyramid.m_nodes);
        cfg.pyramid.n_blocks = get_or<int>(s, "n_blocks", cfg.pyramid.n_blocks);
        cfg.pyramid.ffn_hidden = get_or<int>(s, "ffn_hidden", cfg.pyramid.ffn_hidden);
    }

    if (doc.contains("textfuse")) {
        const json& t = doc.at("textfuse");
        check_keys(t, "textfuse");
        cfg.provider.type = get_or<std::string>(t, "provider", cfg.provider.type);
        if (cfg.provider.type != "mock" && cfg.provider.type != "http")
            throw ConfigError("textfuse.provider must be 'mock' or 'http'");
        cfg.provider.dim = get_or<int>(t, "provider_dim", cfg.provider.dim);
        cfg.provider.seed = get_or<std::uint64_t>(t, "provider_seed", cfg.provider.seed);
        if (t.contains("http")) cfg.provider.http = parse_http(t.at("http"), cfg.provider.http);
        if (cfg.provider.type == "http" && cfg.provider.http.base_url.empty())
            throw ConfigError("textfuse: http provider needs http.base_url");
    }

    if (doc.contains("align")) {
        const json& a = doc.at("align");
        check_keys(a, "align");
        cfg.head_hidden = get_or<int>(a, "head_hidden", cfg.head_hidden);
        cfg.use_text = get_or<bool>(a, "use_text", cfg.use_text);
        if (a.contains("similarity"))
            cfg.similarity = align::similarity_from_name(a.at("similarity").get<std::string>());
    }

    if (doc.contains("learn")) {
        const json& l = doc.at("learn");
        check_keys(l, "learn");
        cfg.train.learning_rate = get_or<double>(l, "learning_rate", cfg.train.learning_rate);
        cfg.train.epochs = get_or<int>(l, "epochs", cfg.train.epochs);
        cfg.train.episodes_per_epoch =
            get_or<int>(l, "episodes_per_epoch", cfg.train.episodes_per_epoch);
        cfg.train.batch_size = get_or<int>(l, "batch_size", cfg.train.batch_size);
        cfg.train.shots = get_or<int>(l, "shots", cfg.train.shots);
        cfg.train.val_episodes = get_or<int>(l, "val_episodes", cfg.train.val_episodes);
        cfg.loss.epsilon = get_or<double>(l, "epsilon", cfg.loss.epsilon);
        cfg.loss.clamp_delta = get_or<double>(l, "clamp_delta", cfg.loss.clamp_delta);
        cfg.train.beta1 = get_or<double>(l, "beta1", cfg.train.beta1);
        cfg.train.beta2 = get_or<double>(l, "beta2", cfg.train.beta2);
        cfg.train.moment_eps = get_or<double>(l, "moment_eps", cfg.train.moment_eps);
    }
    cfg.train.seed = cfg.seed;
    cfg.train.t_snippets = cfg.synth.t_snippets;

    if (doc.contains("locate")) {
        const json& lo = doc.at("locate");
        check_keys(lo, "locate");
        if (lo.contains("thresholds"))
            cfg.eval.thresholds = lo.at("thresholds").get<std::vector<double>>();
        cfg.eval.min_len = get_or<int>(lo, "min_len", cfg.eval.min_len);
        cfg.eval.snms_iou = get_or<double>(lo, "snms_iou", cfg.eval.snms_iou);
        cfg.eval.snms_min_score = get_or<double>(lo, "snms_min_score", cfg.eval.snms_min_score);
        if (lo.contains("iou_grid"))
            cfg.eval.iou_grid = lo.at("iou_grid").get<std::vector<double>>();
    }

    if (doc.contains("coegen")) {
        const json& c = doc.at("coegen");
        check_keys(c, "coegen");
        cfg.verify.alpha = get_or<double>(c, "alpha", cfg.verify.alpha);
        cfg.verify.top_k = get_or<int>(c, "top_k", cfg.verify.top_k);
        cfg.verify.fps = get_or<double>(c, "fps", cfg.verify.fps);
        cfg.verify.n_retry = get_or<int>(c, "n_retry", cfg.verify.n_retry);
        cfg.verify.min_words = get_or<int>(c, "min_words", cfg.verify.min_words);
        cfg.verify.max_repeat_ratio =
            get_or<double>(c, "max_repeat_ratio", cfg.verify.max_repeat_ratio);
        if (c.contains("vlm")) cfg.vlm = parse_client(c.at("vlm"), "coegen.vlm");
        if (c.contains("llm")) cfg.llm = parse_client(c.at("llm"), "coegen.llm");
        if (c.contains("prompts")) {
            const json& p = c.at("prompts");
            check_keys(p, "coegen.prompts");
            cfg.prompts.stage1 = get_or<std::string>(p, "stage1", cfg.prompts.stage1);
            cfg.prompts.stage2 = get_or<std::string>(p, "stage2", cfg.prompts.stage2);
            cfg.prompts.stage3 = get_or<std::string>(p, "stage3", cfg.prompts.stage3);
        }
    }

    try {
        cfg.synth.validate();
        cfg.pyramid.validate();
        cfg.train.validate();
        cfg.loss.validate();
        cfg.eval.validate();
        cfg.verify.validate();
        cfg.model_config().validate();
    } catch (const std::exception& e) {
        throw ConfigError(e.what());
    }

    std::ostringstream hex;
    hex << std::hex << fnv1a64(doc.dump());
    cfg.hash = hex.str();
    return cfg;
}

RunConfig load_config(const std::filesystem::path& path) {
    json doc;
    try {
        doc = io::parse_json_file(path);
    } catch (const std::exception& e) {
        throw ConfigError(e.what());
    }
    return config_from_json(doc);
}

std::unique_ptr<EmbeddingProvider> make_provider(const RunConfig& cfg) {
    if (cfg.provider.type == "mock")
        return std::make_unique<MockEmbedder>(cfg.provider.dim, cfg.provider.seed);
    return std::make_unique<HttpEmbeddingProvider>(cfg.provider.http, cfg.provider.dim);
}

std::unique_ptr<coegen::ChatClient> make_chat_client(const ClientConfig& cfg,
                                                     coegen::ClientRole role) {
    if (cfg.type == "http") return std::make_unique<coegen::HttpChatClient>(role, cfg.http);
    if (cfg.script) {
        if (!std::filesystem::exists(*cfg.script))
            throw ConfigError("chat client script not found: " + cfg.script->string());
        json doc = io::parse_json_file(*cfg.script);
        doc["role"] = role == coegen::ClientRole::vlm ? "vlm" : "llm";
        return std::make_unique<coegen::MockChatClient>(coegen::MockChatClient::from_json(doc));
    }
    // no script: echo a fixed, well-formed answer so smoke runs work offline
    std::vector<coegen::MockChatClient::Rule> rules = {
        {"*",
         {"A person walks into view and performs the expected action. The action runs its "
          "course, which causes the scene to settle afterwards."},
         0}};
    return std::make_unique<coegen::MockChatClient>(role, std::move(rules));
}

} // namespace coetal::config
