#pragma once

#include <filesystem>
#include <memory>
#include <optional>
#include <string>

#include <nlohmann/json.hpp>

#include "coetal/align.hpp"
#include "coetal/coegen.hpp"
#include "coetal/datapack.hpp"
#include "coetal/learn.hpp"
#include "coetal/locate.hpp"
#include "coetal/providers.hpp"

namespace coetal::config {

struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct ClientConfig {
    std::string type = "mock"; // "mock" | "http"
    std::optional<std::filesystem::path> script; // mock rule file
    HttpOptions http;
};

struct ProviderConfig {
    std::string type = "mock"; // "mock" | "http"
    int dim = 16;
    std::uint64_t seed = 7;
    HttpOptions http;
};

// The single configuration document. Unknown keys anywhere in the file are
// rejected; `hash` is FNV-1a over the canonical serialized form and is
// embedded in every output the commands write.
struct RunConfig {
    std::uint64_t seed = 42;
    std::string out_dir = "runs/out";

    datapack::SyntheticConfig synth;
    stpe::PyramidConfig pyramid; // dim comes from datapack.dim
    ProviderConfig provider;
    align::Similarity similarity = align::Similarity::cosine;
    bool use_text = true;
    int head_hidden = 16;
    learn::TrainConfig train;
    learn::LossConfig loss;
    locate::EvalConfig eval;
    coegen::VerificationConfig verify;
    ClientConfig vlm;
    ClientConfig llm;
    coegen::PipelinePrompts prompts = coegen::PipelinePrompts::defaults();

    std::string hash; // 16 hex chars

    learn::ModelConfig model_config() const;
    learn::ForwardOptions forward_options() const;
};

// Parses a JSONC document, validates keys and invariants, applies defaults.
RunConfig load_config(const std::filesystem::path& path);
RunConfig config_from_json(const nlohmann::json& doc);

// Factories honoring the provider/client sections. The mock chat client
// falls back to a single echo rule when no script file is configured.
std::unique_ptr<EmbeddingProvider> make_provider(const RunConfig& cfg);
std::unique_ptr<coegen::ChatClient> make_chat_client(const ClientConfig& cfg,
                                                     coegen::ClientRole role);

} // namespace coetal::config
