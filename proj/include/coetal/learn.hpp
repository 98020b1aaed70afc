#pragma once

#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "coetal/align.hpp"
#include "coetal/datapack.hpp"
#include "coetal/providers.hpp"
#include "coetal/stpe.hpp"
#include "coetal/textfuse.hpp"

namespace coetal::learn {

struct LossConfig {
    double epsilon = 1e-6;     // guards the balance-coefficient divisor
    double clamp_delta = 1e-7; // probabilities clamped to [delta, 1-delta] before logs
    void validate() const;
};

// k_fg = min(t, t/(t_fg + eps)), k_bg = min(t, t/(t_bg + eps))
std::pair<double, double> balance_coeffs(const Vec& y, double epsilon);

// L = -k_fg * sum_i y_i log p_i  -  k_bg * sum_i (1-y_i) log(1-p_i), sums not means.
double balanced_loss(const Vec& p_hat, const Vec& y, const LossConfig& cfg);

struct ModelConfig {
    stpe::PyramidConfig pyramid; // carries dim
    int provider_dim = 16;
    int shots = 2;
    int head_hidden = 16;

    void validate() const;
    nlohmann::json to_json() const;
    static ModelConfig from_json(const nlohmann::json& j);
};

struct ModelParams {
    ModelConfig cfg;
    stpe::StpeParams stpe;
    textfuse::TextFuseParams text;
    align::AlignParams align;

    static ModelParams zeros(const ModelConfig& cfg);
    static ModelParams init(const ModelConfig& cfg, Rng& rng);
    void visit(const std::function<void(const std::string&, Mat&)>& cb);
    void visit(const std::function<void(const std::string&, const Mat&)>& cb) const;
    // parameter group names and shapes, in visit order
    std::vector<std::string> group_names() const;
};

struct BoundModel {
    stpe::StpeVars stpe;
    textfuse::TextFuseVars text;
    align::AlignVars align;
    std::vector<Var> ordered; // one Var per visit() entry, same order
};

BoundModel bind(Tape& tape, const ModelParams& params);

struct ForwardOptions {
    bool use_text = true; // false forces the video-text map to all-ones
    align::Similarity similarity = align::Similarity::cosine;
};

// Full episode forward: encoder on query and supports, text fusion, the
// three alignment maps, prediction head. Returns T x 1 probabilities.
Var model_probs(Tape& tape, const BoundModel& model, const ModelConfig& cfg,
                const datapack::Episode& episode, EmbeddingProvider& provider,
                const ForwardOptions& options);

Var loss_from_probs(Tape& tape, Var p_hat, const Vec& y, const LossConfig& cfg);

// Plain-value forward convenience (inference path).
Vec model_probs_values(const ModelParams& params, const datapack::Episode& episode,
                       EmbeddingProvider& provider, const ForwardOptions& options);

struct TrainConfig {
    double learning_rate = 5e-6; // corpus presets: 5e-6 (long-video), 1e-6 (short/anomaly)
    int epochs = 30;
    int episodes_per_epoch = 30;
    int batch_size = 4;
    std::uint64_t seed = 42;
    int t_snippets = 20;
    int shots = 2;
    int val_episodes = 16;
    // first-order moment estimates; standard (0.9, 0.999) defaults
    double beta1 = 0.9;
    double beta2 = 0.999;
    double moment_eps = 1e-8;

    void validate() const;
};

struct EpochMetrics {
    int epoch = 0;
    double mean_loss = 0.0;
    std::optional<double> val_map; // mAP at IoU 0.5 on the held-out split
};

struct TrainResult {
    ModelParams params;
    std::vector<EpochMetrics> metrics;
};

// Episodic training: epochs x episodes_per_epoch episodes from the train
// split, gradients averaged over each batch, adaptive-moment first-order
// updates. Deterministic given the seed. Aborts with the offending episode
// id if the loss goes non-finite.
TrainResult train(const datapack::DatasetManifest& manifest, const ModelConfig& model_cfg,
                  const TrainConfig& cfg, const LossConfig& loss_cfg,
                  EmbeddingProvider& provider, const ForwardOptions& options,
                  const std::function<void(const EpochMetrics&)>& on_epoch = {});

struct GroupReport {
    std::string name;
    double max_rel_err = 0.0;
    double max_abs_grad = 0.0;
};

struct FdOptions {
    double step = 1e-5;
    // when set, this group's analytic gradient is perturbed by +1 (negative control)
    std::string corrupt_group;
};

// Central-difference check of every parameter group's analytic gradient on
// one episode. err = |a - d| / max(|a|, |d|, 1e-5) per entry.
std::vector<GroupReport> finite_difference_check(const ModelParams& params,
                                                 const datapack::Episode& episode,
                                                 const LossConfig& loss_cfg,
                                                 EmbeddingProvider& provider,
                                                 const ForwardOptions& options,
                                                 const FdOptions& fd = {});

// Checkpoint directory: header.json plus one .f32/.json tensor pair per
// parameter group, named after the group.
void save_checkpoint(const ModelParams& params, const std::filesystem::path& dir,
                     const nlohmann::json& header_extra = nlohmann::json::object());
ModelParams load_checkpoint(const std::filesystem::path& dir);

} // namespace coetal::learn
