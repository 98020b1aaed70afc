#include "coetal/learn.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "coetal/io.hpp"
#include "coetal/locate.hpp"

namespace coetal::learn {

namespace fs = std::filesystem;
using nlohmann::json;

void LossConfig::validate() const {
    if (!(epsilon > 0.0)) throw std::invalid_argument("loss: epsilon must be > 0");
    if (!(clamp_delta > 0.0 && clamp_delta < 0.5))
        throw std::invalid_argument("loss: clamp_delta must be in (0, 0.5)");
}

std::pair<double, double> balance_coeffs(const Vec& y, double epsilon) {
    const double t = static_cast<double>(y.size());
    if (t < 1.0) throw std::invalid_argument("balance_coeffs: empty mask");
    const double t_fg = y.sum();
    const double t_bg = t - t_fg;
    return {std::min(t, t / (t_fg + epsilon)), std::min(t, t / (t_bg + epsilon))};
}

double balanced_loss(const Vec& p_hat, const Vec& y, const LossConfig& cfg) {
    cfg.validate();
    if (p_hat.size() != y.size()) throw std::invalid_argument("balanced_loss: length mismatch");
    const auto [k_fg, k_bg] = balance_coeffs(y, cfg.epsilon);
    double l_fg = 0.0, l_bg = 0.0;
    for (Eigen::Index i = 0; i < y.size(); ++i) {
        const double p = std::clamp(p_hat(i), cfg.clamp_delta, 1.0 - cfg.clamp_delta);
        l_fg += y(i) * std::log(p);
        l_bg += (1.0 - y(i)) * std::log(1.0 - p);
    }
    return -k_fg * l_fg - k_bg * l_bg;
}

void ModelConfig::validate() const {
    pyramid.validate();
    if (provider_dim < 1) throw std::invalid_argument("model: provider_dim must be >= 1");
    if (shots < 1) throw std::invalid_argument("model: shots must be >= 1");
    if (head_hidden < 1) throw std::invalid_argument("model: head_hidden must be >= 1");
}

json ModelConfig::to_json() const {
    return json{{"dim", pyramid.dim},
                {"levels", pyramid.levels},
                {"m_nodes", pyramid.m_nodes},
                {"n_blocks", pyramid.n_blocks},
                {"ffn_hidden", pyramid.ffn_hidden},
                {"provider_dim", provider_dim},
                {"shots", shots},
                {"head_hidden", head_hidden}};
}

ModelConfig ModelConfig::from_json(const json& j) {
    ModelConfig cfg;
    cfg.pyramid.dim = j.at("dim").get<int>();
    cfg.pyramid.levels = j.at("levels").get<int>();
    cfg.pyramid.m_nodes = j.at("m_nodes").get<int>();
    cfg.pyramid.n_blocks = j.at("n_blocks").get<int>();
    cfg.pyramid.ffn_hidden = j.at("ffn_hidden").get<int>();
    cfg.provider_dim = j.at("provider_dim").get<int>();
    cfg.shots = j.at("shots").get<int>();
    cfg.head_hidden = j.at("head_hidden").get<int>();
    cfg.validate();
    return cfg;
}

ModelParams ModelParams::zeros(const ModelConfig& cfg) {
    cfg.validate();
    ModelParams p;
    p.cfg = cfg;
    p.stpe = stpe::StpeParams::zeros(cfg.pyramid);
    p.text = textfuse::TextFuseParams::zeros(cfg.provider_dim, cfg.pyramid.dim);
    p.align = align::AlignParams::zeros(cfg.pyramid.dim, cfg.shots, cfg.head_hidden);
    return p;
}

ModelParams ModelParams::init(const ModelConfig& cfg, Rng& rng) {
    cfg.validate();
    ModelParams p;
    p.cfg = cfg;
    p.stpe = stpe::StpeParams::init(cfg.pyramid, rng);
    p.text = textfuse::TextFuseParams::init(cfg.provider_dim, cfg.pyramid.dim, rng);
    p.align = align::AlignParams::init(cfg.pyramid.dim, cfg.shots, cfg.head_hidden, rng);
    return p;
}

void ModelParams::visit(const std::function<void(const std::string&, Mat&)>& cb) {
    stpe.visit("stpe.", cb);
    text.visit("text.", cb);
    align.visit("align.", cb);
}

void ModelParams::visit(const std::function<void(const std::string&, const Mat&)>& cb) const {
    stpe.visit("stpe.", cb);
    text.visit("text.", cb);
    align.visit("align.", cb);
}

std::vector<std::string> ModelParams::group_names() const {
    std::vector<std::string> names;
    visit([&names](const std::string& n, const Mat&) { names.push_back(n); });
    return names;
}

BoundModel bind(Tape& tape, const ModelParams& params) {
    BoundModel m;
    m.stpe = stpe::bind(tape, params.stpe);
    m.text = textfuse::bind(tape, params.text);
    m.align = align::bind(tape, params.align);
    // flatten in visit order for gradient extraction
    for (const stpe::BlockVars& b : m.stpe.blocks) {
        for (Var v : b.pyramid_conv) m.ordered.push_back(v);
        m.ordered.insert(m.ordered.end(),
                         {b.temporal_wq, b.temporal_wk, b.temporal_wv, b.semantic_wq,
                          b.semantic_wk, b.semantic_wv, b.ffn_w1, b.ffn_b1, b.ffn_w2, b.ffn_b2});
    }
    m.ordered.insert(m.ordered.end(), {m.text.proj, m.text.wq, m.text.wk, m.text.wv});
    m.ordered.insert(m.ordered.end(),
                     {m.align.fuse_w1, m.align.fuse_b1, m.align.fuse_w2, m.align.fuse_b2,
                      m.align.head_w1, m.align.head_b1, m.align.head_w2, m.align.head_b2});
    return m;
}

Var model_probs(Tape& tape, const BoundModel& model, const ModelConfig& cfg,
                const datapack::Episode& episode, EmbeddingProvider& provider,
                const ForwardOptions& options) {
    if (episode.k() != cfg.shots)
        throw std::invalid_argument("model_probs: episode has " + std::to_string(episode.k()) +
                                    " supports, model expects " + std::to_string(cfg.shots));
    const int t = episode.t();

    Var f_q = stpe::stpe_forward(tape, tape.input(episode.query.features.values), cfg.pyramid,
                                 model.stpe);

    std::vector<Var> combined;
    combined.reserve(static_cast<size_t>(episode.k()));
    for (int k = 0; k < episode.k(); ++k) {
        const datapack::VideoRecord& sup = episode.supports[static_cast<size_t>(k)];
        Var f_s = stpe::stpe_forward(tape, tape.input(sup.features.values), cfg.pyramid,
                                     model.stpe);
        Var m_v = align::alignment_map(tape, f_q, f_s, options.similarity);

        Var m_vt;
        if (options.use_text) {
            if (!sup.texts)
                throw std::invalid_argument("model_probs: support " + sup.video_id +
                                            " has no texts");
            textfuse::EncodedBundle raw = textfuse::encode_bundle_raw(provider, *sup.texts);
            Var f_cap = tape.matmul(tape.input(raw.captions), model.text.proj);
            Var f_coe = tape.matmul(tape.input(raw.coe), model.text.proj);
            Var f_t = textfuse::cross_attend(tape, f_cap, f_coe, model.text.wq, model.text.wk,
                                             model.text.wv);
            Var f_fused = align::fuse_video_text(tape, f_t, f_s, model.align);
            m_vt = align::alignment_map(tape, f_q, f_fused, options.similarity);
        } else {
            m_vt = tape.input(Mat::Ones(t, t));
        }

        Var m_mask = tape.input(
            align::support_background_mask(episode.support_masks[static_cast<size_t>(k)], t));
        combined.push_back(align::combine_maps(tape, m_v, m_vt, m_mask));
    }
    return align::predict_foreground(tape, combined, model.align);
}

Var loss_from_probs(Tape& tape, Var p_hat, const Vec& y, const LossConfig& cfg) {
    cfg.validate();
    if (tape.val(p_hat).rows() != y.size() || tape.val(p_hat).cols() != 1)
        throw std::invalid_argument("loss_from_probs: p_hat must be len(y) x 1");
    const auto [k_fg, k_bg] = balance_coeffs(y, cfg.epsilon);
    Var p = tape.clamp(p_hat, cfg.clamp_delta, 1.0 - cfg.clamp_delta);
    Var y_fg = tape.input(Mat(y));
    Var y_bg = tape.input(Mat(Vec::Ones(y.size()) - y));
    Var one = tape.input(Mat::Ones(y.size(), 1));
    Var l_fg = tape.sum(tape.mul(y_fg, tape.log(p)));
    Var l_bg = tape.sum(tape.mul(y_bg, tape.log(tape.sub(one, p))));
    return tape.add(tape.scale(l_fg, -k_fg), tape.scale(l_bg, -k_bg));
}

Vec model_probs_values(const ModelParams& params, const datapack::Episode& episode,
                       EmbeddingProvider& provider, const ForwardOptions& options) {
    Tape tape;
    BoundModel bound = bind(tape, params);
    Var p = model_probs(tape, bound, params.cfg, episode, provider, options);
    return Vec(tape.val(p).col(0));
}

void TrainConfig::validate() const {
    if (!(learning_rate > 0.0)) throw std::invalid_argument("train: learning_rate must be > 0");
    if (epochs < 1 || episodes_per_epoch < 1 || batch_size < 1)
        throw std::invalid_argument("train: epochs, episodes_per_epoch and batch_size must be positive");
    if (t_snippets < 1) throw std::invalid_argument("train: t_snippets must be >= 1");
    if (shots < 1) throw std::invalid_argument("train: shots must be >= 1");
    if (val_episodes < 0) throw std::invalid_argument("train: val_episodes must be >= 0");
    if (!(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0))
        throw std::invalid_argument("train: moment factors must lie in [0, 1)");
    if (!(moment_eps > 0.0)) throw std::invalid_argument("train: moment_eps must be > 0");
}

namespace {

// flattened gradient buffers aligned with ModelParams::visit order
struct GradBuffers {
    std::vector<Mat> sums;

    explicit GradBuffers(const ModelParams& p) {
        p.visit([this](const std::string&, const Mat& m) {
            sums.push_back(Mat::Zero(m.rows(), m.cols()));
        });
    }
    void add_from(const Tape& tape, const BoundModel& bound) {
        for (size_t i = 0; i < sums.size(); ++i) {
            const Mat& g = tape.grad(bound.ordered[i]);
            if (g.size() > 0) sums[i] += g;
        }
    }
    void scale_all(double c) {
        for (Mat& m : sums) m *= c;
    }
};

struct MomentState {
    std::vector<Mat> m1, m2;
    std::int64_t step = 0;

    explicit MomentState(const ModelParams& p) {
        p.visit([this](const std::string&, const Mat& m) {
            m1.push_back(Mat::Zero(m.rows(), m.cols()));
            m2.push_back(Mat::Zero(m.rows(), m.cols()));
        });
    }
    void apply(ModelParams& p, const std::vector<Mat>& grads, const TrainConfig& cfg) {
        ++step;
        const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(step));
        const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(step));
        size_t i = 0;
        p.visit([&](const std::string& name, Mat& w) {
            m1[i] = cfg.beta1 * m1[i] + (1.0 - cfg.beta1) * grads[i];
            m2[i] = (cfg.beta2 * m2[i].array() +
                     (1.0 - cfg.beta2) * grads[i].array().square()).matrix();
            const Mat mhat = m1[i] / bc1;
            const Mat vhat = m2[i] / bc2;
            w.array() -= cfg.learning_rate * mhat.array() / (vhat.array().sqrt() + cfg.moment_eps);
            if (!all_finite(w))
                throw std::runtime_error("train: non-finite parameters in group " + name);
            ++i;
        });
    }
};

} // namespace

TrainResult train(const datapack::DatasetManifest& manifest, const ModelConfig& model_cfg,
                  const TrainConfig& cfg, const LossConfig& loss_cfg,
                  EmbeddingProvider& provider, const ForwardOptions& options,
                  const std::function<void(const EpochMetrics&)>& on_epoch) {
    cfg.validate();
    loss_cfg.validate();
    if (model_cfg.shots != cfg.shots)
        throw std::invalid_argument("train: model shots != train shots");

    Rng rng(cfg.seed);
    Rng init_rng = rng.child("init");
    ModelParams params = ModelParams::init(model_cfg, init_rng);
    MomentState moments(params);

    // fixed validation set, drawn from an independent stream
    std::vector<datapack::Episode> val_episodes;
    if (cfg.val_episodes > 0) {
        Rng val_rng = rng.child("val");
        try {
            for (int i = 0; i < cfg.val_episodes; ++i)
                val_episodes.push_back(datapack::sample_episode(manifest, datapack::Split::val,
                                                                cfg.shots, cfg.t_snippets,
                                                                val_rng));
        } catch (const datapack::NoEligibleClassError&) {
            val_episodes.clear(); // no eligible validation class; skip the metric
        }
    }
    locate::EvalConfig val_eval;
    val_eval.iou_grid = {0.5};

    TrainResult result{std::move(params), {}};
    for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
        double loss_sum = 0.0;
        int consumed = 0;
        while (consumed < cfg.episodes_per_epoch) {
            const int batch = std::min(cfg.batch_size, cfg.episodes_per_epoch - consumed);
            GradBuffers grads(result.params);
            for (int b = 0; b < batch; ++b) {
                datapack::Episode ep = datapack::sample_episode(
                    manifest, datapack::Split::train, cfg.shots, cfg.t_snippets, rng);
                Tape tape;
                BoundModel bound = bind(tape, result.params);
                Var p = model_probs(tape, bound, model_cfg, ep, provider, options);
                Var loss = loss_from_probs(tape, p, ep.query_mask, loss_cfg);
                const double value = tape.val(loss)(0, 0);
                if (!std::isfinite(value))
                    throw std::runtime_error("train: non-finite loss on episode " +
                                             ep.query.video_id + " (epoch " +
                                             std::to_string(epoch) + ")");
                loss_sum += value;
                tape.backward(loss);
                grads.add_from(tape, bound);
            }
            grads.scale_all(1.0 / batch);
            moments.apply(result.params, grads.sums, cfg);
            consumed += batch;
        }

        EpochMetrics em;
        em.epoch = epoch;
        em.mean_loss = loss_sum / cfg.episodes_per_epoch;
        if (!val_episodes.empty()) {
            const ModelParams& snapshot = result.params;
            locate::EvalReport rep = locate::evaluate(
                val_episodes,
                [&](const datapack::Episode& ep) {
                    return model_probs_values(snapshot, ep, provider, options);
                },
                val_eval);
            em.val_map = rep.map_at.at(0.5);
        }
        result.metrics.push_back(em);
        if (on_epoch) on_epoch(em);
    }
    return result;
}

std::vector<GroupReport> finite_difference_check(const ModelParams& params,
                                                 const datapack::Episode& episode,
                                                 const LossConfig& loss_cfg,
                                                 EmbeddingProvider& provider,
                                                 const ForwardOptions& options,
                                                 const FdOptions& fd) {
    ModelParams work = params;

    const auto loss_value = [&]() {
        Tape tape;
        BoundModel bound = bind(tape, work);
        Var p = model_probs(tape, bound, work.cfg, episode, provider, options);
        Var loss = loss_from_probs(tape, p, episode.query_mask, loss_cfg);
        return tape.val(loss)(0, 0);
    };

    // analytic gradients from a single reverse pass
    std::vector<Mat> analytic;
    {
        Tape tape;
        BoundModel bound = bind(tape, work);
        Var p = model_probs(tape, bound, work.cfg, episode, provider, options);
        Var loss = loss_from_probs(tape, p, episode.query_mask, loss_cfg);
        tape.backward(loss);
        for (Var v : bound.ordered) {
            const Mat& g = tape.grad(v);
            analytic.push_back(g.size() > 0 ? g : Mat::Zero(tape.val(v).rows(), tape.val(v).cols()));
        }
    }

    std::vector<GroupReport> reports;
    size_t group = 0;
    work.visit([&](const std::string& name, Mat& w) {
        Mat a = analytic[group];
        if (name == fd.corrupt_group) a.array() += 1.0;

        GroupReport rep;
        rep.name = name;
        rep.max_abs_grad = a.size() > 0 ? a.cwiseAbs().maxCoeff() : 0.0;
        for (Eigen::Index i = 0; i < w.rows(); ++i) {
            for (Eigen::Index j = 0; j < w.cols(); ++j) {
                const double saved = w(i, j);
                w(i, j) = saved + fd.step;
                const double up = loss_value();
                w(i, j) = saved - fd.step;
                const double down = loss_value();
                w(i, j) = saved;
                const double diff = (up - down) / (2.0 * fd.step);
                const double denom = std::max({std::abs(a(i, j)), std::abs(diff), 1e-5});
                rep.max_rel_err = std::max(rep.max_rel_err, std::abs(a(i, j) - diff) / denom);
            }
        }
        reports.push_back(std::move(rep));
        ++group;
    });
    return reports;
}

void save_checkpoint(const ModelParams& params, const fs::path& dir, const json& header_extra) {
    fs::create_directories(dir);
    json header;
    header["model"] = params.cfg.to_json();
    for (auto it = header_extra.begin(); it != header_extra.end(); ++it)
        header[it.key()] = it.value();
    io::write_text_file(dir / "header.json", header.dump(2) + "\n");
    params.visit([&dir](const std::string& name, const Mat& m) {
        io::write_f32(dir / (name + ".f32"), m);
    });
}

ModelParams load_checkpoint(const fs::path& dir) {
    if (!fs::exists(dir / "header.json"))
        throw std::runtime_error("checkpoint header missing: " + (dir / "header.json").string());
    const json header = io::parse_json_file(dir / "header.json");
    ModelParams params = ModelParams::zeros(ModelConfig::from_json(header.at("model")));
    params.visit([&dir](const std::string& name, Mat& m) {
        const fs::path file = dir / (name + ".f32");
        io::F32File f = io::read_f32(file);
        if (f.values.rows() != m.rows() || f.values.cols() != m.cols())
            throw std::runtime_error("checkpoint tensor shape mismatch: " + file.string());
        m = f.values;
    });
    return params;
}

} // namespace coetal::learn
