// Acceptance suite: one line per criterion, non-zero exit on any failure.
// Tolerances are fixed here, not tuned at runtime.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <iostream>
#include <set>
#include <sstream>
#include <vector>

#include "coetal/cli.hpp"
#include "coetal/coegen.hpp"
#include "coetal/config.hpp"
#include "coetal/io.hpp"
#include "coetal/learn.hpp"
#include "coetal/locate.hpp"
#include "coetal/stpe.hpp"
#include "coetal/textfuse.hpp"

using namespace coetal;
namespace fs = std::filesystem;

namespace {

int failures = 0;

void run_criterion(const char* name, const std::function<void()>& body) {
    const auto start = std::chrono::steady_clock::now();
    std::string error;
    try {
        body();
    } catch (const std::exception& e) {
        error = e.what();
    }
    const double secs =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    if (error.empty()) {
        std::printf("[PASS] %-28s (%.2fs)\n", name, secs);
    } else {
        std::printf("[FAIL] %-28s (%.2fs): %s\n", name, secs, error.c_str());
        ++failures;
    }
    std::fflush(stdout);
}

#define REQUIRE(cond, msg)                                                                     \
    do {                                                                                       \
        if (!(cond)) throw std::runtime_error(std::string("line ") + std::to_string(__LINE__) + \
                                              ": " + (msg));                                   \
    } while (0)

Mat random_mat(int r, int c, Rng& rng) {
    Mat m(r, c);
    for (int i = 0; i < r; ++i)
        for (int j = 0; j < c; ++j) m(i, j) = rng.uniform(-1.0, 1.0);
    return m;
}

Mat dense_masked_attention(const Mat& flat, const Mat& wq, const Mat& wk, const Mat& wv,
                           const std::vector<std::vector<int>>& allowed) {
    const double scale = 1.0 / std::sqrt(static_cast<double>(wq.cols()));
    const Mat q = flat * wq;
    const Mat k = flat * wk;
    const Mat v = flat * wv;
    Mat out = Mat::Zero(flat.rows(), wv.cols());
    for (Eigen::Index i = 0; i < flat.rows(); ++i) {
        Eigen::VectorXd logits = Eigen::VectorXd::Constant(flat.rows(), -1e300);
        for (int j : allowed[static_cast<size_t>(i)])
            logits(j) = scale * q.row(i).dot(k.row(j));
        Eigen::VectorXd w = (logits.array() - logits.maxCoeff()).exp();
        for (Eigen::Index j = 0; j < flat.rows(); ++j)
            if (logits(j) <= -1e299) w(j) = 0.0;
        w /= w.sum();
        for (Eigen::Index j = 0; j < flat.rows(); ++j) out.row(i) += w(j) * v.row(j);
    }
    return out;
}

fs::path scratch(const std::string& tag) {
    const fs::path p = fs::temp_directory_path() / ("coetal_accept_" + tag);
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

datapack::SyntheticConfig learnability_dataset() {
    datapack::SyntheticConfig cfg;
    cfg.classes = 3;
    cfg.videos_per_class = 6;
    cfg.t_snippets = 20;
    cfg.dim = 8;
    cfg.mu = 4.0;
    cfg.fg_sigma = 1.0;
    cfg.bg_sigma = 1.0;
    cfg.splits = {{0, datapack::Split::train},
                  {1, datapack::Split::train},
                  {2, datapack::Split::val}};
    return cfg;
}

learn::TrainConfig learnability_train() {
    learn::TrainConfig cfg;
    cfg.learning_rate = 1e-3;
    cfg.epochs = 30;
    cfg.episodes_per_epoch = 30;
    cfg.batch_size = 5;
    cfg.seed = 42;
    cfg.t_snippets = 20;
    cfg.shots = 2;
    cfg.val_episodes = 24;
    return cfg;
}

learn::ModelConfig learnability_model() {
    learn::ModelConfig cfg;
    cfg.pyramid.dim = 8;
    cfg.pyramid.levels = 3;
    cfg.pyramid.m_nodes = 6;
    cfg.pyramid.n_blocks = 2;
    cfg.provider_dim = 16;
    cfg.shots = 2;
    cfg.head_hidden = 16;
    return cfg;
}

// ---- criteria -----------------------------------------------------------

void pyramid_law() {
    for (int t : {9, 27, 100, 256}) {
        const stpe::PyramidLayout lay = stpe::PyramidLayout::make(t, 3);
        int expect = t;
        for (int k = 0; k < lay.levels(); ++k) {
            REQUIRE(lay.len[static_cast<size_t>(k)] == expect,
                    "level length mismatch at T=" + std::to_string(t));
            expect /= 3;
        }
        REQUIRE(lay.levels() == 3, "expected three built levels");
    }
}

void attention_oracles() {
    Rng rng(1001);
    double worst = 0.0;

    // temporal: full pyramids, every level checked against the masked oracle
    for (int trial = 0; trial < 50; ++trial) {
        const int t = 4 + static_cast<int>(rng.below(9)); // 4..12
        const int d = 2 + static_cast<int>(rng.below(7)); // 2..8
        const Mat f = random_mat(t, d, rng);
        const Mat wq = random_mat(d, d, rng), wk = random_mat(d, d, rng),
                  wv = random_mat(d, d, rng);
        Tape tape;
        stpe::PyramidVars pyr = stpe::build_pyramid(
            tape, tape.input(f),
            {tape.input(random_mat(3 * d, d, rng)), tape.input(random_mat(3 * d, d, rng))}, 3);
        stpe::PyramidVars out = stpe::temporal_attention(tape, pyr, tape.input(wq),
                                                         tape.input(wk), tape.input(wv));
        const stpe::PyramidLayout& lay = pyr.layout;
        Mat flat(lay.total(), d);
        for (int l = 0; l < lay.levels(); ++l)
            flat.middleRows(lay.offset(l), lay.len[static_cast<size_t>(l)]) =
                tape.val(pyr.levels[static_cast<size_t>(l)]);
        std::vector<std::vector<int>> allowed(static_cast<size_t>(lay.total()));
        for (int l = 0; l < lay.levels(); ++l)
            for (int i = 0; i < lay.len[static_cast<size_t>(l)]; ++i) {
                auto& nbr = allowed[static_cast<size_t>(lay.offset(l) + i)];
                if (i > 0) nbr.push_back(lay.offset(l) + i - 1);
                nbr.push_back(lay.offset(l) + i);
                if (i + 1 < lay.len[static_cast<size_t>(l)]) nbr.push_back(lay.offset(l) + i + 1);
                if (lay.parent(l, i) >= 0) nbr.push_back(lay.offset(l + 1) + lay.parent(l, i));
            }
        const Mat oracle = dense_masked_attention(flat, wq, wk, wv, allowed);
        for (int l = 0; l < lay.levels(); ++l) {
            const Mat got = tape.val(out.levels[static_cast<size_t>(l)]);
            const Mat want = oracle.middleRows(lay.offset(l), lay.len[static_cast<size_t>(l)]);
            worst = std::max(worst, (got - want).cwiseAbs().maxCoeff());
        }
    }

    // semantic: top-m masked attention on a single level
    for (int trial = 0; trial < 50; ++trial) {
        const int n = 3 + static_cast<int>(rng.below(10)); // 3..12
        const int d = 2 + static_cast<int>(rng.below(7));
        const int m = 1 + static_cast<int>(rng.below(6));
        const Mat f = random_mat(n, d, rng);
        const Mat wq = random_mat(d, d, rng), wk = random_mat(d, d, rng),
                  wv = random_mat(d, d, rng);
        Tape tape;
        Var out = stpe::semantic_attention(tape, tape.input(f), tape.input(wq), tape.input(wk),
                                           tape.input(wv), m);
        const Mat oracle = dense_masked_attention(f, wq, wk, wv, stpe::semantic_topm(f, m));
        worst = std::max(worst, (tape.val(out) - oracle).cwiseAbs().maxCoeff());
    }

    // cross attention: caption rows query chain rows
    for (int trial = 0; trial < 50; ++trial) {
        const int t = 2 + static_cast<int>(rng.below(11));
        const int tp = 1 + static_cast<int>(rng.below(6));
        const int d = 2 + static_cast<int>(rng.below(7));
        const Mat cap = random_mat(t, d, rng), coe = random_mat(tp, d, rng);
        const Mat wq = random_mat(d, d, rng), wk = random_mat(d, d, rng),
                  wv = random_mat(d, d, rng);
        Tape tape;
        Var out = textfuse::cross_attend(tape, tape.input(cap), tape.input(coe), tape.input(wq),
                                         tape.input(wk), tape.input(wv));
        // stack caption and chain rows so the mask covers the chain block only
        Mat flat(t + tp, d);
        flat.topRows(t) = cap;
        flat.bottomRows(tp) = coe;
        std::vector<std::vector<int>> allowed(static_cast<size_t>(t + tp));
        for (int i = 0; i < t; ++i)
            for (int j = 0; j < tp; ++j) allowed[static_cast<size_t>(i)].push_back(t + j);
        for (int j = 0; j < tp; ++j) allowed[static_cast<size_t>(t + j)].push_back(t + j);
        const Mat oracle = dense_masked_attention(flat, wq, wk, wv, allowed).topRows(t);
        worst = std::max(worst, (tape.val(out) - oracle).cwiseAbs().maxCoeff());
    }

    std::ostringstream msg;
    msg << "max abs error " << worst;
    REQUIRE(worst < 1e-10, msg.str());
}

void gradient_suite() {
    datapack::SyntheticConfig synth;
    synth.classes = 3;
    synth.videos_per_class = 4;
    synth.t_snippets = 12;
    synth.dim = 8;
    synth.splits = {{0, datapack::Split::train},
                    {1, datapack::Split::train},
                    {2, datapack::Split::val}};
    const datapack::DatasetManifest manifest =
        datapack::make_synthetic_dataset(synth, 7, scratch("grad"));

    learn::ModelConfig model_cfg = learnability_model();
    Rng rng(31);
    learn::ModelParams params = learn::ModelParams::init(model_cfg, rng);
    params.visit([&rng](const std::string&, Mat& m) {
        for (Eigen::Index i = 0; i < m.rows(); ++i)
            for (Eigen::Index j = 0; j < m.cols(); ++j)
                if (m(i, j) == 0.0) m(i, j) = rng.uniform(-0.2, 0.2);
    });

    Rng ep_rng(3);
    const datapack::Episode episode =
        datapack::sample_episode(manifest, datapack::Split::train, 2, 12, ep_rng);
    MockEmbedder provider(16, 7);
    learn::LossConfig loss_cfg;
    learn::ForwardOptions options;

    const auto reports =
        learn::finite_difference_check(params, episode, loss_cfg, provider, options);
    for (const learn::GroupReport& r : reports) {
        std::ostringstream msg;
        msg << r.name << " rel err " << r.max_rel_err;
        REQUIRE(r.max_rel_err < 1e-4, msg.str());
    }

    learn::FdOptions corrupt;
    corrupt.corrupt_group = "align.head_w1";
    const auto flagged =
        learn::finite_difference_check(params, episode, loss_cfg, provider, options, corrupt);
    bool detected = false;
    for (const learn::GroupReport& r : flagged)
        if (r.name == corrupt.corrupt_group && r.max_rel_err > 1e-2) detected = true;
    REQUIRE(detected, "corrupted gradient went undetected");
}

void loss_hand_check() {
    // epsilon small enough that the capped coefficients are exact to 1e-9
    learn::LossConfig cfg;
    cfg.epsilon = 1e-12;
    Vec y(4);
    y << 1, 1, 0, 0;
    const Vec p = Vec::Constant(4, 0.5);
    const double loss = learn::balanced_loss(p, y, cfg);
    std::ostringstream msg;
    msg << "loss " << loss << " vs 8 ln 2";
    REQUIRE(std::abs(loss - 8.0 * std::log(2.0)) < 1e-9, msg.str());

    Rng rng(77);
    for (int trial = 0; trial < 1000; ++trial) {
        const int t = 2 + static_cast<int>(rng.below(128));
        Vec mask = Vec::Zero(t);
        int fg = 0;
        for (int i = 0; i < t; ++i)
            if (rng.uniform() < 0.5) {
                mask(i) = 1.0;
                ++fg;
            }
        if (fg == 0 || fg == t) continue;
        const auto [k_fg, k_bg] = learn::balance_coeffs(mask, 1e-6);
        REQUIRE(k_fg >= 1.0 - 1e-5 && k_fg <= t, "k_fg out of bounds");
        REQUIRE(k_bg >= 1.0 - 1e-5 && k_bg <= t, "k_bg out of bounds");
    }
}

void snms_ap_oracles() {
    locate::EvalConfig cfg; // snms_iou 0.7
    Rng rng(7001);

    auto make = [](double s, double e, double c) {
        locate::Proposal p;
        p.start = static_cast<int>(s);
        p.end = static_cast<int>(e);
        p.start_s = s;
        p.end_s = e;
        p.confidence = c;
        return p;
    };

    // soft suppression vs the hand decay rule on sets of up to 6 proposals
    for (int trial = 0; trial < 200; ++trial) {
        const int n = 1 + static_cast<int>(rng.below(6));
        std::vector<locate::Proposal> props;
        for (int i = 0; i < n; ++i) {
            const double s = rng.uniform(0, 30);
            props.push_back(make(s, s + rng.uniform(1, 15), rng.uniform(0.05, 1.0)));
        }
        std::vector<locate::Proposal> pending = props, expect;
        while (!pending.empty()) {
            size_t best = 0;
            for (size_t i = 1; i < pending.size(); ++i) {
                const auto& a = pending[i];
                const auto& b = pending[best];
                if (a.confidence > b.confidence ||
                    (a.confidence == b.confidence &&
                     (a.start_s < b.start_s || (a.start_s == b.start_s &&
                                                a.end_s - a.start_s < b.end_s - b.start_s))))
                    best = i;
            }
            locate::Proposal top = pending[best];
            pending.erase(pending.begin() + static_cast<std::ptrdiff_t>(best));
            expect.push_back(top);
            std::vector<locate::Proposal> next;
            for (locate::Proposal p : pending) {
                const double iou = locate::temporal_iou(top, p);
                if (iou > cfg.snms_iou) p.confidence *= (1.0 - iou);
                if (p.confidence >= cfg.snms_min_score) next.push_back(p);
            }
            pending = next;
        }
        const auto got = locate::soft_nms(props, cfg);
        REQUIRE(got.size() == expect.size(), "suppression kept a different count");
        for (size_t i = 0; i < got.size(); ++i) {
            REQUIRE(got[i].start_s == expect[i].start_s, "suppression order differs");
            REQUIRE(std::abs(got[i].confidence - expect[i].confidence) == 0.0,
                    "decayed confidence differs");
        }
    }

    // average precision vs the exhaustive greedy oracle, exact equality
    for (int trial = 0; trial < 200; ++trial) {
        const int np = static_cast<int>(rng.below(6));
        const int ng = 1 + static_cast<int>(rng.below(3));
        std::vector<locate::Proposal> props;
        for (int i = 0; i < np; ++i) {
            const double s = rng.uniform(0, 20);
            props.push_back(make(s, s + rng.uniform(0.5, 10), rng.uniform(0.05, 1.0)));
        }
        std::vector<datapack::Interval> gts;
        for (int i = 0; i < ng; ++i) {
            const double s = rng.uniform(0, 20);
            gts.push_back({s, s + rng.uniform(0.5, 10)});
        }
        std::vector<locate::Proposal> order = props;
        std::sort(order.begin(), order.end(),
                  [](const locate::Proposal& a, const locate::Proposal& b) {
                      if (a.confidence != b.confidence) return a.confidence > b.confidence;
                      if (a.start_s != b.start_s) return a.start_s < b.start_s;
                      return a.end_s - a.start_s < b.end_s - b.start_s;
                  });
        std::vector<bool> used(gts.size(), false);
        double ap = 0.0;
        int tp = 0;
        for (size_t rank = 0; rank < order.size(); ++rank) {
            int pick = -1;
            double best = 0.5 - 1e-12;
            for (size_t g = 0; g < gts.size(); ++g) {
                if (used[g]) continue;
                const double iou =
                    locate::temporal_iou(order[rank], make(gts[g].t_s, gts[g].t_e, 1.0));
                if (iou >= 0.5 && iou > best) {
                    best = iou;
                    pick = static_cast<int>(g);
                }
            }
            if (pick >= 0) {
                used[static_cast<size_t>(pick)] = true;
                ++tp;
                ap += static_cast<double>(tp) / static_cast<double>(rank + 1);
            }
        }
        ap /= static_cast<double>(gts.size());
        REQUIRE(locate::average_precision(props, gts, 0.5) == ap,
                "average precision differs from the greedy oracle");
    }
}

void oracle_probability_eval() {
    datapack::SyntheticConfig synth = learnability_dataset();
    const datapack::DatasetManifest manifest =
        datapack::make_synthetic_dataset(synth, 11, scratch("oracle_eval"));
    Rng rng(5);
    std::vector<datapack::Episode> episodes;
    for (int i = 0; i < 20; ++i)
        episodes.push_back(
            datapack::sample_episode(manifest, datapack::Split::train, 2, 20, rng));

    locate::EvalConfig cfg;
    const locate::EvalReport perfect = locate::evaluate(
        episodes, [](const datapack::Episode& ep) { return ep.query_mask; }, cfg);
    std::ostringstream msg;
    msg << "oracle probabilities gave mAP@0.5 = " << perfect.map_at.at(0.5);
    REQUIRE(perfect.map_at.at(0.5) == 1.0, msg.str());

    const locate::EvalReport zero = locate::evaluate(
        episodes, [](const datapack::Episode& ep) { return Vec(Vec::Zero(ep.t())); }, cfg);
    REQUIRE(zero.map_at.at(0.5) == 0.0, "zero probabilities should give zero mAP");
}

void desk_scale_learnability() {
    const datapack::DatasetManifest manifest =
        datapack::make_synthetic_dataset(learnability_dataset(), 42, scratch("learn"));
    MockEmbedder provider(16, 7);
    learn::LossConfig loss_cfg;

    learn::ForwardOptions full_opts;
    const learn::TrainResult full = learn::train(manifest, learnability_model(),
                                                 learnability_train(), loss_cfg, provider,
                                                 full_opts);
    REQUIRE(full.metrics.back().val_map.has_value(), "validation metric missing");
    const double full_map = *full.metrics.back().val_map;

    learn::ForwardOptions ablated_opts;
    ablated_opts.use_text = false;
    const learn::TrainResult ablated = learn::train(manifest, learnability_model(),
                                                    learnability_train(), loss_cfg, provider,
                                                    ablated_opts);
    const double ablated_map = *ablated.metrics.back().val_map;

    std::ostringstream msg;
    msg << "full " << full_map << ", text-ablated " << ablated_map;
    REQUIRE(full_map >= 0.8, "validation mAP@0.5 below 0.8: " + msg.str());
    REQUIRE(full_map - ablated_map >= 0.05,
            "text fusion advantage below 0.05: " + msg.str());
}

void verification_state_machine() {
    MockEmbedder provider(16, 7);
    coegen::VerificationConfig cfg; // n_retry = 5
    coegen::PipelinePrompts prompts = coegen::PipelinePrompts::defaults();
    const std::string scene = "a person crosses the courtyard and knocks over a bicycle stand";
    const std::vector<FramePayload> frames = {{"f0", scene}};
    const std::string good = scene + ".";

    {
        coegen::MockChatClient vlm(coegen::ClientRole::vlm, {{"*", {good}, 0}});
        coegen::MockChatClient llm(coegen::ClientRole::llm, {{"*", {good}, 0}});
        coegen::HumanReviewQueue queue;
        const auto result =
            coegen::generate_and_verify("v0", frames, vlm, llm, prompts, provider, cfg, queue);
        REQUIRE(result.report.disposition == coegen::Disposition::accepted, "expected accept");
        REQUIRE(result.report.attempts == 1, "expected a single attempt");
        REQUIRE(queue.size() == 0, "queue should stay empty");
    }
    {
        coegen::MockChatClient vlm(coegen::ClientRole::vlm, {{"*", {"bad", "bad", good}, 0}});
        coegen::MockChatClient llm(coegen::ClientRole::llm, {{"*", {good}, 0}});
        coegen::HumanReviewQueue queue;
        const auto result =
            coegen::generate_and_verify("v1", frames, vlm, llm, prompts, provider, cfg, queue);
        REQUIRE(result.report.disposition == coegen::Disposition::refined,
                "expected refinement acceptance");
        REQUIRE(result.report.attempts == 3, "expected three attempts");
        int refinements = 0;
        for (const std::string& p : vlm.received_prompts())
            if (p.find("Revise only these parts") != std::string::npos) ++refinements;
        REQUIRE(refinements == 2, "expected exactly two refinement prompts");
        REQUIRE(queue.size() == 0, "queue should stay empty");
    }
    {
        coegen::MockChatClient vlm(coegen::ClientRole::vlm, {{"*", {"bad"}, 0}});
        coegen::MockChatClient llm(coegen::ClientRole::llm, {{"*", {good}, 0}});
        coegen::HumanReviewQueue queue;
        const auto result =
            coegen::generate_and_verify("v2", frames, vlm, llm, prompts, provider, cfg, queue);
        REQUIRE(result.report.disposition == coegen::Disposition::human_review,
                "expected human review");
        REQUIRE(result.report.attempts == 5, "expected the full retry budget");
        REQUIRE(queue.size() == 1, "expected one queued item");
    }
}

void consistency_scoring() {
    MockEmbedder provider(16, 7);
    coegen::VerificationConfig cfg;
    Rng rng(2024);
    double worst = 0.0;
    for (int trial = 0; trial < 100; ++trial) {
        const int n_sub = 1 + static_cast<int>(rng.below(5));
        const int n_frames = 1 + static_cast<int>(rng.below(8));
        std::vector<std::string> subs;
        for (int i = 0; i < n_sub; ++i)
            subs.push_back("sub " + std::to_string(trial) + "_" + std::to_string(i));
        std::vector<FramePayload> frames;
        for (int i = 0; i < n_frames; ++i)
            frames.push_back({"f", "frame " + std::to_string(trial) + "_" + std::to_string(i)});

        const auto scores = coegen::consistency_scores(subs, frames, provider, cfg);
        const Mat t = provider.encode_texts(subs);
        const Mat f = provider.encode_frames(frames);
        const int take = std::min(3, n_frames);
        for (int j = 0; j < n_sub; ++j) {
            std::vector<double> sims;
            for (int i = 0; i < n_frames; ++i) sims.push_back(t.row(j).dot(f.row(i)));
            std::sort(sims.rbegin(), sims.rend());
            double expect = 0.0;
            for (int i = 0; i < take; ++i) expect += sims[static_cast<size_t>(i)];
            expect /= take;
            worst = std::max(worst,
                             std::abs(scores[static_cast<size_t>(j)].score - expect));
        }
    }
    std::ostringstream msg;
    msg << "max abs error " << worst;
    REQUIRE(worst < 1e-12, msg.str());
}

void determinism() {
    const fs::path root = scratch("determinism");
    const std::string config_body = R"({
      "seed": 42,
      "out_dir": ")" + (root / "run").string() + R"(",
      "datapack": { "classes": 3, "videos_per_class": 4, "t_snippets": 16, "dim": 8, "mu": 4.0,
                    "splits": {"0": "train", "1": "train", "2": "val"} },
      "learn": { "learning_rate": 0.001, "epochs": 4, "episodes_per_epoch": 10,
                 "batch_size": 5, "shots": 2, "val_episodes": 6 }
    })";
    const fs::path cfg_path = root / "config.jsonc";
    io::write_text_file(cfg_path, config_body);
    const config::RunConfig cfg = config::load_config(cfg_path);

    cli::CommonFlags flags;
    flags.quiet = true;
    REQUIRE(cli::cmd_synth(cfg, flags) == 0, "synthesis failed");

    cli::CommonFlags run_a = flags;
    run_a.out = (root / "train_a").string();
    REQUIRE(cli::cmd_train(cfg, run_a, std::nullopt) == 0, "first training run failed");
    cli::CommonFlags run_b = flags;
    run_b.out = (root / "train_b").string();
    REQUIRE(cli::cmd_train(cfg, run_b, std::nullopt) == 0, "second training run failed");

    // byte-identical metrics and checkpoint files
    REQUIRE(io::hash_file(root / "train_a" / "metrics.jsonl") ==
                io::hash_file(root / "train_b" / "metrics.jsonl"),
            "metrics files differ");
    size_t compared = 0;
    for (const auto& entry : fs::directory_iterator(root / "train_a" / "checkpoint")) {
        const fs::path rel = entry.path().filename();
        REQUIRE(fs::exists(root / "train_b" / "checkpoint" / rel),
                "checkpoint file missing in the second run");
        REQUIRE(io::hash_file(entry.path()) ==
                    io::hash_file(root / "train_b" / "checkpoint" / rel),
                "checkpoint file differs: " + rel.string());
        ++compared;
    }
    REQUIRE(compared > 10, "checkpoint comparison looked at too few files");
}

} // namespace

int main() {
    run_criterion("pyramid-law", pyramid_law);
    run_criterion("attention-oracles", attention_oracles);
    run_criterion("gradient-suite", gradient_suite);
    run_criterion("loss-hand-check", loss_hand_check);
    run_criterion("snms-ap-oracles", snms_ap_oracles);
    run_criterion("oracle-probability-eval", oracle_probability_eval);
    run_criterion("desk-scale-learnability", desk_scale_learnability);
    run_criterion("verification-state-machine", verification_state_machine);
    run_criterion("consistency-scoring", consistency_scoring);
    run_criterion("determinism", determinism);

    if (failures > 0) {
        std::printf("%d criterion(s) failed\n", failures);
        return 1;
    }
    std::printf("all criteria passed\n");
    return 0;
}
