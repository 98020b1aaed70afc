#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "coetal/io.hpp"
#include "coetal/learn.hpp"

using namespace coetal;
using namespace coetal::learn;
namespace fs = std::filesystem;

namespace {

datapack::DatasetManifest tiny_manifest(std::uint64_t seed, const std::string& tag) {
    datapack::SyntheticConfig cfg;
    cfg.classes = 3;
    cfg.videos_per_class = 4;
    cfg.t_snippets = 12;
    cfg.dim = 8;
    cfg.mu = 4.0;
    cfg.splits = {{0, datapack::Split::train},
                  {1, datapack::Split::train},
                  {2, datapack::Split::val}};
    const fs::path dir = fs::temp_directory_path() / ("coetal_learn_" + tag);
    fs::remove_all(dir);
    return datapack::make_synthetic_dataset(cfg, seed, dir);
}

ModelConfig tiny_model() {
    ModelConfig cfg;
    cfg.pyramid.dim = 8;
    cfg.pyramid.levels = 3;
    cfg.pyramid.m_nodes = 6;
    cfg.pyramid.n_blocks = 2;
    cfg.provider_dim = 16;
    cfg.shots = 2;
    cfg.head_hidden = 16;
    return cfg;
}

} // namespace

TEST_CASE("balance coefficients") {
    Vec y25 = Vec::Zero(100);
    y25.head(25).setOnes();
    auto [fg, bg] = balance_coeffs(y25, 1e-6);
    CHECK(fg == doctest::Approx(4.0).epsilon(1e-6));
    CHECK(bg == doctest::Approx(100.0 / 75.0).epsilon(1e-6));

    auto [fg0, bg0] = balance_coeffs(Vec::Zero(100), 1e-6);
    CHECK(fg0 == doctest::Approx(100.0)); // capped by min
    CHECK(bg0 == doctest::Approx(1.0).epsilon(1e-6));

    auto [fg1, bg1] = balance_coeffs(Vec::Ones(100), 1e-6);
    CHECK(fg1 == doctest::Approx(1.0).epsilon(1e-6));
    CHECK(bg1 == doctest::Approx(100.0));
}

TEST_CASE("coefficient caps hold across random masks") {
    Rng rng(1);
    for (int trial = 0; trial < 1000; ++trial) {
        const int t = 2 + static_cast<int>(rng.below(64));
        Vec y = Vec::Zero(t);
        int fg_count = 0;
        for (int i = 0; i < t; ++i)
            if (rng.uniform() < 0.5) {
                y(i) = 1.0;
                ++fg_count;
            }
        if (fg_count == 0 || fg_count == t) continue;
        auto [fg, bg] = balance_coeffs(y, 1e-6);
        CHECK(fg >= 1.0 - 1e-5);
        CHECK(fg <= t);
        CHECK(bg >= 1.0 - 1e-5);
        CHECK(bg <= t);
    }
}

TEST_CASE("balanced loss hand values") {
    LossConfig cfg;

    SUBCASE("uniform half probabilities on a balanced mask") {
        Vec y(4);
        y << 1, 1, 0, 0;
        const Vec p = Vec::Constant(4, 0.5);
        // k_fg = k_bg = 2 (up to epsilon), L = 8 ln 2
        CHECK(balanced_loss(p, y, cfg) == doctest::Approx(8.0 * std::log(2.0)).epsilon(1e-3));
    }

    SUBCASE("perfect predictions give a near-zero loss") {
        Vec y(6);
        y << 1, 0, 1, 1, 0, 0;
        const double loss = balanced_loss(y, y, cfg);
        CHECK(loss >= 0.0);
        CHECK(loss < 1e-4);
    }

    SUBCASE("raising a foreground probability strictly lowers the loss") {
        Vec y(4);
        y << 1, 0, 0, 1;
        Vec p = Vec::Constant(4, 0.5);
        const double before = balanced_loss(p, y, cfg);
        p(0) = 0.9;
        CHECK(balanced_loss(p, y, cfg) < before);
    }

    SUBCASE("length mismatch throws") {
        CHECK_THROWS(balanced_loss(Vec::Ones(3), Vec::Ones(4), cfg));
    }

    SUBCASE("non-negative over random inputs") {
        Rng rng(2);
        for (int trial = 0; trial < 200; ++trial) {
            const int t = 1 + static_cast<int>(rng.below(32));
            Vec y(t), p(t);
            for (int i = 0; i < t; ++i) {
                y(i) = rng.uniform() < 0.5 ? 1.0 : 0.0;
                p(i) = rng.uniform();
            }
            CHECK(balanced_loss(p, y, cfg) >= 0.0);
        }
    }
}

TEST_CASE("tape loss agrees with the plain reference") {
    Rng rng(3);
    LossConfig cfg;
    for (int trial = 0; trial < 20; ++trial) {
        const int t = 2 + static_cast<int>(rng.below(20));
        Vec y(t);
        Mat p(t, 1);
        for (int i = 0; i < t; ++i) {
            y(i) = rng.uniform() < 0.5 ? 1.0 : 0.0;
            p(i, 0) = rng.uniform(0.01, 0.99);
        }
        Tape tape;
        Var loss = loss_from_probs(tape, tape.input(p), y, cfg);
        CHECK(tape.val(loss)(0, 0) ==
              doctest::Approx(balanced_loss(Vec(p.col(0)), y, cfg)).epsilon(1e-12));
    }
}

TEST_CASE("training smoke, determinism, and abort contract") {
    datapack::DatasetManifest manifest = tiny_manifest(11, "train");
    ModelConfig model_cfg = tiny_model();
    TrainConfig cfg;
    cfg.learning_rate = 1e-3;
    cfg.epochs = 2;
    cfg.episodes_per_epoch = 6;
    cfg.batch_size = 3;
    cfg.seed = 5;
    cfg.t_snippets = 12;
    cfg.shots = 2;
    cfg.val_episodes = 4;
    LossConfig loss_cfg;
    MockEmbedder provider(16, 7);
    ForwardOptions options;

    SUBCASE("initial loss is finite and positive; same seed gives identical trajectories") {
        TrainResult a = train(manifest, model_cfg, cfg, loss_cfg, provider, options);
        REQUIRE(a.metrics.size() == 2);
        CHECK(a.metrics[0].mean_loss > 0.0);
        CHECK(std::isfinite(a.metrics[0].mean_loss));

        TrainResult b = train(manifest, model_cfg, cfg, loss_cfg, provider, options);
        for (size_t i = 0; i < a.metrics.size(); ++i) {
            CHECK(a.metrics[i].mean_loss == b.metrics[i].mean_loss);
            CHECK(a.metrics[i].val_map == b.metrics[i].val_map);
        }
        // parameters byte-identical
        std::vector<Mat> pa, pb;
        a.params.visit([&](const std::string&, const Mat& m) { pa.push_back(m); });
        b.params.visit([&](const std::string&, const Mat& m) { pb.push_back(m); });
        REQUIRE(pa.size() == pb.size());
        for (size_t i = 0; i < pa.size(); ++i) CHECK(pa[i] == pb[i]);
    }

    SUBCASE("loss decreases over a longer run") {
        TrainConfig longer = cfg;
        longer.epochs = 8;
        TrainResult r = train(manifest, model_cfg, longer, loss_cfg, provider, options);
        CHECK(r.metrics.back().mean_loss < r.metrics.front().mean_loss);
    }
}

TEST_CASE("checkpoint save and load round trip") {
    ModelConfig cfg = tiny_model();
    Rng rng(9);
    ModelParams params = ModelParams::init(cfg, rng);
    const fs::path dir = fs::temp_directory_path() / "coetal_ckpt";
    fs::remove_all(dir);
    save_checkpoint(params, dir, {{"seed", 9}});

    ModelParams loaded = load_checkpoint(dir);
    std::vector<std::string> names_a = params.group_names();
    std::vector<std::string> names_b = loaded.group_names();
    CHECK(names_a == names_b);
    // float32 storage: compare at float precision
    std::vector<Mat> pa, pb;
    params.visit([&](const std::string&, const Mat& m) { pa.push_back(m); });
    loaded.visit([&](const std::string&, const Mat& m) { pb.push_back(m); });
    for (size_t i = 0; i < pa.size(); ++i)
        CHECK((pa[i] - pb[i]).cwiseAbs().maxCoeff() < 1e-6);

    CHECK_THROWS(load_checkpoint(dir / "missing"));
}

TEST_CASE("finite differences validate the full episode gradient") {
    datapack::DatasetManifest manifest = tiny_manifest(13, "fd");
    ModelConfig model_cfg = tiny_model();
    Rng rng(21);
    ModelParams params = ModelParams::init(model_cfg, rng);
    // densify the zero-initialized groups so every path carries signal
    params.visit([&](const std::string&, Mat& m) {
        for (Eigen::Index i = 0; i < m.rows(); ++i)
            for (Eigen::Index j = 0; j < m.cols(); ++j)
                if (m(i, j) == 0.0) m(i, j) = rng.uniform(-0.2, 0.2);
    });

    Rng ep_rng(4);
    datapack::Episode episode =
        datapack::sample_episode(manifest, datapack::Split::train, 2, 12, ep_rng);
    MockEmbedder provider(16, 7);
    LossConfig loss_cfg;
    ForwardOptions options;

    SUBCASE("all groups pass at 1e-4") {
        const auto reports =
            finite_difference_check(params, episode, loss_cfg, provider, options);
        CHECK(reports.size() == params.group_names().size());
        for (const GroupReport& r : reports) {
            INFO(r.name);
            CHECK(r.max_rel_err < 1e-4);
        }
    }

    SUBCASE("a corrupted gradient is flagged") {
        FdOptions fd;
        fd.corrupt_group = "stpe.block0.temporal_wq";
        const auto reports = finite_difference_check(params, episode, loss_cfg, provider,
                                                     options, fd);
        bool flagged = false;
        for (const GroupReport& r : reports)
            if (r.name == fd.corrupt_group) flagged = r.max_rel_err > 1e-2;
        CHECK(flagged);
    }
}

TEST_CASE("finite differences hold at the zero-parameter identity point") {
    datapack::DatasetManifest manifest = tiny_manifest(29, "fdzero");
    ModelConfig model_cfg = tiny_model();
    ModelParams params = ModelParams::zeros(model_cfg);

    Rng ep_rng(6);
    datapack::Episode episode =
        datapack::sample_episode(manifest, datapack::Split::train, 2, 12, ep_rng);
    MockEmbedder provider(16, 7);
    const auto reports = finite_difference_check(params, episode, LossConfig{}, provider,
                                                 ForwardOptions{});
    bool any_signal = false;
    for (const GroupReport& r : reports) {
        INFO(r.name);
        CHECK(r.max_rel_err < 1e-4);
        any_signal = any_signal || r.max_abs_grad > 0.0;
    }
    CHECK(any_signal); // the head keeps a live gradient even at zero
}
