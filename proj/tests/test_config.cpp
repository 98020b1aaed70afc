#include <doctest.h>

#include <filesystem>

#include "coetal/config.hpp"
#include "coetal/io.hpp"

using namespace coetal;
using namespace coetal::config;
namespace fs = std::filesystem;

namespace {

fs::path write_config(const std::string& name, const std::string& body) {
    const fs::path p = fs::temp_directory_path() / name;
    io::write_text_file(p, body);
    return p;
}

} // namespace

TEST_CASE("config defaults and comments") {
    const fs::path p = write_config("coetal_cfg_ok.jsonc", R"({
      // desk-scale run
      "seed": 9,
      "datapack": { "classes": 3, "dim": 8 },
      "learn": { "learning_rate": 0.001 }
    })");
    RunConfig cfg = load_config(p);
    CHECK(cfg.seed == 9);
    CHECK(cfg.train.seed == 9);
    CHECK(cfg.train.learning_rate == doctest::Approx(0.001));
    CHECK(cfg.pyramid.levels == 3);
    CHECK(cfg.pyramid.m_nodes == 6);
    CHECK(cfg.pyramid.n_blocks == 2);
    CHECK(cfg.eval.snms_iou == doctest::Approx(0.7));
    CHECK(cfg.eval.min_len == 2);
    CHECK(cfg.eval.thresholds.size() == 9);
    CHECK(cfg.eval.thresholds.front() == doctest::Approx(0.30));
    CHECK(cfg.eval.thresholds.back() == doctest::Approx(0.70));
    CHECK(cfg.eval.iou_grid.size() == 10);
    CHECK(cfg.verify.alpha == doctest::Approx(0.2));
    CHECK(cfg.verify.top_k == 3);
    CHECK(cfg.verify.n_retry == 5);
    CHECK(cfg.verify.fps == doctest::Approx(1.0));
    CHECK(cfg.loss.epsilon == doctest::Approx(1e-6));
    CHECK(cfg.loss.clamp_delta == doctest::Approx(1e-7));
    CHECK_FALSE(cfg.hash.empty());
}

TEST_CASE("unknown keys are rejected") {
    const fs::path p = write_config("coetal_cfg_bad.jsonc", R"({
      "seed": 1,
      "datapack": { "classes": 3, "dim": 8, "sigma": 2.0 }
    })");
    CHECK_THROWS_WITH_AS(load_config(p), doctest::Contains("datapack.sigma"), ConfigError);

    const fs::path top = write_config("coetal_cfg_bad2.jsonc", R"({"sneed": 1})");
    CHECK_THROWS_WITH_AS(load_config(top), doctest::Contains("sneed"), ConfigError);
}

TEST_CASE("invalid values surface as config errors") {
    const fs::path p = write_config("coetal_cfg_mu.jsonc", R"({
      "datapack": { "classes": 3, "dim": 8, "mu": -1.0 }
    })");
    CHECK_THROWS_AS(load_config(p), ConfigError);

    const fs::path lr = write_config("coetal_cfg_lr.jsonc", R"({
      "learn": { "learning_rate": 0 }
    })");
    CHECK_THROWS_AS(load_config(lr), ConfigError);
}

TEST_CASE("config hash is stable and input-sensitive") {
    const fs::path a = write_config("coetal_cfg_h1.jsonc", R"({"seed": 1})");
    const fs::path b = write_config("coetal_cfg_h2.jsonc", R"({"seed": 1})");
    const fs::path c = write_config("coetal_cfg_h3.jsonc", R"({"seed": 2})");
    CHECK(load_config(a).hash == load_config(b).hash);
    CHECK(load_config(a).hash != load_config(c).hash);
}

TEST_CASE("provider and client factories") {
    RunConfig cfg;
    auto provider = make_provider(cfg);
    CHECK(provider->dim() == 16);
    const Mat e = provider->encode_texts({"abc"});
    CHECK(e.rows() == 1);
    CHECK(e.row(0).norm() == doctest::Approx(1.0));

    auto client = make_chat_client(cfg.vlm, coegen::ClientRole::vlm);
    CHECK(client->role() == coegen::ClientRole::vlm);
    std::vector<FramePayload> frames = {{"f0", "frame"}};
    const std::string reply = client->complete("anything", "", &frames);
    CHECK_FALSE(reply.empty());

    ClientConfig http_client;
    http_client.type = "http"; // no base_url
    CHECK_THROWS(make_chat_client(http_client, coegen::ClientRole::llm));
}
