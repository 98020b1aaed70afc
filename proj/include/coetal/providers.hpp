#pragma once

#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "coetal/rng.hpp"
#include "coetal/tensor.hpp"

namespace coetal {

// A sampled video frame handed to embedding providers and chat clients.
// `data` is the frame content: a base64 image for real providers, or a
// deterministic textual descriptor for the mock world.
struct FramePayload {
    std::string id;
    std::string data;
};

struct EmbedError : std::runtime_error {
    int index; // offending input index, or -1 when unknown
    EmbedError(const std::string& msg, int idx = -1) : std::runtime_error(msg), index(idx) {}
};

// Shared text/frame embedding space. Implementations must be deterministic
// for identical inputs and return one finite row per input.
class EmbeddingProvider {
  public:
    virtual ~EmbeddingProvider() = default;
    virtual int dim() const = 0;
    virtual Mat encode_texts(const std::vector<std::string>& texts) = 0;
    virtual Mat encode_frames(const std::vector<FramePayload>& frames) = 0;
};

// Deterministic stand-in for a real encoder. The rule, frozen so goldens
// stay portable across platforms:
//   state  = fnv1a64(utf8 bytes) ^ (seed * 0x9e3779b97f4a7c15)
//   stream = splitmix64(state) draws
//   v[i]   = standard normal via Box-Muller
//             (u1 = (draw >> 11 [+1]) * 2^-53 in (0,1], u2 in [0,1))
//   output = v / ||v||
// Frames are keyed by their `data` bytes, so a frame whose descriptor equals
// a text embeds identically to that text.
class MockEmbedder final : public EmbeddingProvider {
  public:
    explicit MockEmbedder(int dim, std::uint64_t seed = 0);

    int dim() const override { return dim_; }
    Mat encode_texts(const std::vector<std::string>& texts) override;
    Mat encode_frames(const std::vector<FramePayload>& frames) override;

    Vec embed_bytes(std::string_view bytes) const;

    // Test hook: any input containing `needle` raises EmbedError with its index.
    void fail_on(std::string needle) { fail_needle_ = std::move(needle); }

  private:
    int dim_;
    std::uint64_t seed_;
    std::string fail_needle_;
};

struct HttpOptions {
    std::string base_url;
    double timeout_s = 10.0;
    int n_retry = 3;
    std::string api_key_env; // name of the env var holding the bearer token
};

// JSON-over-HTTP provider:
//   POST /encode_texts  {"texts": [...]}            -> {"embeddings": [[...], ...]}
//   POST /encode_frames {"frames": [{"id","data"}]} -> {"embeddings": [[...], ...]}
class HttpEmbeddingProvider final : public EmbeddingProvider {
  public:
    HttpEmbeddingProvider(HttpOptions options, int dim);

    int dim() const override { return dim_; }
    Mat encode_texts(const std::vector<std::string>& texts) override;
    Mat encode_frames(const std::vector<FramePayload>& frames) override;

  private:
    Mat post_for_embeddings(const std::string& route, const std::string& body, int count);

    HttpOptions options_;
    int dim_;
};

} // namespace coetal
