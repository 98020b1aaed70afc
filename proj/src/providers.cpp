#include "coetal/providers.hpp"

#include <chrono>
#include <cstdlib>
#include <thread>

#include <httplib.h>
#include <nlohmann/json.hpp>

namespace coetal {

using nlohmann::json;

MockEmbedder::MockEmbedder(int dim, std::uint64_t seed) : dim_(dim), seed_(seed) {
    if (dim < 1) throw std::invalid_argument("MockEmbedder: dim must be >= 1");
}

Vec MockEmbedder::embed_bytes(std::string_view bytes) const {
    std::uint64_t state = fnv1a64(bytes) ^ (seed_ * 0x9e3779b97f4a7c15ull);
    Rng rng(splitmix64(state));
    Vec v(dim_);
    for (int i = 0; i < dim_; ++i) v(i) = rng.normal();
    const double n = v.norm();
    return n > 0.0 ? Vec(v / n) : Vec(Vec::Unit(dim_, 0));
}

Mat MockEmbedder::encode_texts(const std::vector<std::string>& texts) {
    Mat out(static_cast<Eigen::Index>(texts.size()), dim_);
    for (size_t i = 0; i < texts.size(); ++i) {
        if (!fail_needle_.empty() && texts[i].find(fail_needle_) != std::string::npos)
            throw EmbedError("mock embedder scripted failure", static_cast<int>(i));
        out.row(static_cast<Eigen::Index>(i)) = embed_bytes(texts[i]).transpose();
    }
    return out;
}

Mat MockEmbedder::encode_frames(const std::vector<FramePayload>& frames) {
    Mat out(static_cast<Eigen::Index>(frames.size()), dim_);
    for (size_t i = 0; i < frames.size(); ++i) {
        if (!fail_needle_.empty() && frames[i].data.find(fail_needle_) != std::string::npos)
            throw EmbedError("mock embedder scripted failure", static_cast<int>(i));
        out.row(static_cast<Eigen::Index>(i)) = embed_bytes(frames[i].data).transpose();
    }
    return out;
}

HttpEmbeddingProvider::HttpEmbeddingProvider(HttpOptions options, int dim)
    : options_(std::move(options)), dim_(dim) {
    if (dim < 1) throw std::invalid_argument("HttpEmbeddingProvider: dim must be >= 1");
    if (options_.base_url.empty())
        throw std::invalid_argument("HttpEmbeddingProvider: base_url required");
}

Mat HttpEmbeddingProvider::post_for_embeddings(const std::string& route, const std::string& body,
                                               int count) {
    httplib::Client client(options_.base_url);
    client.set_connection_timeout(std::chrono::duration<double>(options_.timeout_s));
    client.set_read_timeout(std::chrono::duration<double>(options_.timeout_s));
    if (!options_.api_key_env.empty()) {
        if (const char* key = std::getenv(options_.api_key_env.c_str()))
            client.set_default_headers({{"Authorization", std::string("Bearer ") + key}});
    }

    std::string last_error;
    for (int attempt = 0; attempt <= options_.n_retry; ++attempt) {
        auto res = client.Post(route, body, "application/json");
        if (!res) {
            last_error = "transport error: " + httplib::to_string(res.error());
        } else if (res->status != 200) {
            last_error = "http status " + std::to_string(res->status);
        } else {
            json doc = json::parse(res->body, nullptr, false);
            if (doc.is_discarded() || !doc.contains("embeddings"))
                throw EmbedError("embedding endpoint returned malformed JSON");
            const json& rows = doc.at("embeddings");
            if (static_cast<int>(rows.size()) != count)
                throw EmbedError("embedding endpoint returned " + std::to_string(rows.size()) +
                                 " rows, expected " + std::to_string(count));
            Mat out(count, dim_);
            for (int i = 0; i < count; ++i) {
                const json& row = rows.at(static_cast<size_t>(i));
                if (static_cast<int>(row.size()) != dim_)
                    throw EmbedError("embedding row has wrong dimension", i);
                for (int j = 0; j < dim_; ++j) out(i, j) = row.at(static_cast<size_t>(j)).get<double>();
                if (!out.row(i).allFinite()) throw EmbedError("non-finite embedding row", i);
            }
            return out;
        }
        if (attempt < options_.n_retry)
            std::this_thread::sleep_for(std::chrono::milliseconds(50 * (attempt + 1)));
    }
    throw EmbedError("embedding request failed after " + std::to_string(options_.n_retry + 1) +
                     " attempts (" + last_error + ")");
}

Mat HttpEmbeddingProvider::encode_texts(const std::vector<std::string>& texts) {
    json body;
    body["texts"] = texts;
    return post_for_embeddings("/encode_texts", body.dump(), static_cast<int>(texts.size()));
}

Mat HttpEmbeddingProvider::encode_frames(const std::vector<FramePayload>& frames) {
    json body;
    body["frames"] = json::array();
    for (const FramePayload& f : frames)
        body["frames"].push_back({{"id", f.id}, {"data", f.data}});
    return post_for_embeddings("/encode_frames", body.dump(), static_cast<int>(frames.size()));
}

} // namespace coetal
