#include "coetal/datapack.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <sstream>
#include <stdexcept>

#include "coetal/io.hpp"

namespace coetal::datapack {

namespace fs = std::filesystem;
using nlohmann::json;

const char* split_name(Split s) {
    switch (s) {
    case Split::train: return "train";
    case Split::val: return "val";
    case Split::test: return "test";
    }
    throw std::logic_error("bad split");
}

Split split_from_name(const std::string& name) {
    if (name == "train") return Split::train;
    if (name == "val") return Split::val;
    if (name == "test") return Split::test;
    throw std::runtime_error("unknown split name: " + name);
}

void DatasetManifest::validate() const {
    std::set<std::string> ids;
    for (const VideoRecord& r : records) {
        if (!ids.insert(r.video_id).second)
            throw std::runtime_error("duplicate video id: " + r.video_id);
        if (r.features.t() < 1 || r.features.d() < 1)
            throw std::runtime_error("empty feature matrix: " + r.video_id);
        if (!(r.features.duration_s > 0.0))
            throw std::runtime_error("non-positive duration: " + r.video_id);
        if (!all_finite(r.features.values))
            throw std::runtime_error("non-finite features: " + r.video_id);
        if (splits.find(r.class_id) == splits.end())
            throw std::runtime_error("class " + std::to_string(r.class_id) +
                                     " of video " + r.video_id + " has no split entry");
        double prev_end = 0.0;
        for (const Interval& iv : r.annotations.intervals) {
            if (!(0.0 <= iv.t_s && iv.t_s < iv.t_e && iv.t_e <= r.features.duration_s))
                throw std::runtime_error("interval out of range in " + r.video_id);
            if (iv.t_s < prev_end)
                throw std::runtime_error("overlapping intervals in " + r.video_id);
            prev_end = iv.t_e;
        }
        if (r.texts) {
            if (r.texts->captions.size() != static_cast<size_t>(r.features.t()))
                throw std::runtime_error("caption count != snippet count in " + r.video_id);
            if (r.texts->coe_sentences.empty())
                throw std::runtime_error("empty coe text in " + r.video_id);
            for (const auto& s : r.texts->captions)
                if (s.empty()) throw std::runtime_error("empty caption string in " + r.video_id);
            for (const auto& s : r.texts->coe_sentences)
                if (s.empty()) throw std::runtime_error("empty coe string in " + r.video_id);
        }
    }
}

std::vector<const VideoRecord*> DatasetManifest::records_in_split(Split s) const {
    std::vector<const VideoRecord*> out;
    for (const VideoRecord& r : records) {
        auto it = splits.find(r.class_id);
        if (it != splits.end() && it->second == s) out.push_back(&r);
    }
    return out;
}

// JSON objects silently collapse duplicate keys, so "class 3 in both train
// and test" would vanish before we could reject it. This callback watches
// the keys of the top-level "splits" object during parsing.
namespace {
struct SplitKeyScan {
    int depth = 0;
    int splits_depth = -1;
    bool next_object_is_splits = false;
    std::set<std::string> seen;
    std::string duplicate;

    bool on_event(int cb_depth, json::parse_event_t event, json& parsed) {
        if (event == json::parse_event_t::key) {
            const std::string key = parsed.get<std::string>();
            if (cb_depth == 1 && key == "splits") next_object_is_splits = true;
            else if (splits_depth >= 0 && cb_depth == splits_depth + 1) {
                if (!seen.insert(key).second && duplicate.empty()) duplicate = key;
            }
        } else if (event == json::parse_event_t::object_start) {
            if (next_object_is_splits) {
                splits_depth = cb_depth;
                next_object_is_splits = false;
            }
        } else if (event == json::parse_event_t::object_end) {
            if (cb_depth == splits_depth) splits_depth = -1;
        }
        return true;
    }
};
} // namespace

DatasetManifest load_manifest(const fs::path& path) {
    const std::string text = io::read_text_file(path);
    SplitKeyScan scan;
    json doc;
    try {
        doc = json::parse(text,
                          [&scan](int depth, json::parse_event_t event, json& parsed) {
                              return scan.on_event(depth, event, parsed);
                          },
                          /*allow_exceptions=*/true, /*ignore_comments=*/true);
    } catch (const json::parse_error& e) {
        throw std::runtime_error("invalid manifest JSON in " + path.string() + ": " + e.what());
    }
    if (!scan.duplicate.empty())
        throw std::runtime_error("overlapping splits: class " + scan.duplicate +
                                 " assigned more than once in " + path.string());

    DatasetManifest m;
    const fs::path base = path.parent_path();
    for (const json& v : doc.at("videos")) {
        VideoRecord r;
        r.video_id = v.at("id").get<std::string>();
        r.class_id = v.at("class_id").get<int>();
        const fs::path feat_path = base / v.at("features").get<std::string>();
        io::F32File f = io::read_f32(feat_path);
        if (!f.duration_s)
            throw std::runtime_error("feature sidecar missing duration_s: " + feat_path.string());
        r.features.values = std::move(f.values);
        r.features.duration_s = *f.duration_s;
        for (const json& a : v.at("annotations"))
            r.annotations.intervals.push_back(
                {a.at("t_s").get<double>(), a.at("t_e").get<double>()});
        std::sort(r.annotations.intervals.begin(), r.annotations.intervals.end(),
                  [](const Interval& a, const Interval& b) { return a.t_s < b.t_s; });
        if (v.contains("texts") && !v.at("texts").is_null()) {
            const json t = io::parse_json_file(base / v.at("texts").get<std::string>());
            TextBundle bundle;
            bundle.captions = t.at("captions").get<std::vector<std::string>>();
            bundle.coe_sentences = t.at("coe").get<std::vector<std::string>>();
            r.texts = std::move(bundle);
        }
        m.records.push_back(std::move(r));
    }
    for (auto it = doc.at("splits").begin(); it != doc.at("splits").end(); ++it)
        m.splits[std::stoi(it.key())] = split_from_name(it.value().get<std::string>());
    m.validate();
    return m;
}

void write_manifest(const DatasetManifest& manifest, const fs::path& path, const json& meta) {
    manifest.validate();
    const fs::path base = path.parent_path();
    fs::create_directories(base / "features");
    json videos = json::array();
    for (const VideoRecord& r : manifest.records) {
        const std::string feat_rel = "features/" + r.video_id + ".f32";
        io::write_f32(base / feat_rel, r.features.values, r.features.duration_s);
        json v;
        v["id"] = r.video_id;
        v["class_id"] = r.class_id;
        v["features"] = feat_rel;
        v["annotations"] = json::array();
        for (const Interval& iv : r.annotations.intervals)
            v["annotations"].push_back({{"t_s", iv.t_s}, {"t_e", iv.t_e}});
        if (r.texts) {
            const std::string text_rel = "texts/" + r.video_id + ".json";
            fs::create_directories(base / "texts");
            json t;
            t["captions"] = r.texts->captions;
            t["coe"] = r.texts->coe_sentences;
            io::write_text_file(base / text_rel, t.dump(2) + "\n");
            v["texts"] = text_rel;
        }
        videos.push_back(std::move(v));
    }
    json doc;
    doc["videos"] = std::move(videos);
    json splits = json::object();
    for (const auto& [cid, s] : manifest.splits) splits[std::to_string(cid)] = split_name(s);
    doc["splits"] = std::move(splits);
    if (!meta.empty()) doc["meta"] = meta;
    io::write_text_file(path, doc.dump(2) + "\n");
}

FeatureSequence rescale_features(const FeatureSequence& f, int t_out) {
    if (t_out < 1) throw std::invalid_argument("rescale_features: t_out must be >= 1");
    const int t_in = f.t();
    if (t_in < 1) throw std::invalid_argument("rescale_features: empty input");

    FeatureSequence out;
    out.duration_s = f.duration_s;
    out.values.resize(t_out, f.d());
    if (t_out == 1) {
        out.values.row(0) = f.values.row(0);
        return out;
    }
    for (int j = 0; j < t_out; ++j) {
        const double p = static_cast<double>(j) * (t_in - 1) / (t_out - 1);
        const int lo = static_cast<int>(std::floor(p));
        if (lo >= t_in - 1) {
            out.values.row(j) = f.values.row(t_in - 1);
        } else {
            const double frac = p - lo;
            out.values.row(j) =
                frac == 0.0 ? f.values.row(lo)
                            : ((1.0 - frac) * f.values.row(lo) + frac * f.values.row(lo + 1)).eval();
        }
    }
    return out;
}

std::vector<std::string> resample_captions(const std::vector<std::string>& captions, int t_out) {
    if (t_out < 1) throw std::invalid_argument("resample_captions: t_out must be >= 1");
    if (captions.empty()) throw std::invalid_argument("resample_captions: empty input");
    const int t_in = static_cast<int>(captions.size());
    if (t_in == t_out) return captions;
    std::vector<std::string> out(static_cast<size_t>(t_out));
    for (int j = 0; j < t_out; ++j) {
        const double p = t_out == 1 ? 0.0 : static_cast<double>(j) * (t_in - 1) / (t_out - 1);
        const int idx = std::min(t_in - 1, static_cast<int>(std::lround(p)));
        out[static_cast<size_t>(j)] = captions[static_cast<size_t>(idx)];
    }
    return out;
}

Vec snippet_labels(const AnnotationTrack& ann, double duration_s, int t) {
    if (!(duration_s > 0.0)) throw std::invalid_argument("snippet_labels: duration must be > 0");
    if (t < 1) throw std::invalid_argument("snippet_labels: t must be >= 1");
    Vec y = Vec::Zero(t);
    for (int i = 0; i < t; ++i) {
        const double center = (i + 0.5) * duration_s / t;
        for (const Interval& iv : ann.intervals) {
            if (center >= iv.t_s && center < iv.t_e) {
                y(i) = 1.0;
                break;
            }
        }
    }
    return y;
}

static VideoRecord rescaled_copy(const VideoRecord& r, int t_snippets) {
    VideoRecord out = r;
    out.features = rescale_features(r.features, t_snippets);
    if (out.texts) out.texts->captions = resample_captions(out.texts->captions, t_snippets);
    return out;
}

Episode sample_episode(const DatasetManifest& manifest, Split split, int k, int t_snippets,
                       Rng& rng) {
    if (k < 1) throw std::invalid_argument("sample_episode: k must be >= 1");

    // Eligible class: enough videos for a query plus k supports with texts.
    std::map<int, std::vector<const VideoRecord*>> by_class;
    for (const VideoRecord* r : manifest.records_in_split(split))
        by_class[r->class_id].push_back(r);
    std::vector<int> eligible;
    for (const auto& [cid, vids] : by_class) {
        const auto with_texts = static_cast<int>(
            std::count_if(vids.begin(), vids.end(),
                          [](const VideoRecord* r) { return r->texts.has_value(); }));
        if (static_cast<int>(vids.size()) >= k + 1 && with_texts >= k) eligible.push_back(cid);
    }
    if (eligible.empty())
        throw NoEligibleClassError("no eligible class in split '" +
                                   std::string(split_name(split)) + "' for k=" +
                                   std::to_string(k));

    const int cid = eligible[rng.below(eligible.size())];
    const auto& vids = by_class[cid];

    // Query first, uniformly over videos that leave k texted supports.
    std::vector<const VideoRecord*> query_pool;
    for (const VideoRecord* r : vids) {
        int remaining = 0;
        for (const VideoRecord* s : vids)
            if (s != r && s->texts) ++remaining;
        if (remaining >= k) query_pool.push_back(r);
    }
    const VideoRecord* query = query_pool[rng.below(query_pool.size())];

    std::vector<const VideoRecord*> support_pool;
    for (const VideoRecord* r : vids)
        if (r != query && r->texts) support_pool.push_back(r);
    std::vector<const VideoRecord*> supports;
    for (int i = 0; i < k; ++i) {
        const auto idx = rng.below(support_pool.size());
        supports.push_back(support_pool[idx]);
        support_pool.erase(support_pool.begin() + static_cast<std::ptrdiff_t>(idx));
    }

    Episode ep;
    ep.class_id = cid;
    ep.query = rescaled_copy(*query, t_snippets);
    ep.query_mask = snippet_labels(query->annotations, query->features.duration_s, t_snippets);
    for (const VideoRecord* s : supports) {
        ep.supports.push_back(rescaled_copy(*s, t_snippets));
        ep.support_masks.push_back(
            snippet_labels(s->annotations, s->features.duration_s, t_snippets));
    }
    return ep;
}

void SyntheticConfig::validate() const {
    if (classes < 1 || videos_per_class < 1 || t_snippets < 1 || dim < 1)
        throw std::invalid_argument("synthetic: classes, videos_per_class, t_snippets and dim must be positive");
    if (mu < 0.0) throw std::invalid_argument("synthetic: mu must be >= 0");
    if (fg_sigma < 0.0 || bg_sigma < 0.0)
        throw std::invalid_argument("synthetic: sigmas must be >= 0");
    if (scene_coef < 0.0) throw std::invalid_argument("synthetic: scene_coef must be >= 0");
    if (classes + 1 > dim)
        throw std::invalid_argument(
            "synthetic: needs classes + 1 <= dim for orthogonal class and scene directions");
    if (min_event_len < 1 || min_event_len > t_snippets)
        throw std::invalid_argument("synthetic: min_event_len out of range");
}

// Orthonormal directions via Gram-Schmidt on seeded Gaussian draws.
static std::vector<Vec> orthonormal_directions(int count, int dim, Rng& rng) {
    std::vector<Vec> dirs;
    while (static_cast<int>(dirs.size()) < count) {
        Vec v(dim);
        for (int i = 0; i < dim; ++i) v(i) = rng.normal();
        for (const Vec& u : dirs) v -= u * u.dot(v);
        const double n = v.norm();
        if (n < 1e-8) continue; // essentially dependent draw; retry
        dirs.push_back(v / n);
    }
    return dirs;
}

DatasetManifest make_synthetic_dataset(const SyntheticConfig& cfg, std::uint64_t seed,
                                       const fs::path& out_dir, const json& meta) {
    cfg.validate();
    Rng rng(seed);
    const double duration = cfg.duration_s > 0.0 ? cfg.duration_s : static_cast<double>(cfg.t_snippets);
    const double snippet_len = duration / cfg.t_snippets;
    const int max_len = cfg.max_event_len > 0 ? cfg.max_event_len
                                              : std::max(cfg.min_event_len, cfg.t_snippets / 2);
    // direction 0 is the shared scene; classes sit orthogonal to it
    const std::vector<Vec> dirs = orthonormal_directions(cfg.classes + 1, cfg.dim, rng);
    const Vec scene = cfg.scene_coef * cfg.mu * dirs[0];

    DatasetManifest m;
    for (int c = 0; c < cfg.classes; ++c) {
        const Vec mean = (cfg.mu * dirs[static_cast<size_t>(c) + 1] + scene).eval();
        const std::string action = "action" + std::to_string(c);
        for (int v = 0; v < cfg.videos_per_class; ++v) {
            VideoRecord r;
            r.video_id = "c" + std::to_string(c) + "_v" + std::to_string(v);
            r.class_id = c;
            r.features.duration_s = duration;
            r.features.values.resize(cfg.t_snippets, cfg.dim);

            // Plant one snippet-aligned event.
            const int len = cfg.min_event_len +
                            static_cast<int>(rng.below(static_cast<std::uint64_t>(
                                std::max(1, max_len - cfg.min_event_len + 1))));
            const int start = static_cast<int>(
                rng.below(static_cast<std::uint64_t>(cfg.t_snippets - len + 1)));
            r.annotations.intervals.push_back({start * snippet_len, (start + len) * snippet_len});

            TextBundle texts;
            for (int i = 0; i < cfg.t_snippets; ++i) {
                const bool fg = i >= start && i < start + len;
                const Vec& center = fg ? mean : scene;
                const double sigma = fg ? cfg.fg_sigma : cfg.bg_sigma;
                for (int j = 0; j < cfg.dim; ++j)
                    r.features.values(i, j) = center(j) + sigma * rng.normal();
                texts.captions.push_back(fg ? "a person performs the " + action + " movement"
                                            : "an uneventful background scene with no action");
            }
            texts.coe_sentences = {
                "A person enters the scene and prepares for " + action + ".",
                "The person starts " + action + ", which causes the main event to unfold.",
                "The " + action + " event leads to the scene settling back to normal.",
            };
            r.texts = std::move(texts);
            m.records.push_back(std::move(r));
        }
    }
    for (int c = 0; c < cfg.classes; ++c) {
        const auto planned = cfg.splits.find(c);
        m.splits[c] = planned != cfg.splits.end()
                          ? planned->second
                          : (c % 3 == 0 ? Split::train : (c % 3 == 1 ? Split::val : Split::test));
    }

    fs::create_directories(out_dir);
    write_manifest(m, out_dir / "manifest.json", meta);
    return load_manifest(out_dir / "manifest.json");
}

} // namespace coetal::datapack
