#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "coetal/rng.hpp"
#include "coetal/tensor.hpp"

namespace coetal::datapack {

// T x D snippet features plus timing. Snippet i spans
// [i * duration_s / T, (i+1) * duration_s / T).
struct FeatureSequence {
    Mat values;
    double duration_s = 0.0;

    int t() const { return static_cast<int>(values.rows()); }
    int d() const { return static_cast<int>(values.cols()); }
};

struct Interval {
    double t_s = 0.0;
    double t_e = 0.0;
};

// Action intervals of one video, sorted by start, non-overlapping.
struct AnnotationTrack {
    std::vector<Interval> intervals;
};

struct TextBundle {
    std::vector<std::string> captions;      // one per snippet, in snippet order
    std::vector<std::string> coe_sentences; // chain-of-evidence sentences, >= 1
};

struct VideoRecord {
    std::string video_id;
    int class_id = 0;
    FeatureSequence features;
    AnnotationTrack annotations;
    std::optional<TextBundle> texts;
};

enum class Split { train, val, test };

const char* split_name(Split s);
Split split_from_name(const std::string& name);

struct DatasetManifest {
    std::vector<VideoRecord> records;
    std::map<int, Split> splits;

    // Throws on: duplicate video ids, classes missing a split entry,
    // annotation intervals out of range or overlapping, texts whose caption
    // count does not match the native snippet count.
    void validate() const;

    std::vector<const VideoRecord*> records_in_split(Split s) const;
};

// One K-shot task. Features in query/supports are rescaled to the episode's
// snippet count; masks are built from the rescaled grid.
struct Episode {
    VideoRecord query;
    std::vector<VideoRecord> supports;
    int class_id = 0;
    Vec query_mask;
    std::vector<Vec> support_masks;

    int t() const { return static_cast<int>(query_mask.size()); }
    int k() const { return static_cast<int>(supports.size()); }
};

// Manifest JSON:
//   {"videos": [{"id", "features", "annotations": [{"t_s","t_e"}],
//                "class_id", "texts": optional path}],
//    "splits": {"<class_id>": "train|val|test"},
//    "meta": optional free-form object}
// Feature/text paths are resolved relative to the manifest's directory.
// A class listed twice in "splits" (or once with two names) is rejected.
DatasetManifest load_manifest(const std::filesystem::path& path);
void write_manifest(const DatasetManifest& manifest, const std::filesystem::path& path,
                    const nlohmann::json& meta = nlohmann::json::object());

// Per-column piecewise-linear resample at positions p_j = j*(T-1)/(t_out-1);
// t_out = 1 returns the first row. Endpoints are preserved exactly, and
// resampling at the native T is the identity.
FeatureSequence rescale_features(const FeatureSequence& f, int t_out);

// Nearest-position resample of per-snippet captions to t_out entries.
std::vector<std::string> resample_captions(const std::vector<std::string>& captions, int t_out);

// Binary foreground mask of length t: snippet i is foreground iff its
// temporal center (i + 0.5) * duration_s / t lies inside some [t_s, t_e).
Vec snippet_labels(const AnnotationTrack& ann, double duration_s, int t);

// No class in the requested split can host a (query + k texted supports)
// episode.
struct NoEligibleClassError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Uniformly picks an eligible class, then a query and k distinct supports
// (supports must carry texts). Features are rescaled to t_snippets and
// masks derived from the rescaled grid.
Episode sample_episode(const DatasetManifest& manifest, Split split, int k, int t_snippets,
                       Rng& rng);

struct SyntheticConfig {
    int classes = 3;
    int videos_per_class = 6;
    int t_snippets = 20;
    int dim = 8;
    double mu = 4.0;       // between-class separation of foreground means
    double fg_sigma = 1.0; // per-coordinate noise around the class mean
    double bg_sigma = 1.0; // per-coordinate noise around the background mean
    // strength (relative to mu) of a scene direction shared by all videos;
    // when positive it dominates background snippets and also contaminates
    // foregrounds, giving background-foreground pairs a deceptive visual
    // affinity (hard mode)
    double scene_coef = 0.0;
    double duration_s = 0.0; // 0 => one second per snippet
    int min_event_len = 4;   // planted interval length bounds, in snippets
    int max_event_len = 0;   // 0 => t_snippets / 2
    // class -> split; classes not listed follow the round-robin default
    // (c % 3 == 0 train, == 1 val, == 2 test)
    std::map<int, Split> splits;

    void validate() const; // throws on non-positive sizes, negative mu, classes > dim
};

// Writes features/, texts/ and manifest.json under out_dir and returns the
// loaded manifest. Foreground snippets of class c are drawn around mu * u_c
// for orthonormal directions u_c, background around the origin; each video
// gets one snippet-aligned planted interval, per-snippet captions and a
// template chain-of-evidence text. Byte-identical output for a fixed seed.
DatasetManifest make_synthetic_dataset(const SyntheticConfig& cfg, std::uint64_t seed,
                                       const std::filesystem::path& out_dir,
                                       const nlohmann::json& meta = nlohmann::json::object());

} // namespace coetal::datapack
