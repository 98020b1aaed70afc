#pragma once

#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <vector>

#include "coetal/datapack.hpp"
#include "coetal/tensor.hpp"

namespace coetal::locate {

// Candidate action segment. Snippet indices are [start, end); second units
// follow the snippet grid (start_s = start * duration / T).
struct Proposal {
    int start = 0;
    int end = 0;
    double start_s = 0.0;
    double end_s = 0.0;
    double confidence = 0.0;
};

struct EvalConfig {
    std::vector<double> thresholds;  // strictly increasing, in (0,1)
    int min_len = 2;                 // snippets; shorter runs are dropped
    double snms_iou = 0.7;           // overlap above which soft-NMS decays
    double snms_min_score = 1e-3;    // rescored proposals below this are dropped
    std::vector<double> iou_grid;    // IoU thresholds for the mean-mAP report

    EvalConfig();
    void validate() const;
};

// Maximal runs of p_hat > theta per threshold; confidence is the mean
// probability over the run; identical (start, end) segments produced by
// several thresholds are kept once.
std::vector<Proposal> extract_proposals(const Vec& p_hat, const EvalConfig& cfg,
                                        double duration_s);

// Intersection over union of the second-unit extents; 0 when disjoint.
double temporal_iou(const Proposal& a, const Proposal& b);

// Linear soft-NMS: repeatedly take the highest-confidence proposal; others
// with IoU > snms_iou against it decay by (1 - IoU). Ties break by earlier
// start, then shorter length. Proposals falling below snms_min_score drop.
std::vector<Proposal> soft_nms(std::vector<Proposal> proposals, const EvalConfig& cfg);

// Greedy confidence-ordered matching at the given IoU threshold;
// uninterpolated all-point average precision. Empty ground truth with
// proposals present scores 0 and warns on stderr.
double average_precision(std::vector<Proposal> proposals,
                         const std::vector<datapack::Interval>& ground_truth, double iou_thr);

using ProbeFn = std::function<Vec(const datapack::Episode&)>;

struct EvalReport {
    std::map<double, double> map_at;
    double mean_map = 0.0;
};

// Per episode: probe -> extract -> soft-NMS -> AP at every IoU in the grid.
// mAP averages per class first, then across classes. When dump_path is set,
// rescored proposals are appended as JSON lines
// {episode_id, start_s, end_s, confidence}.
EvalReport evaluate(const std::vector<datapack::Episode>& episodes, const ProbeFn& probe,
                    const EvalConfig& cfg,
                    const std::optional<std::filesystem::path>& dump_path = std::nullopt);

} // namespace coetal::locate
