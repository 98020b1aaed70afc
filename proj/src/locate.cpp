#include "coetal/locate.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>
#include <set>
#include <stdexcept>

#include <nlohmann/json.hpp>

#include "coetal/io.hpp"

namespace coetal::locate {

using nlohmann::json;

EvalConfig::EvalConfig() {
    for (int i = 0; i <= 8; ++i) thresholds.push_back(0.30 + 0.05 * i); // 0.30 .. 0.70
    for (int i = 0; i <= 9; ++i) iou_grid.push_back(0.50 + 0.05 * i);   // 0.50 .. 0.95
}

void EvalConfig::validate() const {
    if (thresholds.empty()) throw std::invalid_argument("eval: thresholds empty");
    for (size_t i = 0; i < thresholds.size(); ++i) {
        if (!(thresholds[i] > 0.0 && thresholds[i] < 1.0))
            throw std::invalid_argument("eval: thresholds must lie in (0,1)");
        if (i > 0 && !(thresholds[i] > thresholds[i - 1]))
            throw std::invalid_argument("eval: thresholds must be strictly increasing");
    }
    if (min_len < 1) throw std::invalid_argument("eval: min_len must be >= 1");
    if (!(snms_iou > 0.0 && snms_iou < 1.0))
        throw std::invalid_argument("eval: snms_iou must lie in (0,1)");
    if (!(snms_min_score >= 0.0)) throw std::invalid_argument("eval: snms_min_score must be >= 0");
    if (iou_grid.empty()) throw std::invalid_argument("eval: iou_grid empty");
}

std::vector<Proposal> extract_proposals(const Vec& p_hat, const EvalConfig& cfg,
                                        double duration_s) {
    cfg.validate();
    if (!(duration_s > 0.0)) throw std::invalid_argument("extract_proposals: duration must be > 0");
    const int t = static_cast<int>(p_hat.size());
    for (int i = 0; i < t; ++i)
        if (!(p_hat(i) >= 0.0 && p_hat(i) <= 1.0))
            throw std::invalid_argument("extract_proposals: probabilities must lie in [0,1]");

    const double snippet_len = duration_s / t;
    std::set<std::pair<int, int>> seen;
    std::vector<Proposal> out;
    for (double theta : cfg.thresholds) {
        int i = 0;
        while (i < t) {
            if (p_hat(i) > theta) {
                int j = i;
                while (j < t && p_hat(j) > theta) ++j;
                if (j - i >= cfg.min_len && seen.insert({i, j}).second) {
                    Proposal p;
                    p.start = i;
                    p.end = j;
                    p.start_s = i * snippet_len;
                    p.end_s = j * snippet_len;
                    p.confidence = p_hat.segment(i, j - i).mean();
                    out.push_back(p);
                }
                i = j;
            } else {
                ++i;
            }
        }
    }
    return out;
}

static double iou_seconds(double a_s, double a_e, double b_s, double b_e) {
    const double inter = std::max(0.0, std::min(a_e, b_e) - std::max(a_s, b_s));
    const double uni = (a_e - a_s) + (b_e - b_s) - inter;
    return uni > 0.0 ? inter / uni : 0.0;
}

double temporal_iou(const Proposal& a, const Proposal& b) {
    return iou_seconds(a.start_s, a.end_s, b.start_s, b.end_s);
}

static bool conf_order(const Proposal& a, const Proposal& b) {
    if (a.confidence != b.confidence) return a.confidence > b.confidence;
    if (a.start_s != b.start_s) return a.start_s < b.start_s;
    return (a.end_s - a.start_s) < (b.end_s - b.start_s);
}

std::vector<Proposal> soft_nms(std::vector<Proposal> proposals, const EvalConfig& cfg) {
    cfg.validate();
    std::vector<Proposal> kept;
    std::vector<Proposal> pending = std::move(proposals);
    while (!pending.empty()) {
        const auto best = std::min_element(pending.begin(), pending.end(), conf_order);
        Proposal top = *best;
        pending.erase(best);
        kept.push_back(top);
        std::vector<Proposal> survivors;
        for (Proposal& p : pending) {
            const double iou = temporal_iou(top, p);
            if (iou > cfg.snms_iou) p.confidence *= (1.0 - iou);
            if (p.confidence >= cfg.snms_min_score) survivors.push_back(p);
        }
        pending = std::move(survivors);
    }
    return kept;
}

double average_precision(std::vector<Proposal> proposals,
                         const std::vector<datapack::Interval>& ground_truth, double iou_thr) {
    if (ground_truth.empty()) {
        if (!proposals.empty())
            std::cerr << "[locate] warning: proposals scored against empty ground truth\n";
        return 0.0;
    }
    std::sort(proposals.begin(), proposals.end(), conf_order);
    std::vector<bool> matched(ground_truth.size(), false);
    double ap = 0.0;
    int tp = 0;
    for (size_t rank = 0; rank < proposals.size(); ++rank) {
        const Proposal& p = proposals[rank];
        int best_gt = -1;
        double best_iou = 0.0;
        for (size_t g = 0; g < ground_truth.size(); ++g) {
            if (matched[g]) continue;
            const double iou = iou_seconds(p.start_s, p.end_s, ground_truth[g].t_s,
                                           ground_truth[g].t_e);
            if (iou >= iou_thr && iou > best_iou) {
                best_iou = iou;
                best_gt = static_cast<int>(g);
            }
        }
        if (best_gt >= 0) {
            matched[static_cast<size_t>(best_gt)] = true;
            ++tp;
            ap += static_cast<double>(tp) / static_cast<double>(rank + 1);
        }
    }
    return ap / static_cast<double>(ground_truth.size());
}

EvalReport evaluate(const std::vector<datapack::Episode>& episodes, const ProbeFn& probe,
                    const EvalConfig& cfg, const std::optional<std::filesystem::path>& dump_path) {
    cfg.validate();
    if (episodes.empty()) throw std::invalid_argument("evaluate: no episodes");

    // per class, per IoU, the episode APs
    std::map<int, std::map<double, std::vector<double>>> class_aps;
    for (size_t e = 0; e < episodes.size(); ++e) {
        const datapack::Episode& ep = episodes[e];
        const Vec p_hat = probe(ep);
        if (p_hat.size() != ep.t())
            throw std::runtime_error("evaluate: probe returned wrong length");
        std::vector<Proposal> props =
            soft_nms(extract_proposals(p_hat, cfg, ep.query.features.duration_s), cfg);
        if (dump_path) {
            const std::string episode_id =
                "ep" + std::to_string(e) + ":" + ep.query.video_id;
            for (const Proposal& p : props)
                io::append_jsonl(*dump_path, json{{"episode_id", episode_id},
                                                  {"start_s", p.start_s},
                                                  {"end_s", p.end_s},
                                                  {"confidence", p.confidence}});
        }
        for (double iou : cfg.iou_grid)
            class_aps[ep.class_id][iou].push_back(
                average_precision(props, ep.query.annotations.intervals, iou));
    }

    EvalReport report;
    for (double iou : cfg.iou_grid) {
        double class_mean_sum = 0.0;
        for (auto& [cid, per_iou] : class_aps) {
            const std::vector<double>& aps = per_iou[iou];
            double s = 0.0;
            for (double a : aps) s += a;
            class_mean_sum += s / static_cast<double>(aps.size());
        }
        report.map_at[iou] = class_mean_sum / static_cast<double>(class_aps.size());
    }
    double total = 0.0;
    for (const auto& [iou, v] : report.map_at) total += v;
    report.mean_map = total / static_cast<double>(report.map_at.size());
    return report;
}

} // namespace coetal::locate
