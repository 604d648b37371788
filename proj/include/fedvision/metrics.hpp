#pragma once

#include <algorithm>
#include <array>
#include <numeric>
#include <span>
#include <vector>

#include "common.hpp"
#include "data.hpp"
#include "detector.hpp"
#include "geometry.hpp"

namespace fedvision {

struct MatchPair {
    std::size_t detection;
    std::size_t truth;
    double iou;
};

/// Matching of one image's detections against its ground truth.
struct MatchSet {
    std::vector<MatchPair> matches;
    std::vector<std::size_t> false_positives;   ///< unmatched detection indices
    std::vector<std::size_t> false_negatives;   ///< unmatched truth indices
    std::vector<bool> detection_is_tp;          ///< per input detection

    std::size_t tp() const { return matches.size(); }
    std::size_t fp() const { return false_positives.size(); }
    std::size_t fn() const { return false_negatives.size(); }
};

/// Greedy matching: detections in descending score order (ties by input
/// order) each claim the unmatched same-class truth of highest IoU that
/// reaches the threshold.
inline MatchSet match_detections(std::span<const Detection> dets, std::span<const Annotation> truths,
                                 double iou_threshold) {
    require(iou_threshold > 0.0 && iou_threshold <= 1.0, "match_detections: threshold must be in (0,1]");
    std::vector<std::size_t> order(dets.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return dets[a].score > dets[b].score; });

    MatchSet m;
    m.detection_is_tp.assign(dets.size(), false);
    std::vector<bool> taken(truths.size(), false);
    for (std::size_t di : order) {
        const Detection& d = dets[di];
        double best_iou = -1.0;
        std::size_t best = truths.size();
        for (std::size_t ti = 0; ti < truths.size(); ++ti) {
            if (taken[ti] || truths[ti].class_id != d.class_id) continue;
            const double v = iou(d.box, truths[ti].box);
            if (v >= iou_threshold && v > best_iou) {
                best_iou = v;
                best = ti;
            }
        }
        if (best < truths.size()) {
            taken[best] = true;
            m.detection_is_tp[di] = true;
            m.matches.push_back({di, best, best_iou});
        } else {
            m.false_positives.push_back(di);
        }
    }
    for (std::size_t ti = 0; ti < truths.size(); ++ti)
        if (!taken[ti]) m.false_negatives.push_back(ti);
    return m;
}

struct ApResult {
    double value = 0.0;
    bool no_ground_truth = false;  ///< AP forced to 0 because the class has no instances
};

/// All-point interpolated AP from scored TP/FP flags and the number of
/// ground-truth instances. Precision/recall points are taken only at distinct
/// score cutoffs, so tied scores enter together.
inline double ap_from_flags(std::vector<std::pair<double, bool>> scored, std::size_t num_truth) {
    if (num_truth == 0) return 0.0;
    std::stable_sort(scored.begin(), scored.end(),
                     [](const auto& a, const auto& b) { return a.first > b.first; });
    std::vector<double> recall, precision;
    std::size_t tp = 0;
    for (std::size_t i = 0; i < scored.size(); ++i) {
        tp += scored[i].second ? 1 : 0;
        if (i + 1 < scored.size() && scored[i + 1].first == scored[i].first) continue;
        recall.push_back(static_cast<double>(tp) / static_cast<double>(num_truth));
        precision.push_back(static_cast<double>(tp) / static_cast<double>(i + 1));
    }
    // precision envelope, right to left
    for (std::size_t i = precision.size(); i-- > 1;) precision[i - 1] = std::max(precision[i - 1], precision[i]);
    double ap = 0.0, prev_recall = 0.0;
    for (std::size_t i = 0; i < recall.size(); ++i) {
        ap += (recall[i] - prev_recall) * precision[i];
        prev_recall = recall[i];
    }
    return ap;
}

/// AP of one class over a dataset. dets[i] and truths[i] belong to image i.
inline ApResult average_precision(std::span<const std::vector<Detection>> dets,
                                  std::span<const std::vector<Annotation>> truths, int class_id,
                                  double iou_threshold) {
    require(dets.size() == truths.size(), "average_precision: detections and truths must cover the same images");
    std::vector<std::pair<double, bool>> scored;
    std::size_t num_truth = 0;
    for (std::size_t img = 0; img < dets.size(); ++img) {
        const auto m = match_detections(dets[img], truths[img], iou_threshold);
        for (std::size_t d = 0; d < dets[img].size(); ++d)
            if (dets[img][d].class_id == class_id) scored.emplace_back(dets[img][d].score, m.detection_is_tp[d]);
        for (const auto& t : truths[img]) num_truth += t.class_id == class_id ? 1 : 0;
    }
    if (num_truth == 0) return {0.0, true};
    return {ap_from_flags(std::move(scored), num_truth), false};
}

// ---------------------------------------------------------------------------
// Dataset-level evaluation

struct EvalThresholds {
    double ap_score_threshold = 0.001;  ///< candidates kept for AP computation
    double nms_iou = 0.5;
    double pr_score_threshold = 0.25;   ///< precision/recall operating point
    double pr_iou = 0.5;
};

inline constexpr std::array<double, 10> kCocoIouThresholds = {0.50, 0.55, 0.60, 0.65, 0.70,
                                                              0.75, 0.80, 0.85, 0.90, 0.95};

struct EvalResult {
    double map50 = 0.0;
    double map50_95 = 0.0;
    double recall = 0.0;
    double precision = 1.0;
    double mean_loss = 0.0;
    bool empty_prediction = false;   ///< precision reported as 1.0 by convention (no detections)
    bool missing_classes = false;    ///< some class had no ground truth; excluded from the mean
};

/// Scores already-produced detections. mAP averages over classes that have
/// at least one ground-truth instance (0 if none has).
inline EvalResult evaluate_detections(std::span<const std::vector<Detection>> dets,
                                      std::span<const std::vector<Annotation>> truths,
                                      const EvalThresholds& th = {}, int num_classes = kNumClasses) {
    require(dets.size() == truths.size(), "evaluate: detections and truths must cover the same images");
    EvalResult r;
    double sum50 = 0.0, sum_all = 0.0;
    int classes_present = 0;
    for (int c = 0; c < num_classes; ++c) {
        const ApResult ap50 = average_precision(dets, truths, c, 0.5);
        if (ap50.no_ground_truth) {
            r.missing_classes = true;
            continue;
        }
        ++classes_present;
        sum50 += ap50.value;
        double acc = 0.0;
        for (double t : kCocoIouThresholds) acc += average_precision(dets, truths, c, t).value;
        sum_all += acc / static_cast<double>(kCocoIouThresholds.size());
    }
    if (classes_present > 0) {
        r.map50 = sum50 / classes_present;
        r.map50_95 = sum_all / classes_present;
    }

    std::size_t tp = 0, fp = 0, n_truth = 0;
    for (std::size_t i = 0; i < dets.size(); ++i) {
        std::vector<Detection> op;
        for (const auto& d : dets[i])
            if (d.score >= th.pr_score_threshold) op.push_back(d);
        const auto m = match_detections(op, truths[i], th.pr_iou);
        tp += m.tp();
        fp += m.fp();
        n_truth += truths[i].size();
    }
    r.empty_prediction = tp + fp == 0;
    r.precision = r.empty_prediction ? 1.0 : static_cast<double>(tp) / static_cast<double>(tp + fp);
    r.recall = n_truth == 0 ? 1.0 : static_cast<double>(tp) / static_cast<double>(n_truth);
    return r;
}

inline std::vector<std::vector<Annotation>> truths_of(std::span<const Sample> samples) {
    std::vector<std::vector<Annotation>> out;
    out.reserve(samples.size());
    for (const auto& s : samples) out.push_back(s.annotations);
    return out;
}

inline EvalResult evaluate(const ParamVector& params, std::span<const Sample> test, const ModelConfig& cfg,
                           const EvalThresholds& th = {}) {
    require(!test.empty(), "evaluate: test set must be nonempty");
    std::vector<std::vector<Detection>> dets(test.size());
    for (std::size_t i = 0; i < test.size(); ++i)
        dets[i] = predict(params, test[i].image, cfg, th.ap_score_threshold, th.nms_iou);
    const auto truths = truths_of(test);
    EvalResult r = evaluate_detections(dets, truths, th, cfg.num_classes);
    r.mean_loss = mean_loss(params, test, cfg);
    return r;
}

/// Perfect detector: echoes the ground truth with score 1.
inline EvalResult evaluate_oracle(std::span<const Sample> test, const EvalThresholds& th = {}) {
    require(!test.empty(), "evaluate: test set must be nonempty");
    std::vector<std::vector<Detection>> dets(test.size());
    for (std::size_t i = 0; i < test.size(); ++i)
        for (const auto& a : test[i].annotations) dets[i].push_back({a.class_id, a.box, 1.0});
    return evaluate_detections(dets, truths_of(test), th);
}

}  // namespace fedvision
