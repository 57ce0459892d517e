#pragma once

#include <algorithm>
#include <cstdint>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

// Temporal action-segmentation metrics (frame accuracy, segmental edit
// score, F1@k) and dense mIoU. `reference` holds independent re-derivations
// of the matcher and the edit distance; the test suite cross-checks the two
// on random timelines, so a bug in either one fails loudly.

namespace pc4d {

struct Segment {
    std::int64_t label;
    std::size_t start;  // first frame
    std::size_t end;    // last frame, inclusive
};

using SegmentTimeline = std::vector<Segment>;

inline SegmentTimeline segments_from_labels(const std::vector<std::int64_t>& labels) {
    if (labels.empty()) throw std::invalid_argument("segments_from_labels: empty label sequence");
    SegmentTimeline tl;
    std::size_t start = 0;
    for (std::size_t i = 1; i <= labels.size(); ++i) {
        if (i == labels.size() || labels[i] != labels[start]) {
            tl.push_back({labels[start], start, i - 1});
            start = i;
        }
    }
    return tl;
}

inline double frame_accuracy(const std::vector<std::int64_t>& pred, const std::vector<std::int64_t>& gt) {
    if (pred.size() != gt.size() || gt.empty())
        throw std::invalid_argument("frame_accuracy: label sequences must be non-empty and equal length");
    std::size_t hits = 0;
    for (std::size_t i = 0; i < gt.size(); ++i) hits += pred[i] == gt[i];
    return 100.0 * static_cast<double>(hits) / static_cast<double>(gt.size());
}

namespace detail {

inline std::size_t segment_iou_inter(const Segment& a, const Segment& b) {
    std::size_t lo = std::max(a.start, b.start);
    std::size_t hi = std::min(a.end, b.end);
    return hi >= lo ? hi - lo + 1 : 0;
}

inline double segment_iou(const Segment& a, const Segment& b) {
    std::size_t inter = segment_iou_inter(a, b);
    std::size_t uni = (a.end - a.start + 1) + (b.end - b.start + 1) - inter;
    return static_cast<double>(inter) / static_cast<double>(uni);
}

}  // namespace detail

// 100 * (1 - levenshtein(pred labels, gt labels) / max(|pred|, |gt|)), never
// below zero.
inline double edit_score(const SegmentTimeline& pred, const SegmentTimeline& gt) {
    if (pred.empty() || gt.empty()) throw std::invalid_argument("edit_score: empty timeline");
    const std::size_t n = pred.size(), m = gt.size();
    std::vector<std::size_t> prev(m + 1), cur(m + 1);
    for (std::size_t j = 0; j <= m; ++j) prev[j] = j;
    for (std::size_t i = 1; i <= n; ++i) {
        cur[0] = i;
        for (std::size_t j = 1; j <= m; ++j) {
            std::size_t subst = prev[j - 1] + (pred[i - 1].label == gt[j - 1].label ? 0 : 1);
            cur[j] = std::min({prev[j] + 1, cur[j - 1] + 1, subst});
        }
        std::swap(prev, cur);
    }
    double d = static_cast<double>(prev[m]);
    double score = 100.0 * (1.0 - d / static_cast<double>(std::max(n, m)));
    return std::max(0.0, score);
}

// Segment F1 at overlap threshold k. Greedy matching in prediction order: a
// predicted segment claims its highest-IoU unmatched ground-truth segment of
// the same label (ties to the earlier one); it is a true positive if that
// IoU reaches k.
inline double f1_at_k(const SegmentTimeline& pred, const SegmentTimeline& gt, double k) {
    if (pred.empty() || gt.empty()) throw std::invalid_argument("f1_at_k: empty timeline");
    std::vector<char> used(gt.size(), 0);
    std::size_t tp = 0;
    for (const Segment& p : pred) {
        double best = -1.0;
        std::size_t best_j = gt.size();
        for (std::size_t j = 0; j < gt.size(); ++j) {
            if (used[j] || gt[j].label != p.label) continue;
            double iou = detail::segment_iou(p, gt[j]);
            if (iou > best) {
                best = iou;
                best_j = j;
            }
        }
        if (best_j < gt.size() && best >= k) {
            used[best_j] = 1;
            ++tp;
        }
    }
    if (tp == 0) return 0.0;
    double prec = static_cast<double>(tp) / static_cast<double>(pred.size());
    double rec = static_cast<double>(tp) / static_cast<double>(gt.size());
    return 100.0 * 2.0 * prec * rec / (prec + rec);
}

// Per-class IoU over all positions, averaged over the classes that occur in
// ground truth. Positions with gt == ignore are excluded everywhere.
inline double mean_iou(const std::vector<std::int64_t>& pred, const std::vector<std::int64_t>& gt,
                       std::int64_t num_classes, std::int64_t ignore = -1) {
    if (pred.size() != gt.size() || gt.empty())
        throw std::invalid_argument("mean_iou: label sequences must be non-empty and equal length");
    std::vector<std::size_t> inter(static_cast<std::size_t>(num_classes), 0);
    std::vector<std::size_t> pred_n(static_cast<std::size_t>(num_classes), 0);
    std::vector<std::size_t> gt_n(static_cast<std::size_t>(num_classes), 0);
    for (std::size_t i = 0; i < gt.size(); ++i) {
        if (gt[i] == ignore) continue;
        if (gt[i] < 0 || gt[i] >= num_classes)
            throw std::invalid_argument("mean_iou: gt label " + std::to_string(gt[i]) + " out of range");
        ++gt_n[static_cast<std::size_t>(gt[i])];
        if (pred[i] >= 0 && pred[i] < num_classes) {
            ++pred_n[static_cast<std::size_t>(pred[i])];
            if (pred[i] == gt[i]) ++inter[static_cast<std::size_t>(gt[i])];
        }
    }
    double total = 0.0;
    std::size_t classes = 0;
    for (std::int64_t c = 0; c < num_classes; ++c) {
        auto cc = static_cast<std::size_t>(c);
        if (gt_n[cc] == 0) continue;  // absent from gt: excluded from the average
        std::size_t uni = gt_n[cc] + pred_n[cc] - inter[cc];
        total += static_cast<double>(inter[cc]) / static_cast<double>(uni);
        ++classes;
    }
    return classes == 0 ? 0.0 : 100.0 * total / static_cast<double>(classes);
}

struct MetricReport {
    double acc = 0.0;
    double edit = 0.0;
    std::map<double, double> f1;  // threshold -> percent
    std::optional<double> miou;
};

inline const std::vector<double>& f1_thresholds() {
    static const std::vector<double> t = {0.10, 0.25, 0.50};
    return t;
}

inline MetricReport compute_report(const std::vector<std::int64_t>& pred_frames,
                                   const std::vector<std::int64_t>& gt_frames) {
    MetricReport r;
    r.acc = frame_accuracy(pred_frames, gt_frames);
    SegmentTimeline pt = segments_from_labels(pred_frames);
    SegmentTimeline gtt = segments_from_labels(gt_frames);
    r.edit = edit_score(pt, gtt);
    for (double k : f1_thresholds()) r.f1[k] = f1_at_k(pt, gtt, k);
    return r;
}

// Independent implementations of the same contracts, kept deliberately
// different in structure (memoized recursion, precomputed IoU table).
namespace reference {

namespace detail {

inline std::size_t lev(const std::vector<std::int64_t>& a, const std::vector<std::int64_t>& b, std::size_t i,
                       std::size_t j, std::vector<std::int64_t>& memo, std::size_t cols) {
    if (i == 0) return j;
    if (j == 0) return i;
    std::int64_t& m = memo[i * cols + j];
    if (m >= 0) return static_cast<std::size_t>(m);
    std::size_t best = std::min(lev(a, b, i - 1, j, memo, cols), lev(a, b, i, j - 1, memo, cols)) + 1;
    std::size_t subst = lev(a, b, i - 1, j - 1, memo, cols) + (a[i - 1] == b[j - 1] ? 0 : 1);
    best = std::min(best, subst);
    m = static_cast<std::int64_t>(best);
    return best;
}

}  // namespace detail

inline double edit_score(const SegmentTimeline& pred, const SegmentTimeline& gt) {
    if (pred.empty() || gt.empty()) throw std::invalid_argument("reference edit_score: empty timeline");
    std::vector<std::int64_t> a, b;
    for (const Segment& s : pred) a.push_back(s.label);
    for (const Segment& s : gt) b.push_back(s.label);
    std::vector<std::int64_t> memo((a.size() + 1) * (b.size() + 1), -1);
    double d = static_cast<double>(detail::lev(a, b, a.size(), b.size(), memo, b.size() + 1));
    return std::max(0.0, 100.0 * (1.0 - d / static_cast<double>(std::max(a.size(), b.size()))));
}

inline double f1_at_k(const SegmentTimeline& pred, const SegmentTimeline& gt, double k) {
    if (pred.empty() || gt.empty()) throw std::invalid_argument("reference f1_at_k: empty timeline");
    // full IoU table over segment pairs, then the in-order one-to-one
    // consumption rule applied against it
    const std::size_t n = pred.size(), m = gt.size();
    std::vector<double> iou(n * m, -1.0);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < m; ++j) {
            if (pred[i].label != gt[j].label) continue;
            std::size_t lo = std::max(pred[i].start, gt[j].start);
            std::size_t hi = std::min(pred[i].end, gt[j].end);
            double inter = hi >= lo ? static_cast<double>(hi - lo + 1) : 0.0;
            double uni = static_cast<double>((pred[i].end - pred[i].start + 1) + (gt[j].end - gt[j].start + 1)) - inter;
            iou[i * m + j] = inter / uni;
        }
    std::vector<char> taken(m, 0);
    std::size_t tp = 0, fp = 0;
    for (std::size_t i = 0; i < n; ++i) {
        std::size_t arg = m;
        for (std::size_t j = 0; j < m; ++j) {
            if (taken[j] || iou[i * m + j] < 0.0) continue;
            if (arg == m || iou[i * m + j] > iou[i * m + arg]) arg = j;
        }
        if (arg != m && iou[i * m + arg] >= k) {
            taken[arg] = 1;
            ++tp;
        } else {
            ++fp;
        }
    }
    std::size_t fn = 0;
    for (char t : taken) fn += t == 0;
    if (tp == 0) return 0.0;
    double prec = static_cast<double>(tp) / static_cast<double>(tp + fp);
    double rec = static_cast<double>(tp) / static_cast<double>(tp + fn);
    return 100.0 * 2.0 * prec * rec / (prec + rec);
}

}  // namespace reference

}  // namespace pc4d
