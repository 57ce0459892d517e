#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "pc4d/attention.hpp"
#include "pc4d/ops.hpp"
#include "pc4d/optim.hpp"
#include "pc4d/synth.hpp"

// Point backbone: farthest-point anchors per frame, a spatio-temporal
// neighborhood encoder (relative-offset MLP + max pool over neighbors), and
// temporal self-attention over per-frame pooled tokens.

namespace pc4d {

// Greedy max-min subsampling. Starts from the point nearest the centroid and
// repeatedly takes the point farthest from the chosen set; all ties break to
// the lowest index, so the result is a pure function of the coordinates.
inline std::vector<std::size_t> farthest_point_sample(const double* pts, std::size_t n, std::size_t m) {
    if (m > n) throw std::invalid_argument("farthest_point_sample: M=" + std::to_string(m) + " exceeds N=" +
                                           std::to_string(n));
    double cx = 0, cy = 0, cz = 0;
    for (std::size_t i = 0; i < n; ++i) {
        cx += pts[i * 3];
        cy += pts[i * 3 + 1];
        cz += pts[i * 3 + 2];
    }
    cx /= static_cast<double>(n);
    cy /= static_cast<double>(n);
    cz /= static_cast<double>(n);
    std::size_t first = 0;
    double best = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < n; ++i) {
        double dx = pts[i * 3] - cx, dy = pts[i * 3 + 1] - cy, dz = pts[i * 3 + 2] - cz;
        double d = dx * dx + dy * dy + dz * dz;
        if (d < best) {
            best = d;
            first = i;
        }
    }
    std::vector<std::size_t> chosen{first};
    std::vector<double> mind(n);
    for (std::size_t i = 0; i < n; ++i) {
        double dx = pts[i * 3] - pts[first * 3], dy = pts[i * 3 + 1] - pts[first * 3 + 1],
               dz = pts[i * 3 + 2] - pts[first * 3 + 2];
        mind[i] = dx * dx + dy * dy + dz * dz;
    }
    while (chosen.size() < m) {
        std::size_t arg = 0;
        double far = -1.0;
        for (std::size_t i = 0; i < n; ++i)
            if (mind[i] > far) {
                far = mind[i];
                arg = i;
            }
        chosen.push_back(arg);
        for (std::size_t i = 0; i < n; ++i) {
            double dx = pts[i * 3] - pts[arg * 3], dy = pts[i * 3 + 1] - pts[arg * 3 + 1],
                   dz = pts[i * 3 + 2] - pts[arg * 3 + 2];
            mind[i] = std::min(mind[i], dx * dx + dy * dy + dz * dz);
        }
    }
    return chosen;
}

struct AnchorSet {
    std::size_t T = 0, M = 0;
    std::vector<std::size_t> indices;  // T*M indices into each frame
    std::vector<double> coords;        // T*M*3

    const double* anchor(std::size_t t, std::size_t m) const { return coords.data() + (t * M + m) * 3; }
};

inline AnchorSet select_anchors(const PointCloudVideo& video, std::size_t m) {
    AnchorSet a;
    a.T = video.T;
    a.M = m;
    a.indices.reserve(video.T * m);
    a.coords.resize(video.T * m * 3);
    for (std::size_t t = 0; t < video.T; ++t) {
        std::vector<std::size_t> idx = farthest_point_sample(video.frame(t), video.N, m);
        for (std::size_t j = 0; j < m; ++j) {
            a.indices.push_back(idx[j]);
            const double* p = video.frame(t) + idx[j] * 3;
            std::copy(p, p + 3, a.coords.data() + (t * m + j) * 3);
        }
    }
    return a;
}

// uncapped neighborhood sizes per anchor, mostly for diagnostics and tests
inline std::vector<std::size_t> point_neighbor_counts(const PointCloudVideo& video, const AnchorSet& anchors,
                                                      double radius, std::size_t temporal_radius) {
    std::vector<std::size_t> counts(anchors.T * anchors.M, 0);
    const double r2 = radius * radius;
    for (std::size_t t = 0; t < anchors.T; ++t) {
        const std::size_t t_lo = t >= temporal_radius ? t - temporal_radius : 0;
        const std::size_t t_hi = std::min(video.T - 1, t + temporal_radius);
        for (std::size_t m = 0; m < anchors.M; ++m) {
            const double* c = anchors.anchor(t, m);
            for (std::size_t u = t_lo; u <= t_hi; ++u) {
                const double* fr = video.frame(u);
                for (std::size_t i = 0; i < video.N; ++i) {
                    double dx = fr[i * 3] - c[0], dy = fr[i * 3 + 1] - c[1], dz = fr[i * 3 + 2] - c[2];
                    if (dx * dx + dy * dy + dz * dz <= r2) ++counts[t * anchors.M + m];
                }
            }
        }
    }
    return counts;
}

struct PointConvParams {
    Tensor w1, b1, w2, b2;  // shared offset MLP: 4 -> hidden -> D
};

inline PointConvParams make_point_conv(ParamStore& store, const std::string& prefix, const std::string& group,
                                       std::size_t hidden, std::size_t d, Rng& rng) {
    PointConvParams p;
    p.w1 = store.create(prefix + ".w1", group, {4, hidden}, 4, rng);
    p.b1 = store.create_init(prefix + ".b1", group, {1, hidden}, std::vector<double>(hidden, 0.0));
    p.w2 = store.create(prefix + ".w2", group, {hidden, d}, hidden, rng);
    p.b2 = store.create_init(prefix + ".b2", group, {1, d}, std::vector<double>(d, 0.0));
    return p;
}

// Spatio-temporal neighborhood encoder. For every anchor, neighbors within
// `radius` are gathered from frames t-rt..t+rt (clamped at the ends), capped
// at `max_neighbors` nearest-first with ties broken by (frame, point index).
// Each neighbor contributes [dx, dy, dz, dt] through the shared MLP; max
// pooling over the neighborhood yields the anchor feature. Only relative
// offsets enter, so the output is exactly translation invariant. Anchors
// with no neighbors produce the zero vector.
inline Tensor point4d_conv(const PointCloudVideo& video, const AnchorSet& anchors, double radius,
                           std::size_t temporal_radius, std::size_t max_neighbors, const PointConvParams& params) {
    if (radius <= 0.0) throw std::invalid_argument("point4d_conv: radius must be positive");
    const std::size_t T = anchors.T, M = anchors.M;
    const double r2 = radius * radius;

    struct Cand {
        double d2;
        std::size_t frame, idx;
    };
    std::vector<double> rows;  // (sum K_i) x 4
    std::vector<std::size_t> sizes(T * M, 0);
    std::vector<Cand> cand;
    for (std::size_t t = 0; t < T; ++t) {
        const std::size_t t_lo = t >= temporal_radius ? t - temporal_radius : 0;
        const std::size_t t_hi = std::min(video.T - 1, t + temporal_radius);
        for (std::size_t m = 0; m < M; ++m) {
            const double* c = anchors.anchor(t, m);
            cand.clear();
            for (std::size_t u = t_lo; u <= t_hi; ++u) {
                const double* fr = video.frame(u);
                for (std::size_t i = 0; i < video.N; ++i) {
                    double dx = fr[i * 3] - c[0], dy = fr[i * 3 + 1] - c[1], dz = fr[i * 3 + 2] - c[2];
                    double d2 = dx * dx + dy * dy + dz * dz;
                    if (d2 <= r2) cand.push_back({d2, u, i});
                }
            }
            std::size_t keep = std::min<std::size_t>(cand.size(), max_neighbors);
            std::partial_sort(cand.begin(), cand.begin() + static_cast<std::ptrdiff_t>(keep), cand.end(),
                              [](const Cand& a, const Cand& b) {
                                  if (a.d2 != b.d2) return a.d2 < b.d2;
                                  if (a.frame != b.frame) return a.frame < b.frame;
                                  return a.idx < b.idx;
                              });
            sizes[t * M + m] = keep;
            for (std::size_t j = 0; j < keep; ++j) {
                const double* p = video.frame(cand[j].frame) + cand[j].idx * 3;
                rows.push_back(p[0] - c[0]);
                rows.push_back(p[1] - c[1]);
                rows.push_back(p[2] - c[2]);
                rows.push_back(static_cast<double>(cand[j].frame) - static_cast<double>(t));
            }
        }
    }
    const std::size_t total = rows.size() / 4;
    if (total == 0) {
        // no anchor found any neighbor; feature is all zeros
        return Tensor::zeros({T * M, params.w2.dim(1)});
    }
    Tensor offsets = Tensor::from({total, 4}, std::move(rows));
    Tensor h = relu(linear(offsets, params.w1, params.b1));
    Tensor feat = linear(h, params.w2, params.b2);
    return segment_max(feat, sizes);  // (T*M, D)
}

// max-pool anchors per frame, then L self-attention layers over the T tokens
inline Tensor temporal_self_attention(const Tensor& low, std::size_t T, std::size_t M,
                                      const std::vector<AttentionLayerParams>& layers) {
    if (layers.empty()) throw std::invalid_argument("temporal_self_attention: need at least one layer");
    std::vector<std::size_t> sizes(T, M);
    Tensor tokens = segment_max(low, sizes);  // (T, D)
    for (const auto& p : layers) tokens = attention_layer(tokens, p);
    return tokens;
}

// Inverse-distance interpolation from the 3 nearest anchors of each frame to
// every point of that frame (weights proportional to 1/d^2, normalized). A
// query that coincides with an anchor gets that anchor's feature exactly.
// Returns one (N, M) weight matrix per frame, so dense features follow as
// weights[t] x anchor_features[t].
inline std::vector<Tensor> feature_propagation_weights(const PointCloudVideo& video, const AnchorSet& anchors) {
    if (anchors.M == 0) throw std::invalid_argument("feature_propagation: empty anchor set");
    const std::size_t k = std::min<std::size_t>(3, anchors.M);
    std::vector<Tensor> per_frame;
    per_frame.reserve(video.T);
    for (std::size_t t = 0; t < video.T; ++t) {
        std::vector<double> w(video.N * anchors.M, 0.0);
        for (std::size_t i = 0; i < video.N; ++i) {
            const double* p = video.frame(t) + i * 3;
            std::vector<std::pair<double, std::size_t>> d2(anchors.M);
            for (std::size_t m = 0; m < anchors.M; ++m) {
                const double* a = anchors.anchor(t, m);
                double dx = p[0] - a[0], dy = p[1] - a[1], dz = p[2] - a[2];
                d2[m] = {dx * dx + dy * dy + dz * dz, m};
            }
            std::partial_sort(d2.begin(), d2.begin() + static_cast<std::ptrdiff_t>(k), d2.end());
            if (d2[0].first == 0.0) {
                w[i * anchors.M + d2[0].second] = 1.0;  // exact anchor hit
                continue;
            }
            double total = 0.0;
            for (std::size_t j = 0; j < k; ++j) total += 1.0 / d2[j].first;
            for (std::size_t j = 0; j < k; ++j) w[i * anchors.M + d2[j].second] = (1.0 / d2[j].first) / total;
        }
        per_frame.push_back(Tensor::from({video.N, anchors.M}, std::move(w)));
    }
    return per_frame;
}

struct PointBranchParams {
    PointConvParams conv;
    std::vector<AttentionLayerParams> layers;
};

inline PointBranchParams make_point_branch(ParamStore& store, const std::string& group, std::size_t hidden,
                                           std::size_t d, std::size_t num_layers, Rng& rng) {
    PointBranchParams p;
    p.conv = make_point_conv(store, "point.conv", group, hidden, d, rng);
    for (std::size_t i = 0; i < num_layers; ++i)
        p.layers.push_back(make_attention_layer(store, "point.attn" + std::to_string(i), group, d, 2 * d, rng));
    return p;
}

}  // namespace pc4d
