#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "pc4d/ops.hpp"

// Training objectives. All similarity-based losses L2-normalize their rows
// first: at temperature 0.07 raw dot products of unnormalized features
// overflow the softmax.

namespace pc4d {

struct LossConfig {
    double tau = 0.07;
    double omega = 0.5;
    std::string distill_mode = "none";  // none | l2 | kl | cosine

    void validate() const {
        if (tau <= 0.0) throw std::invalid_argument("loss config: tau must be positive");
        if (omega < 0.0 || omega > 1.0) throw std::invalid_argument("loss config: omega must be in [0,1]");
        if (distill_mode != "none" && distill_mode != "l2" && distill_mode != "kl" && distill_mode != "cosine")
            throw std::invalid_argument("loss config: unknown distill_mode " + distill_mode);
    }
};

// Supervised contrastive loss over a row-labelled feature stack (typically
// the two augmented views concatenated along time):
//   L = sum_k 1/|G(k)| sum_{u in G(k)} -log( exp(z_k.z_u/tau) /
//         sum_{j != k} exp(z_k.z_j/tau) )
// with G(k) the same-label rows other than k. Anchors with no positive are
// skipped rather than rejected; short sequences with unique labels would
// otherwise break training.
inline Tensor temporal_contrastive(const Tensor& features, const std::vector<std::int64_t>& labels, double tau) {
    detail::require(tau > 0.0, "temporal_contrastive: tau must be positive");
    detail::require(features.ndim() == 2, "temporal_contrastive: expected (rows, D) features, got " +
                                              shape_str(features.shape()));
    const std::size_t n = features.dim(0);
    detail::require(labels.size() == n, "temporal_contrastive: " + std::to_string(labels.size()) +
                                            " labels for " + std::to_string(n) + " rows");

    // positive-pair weights: W[k][u] = 1/|G(k)|, and a per-anchor indicator
    // that keeps skipped anchors out of the log-denominator term
    std::vector<double> w(n * n, 0.0);
    std::vector<double> has_pos(n, 0.0);
    for (std::size_t k = 0; k < n; ++k) {
        std::size_t npos = 0;
        for (std::size_t u = 0; u < n; ++u)
            if (u != k && labels[u] == labels[k]) ++npos;
        if (npos == 0) continue;
        has_pos[k] = 1.0;
        for (std::size_t u = 0; u < n; ++u)
            if (u != k && labels[u] == labels[k]) w[k * n + u] = 1.0 / static_cast<double>(npos);
    }

    Tensor z = l2_normalize(features, 1);
    Tensor sim = mul_scalar(matmul(z, transpose(z)), 1.0 / tau);  // (n, n)
    // denominator over j != k: mask the diagonal to exact zero before the row
    // sum; subtracting exp(1/tau) afterwards would cancel catastrophically
    std::vector<double> off_diag(n * n, 1.0);
    for (std::size_t i = 0; i < n; ++i) off_diag[i * n + i] = 0.0;
    Tensor e = mul(exp_t(sim), Tensor::from({n, n}, std::move(off_diag)));
    Tensor log_denom = log_t(sum_axis(e, 1));  // (n)

    Tensor anchor_term = sum_all(mul(Tensor::from({n}, std::move(has_pos)), log_denom));
    Tensor pos_term = sum_all(mul(Tensor::from({n, n}, std::move(w)), sim));
    return sub(anchor_term, pos_term);
}

namespace detail {

// shared body of the two time-misaligned consistency losses: an InfoNCE over
// the aligned (f_a[i+shift_a], f_b[i+shift_b]) pairs along the sequence
inline Tensor consistency_pairs(const Tensor& f_a, const Tensor& f_b, double tau, bool advance) {
    require(tau > 0.0, "consistency: tau must be positive");
    check_same_shape("consistency", f_a, f_b);
    require(f_a.ndim() == 2 && f_a.dim(0) >= 2, "consistency: need at least two frames, got " +
                                                    shape_str(f_a.shape()));
    const std::size_t t = f_a.dim(0);
    Tensor za = l2_normalize(f_a, 1);
    Tensor zb = l2_normalize(f_b, 1);
    // advance: pairs (a[i-1], b[i]) for i = 2..T ; lag: (a[i+1], b[i]) for i = 1..T-1
    Tensor a_rows = advance ? slice(za, 0, 0, t - 1) : slice(za, 0, 1, t);
    Tensor b_rows = advance ? slice(zb, 0, 1, t) : slice(zb, 0, 0, t - 1);
    Tensor sims = mul_scalar(dot_rows(a_rows, b_rows), 1.0 / tau);  // (t-1)
    Tensor lse = log_t(sum_all(exp_t(sims)));
    return sub(mul_scalar(lse, static_cast<double>(t - 1)), sum_all(sims));
}

}  // namespace detail

inline Tensor consistency_adv(const Tensor& f_a, const Tensor& f_b, double tau) {
    return detail::consistency_pairs(f_a, f_b, tau, /*advance=*/true);
}

inline Tensor consistency_lag(const Tensor& f_a, const Tensor& f_b, double tau) {
    return detail::consistency_pairs(f_a, f_b, tau, /*advance=*/false);
}

// mean of the advance and lag terms; applied once to (gradient, image)
// features and once to (point, image) features per training step
inline Tensor tac(const Tensor& f_a, const Tensor& f_b, double tau) {
    return mul_scalar(add(consistency_adv(f_a, f_b, tau), consistency_lag(f_a, f_b, tau)), 0.5);
}

struct TaskLoss {
    Tensor value;
    bool all_ignored = false;  // warning flag: every position carried the ignore label
};

// mean cross-entropy over non-ignored positions; works for per-frame,
// per-point and per-pixel logits alike
inline TaskLoss task_loss(const Tensor& logits, const std::vector<std::int64_t>& labels, std::int64_t ignore = -1) {
    TaskLoss out;
    out.value = cross_entropy(logits, labels, ignore, &out.all_ignored);
    return out;
}

// video-level recognition head: mean-pool the per-frame logits, then a
// single cross-entropy against the video label
inline Tensor task_loss_video(const Tensor& frame_logits, std::int64_t video_label) {
    Tensor pooled = mean_axis(frame_logits, 0);  // (A)
    return cross_entropy(reshape(pooled, {1, pooled.size()}), {video_label});
}

// L = L_point + L_image + omega * L_contrastive + (1 - omega) * L_consistency
inline Tensor total_loss(const Tensor& lp, const Tensor& li, const Tensor& ltcont, const Tensor& ltac, double omega) {
    return add(add(lp, li), add(mul_scalar(ltcont, omega), mul_scalar(ltac, 1.0 - omega)));
}

// Teacher-student baselines that replace the cross-modal transformer
// pathway in the distillation ablation.
inline Tensor distill_loss(const std::string& mode, const Tensor& f_a, const Tensor& f_b) {
    detail::check_same_shape("distill_loss", f_a, f_b);
    if (mode == "l2") {
        Tensor d = sub(f_a, f_b);
        return mean_all(sum_axis(mul(d, d), 1));  // mean squared row distance
    }
    if (mode == "kl") {
        Tensor p = softmax(f_a, 1);
        Tensor q = softmax(f_b, 1);
        return mean_all(sum_axis(mul(p, sub(log_t(p), log_t(q))), 1));
    }
    if (mode == "cosine") {
        Tensor cos = dot_rows(l2_normalize(f_a, 1), l2_normalize(f_b, 1));
        return mean_all(sub(Tensor::full({cos.size()}, 1.0), cos));
    }
    throw std::invalid_argument("distill_loss: unknown mode " + mode);
}

}  // namespace pc4d
