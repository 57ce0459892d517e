#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "pc4d/attention.hpp"
#include "pc4d/ops.hpp"
#include "pc4d/optim.hpp"

// Joint encoder over stacked point and image tokens. The visibility mask is
// asymmetric: point rows attend only to point columns while image rows
// attend to everything, so the point half of the computation never depends
// on image values and the same weights can run point-only at inference,
// bit-for-bit.

namespace pc4d {

// (T_p + T_i)^2 boolean mask, point tokens first. T_p must be positive;
// T_i = 0 degenerates to an all-true T_p x T_p mask.
inline std::vector<std::uint8_t> build_attention_mask(std::size_t t_p, std::size_t t_i) {
    if (t_p == 0) throw std::invalid_argument("build_attention_mask: need at least one point token");
    const std::size_t n = t_p + t_i;
    std::vector<std::uint8_t> allowed(n * n, 1);
    for (std::size_t r = 0; r < t_p; ++r)
        for (std::size_t c = t_p; c < n; ++c) allowed[r * n + c] = 0;
    return allowed;
}

struct CrossModalParams {
    std::vector<AttentionLayerParams> layers;
};

inline CrossModalParams make_cross_modal(ParamStore& store, const std::string& group, std::size_t d,
                                         std::size_t num_layers, Rng& rng) {
    CrossModalParams p;
    for (std::size_t i = 0; i < num_layers; ++i)
        p.layers.push_back(make_attention_layer(store, "xmodal.attn" + std::to_string(i), group, d, 2 * d, rng));
    return p;
}

struct CrossModalOut {
    Tensor point_out;
    Tensor image_out;
};

inline CrossModalOut cross_modal_train(const Tensor& point_tokens, const Tensor& image_tokens,
                                       const CrossModalParams& params, bool use_mask = true) {
    detail::require(point_tokens.ndim() == 2 && image_tokens.ndim() == 2 &&
                        point_tokens.dim(1) == image_tokens.dim(1),
                    "cross_modal_train: token width mismatch " + shape_str(point_tokens.shape()) + " vs " +
                        shape_str(image_tokens.shape()));
    const std::size_t t_p = point_tokens.dim(0), t_i = image_tokens.dim(0);
    Tensor x = concat({point_tokens, image_tokens}, 0);
    std::vector<std::uint8_t> mask;
    if (use_mask) mask = build_attention_mask(t_p, t_i);
    for (const auto& layer : params.layers) x = attention_layer(x, layer, use_mask ? &mask : nullptr);
    CrossModalOut out;
    out.point_out = slice(x, 0, 0, t_p);
    out.image_out = slice(x, 0, t_p, t_p + t_i);
    return out;
}

// Point-only deployment path: the same layer parameters applied to the point
// rows alone. With the mask on, this reproduces the point half of
// cross_modal_train exactly (the masked softmax restricts every point row to
// the same column set, and zero attention weights contribute nothing).
inline Tensor cross_modal_infer(const Tensor& point_tokens, const CrossModalParams& params) {
    Tensor x = point_tokens;
    for (const auto& layer : params.layers) x = attention_layer(x, layer);
    return x;
}

}  // namespace pc4d
