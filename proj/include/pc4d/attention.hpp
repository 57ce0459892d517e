#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "pc4d/ops.hpp"
#include "pc4d/optim.hpp"

// Single-head transformer layer shared by the point branch, the image
// branch and the cross-modal encoder: scaled dot-product attention (with an
// optional boolean visibility mask), residual + layer norm, then a two-layer
// feed-forward with its own residual + layer norm.

namespace pc4d {

struct AttentionLayerParams {
    Tensor wq, wk, wv, wo;
    Tensor ln1_g, ln1_b;
    Tensor ff_w1, ff_b1, ff_w2, ff_b2;
    Tensor ln2_g, ln2_b;
};

inline AttentionLayerParams make_attention_layer(ParamStore& store, const std::string& prefix,
                                                 const std::string& group, std::size_t d, std::size_t ff_hidden,
                                                 Rng& rng) {
    AttentionLayerParams p;
    p.wq = store.create(prefix + ".wq", group, {d, d}, d, rng);
    p.wk = store.create(prefix + ".wk", group, {d, d}, d, rng);
    p.wv = store.create(prefix + ".wv", group, {d, d}, d, rng);
    p.wo = store.create(prefix + ".wo", group, {d, d}, d, rng);
    p.ln1_g = store.create_init(prefix + ".ln1_g", group, {d}, std::vector<double>(d, 1.0));
    p.ln1_b = store.create_init(prefix + ".ln1_b", group, {d}, std::vector<double>(d, 0.0));
    p.ff_w1 = store.create(prefix + ".ff_w1", group, {d, ff_hidden}, d, rng);
    p.ff_b1 = store.create_init(prefix + ".ff_b1", group, {1, ff_hidden}, std::vector<double>(ff_hidden, 0.0));
    p.ff_w2 = store.create(prefix + ".ff_w2", group, {ff_hidden, d}, ff_hidden, rng);
    p.ff_b2 = store.create_init(prefix + ".ff_b2", group, {1, d}, std::vector<double>(d, 0.0));
    p.ln2_g = store.create_init(prefix + ".ln2_g", group, {d}, std::vector<double>(d, 1.0));
    p.ln2_b = store.create_init(prefix + ".ln2_b", group, {d}, std::vector<double>(d, 0.0));
    return p;
}

namespace detail {

inline Tensor attention_core(const Tensor& q_src, const Tensor& kv_src, const AttentionLayerParams& p,
                             const std::vector<std::uint8_t>* mask, Tensor* attn_out) {
    const double scale_f = 1.0 / std::sqrt(static_cast<double>(q_src.dim(1)));
    Tensor q = matmul(q_src, p.wq);
    Tensor k = matmul(kv_src, p.wk);
    Tensor v = matmul(kv_src, p.wv);
    Tensor logits = mul_scalar(matmul(q, transpose(k)), scale_f);
    Tensor attn = mask ? masked_softmax(logits, *mask) : softmax(logits, 1);
    if (attn_out) *attn_out = attn;
    Tensor ctx = matmul(attn, v);
    Tensor x1 = layer_norm(add(q_src, matmul(ctx, p.wo)), p.ln1_g, p.ln1_b);
    Tensor ff = linear(relu(linear(x1, p.ff_w1, p.ff_b1)), p.ff_w2, p.ff_b2);
    return layer_norm(add(x1, ff), p.ln2_g, p.ln2_b);
}

}  // namespace detail

// self-attention over the rows of `tokens`; mask rows/cols follow token order
inline Tensor attention_layer(const Tensor& tokens, const AttentionLayerParams& p,
                              const std::vector<std::uint8_t>* mask = nullptr, Tensor* attn_out = nullptr) {
    return detail::attention_core(tokens, tokens, p, mask, attn_out);
}

// queries from `q_tokens`, keys/values from `kv_tokens`; output follows queries
inline Tensor cross_attention_layer(const Tensor& q_tokens, const Tensor& kv_tokens, const AttentionLayerParams& p,
                                    Tensor* attn_out = nullptr) {
    return detail::attention_core(q_tokens, kv_tokens, p, nullptr, attn_out);
}

}  // namespace pc4d
