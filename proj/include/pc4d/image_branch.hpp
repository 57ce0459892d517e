#pragma once

#include <string>
#include <vector>

#include "pc4d/attention.hpp"
#include "pc4d/ops.hpp"
#include "pc4d/optim.hpp"
#include "pc4d/synth.hpp"

// Image-side branch. Two per-frame CNN encoders with shared architecture and
// separate weights embed the raster sequence and its temporal gradient; a
// learnable sliding window mixes each feature row with its temporal
// neighbors; the two windowed streams fuse into a correlation feature which
// queries the raw image features through cross-attention. Everything here
// exists only at training time, so each forward runs under ImageBranchScope
// to make that claim checkable.

namespace pc4d {

struct EncoderParams {
    Tensor k1, k2, k3;   // conv kernels, no conv bias
    Tensor lin_w, lin_b; // projection of the pooled feature to D
};

inline EncoderParams make_encoder(ParamStore& store, const std::string& prefix, const std::string& group,
                                  std::size_t channels, std::size_t d, Rng& rng) {
    EncoderParams e;
    e.k1 = store.create(prefix + ".k1", group, {8, channels, 3, 3}, channels * 9, rng);
    e.k2 = store.create(prefix + ".k2", group, {16, 8, 3, 3}, 8 * 9, rng);
    e.k3 = store.create(prefix + ".k3", group, {32, 16, 3, 3}, 16 * 9, rng);
    e.lin_w = store.create(prefix + ".lin_w", group, {32, d}, 32, rng);
    e.lin_b = store.create_init(prefix + ".lin_b", group, {1, d}, std::vector<double>(d, 0.0));
    return e;
}

namespace detail {

// HWC raster frame -> (C,H,W) constant tensor
inline Tensor frame_to_chw(const ImageSequence& images, std::size_t t) {
    const std::size_t H = images.H, W = images.W, C = images.C;
    std::vector<double> d(C * H * W);
    const double* src = images.frame(t);
    for (std::size_t y = 0; y < H; ++y)
        for (std::size_t x = 0; x < W; ++x)
            for (std::size_t c = 0; c < C; ++c) d[(c * H + y) * W + x] = src[(y * W + x) * C + c];
    return Tensor::from({C, H, W}, std::move(d));
}

}  // namespace detail

// conv-relu-pool x3, global average pool, linear projection; returns the
// (1,D) token and optionally the last (32,h,w) feature map for dense heads
inline Tensor encode_frame(const Tensor& chw, const EncoderParams& e, Tensor* feat_map = nullptr) {
    Tensor h1 = maxpool2d(relu(conv2d(chw, e.k1, 1, 1)));
    Tensor h2 = maxpool2d(relu(conv2d(h1, e.k2, 1, 1)));
    Tensor h3 = maxpool2d(relu(conv2d(h2, e.k3, 1, 1)));
    if (feat_map) *feat_map = h3;
    Tensor pooled = mean_axis(mean_axis(h3, 2), 1);           // (32)
    return linear(reshape(pooled, {1, pooled.size()}), e.lin_w, e.lin_b);
}

inline Tensor encode_frames(const ImageSequence& images, const EncoderParams& e,
                            std::vector<Tensor>* feat_maps = nullptr) {
    std::vector<Tensor> rows;
    rows.reserve(images.T);
    for (std::size_t t = 0; t < images.T; ++t) {
        Tensor map;
        rows.push_back(encode_frame(detail::frame_to_chw(images, t), e, feat_maps ? &map : nullptr));
        if (feat_maps) feat_maps->push_back(map);
    }
    return concat(rows, 0);  // (T, D)
}

// fused_t = sum_k w[k+n] * f[clamp(t+k)], k in [-n, n], with edge
// replication at the sequence boundaries. Linear in f by construction.
inline Tensor sliding_window_fuse(const Tensor& f, const Tensor& weights, std::size_t n_w) {
    detail::require(f.ndim() == 2, "sliding_window_fuse: expected (T,D) features, got " + shape_str(f.shape()));
    detail::require(weights.size() == 2 * n_w + 1,
                    "sliding_window_fuse: expected " + std::to_string(2 * n_w + 1) + " weights, got " +
                        std::to_string(weights.size()));
    const std::size_t T = f.dim(0);
    Tensor out;
    for (std::size_t k = 0; k < 2 * n_w + 1; ++k) {
        const auto offset = static_cast<std::ptrdiff_t>(k) - static_cast<std::ptrdiff_t>(n_w);
        // shift matrix: row t picks f[clamp(t+offset)]
        std::vector<double> sm(T * T, 0.0);
        for (std::size_t t = 0; t < T; ++t) {
            auto s = static_cast<std::ptrdiff_t>(t) + offset;
            s = std::max<std::ptrdiff_t>(0, std::min<std::ptrdiff_t>(static_cast<std::ptrdiff_t>(T) - 1, s));
            sm[t * T + static_cast<std::size_t>(s)] = 1.0;
        }
        Tensor shifted = matmul(Tensor::from({T, T}, std::move(sm)), f);
        Tensor term = scale(shifted, slice(weights, 0, k, k + 1));
        out = out.defined() ? add(out, term) : term;
    }
    return out;
}

struct CorrelationParams {
    Tensor w1, b1, w2, b2;  // 2D -> D -> D perceptron over concatenated streams
};

inline CorrelationParams make_correlation(ParamStore& store, const std::string& prefix, const std::string& group,
                                          std::size_t d, Rng& rng) {
    CorrelationParams c;
    c.w1 = store.create(prefix + ".w1", group, {2 * d, d}, 2 * d, rng);
    c.b1 = store.create_init(prefix + ".b1", group, {1, d}, std::vector<double>(d, 0.0));
    c.w2 = store.create(prefix + ".w2", group, {d, d}, d, rng);
    c.b2 = store.create_init(prefix + ".b2", group, {1, d}, std::vector<double>(d, 0.0));
    return c;
}

inline Tensor correlation_feature(const Tensor& f_img_win, const Tensor& f_grad_win, const CorrelationParams& p) {
    detail::check_same_shape("correlation_feature", f_img_win, f_grad_win);
    Tensor cat = concat({f_img_win, f_grad_win}, 1);  // (T, 2D)
    return linear(relu(linear(cat, p.w1, p.b1)), p.w2, p.b2);
}

struct ImageBranchConfig {
    std::size_t channels = 1;
    std::size_t d = 64;
    std::size_t tg_stride = 1;
    std::size_t window_size = 3;  // half-width n_w; weights span 2*n_w+1 offsets
    bool use_window = true;
    std::string fusion_mode = "cross_attention";  // concat | sum | self_attention | cross_attention
    std::size_t git_layers = 1;
    bool git_enabled = true;  // false: plain per-frame encoder, no gradient stream
};

struct ImageBranchParams {
    EncoderParams enc_img;
    EncoderParams enc_grad;                   // only when git_enabled
    Tensor alpha, beta;                       // window weights, only when use_window
    CorrelationParams corr;                   // concat / cross_attention fusion
    AttentionLayerParams self_fuse;           // self_attention fusion
    std::vector<AttentionLayerParams> xattn;  // cross_attention fusion
};

inline ImageBranchParams make_image_branch(ParamStore& store, const std::string& group, const ImageBranchConfig& cfg,
                                           Rng& rng) {
    if (cfg.fusion_mode != "concat" && cfg.fusion_mode != "sum" && cfg.fusion_mode != "self_attention" &&
        cfg.fusion_mode != "cross_attention")
        throw std::invalid_argument("image branch: unknown fusion_mode " + cfg.fusion_mode);
    ImageBranchParams p;
    p.enc_img = make_encoder(store, "img.enc", group, cfg.channels, cfg.d, rng);
    if (!cfg.git_enabled) return p;
    p.enc_grad = make_encoder(store, "img.enc_tg", group, cfg.channels, cfg.d, rng);
    if (cfg.use_window) {
        // identity start: center weight 1, neighbors 0
        std::vector<double> init(2 * cfg.window_size + 1, 0.0);
        init[cfg.window_size] = 1.0;
        p.alpha = store.create_init("img.window_alpha", group, {2 * cfg.window_size + 1}, init);
        p.beta = store.create_init("img.window_beta", group, {2 * cfg.window_size + 1}, init);
    }
    if (cfg.fusion_mode == "concat" || cfg.fusion_mode == "cross_attention")
        p.corr = make_correlation(store, "img.corr", group, cfg.d, rng);
    if (cfg.fusion_mode == "self_attention")
        p.self_fuse = make_attention_layer(store, "img.self_fuse", group, cfg.d, 2 * cfg.d, rng);
    if (cfg.fusion_mode == "cross_attention")
        for (std::size_t i = 0; i < cfg.git_layers; ++i)
            p.xattn.push_back(make_attention_layer(store, "img.xattn" + std::to_string(i), group, cfg.d, 2 * cfg.d, rng));
    return p;
}

struct ImageBranchFeatures {
    Tensor f_img;       // per-frame texture features
    Tensor f_grad;      // per-frame temporal-gradient features
    Tensor f_img_win;   // windowed texture stream
    Tensor f_grad_win;  // windowed gradient stream
    Tensor f_cor;       // fused correlation feature (contrastive anchor)
    Tensor f_high;      // branch output tokens
    std::vector<Tensor> img_feat_maps;  // last conv maps, for the dense pixel head
};

inline ImageBranchFeatures image_branch_forward(const ImageSequence& images, const ImageBranchParams& p,
                                                const ImageBranchConfig& cfg, bool want_feat_maps = false) {
    ImageBranchScope scope;
    ImageBranchFeatures out;
    out.f_img = encode_frames(images, p.enc_img, want_feat_maps ? &out.img_feat_maps : nullptr);
    if (!cfg.git_enabled) {
        out.f_high = out.f_img;
        return out;
    }
    ImageSequence tg = temporal_gradient(images, cfg.tg_stride);
    out.f_grad = encode_frames(tg, p.enc_grad);
    if (cfg.use_window) {
        out.f_img_win = sliding_window_fuse(out.f_img, p.alpha, cfg.window_size);
        out.f_grad_win = sliding_window_fuse(out.f_grad, p.beta, cfg.window_size);
    } else {
        out.f_img_win = out.f_img;
        out.f_grad_win = out.f_grad;
    }
    if (cfg.fusion_mode == "concat") {
        out.f_cor = correlation_feature(out.f_img_win, out.f_grad_win, p.corr);
        out.f_high = out.f_cor;
    } else if (cfg.fusion_mode == "sum") {
        out.f_cor = add(out.f_img_win, out.f_grad_win);
        out.f_high = out.f_cor;
    } else if (cfg.fusion_mode == "self_attention") {
        Tensor both = concat({out.f_img_win, out.f_grad_win}, 0);  // (2T, D)
        Tensor fused = attention_layer(both, p.self_fuse);
        out.f_cor = slice(fused, 0, 0, images.T);
        out.f_high = out.f_cor;
    } else {  // cross_attention
        out.f_cor = correlation_feature(out.f_img_win, out.f_grad_win, p.corr);
        Tensor h = out.f_cor;
        for (const auto& layer : p.xattn) h = cross_attention_layer(h, out.f_img, layer);
        out.f_high = h;
    }
    return out;
}

}  // namespace pc4d
