#pragma once

#include <string>
#include <vector>

#include "pc4d/config.hpp"
#include "pc4d/crossmodal.hpp"
#include "pc4d/image_branch.hpp"
#include "pc4d/losses.hpp"
#include "pc4d/point_branch.hpp"
#include "pc4d/synth.hpp"

// Full model: point branch -> cross-modal encoder -> task heads, with the
// image branch and its head attached only while training. Parameter groups:
//   point_branch, point_head, xmodal    -- touched by the inference path
//   image_branch, image_head            -- training only
// so count(train) == count(infer) + count(image_branch) + count(image_head)
// holds exactly by construction.

namespace pc4d {

class Model {
public:
    explicit Model(const RunConfig& cfg) : cfg_(cfg) {
        validate_config(cfg_);
        if (cfg_.task == "semseg" && (cfg_.H % 8 != 0 || cfg_.W % 8 != 0))
            throw std::invalid_argument("model: semseg pixel head needs H and W divisible by 8");
        Rng rng(cfg_.seed * 0x9e3779b97f4a7c15ULL + 17);
        point_ = make_point_branch(store_, "point_branch", cfg_.p4_hidden, cfg_.D, cfg_.point_layers, rng);
        if (cfg_.distill_mode == "none")
            xmodal_ = make_cross_modal(store_, "xmodal", cfg_.D, cfg_.xmodal_layers, rng);
        if (cfg_.use_positional)
            pos_point_ = store_.create("pos.point", "xmodal", {cfg_.T, cfg_.D}, cfg_.D, rng);

        const std::size_t point_classes = cfg_.task == "semseg" ? cfg_.S : cfg_.A;
        point_head_w_ = store_.create("head.point_w", "point_head", {cfg_.D, point_classes}, cfg_.D, rng);
        point_head_b_ = store_.create_init("head.point_b", "point_head", {1, point_classes},
                                           std::vector<double>(point_classes, 0.0));

        if (cfg_.use_image) {
            img_cfg_.channels = cfg_.C;
            img_cfg_.d = cfg_.D;
            img_cfg_.tg_stride = cfg_.tg_stride;
            img_cfg_.window_size = cfg_.window_size;
            img_cfg_.use_window = cfg_.use_window;
            img_cfg_.fusion_mode = cfg_.fusion_mode;
            img_cfg_.git_layers = cfg_.git_layers;
            img_cfg_.git_enabled = cfg_.use_git;
            image_ = make_image_branch(store_, "image_branch", img_cfg_, rng);
            if (cfg_.use_positional)
                pos_image_ = store_.create("pos.image", "image_branch", {cfg_.T, cfg_.D}, cfg_.D, rng);
            if (cfg_.task == "semseg") {
                pixel_head_k_ = store_.create("head.pixel_k", "image_head", {cfg_.S, 32, 1, 1}, 32, rng);
                pixel_tok_w_ = store_.create("head.pixel_tok_w", "image_head", {cfg_.D, cfg_.S}, cfg_.D, rng);
                pixel_tok_b_ = store_.create_init("head.pixel_tok_b", "image_head", {1, cfg_.S},
                                                  std::vector<double>(cfg_.S, 0.0));
            } else {
                image_head_w_ = store_.create("head.image_w", "image_head", {cfg_.D, cfg_.A}, cfg_.D, rng);
                image_head_b_ = store_.create_init("head.image_b", "image_head", {1, cfg_.A},
                                                   std::vector<double>(cfg_.A, 0.0));
            }
        }
    }

    const RunConfig& config() const { return cfg_; }
    ParamStore& params() { return store_; }
    const ParamStore& params() const { return store_; }

    // ----- forward pieces -----

    Tensor point_tokens(const PointCloudVideo& video, AnchorSet* anchors_out = nullptr, Tensor* low_out = nullptr) const {
        AnchorSet anchors = select_anchors(video, cfg_.M);
        Tensor low = point4d_conv(video, anchors, cfg_.radius, cfg_.temporal_radius, cfg_.neighbor_cap, point_.conv);
        Tensor tokens = temporal_self_attention(low, video.T, cfg_.M, point_.layers);
        if (cfg_.use_positional) tokens = add(tokens, Tensor(pos_point_.node()));
        if (anchors_out) *anchors_out = anchors;
        if (low_out) *low_out = low;
        return tokens;
    }

    ImageBranchFeatures image_features(const ImageSequence& images, bool want_maps = false) const {
        if (!cfg_.use_image) throw std::logic_error("model: image branch disabled by config");
        ImageBranchFeatures f = image_branch_forward(images, image_, img_cfg_, want_maps);
        if (cfg_.use_positional) {
            ImageBranchScope scope;
            f.f_high = add(f.f_high, Tensor(pos_image_.node()));
        }
        return f;
    }

    struct TrainForward {
        Tensor point_tokens_raw;       // F^P_h before the cross-modal encoder
        ImageBranchFeatures img;       // image-side features (training only)
        CrossModalOut xmodal;          // encoded point/image tokens
        Tensor point_logits;           // (T,A) action or (T*N,S) semantic
        Tensor image_logits;           // (T,A) action or (T*H*W,S) pixel logits
    };

    TrainForward forward_train(const PointCloudVideo& video, const ImageSequence& images) const {
        TrainForward out;
        AnchorSet anchors;
        Tensor low;
        out.point_tokens_raw = point_tokens(video, &anchors, &low);
        out.img = image_features(images, /*want_maps=*/cfg_.task == "semseg");
        if (cfg_.distill_mode == "none") {
            out.xmodal = cross_modal_train(out.point_tokens_raw, out.img.f_high, xmodal_, cfg_.use_mask);
        } else {
            out.xmodal.point_out = out.point_tokens_raw;
            out.xmodal.image_out = out.img.f_high;
        }
        if (cfg_.task == "semseg") {
            out.point_logits = dense_point_logits(video, anchors, low, out.xmodal.point_out);
            out.image_logits = pixel_logits(out.img, out.xmodal.image_out);
        } else {
            out.point_logits = linear(out.xmodal.point_out, point_head_w_, point_head_b_);
            out.image_logits = linear(out.xmodal.image_out, image_head_w_, image_head_b_);
        }
        return out;
    }

    // point-only deployment path; never touches the image branch
    Tensor forward_infer(const PointCloudVideo& video) const {
        AnchorSet anchors;
        Tensor low;
        Tensor tokens = point_tokens(video, &anchors, &low);
        Tensor encoded = cfg_.distill_mode == "none" ? cross_modal_infer(tokens, xmodal_) : tokens;
        if (cfg_.task == "semseg") return dense_point_logits(video, anchors, low, encoded);
        return linear(encoded, point_head_w_, point_head_b_);
    }

    // ----- parameter accounting -----

    std::size_t count_infer_params() const {
        return store_.count_group("point_branch") + store_.count_group("point_head") + store_.count_group("xmodal");
    }
    std::size_t count_train_params() const { return store_.count_total(); }
    std::size_t count_image_branch_params() const { return store_.count_group("image_branch"); }
    std::size_t count_image_head_params() const { return store_.count_group("image_head"); }

private:
    // dense per-point head: anchor features plus the frame token, inverse-
    // distance interpolated to every point, then a linear classifier
    Tensor dense_point_logits(const PointCloudVideo& video, const AnchorSet& anchors, const Tensor& low,
                              const Tensor& frame_tokens) const {
        std::vector<Tensor> fp = feature_propagation_weights(video, anchors);
        std::vector<Tensor> per_frame;
        per_frame.reserve(video.T);
        Tensor ones_m = Tensor::full({cfg_.M, 1}, 1.0);
        for (std::size_t t = 0; t < video.T; ++t) {
            Tensor low_t = slice(low, 0, t * cfg_.M, (t + 1) * cfg_.M);           // (M, D)
            Tensor tok_t = slice(frame_tokens, 0, t, t + 1);                      // (1, D)
            Tensor dense = add(low_t, matmul(ones_m, tok_t));                     // (M, D)
            per_frame.push_back(matmul(fp[t], dense));                            // (N, D)
        }
        return linear(concat(per_frame, 0), point_head_w_, point_head_b_);        // (T*N, S)
    }

    // dense pixel head: 1x1 conv over the last encoder map, upsampled to the
    // viewport, plus a per-frame class bias from the encoded image token
    Tensor pixel_logits(const ImageBranchFeatures& img, const Tensor& image_tokens) const {
        ImageBranchScope scope;
        const std::size_t HW = cfg_.H * cfg_.W;
        std::vector<Tensor> per_frame;
        per_frame.reserve(cfg_.T);
        Tensor ones_hw = Tensor::full({HW, 1}, 1.0);
        for (std::size_t t = 0; t < cfg_.T; ++t) {
            Tensor m = conv2d(img.img_feat_maps[t], pixel_head_k_);               // (S, h, w)
            Tensor up = upsample2d_nearest(m, cfg_.H / m.dim(1));                 // (S, H, W)
            Tensor flat = transpose(reshape(up, {cfg_.S, HW}));                   // (HW, S)
            Tensor tok_t = slice(image_tokens, 0, t, t + 1);                      // (1, D)
            Tensor bias = matmul(ones_hw, linear(tok_t, pixel_tok_w_, pixel_tok_b_));
            per_frame.push_back(add(flat, bias));
        }
        return concat(per_frame, 0);  // (T*H*W, S)
    }

    RunConfig cfg_;
    ParamStore store_;
    PointBranchParams point_;
    ImageBranchConfig img_cfg_;
    ImageBranchParams image_;
    CrossModalParams xmodal_;
    Tensor point_head_w_, point_head_b_;
    Tensor image_head_w_, image_head_b_;
    Tensor pixel_head_k_, pixel_tok_w_, pixel_tok_b_;
    Tensor pos_point_, pos_image_;
};

}  // namespace pc4d
