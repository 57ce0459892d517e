#pragma once

#include <functional>
#include <string>
#include <vector>

#include "pc4d/attention.hpp"
#include "pc4d/gradcheck.hpp"
#include "pc4d/image_branch.hpp"
#include "pc4d/losses.hpp"
#include "pc4d/op_registry.hpp"
#include "pc4d/point_branch.hpp"

// The named finite-difference checks behind the `gradcheck` CLI subcommand
// and the gradient-correctness acceptance gate: every op kind, the module
// composites, and every loss, each reduced to a scalar through a fixed
// random weighting so all output elements carry gradient.

namespace pc4d {

struct NamedGradCheck {
    std::string name;
    std::size_t seeds = 10;
    std::function<GradCheckReport(std::uint64_t seed)> run;
};

namespace detail {

// reduce an arbitrary tensor to a scalar that depends on every element
inline Tensor weighted_sum(const Tensor& t, Rng& rng) {
    std::vector<double> w(t.size());
    for (double& x : w) x = rng.uniform(-1.0, 1.0);
    return sum_all(mul(t, Tensor::from(t.shape(), std::move(w))));
}

// uniform values bounded away from zero (for relu-like kinks)
inline Tensor off_kink_tensor(Shape s, Rng& rng) {
    std::vector<double> d(shape_numel(s));
    for (double& x : d) {
        double v = rng.uniform(0.1, 1.0);
        x = rng.uniform() < 0.5 ? -v : v;
    }
    return Tensor::from(std::move(s), std::move(d), true);
}

// Move freshly built module parameters off their init values. Zero biases
// meeting zero offsets would otherwise put preactivations exactly on the
// relu kink, where central differences are meaningless.
inline void jitter_params(ParamStore& store, Rng& rng) {
    for (auto& p : store.all())
        for (double& x : p.tensor.data()) {
            double v = rng.uniform(0.05, 0.2);
            x += rng.uniform() < 0.5 ? -v : v;
        }
}

}  // namespace detail

// fixed projection standing in for a task head inside the total-loss check
inline Tensor linear_free(const Tensor& f) {
    static thread_local Tensor w;
    if (!w.defined() || w.dim(0) != f.dim(1)) {
        Rng rng(1234);
        w = random_tensor({f.dim(1), 2}, rng, -1.0, 1.0, false);
    }
    return matmul(f, w);
}

inline std::vector<NamedGradCheck> gradcheck_suite() {
    std::vector<NamedGradCheck> checks;
    auto add_check = [&](const std::string& name, std::size_t seeds,
                         std::function<GradCheckReport(std::uint64_t)> fn) {
        checks.push_back({name, seeds, std::move(fn)});
    };

    // ----- op-level checks -----

    auto unary = [](const char* kind, bool positive = false, bool kink = false) {
        return [kind = std::string(kind), positive, kink](std::uint64_t seed) {
            Rng rng(seed);
            Tensor x = positive ? random_tensor({3, 4}, rng, 0.2, 2.0)
                                : (kink ? detail::off_kink_tensor({3, 4}, rng) : random_tensor({3, 4}, rng));
            Rng wrng = rng.fork(1);
            OpAttrs attrs;
            attrs.axis = 1;
            return check_gradients(
                [&](const std::vector<Tensor>& in) {
                    Rng w2 = wrng;
                    return detail::weighted_sum(forward_op(kind, {in[0]}, attrs), w2);
                },
                {x});
        };
    };
    add_check("op.relu", 10, unary("relu", false, true));
    add_check("op.exp", 10, unary("exp"));
    add_check("op.log", 10, unary("log", true));
    add_check("op.softmax", 10, unary("softmax"));
    add_check("op.l2_normalize", 10, unary("l2_normalize"));
    add_check("op.transpose", 10, unary("transpose"));
    add_check("op.mean", 10, unary("mean"));
    add_check("op.max", 10, unary("max"));

    add_check("op.matmul", 10, [](std::uint64_t seed) {
        Rng rng(seed);
        Tensor a = random_tensor({3, 5}, rng), b = random_tensor({5, 4}, rng);
        Rng wrng = rng.fork(1);
        return check_gradients(
            [&](const std::vector<Tensor>& in) {
                Rng w2 = wrng;
                return detail::weighted_sum(matmul(in[0], in[1]), w2);
            },
            {a, b});
    });
    auto binary = [](const char* kind) {
        return [kind = std::string(kind)](std::uint64_t seed) {
            Rng rng(seed);
            Tensor a = random_tensor({3, 4}, rng), b = random_tensor({3, 4}, rng);
            Rng wrng = rng.fork(1);
            return check_gradients(
                [&](const std::vector<Tensor>& in) {
                    Rng w2 = wrng;
                    return detail::weighted_sum(forward_op(kind, {in[0], in[1]}), w2);
                },
                {a, b});
        };
    };
    add_check("op.add", 10, binary("add"));
    add_check("op.sub", 10, binary("sub"));
    add_check("op.mul_elementwise", 10, binary("mul_elementwise"));
    add_check("op.mul_scalar", 10, [](std::uint64_t seed) {
        Rng rng(seed);
        Tensor a = random_tensor({3, 4}, rng);
        Rng wrng = rng.fork(1);
        return check_gradients(
            [&](const std::vector<Tensor>& in) {
                Rng w2 = wrng;
                return detail::weighted_sum(mul_scalar(in[0], 0.37), w2);
            },
            {a});
    });
    add_check("op.scale", 10, [](std::uint64_t seed) {
        Rng rng(seed);
        Tensor a = random_tensor({3, 4}, rng);
        Tensor s = random_tensor({1}, rng, 0.2, 1.5);
        Rng wrng = rng.fork(1);
        return check_gradients(
            [&](const std::vector<Tensor>& in) {
                Rng w2 = wrng;
                return detail::weighted_sum(scale(in[0], in[1]), w2);
            },
            {a, s});
    });
    add_check("op.concat", 10, [](std::uint64_t seed) {
        Rng rng(seed);
        Tensor a = random_tensor({2, 3}, rng), b = random_tensor({4, 3}, rng);
        Rng wrng = rng.fork(1);
        return check_gradients(
            [&](const std::vector<Tensor>& in) {
                Rng w2 = wrng;
                return detail::weighted_sum(concat({in[0], in[1]}, 0), w2);
            },
            {a, b});
    });
    add_check("op.slice", 10, [](std::uint64_t seed) {
        Rng rng(seed);
        Tensor a = random_tensor({5, 4}, rng);
        Rng wrng = rng.fork(1);
        return check_gradients(
            [&](const std::vector<Tensor>& in) {
                Rng w2 = wrng;
                return detail::weighted_sum(slice(in[0], 0, 1, 4), w2);
            },
            {a});
    });
    add_check("op.reshape", 10, [](std::uint64_t seed) {
        Rng rng(seed);
        Tensor a = random_tensor({3, 4}, rng);
        Rng wrng = rng.fork(1);
        return check_gradients(
            [&](const std::vector<Tensor>& in) {
                Rng w2 = wrng;
                return detail::weighted_sum(reshape(in[0], {2, 6}), w2);
            },
            {a});
    });
    add_check("op.sum", 10, [](std::uint64_t seed) {
        Rng rng(seed);
        Tensor a = random_tensor({3, 4, 2}, rng);
        Rng wrng = rng.fork(1);
        return check_gradients(
            [&](const std::vector<Tensor>& in) {
                Rng w2 = wrng;
                return detail::weighted_sum(sum_axis(in[0], 1), w2);
            },
            {a});
    });
    add_check("op.segment_max", 10, [](std::uint64_t seed) {
        Rng rng(seed);
        Tensor a = random_tensor({7, 3}, rng);
        std::vector<std::size_t> sizes = {2, 0, 3, 2};  // includes an empty segment
        Rng wrng = rng.fork(1);
        return check_gradients(
            [&](const std::vector<Tensor>& in) {
                Rng w2 = wrng;
                return detail::weighted_sum(segment_max(in[0], sizes), w2);
            },
            {a});
    });
    add_check("op.masked_softmax", 10, [](std::uint64_t seed) {
        Rng rng(seed);
        Tensor a = random_tensor({4, 4}, rng);
        std::vector<std::uint8_t> mask(16, 1);
        for (std::size_t i = 0; i < 16; ++i)
            if (rng.uniform() < 0.3) mask[i] = 0;
        for (std::size_t r = 0; r < 4; ++r) mask[r * 4 + r] = 1;  // keep rows normalizable
        Rng wrng = rng.fork(1);
        return check_gradients(
            [&](const std::vector<Tensor>& in) {
                Rng w2 = wrng;
                return detail::weighted_sum(masked_softmax(in[0], mask), w2);
            },
            {a});
    });
    add_check("op.layer_norm", 10, [](std::uint64_t seed) {
        Rng rng(seed);
        Tensor x = random_tensor({4, 6}, rng);
        Tensor g = random_tensor({6}, rng, 0.5, 1.5);
        Tensor b = random_tensor({6}, rng);
        Rng wrng = rng.fork(1);
        return check_gradients(
            [&](const std::vector<Tensor>& in) {
                Rng w2 = wrng;
                return detail::weighted_sum(layer_norm(in[0], in[1], in[2]), w2);
            },
            {x, g, b});
    });
    add_check("op.cross_entropy", 10, [](std::uint64_t seed) {
        Rng rng(seed);
        Tensor logits = random_tensor({5, 3}, rng, -2.0, 2.0);
        std::vector<std::int64_t> labels;
        for (int i = 0; i < 5; ++i) labels.push_back(static_cast<std::int64_t>(rng.integer(4)) - 1);  // some ignored
        labels[0] = 1;  // never fully ignored
        return check_gradients([&](const std::vector<Tensor>& in) { return cross_entropy(in[0], labels, -1); },
                               {logits});
    });
    add_check("op.embedding_lookup", 10, [](std::uint64_t seed) {
        Rng rng(seed);
        Tensor table = random_tensor({6, 4}, rng);
        std::vector<std::int64_t> ids;
        for (int i = 0; i < 5; ++i) ids.push_back(static_cast<std::int64_t>(rng.integer(6)));
        Rng wrng = rng.fork(1);
        return check_gradients(
            [&](const std::vector<Tensor>& in) {
                Rng w2 = wrng;
                return detail::weighted_sum(embedding_lookup(in[0], ids), w2);
            },
            {table});
    });
    add_check("op.conv2d", 10, [](std::uint64_t seed) {
        Rng rng(seed);
        Tensor x = random_tensor({2, 5, 5}, rng);
        Tensor k = random_tensor({3, 2, 3, 3}, rng);
        Rng wrng = rng.fork(1);
        return check_gradients(
            [&](const std::vector<Tensor>& in) {
                Rng w2 = wrng;
                return detail::weighted_sum(conv2d(in[0], in[1], 1, 1), w2);
            },
            {x, k});
    });
    add_check("op.maxpool2d", 10, [](std::uint64_t seed) {
        Rng rng(seed);
        Tensor x = random_tensor({2, 4, 4}, rng);
        Rng wrng = rng.fork(1);
        return check_gradients(
            [&](const std::vector<Tensor>& in) {
                Rng w2 = wrng;
                return detail::weighted_sum(maxpool2d(in[0]), w2);
            },
            {x});
    });
    add_check("op.upsample2d", 10, [](std::uint64_t seed) {
        Rng rng(seed);
        Tensor x = random_tensor({2, 3, 3}, rng);
        Rng wrng = rng.fork(1);
        return check_gradients(
            [&](const std::vector<Tensor>& in) {
                Rng w2 = wrng;
                return detail::weighted_sum(upsample2d_nearest(in[0], 2), w2);
            },
            {x});
    });

    // ----- module composites -----

    add_check("module.frame_encoder", 3, [](std::uint64_t seed) {
        Rng rng(seed);
        ParamStore store;
        Rng prng = rng.fork(1);
        EncoderParams enc = make_encoder(store, "e", "g", 1, 6, prng);
        detail::jitter_params(store, prng);
        Tensor img = random_tensor({1, 8, 8}, rng, 0.0, 1.0, false);
        std::vector<Tensor> inputs;
        for (auto& p : store.all()) inputs.push_back(p.tensor);
        Rng wrng = rng.fork(2);
        return check_gradients(
            [&](const std::vector<Tensor>&) {
                Rng w2 = wrng;
                return detail::weighted_sum(encode_frame(img, enc), w2);
            },
            inputs);
    });
    add_check("module.sliding_window", 10, [](std::uint64_t seed) {
        Rng rng(seed);
        Tensor f = random_tensor({5, 4}, rng);
        Tensor w = random_tensor({3}, rng);
        Rng wrng = rng.fork(1);
        return check_gradients(
            [&](const std::vector<Tensor>& in) {
                Rng w2 = wrng;
                return detail::weighted_sum(sliding_window_fuse(in[0], in[1], 1), w2);
            },
            {f, w});
    });
    add_check("module.correlation", 3, [](std::uint64_t seed) {
        Rng rng(seed);
        ParamStore store;
        Rng prng = rng.fork(1);
        CorrelationParams corr = make_correlation(store, "c", "g", 4, prng);
        detail::jitter_params(store, prng);
        Tensor a = random_tensor({3, 4}, rng), b = random_tensor({3, 4}, rng);
        std::vector<Tensor> inputs{a, b};
        for (auto& p : store.all()) inputs.push_back(p.tensor);
        Rng wrng = rng.fork(2);
        return check_gradients(
            [&](const std::vector<Tensor>& in) {
                Rng w2 = wrng;
                return detail::weighted_sum(correlation_feature(in[0], in[1], corr), w2);
            },
            inputs);
    });
    add_check("module.masked_attention_layer", 3, [](std::uint64_t seed) {
        Rng rng(seed);
        ParamStore store;
        Rng prng = rng.fork(1);
        AttentionLayerParams layer = make_attention_layer(store, "a", "g", 6, 8, prng);
        detail::jitter_params(store, prng);
        Tensor tokens = random_tensor({5, 6}, rng);
        std::vector<std::uint8_t> mask(25, 1);
        for (std::size_t r = 0; r < 2; ++r)
            for (std::size_t c = 3; c < 5; ++c) mask[r * 5 + c] = 0;
        std::vector<Tensor> inputs{tokens};
        for (auto& p : store.all()) inputs.push_back(p.tensor);
        Rng wrng = rng.fork(2);
        return check_gradients(
            [&](const std::vector<Tensor>& in) {
                Rng w2 = wrng;
                return detail::weighted_sum(attention_layer(in[0], layer, &mask), w2);
            },
            inputs);
    });
    add_check("module.point_conv_attention", 3, [](std::uint64_t seed) {
        Rng rng(seed);
        PointCloudVideo video;
        video.T = 3;
        video.N = 12;
        video.frames.resize(video.T * video.N * 3);
        for (double& x : video.frames) x = rng.uniform(-0.5, 0.5);
        ParamStore store;
        Rng prng = rng.fork(1);
        PointBranchParams branch = make_point_branch(store, "g", 5, 6, 1, prng);
        detail::jitter_params(store, prng);
        AnchorSet anchors = select_anchors(video, 4);
        std::vector<Tensor> inputs;
        for (auto& p : store.all()) inputs.push_back(p.tensor);
        Rng wrng = rng.fork(2);
        return check_gradients(
            [&](const std::vector<Tensor>&) {
                Rng w2 = wrng;
                Tensor low = point4d_conv(video, anchors, 0.4, 1, 6, branch.conv);
                Tensor tokens = temporal_self_attention(low, video.T, 4, branch.layers);
                return detail::weighted_sum(tokens, w2);
            },
            inputs);
    });
    add_check("module.git_chain", 3, [](std::uint64_t seed) {
        // window -> correlation -> cross-attention on top of both encoders
        Rng rng(seed);
        ImageSequence images;
        images.T = 3;
        images.H = 8;
        images.W = 8;
        images.C = 1;
        images.frames.resize(images.T * 64);
        for (double& x : images.frames) x = rng.uniform(0.0, 1.0);
        ParamStore store;
        Rng prng = rng.fork(1);
        ImageBranchConfig cfg;
        cfg.channels = 1;
        cfg.d = 6;
        cfg.window_size = 1;
        cfg.git_layers = 1;
        ImageBranchParams branch = make_image_branch(store, "g", cfg, prng);
        detail::jitter_params(store, prng);
        std::vector<Tensor> inputs;
        for (auto& p : store.all()) inputs.push_back(p.tensor);
        Rng wrng = rng.fork(2);
        return check_gradients(
            [&](const std::vector<Tensor>&) {
                Rng w2 = wrng;
                return detail::weighted_sum(image_branch_forward(images, branch, cfg).f_high, w2);
            },
            inputs);
    });

    // ----- losses -----

    add_check("loss.temporal_contrastive", 10, [](std::uint64_t seed) {
        Rng rng(seed);
        Tensor f = random_tensor({6, 4}, rng);
        std::vector<std::int64_t> labels;
        for (int i = 0; i < 6; ++i) labels.push_back(static_cast<std::int64_t>(rng.integer(3)));
        return check_gradients(
            [&](const std::vector<Tensor>& in) { return temporal_contrastive(in[0], labels, 0.07); }, {f});
    });
    add_check("loss.consistency_adv", 10, [](std::uint64_t seed) {
        Rng rng(seed);
        Tensor a = random_tensor({5, 4}, rng), b = random_tensor({5, 4}, rng);
        return check_gradients([&](const std::vector<Tensor>& in) { return consistency_adv(in[0], in[1], 0.07); },
                               {a, b});
    });
    add_check("loss.consistency_lag", 10, [](std::uint64_t seed) {
        Rng rng(seed);
        Tensor a = random_tensor({5, 4}, rng), b = random_tensor({5, 4}, rng);
        return check_gradients([&](const std::vector<Tensor>& in) { return consistency_lag(in[0], in[1], 0.07); },
                               {a, b});
    });
    add_check("loss.tac", 10, [](std::uint64_t seed) {
        Rng rng(seed);
        Tensor a = random_tensor({5, 4}, rng), b = random_tensor({5, 4}, rng);
        return check_gradients([&](const std::vector<Tensor>& in) { return tac(in[0], in[1], 0.07); }, {a, b});
    });
    add_check("loss.task_cross_entropy", 10, [](std::uint64_t seed) {
        Rng rng(seed);
        Tensor logits = random_tensor({6, 4}, rng, -2.0, 2.0);
        std::vector<std::int64_t> labels;
        for (int i = 0; i < 6; ++i) labels.push_back(static_cast<std::int64_t>(rng.integer(4)));
        return check_gradients([&](const std::vector<Tensor>& in) { return task_loss(in[0], labels).value; },
                               {logits});
    });
    add_check("loss.task_video", 10, [](std::uint64_t seed) {
        Rng rng(seed);
        Tensor logits = random_tensor({6, 4}, rng, -2.0, 2.0);
        return check_gradients([&](const std::vector<Tensor>& in) { return task_loss_video(in[0], 2); }, {logits});
    });
    add_check("loss.total", 10, [](std::uint64_t seed) {
        Rng rng(seed);
        Tensor f = random_tensor({6, 4}, rng);
        Tensor g = random_tensor({6, 4}, rng);
        std::vector<std::int64_t> labels;
        for (int i = 0; i < 6; ++i) labels.push_back(static_cast<std::int64_t>(rng.integer(2)));
        std::vector<std::int64_t> labels2(labels);
        labels2.insert(labels2.end(), labels.begin(), labels.end());
        return check_gradients(
            [&](const std::vector<Tensor>& in) {
                Tensor lp = task_loss(linear_free(in[0]), labels).value;
                Tensor li = task_loss(linear_free(in[1]), labels).value;
                Tensor cont = temporal_contrastive(concat({in[0], in[1]}, 0), labels2, 0.07);
                Tensor cons = tac(in[0], in[1], 0.07);
                return total_loss(lp, li, cont, cons, 0.5);
            },
            {f, g});
    });
    for (const char* mode : {"l2", "kl", "cosine"}) {
        add_check(std::string("loss.distill_") + mode, 10, [mode](std::uint64_t seed) {
            Rng rng(seed);
            Tensor a = random_tensor({5, 4}, rng), b = random_tensor({5, 4}, rng);
            return check_gradients(
                [&](const std::vector<Tensor>& in) { return distill_loss(mode, in[0], in[1]); }, {a, b});
        });
    }

    return checks;
}

struct GradSuiteResult {
    std::string name;
    double max_rel_err = 0.0;
    bool pass = false;
};

inline std::vector<GradSuiteResult> run_gradcheck_suite(double tol = 1e-5) {
    std::vector<GradSuiteResult> out;
    for (const auto& check : gradcheck_suite()) {
        GradSuiteResult r;
        r.name = check.name;
        r.pass = true;
        for (std::uint64_t s = 1; s <= check.seeds; ++s) {
            GradCheckReport rep = check.run(1000 + s * 77);
            r.max_rel_err = std::max(r.max_rel_err, rep.max_rel_err);
            if (!rep.passed(tol)) r.pass = false;
        }
        out.push_back(r);
    }
    return out;
}

}  // namespace pc4d
