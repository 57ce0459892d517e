#pragma once

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <future>
#include <optional>
#include <string>
#include <vector>

#include "pc4d/checkpoint.hpp"
#include "pc4d/config.hpp"
#include "pc4d/metrics.hpp"
#include "pc4d/model.hpp"

// Training loop, evaluation and the ablation harness. Everything is a pure
// function of the RunConfig (scene corpora, augmentation draws and parameter
// init all derive from cfg.seed), so reruns reproduce records bit-for-bit.

namespace pc4d {

// non-finite loss; the CLI maps this to exit code 2
struct NumericalError : std::runtime_error {
    explicit NumericalError(const std::string& what) : std::runtime_error(what) {}
};

namespace detail {

inline std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b, std::uint64_t c = 0) {
    std::uint64_t z = a * 0x9e3779b97f4a7c15ULL + b * 0xbf58476d1ce4e5b9ULL + c + 0x94d049bb133111ebULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

}  // namespace detail

inline std::vector<Scene> make_train_corpus(const RunConfig& cfg) {
    std::vector<Scene> scenes;
    scenes.reserve(cfg.train_scenes);
    for (std::size_t i = 0; i < cfg.train_scenes; ++i)
        scenes.push_back(generate_scene(scene_config(cfg, detail::mix_seed(cfg.seed, 0x7261, i))));
    return scenes;
}

inline std::vector<Scene> make_eval_corpus(const RunConfig& cfg) {
    std::vector<Scene> scenes;
    scenes.reserve(cfg.eval_scenes);
    for (std::size_t i = 0; i < cfg.eval_scenes; ++i)
        scenes.push_back(generate_scene(scene_config(cfg, detail::mix_seed(cfg.seed, 0xe7a1, i))));
    return scenes;
}

struct StepLosses {
    Tensor lp, li, ltcont, ltac, total;
};

// One training example: augment the scene, run both branches and the
// cross-modal encoder, assemble every active objective.
inline StepLosses scene_losses(const Model& model, const Scene& scene, std::uint64_t step_seed) {
    const RunConfig& cfg = model.config();
    StepLosses out;
    Tensor zero = Tensor::scalar(0.0);

    Scene view = cfg.augment ? augment(scene, detail::mix_seed(step_seed, 0xa, 1)) : scene;
    const std::vector<std::int64_t>& frame_labels = view.video.frame_labels;

    if (!cfg.use_image) {
        // point-only baseline: the deployment path trained directly
        Tensor logits = model.forward_infer(view.video);
        const auto& labels = cfg.task == "semseg" ? view.video.point_labels : frame_labels;
        out.lp = task_loss(logits, labels).value;
        out.li = zero;
        out.ltcont = zero;
        out.ltac = zero;
        out.total = out.lp;
        return out;
    }

    Model::TrainForward fwd = model.forward_train(view.video, view.images);

    if (cfg.task == "semseg") {
        out.lp = task_loss(fwd.point_logits, view.video.point_labels).value;
        std::vector<std::int64_t> pixel_labels(view.images.label_maps.begin(), view.images.label_maps.end());
        out.li = task_loss(fwd.image_logits, pixel_labels, /*ignore=*/-1).value;
    } else {
        out.lp = task_loss(fwd.point_logits, frame_labels).value;
        out.li = task_loss(fwd.image_logits, frame_labels).value;
    }

    if (cfg.distill_mode != "none") {
        // teacher-student baseline replaces the transfer machinery entirely
        out.ltcont = zero;
        out.ltac = zero;
        Tensor dist = distill_loss(cfg.distill_mode, fwd.point_tokens_raw, fwd.img.f_high);
        out.total = add(add(out.lp, out.li), dist);
        return out;
    }

    if (cfg.use_tcont && cfg.use_git) {
        // second view through the image branch only; labels are shared
        Scene view_b = augment(scene, detail::mix_seed(step_seed, 0xb, 2));
        ImageBranchFeatures img_b = model.image_features(view_b.images);
        Tensor stacked = concat({fwd.img.f_cor, img_b.f_cor}, 0);
        std::vector<std::int64_t> labels2(frame_labels);
        labels2.insert(labels2.end(), frame_labels.begin(), frame_labels.end());
        out.ltcont = temporal_contrastive(stacked, labels2, cfg.tau);
    } else {
        out.ltcont = zero;
    }

    if (cfg.use_tac) {
        Tensor t_pi = tac(fwd.point_tokens_raw, fwd.img.f_high, cfg.tau);
        out.ltac = cfg.use_git ? add(tac(fwd.img.f_grad, fwd.img.f_img, cfg.tau), t_pi) : t_pi;
    } else {
        out.ltac = zero;
    }

    out.total = total_loss(out.lp, out.li, out.ltcont, out.ltac, cfg.omega);
    return out;
}

struct EpochRecord {
    std::size_t epoch = 0;
    double lp = 0, li = 0, ltcont = 0, ltac = 0, total = 0;
    double lr = 0, wall_s = 0;
};

// Shared training core: per epoch, shuffle, accumulate batch_size scene
// losses into one graph, backward, warmup-SGD step. `on_epoch` fires after
// each epoch (checkpointing, logging); `stop_after_epoch` can end the run
// early (overfit probes).
inline std::vector<EpochRecord> run_training(Model& model, const std::vector<Scene>& corpus,
                                             const std::function<void(const EpochRecord&)>& on_epoch = {},
                                             const std::function<bool(const EpochRecord&)>& stop_after_epoch = {}) {
    const RunConfig& cfg = model.config();
    OptimizerState opt;
    opt.momentum = cfg.momentum;
    opt.weight_decay = cfg.weight_decay;
    Rng shuffle_rng(detail::mix_seed(cfg.seed, 0x5f5f, 0));
    std::vector<std::size_t> order(corpus.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

    std::vector<EpochRecord> records;
    for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
        auto t0 = std::chrono::steady_clock::now();
        opt.lr = warmup_lr(epoch, cfg.base_lr, cfg.warmup_epochs);
        for (std::size_t i = order.size(); i > 1; --i)
            std::swap(order[i - 1], order[static_cast<std::size_t>(shuffle_rng.integer(i))]);

        EpochRecord rec;
        rec.epoch = epoch;
        rec.lr = opt.lr;
        for (std::size_t at = 0; at < order.size(); at += cfg.batch_size) {
            const std::size_t n = std::min(cfg.batch_size, order.size() - at);
            model.params().zero_grads();
            Tensor batch_total;
            for (std::size_t b = 0; b < n; ++b) {
                const std::size_t si = order[at + b];
                StepLosses sl = scene_losses(model, corpus[si], detail::mix_seed(cfg.seed, epoch, si));
                const struct { const char* name; const Tensor* t; } terms[] = {
                    {"task_point", &sl.lp}, {"task_image", &sl.li}, {"contrastive", &sl.ltcont},
                    {"consistency", &sl.ltac}, {"total", &sl.total}};
                for (const auto& term : terms)
                    if (!std::isfinite(term.t->item()))
                        throw NumericalError(std::string("non-finite loss term '") + term.name + "' at epoch " +
                                             std::to_string(epoch));
                rec.lp += sl.lp.item();
                rec.li += sl.li.item();
                rec.ltcont += sl.ltcont.item();
                rec.ltac += sl.ltac.item();
                rec.total += sl.total.item();
                batch_total = batch_total.defined() ? add(batch_total, sl.total) : sl.total;
            }
            backward(mul_scalar(batch_total, 1.0 / static_cast<double>(n)));
            sgd_step(model.params(), opt);
        }
        const auto scenes_f = static_cast<double>(corpus.size());
        rec.lp /= scenes_f;
        rec.li /= scenes_f;
        rec.ltcont /= scenes_f;
        rec.ltac /= scenes_f;
        rec.total /= scenes_f;
        rec.wall_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        records.push_back(rec);
        if (on_epoch) on_epoch(rec);
        if (stop_after_epoch && stop_after_epoch(rec)) break;
    }
    return records;
}

struct EvalResult {
    MetricReport point;
    std::optional<MetricReport> image;
    std::uint64_t image_branch_allocs = 0;
};

namespace detail {

inline std::vector<std::int64_t> argmax_rows(const Tensor& logits) {
    const std::size_t rows = logits.dim(0), cols = logits.dim(1);
    std::vector<std::int64_t> out(rows);
    const auto& d = logits.data();
    for (std::size_t i = 0; i < rows; ++i) {
        std::size_t best = 0;
        for (std::size_t j = 1; j < cols; ++j)
            if (d[i * cols + j] > d[i * cols + best]) best = j;
        out[i] = static_cast<std::int64_t>(best);
    }
    return out;
}

// semseg: frame-level labels via majority vote of the per-point labels, so
// the segment metrics stay defined (documented in README)
inline std::vector<std::int64_t> frame_majority(const std::vector<std::int64_t>& point_labels, std::size_t T,
                                                std::size_t N, std::size_t classes) {
    std::vector<std::int64_t> out(T);
    for (std::size_t t = 0; t < T; ++t) {
        std::vector<std::size_t> hist(classes, 0);
        for (std::size_t i = 0; i < N; ++i) {
            auto l = point_labels[t * N + i];
            if (l >= 0 && static_cast<std::size_t>(l) < classes) ++hist[static_cast<std::size_t>(l)];
        }
        out[t] = static_cast<std::int64_t>(std::max_element(hist.begin(), hist.end()) - hist.begin());
    }
    return out;
}

inline void accumulate(MetricReport& sum, const MetricReport& r) {
    sum.acc += r.acc;
    sum.edit += r.edit;
    for (const auto& [k, v] : r.f1) sum.f1[k] += v;
    if (r.miou) sum.miou = sum.miou.value_or(0.0) + *r.miou;
}

inline void divide(MetricReport& sum, double n) {
    sum.acc /= n;
    sum.edit /= n;
    for (auto& [k, v] : sum.f1) v /= n;
    if (sum.miou) *sum.miou /= n;
}

}  // namespace detail

// Runs the model over an evaluation corpus. mode "point_only" uses the
// deployment path; "dual" runs the training-time forward and reads both
// heads (the point head of which is bit-identical to point_only by the mask
// property). The returned counter reports image-branch tensor allocations
// observed during this call on this thread.
inline EvalResult evaluate(const Model& model, const std::vector<Scene>& scenes, const std::string& mode) {
    if (mode != "point_only" && mode != "dual") throw std::invalid_argument("evaluate: mode must be point_only or dual");
    if (scenes.empty()) throw std::invalid_argument("evaluate: empty corpus");
    const RunConfig& cfg = model.config();
    const std::uint64_t allocs_before = image_branch_allocs();

    EvalResult res;
    MetricReport psum, isum;
    bool have_image = false;
    for (const Scene& scene : scenes) {
        Tensor point_logits;
        Tensor image_logits;
        if (mode == "point_only") {
            point_logits = model.forward_infer(scene.video);
        } else {
            Model::TrainForward fwd = model.forward_train(scene.video, scene.images);
            point_logits = fwd.point_logits;
            image_logits = fwd.image_logits;
        }
        std::vector<std::int64_t> pred = detail::argmax_rows(point_logits);
        MetricReport r;
        if (cfg.task == "semseg") {
            r = compute_report(detail::frame_majority(pred, cfg.T, cfg.N, cfg.S),
                               detail::frame_majority(scene.video.point_labels, cfg.T, cfg.N, cfg.S));
            r.miou = mean_iou(pred, scene.video.point_labels, static_cast<std::int64_t>(cfg.S));
        } else {
            r = compute_report(pred, scene.video.frame_labels);
        }
        detail::accumulate(psum, r);
        if (mode == "dual" && cfg.task != "semseg") {
            MetricReport ir = compute_report(detail::argmax_rows(image_logits), scene.video.frame_labels);
            detail::accumulate(isum, ir);
            have_image = true;
        }
    }
    detail::divide(psum, static_cast<double>(scenes.size()));
    res.point = psum;
    if (have_image) {
        detail::divide(isum, static_cast<double>(scenes.size()));
        res.image = isum;
    }
    res.image_branch_allocs = image_branch_allocs() - allocs_before;
    return res;
}

struct TrainResult {
    std::vector<EpochRecord> records;
    std::string checkpoint_path;
    EvalResult final_eval;
};

// Full run with artifacts: config.txt, record.jsonl, per-epoch ckpt.bin and
// a final held-out evaluation. Empty out_dir keeps the run in memory.
inline TrainResult train(const RunConfig& cfg, std::ostream* log = nullptr) {
    validate_config(cfg);
    namespace fs = std::filesystem;
    const bool persist = !cfg.out_dir.empty();
    std::ofstream record_file;
    if (persist) {
        fs::create_directories(cfg.out_dir);
        std::ofstream(fs::path(cfg.out_dir) / "config.txt") << serialize_config(cfg);
        record_file.open(fs::path(cfg.out_dir) / "record.jsonl");
    }

    Model model(cfg);
    std::vector<Scene> corpus = make_train_corpus(cfg);
    TrainResult result;
    if (persist) result.checkpoint_path = (fs::path(cfg.out_dir) / "ckpt.bin").string();

    result.records = run_training(model, corpus, [&](const EpochRecord& rec) {
        if (record_file) {
            record_file << "{\"epoch\":" << rec.epoch << ",\"lp\":" << rec.lp << ",\"li\":" << rec.li
                        << ",\"ltcont\":" << rec.ltcont << ",\"ltac\":" << rec.ltac << ",\"total\":" << rec.total
                        << ",\"lr\":" << rec.lr << ",\"wall_s\":" << rec.wall_s << "}\n";
            record_file.flush();
        }
        if (persist) save_checkpoint(result.checkpoint_path, model.params(), serialize_config(cfg));
        if (log) {
            (*log) << "epoch " << rec.epoch << "/" << cfg.epochs << " total " << rec.total << " (lp " << rec.lp
                   << " li " << rec.li << " tcont " << rec.ltcont << " tac " << rec.ltac << ") lr " << rec.lr << " "
                   << rec.wall_s << "s\n";
            log->flush();
        }
    });

    result.final_eval = evaluate(model, make_eval_corpus(cfg), cfg.use_image ? "dual" : "point_only");
    return result;
}

inline std::size_t count_params(const RunConfig& cfg, const std::string& path) {
    Model m(cfg);
    if (path == "infer") return m.count_infer_params();
    if (path == "train") return m.count_train_params();
    throw std::invalid_argument("count_params: path must be train or infer");
}

// ----- ablation harness -----

struct AblateRow {
    std::string label;
    RunConfig cfg;
    MetricReport point;  // held-out, point-only deployment metrics
};

inline std::vector<std::pair<std::string, RunConfig>> ablate_variants(const RunConfig& base, const std::string& axis) {
    std::vector<std::pair<std::string, RunConfig>> out;
    auto push = [&](const std::string& label, RunConfig c) { out.emplace_back(label, std::move(c)); };
    if (axis == "git_on_off") {
        RunConfig off = base;
        off.use_git = false;
        push("git_off", off);
        push("git_on", base);
    } else if (axis == "fusion_mode") {
        for (const char* m : {"concat", "sum", "self_attention", "cross_attention"}) {
            RunConfig c = base;
            c.fusion_mode = m;
            push(m, c);
        }
    } else if (axis == "window_size") {
        for (std::size_t w : {1, 3, 5, 7}) {
            RunConfig c = base;
            c.window_size = w;
            push("window_" + std::to_string(w), c);
        }
    } else if (axis == "tg_stride") {
        for (std::size_t n : {1, 4, 7}) {
            RunConfig c = base;
            c.tg_stride = n;
            push("stride_" + std::to_string(n), c);
        }
    } else if (axis == "use_mask") {
        RunConfig off = base;
        off.use_mask = false;
        push("unmasked", off);
        push("masked", base);
    } else if (axis == "distill_mode") {
        for (const char* m : {"l2", "kl", "cosine", "none"}) {
            RunConfig c = base;
            c.distill_mode = m;
            push(m == std::string("none") ? "ours" : m, c);
        }
    } else if (axis == "losses_on_off") {
        RunConfig vanilla = base;
        vanilla.fusion_mode = "concat";
        vanilla.use_window = false;
        vanilla.use_tcont = false;
        vanilla.use_tac = false;
        push("vanilla_concat", vanilla);
        RunConfig corr = vanilla;
        corr.fusion_mode = "cross_attention";
        push("corr_feature", corr);
        RunConfig win = corr;
        win.use_window = true;
        push("sliding_window", win);
        RunConfig tcont = win;
        tcont.use_tcont = true;
        push("tcont", tcont);
        RunConfig full = tcont;
        full.use_tac = true;
        push("tac", full);
    } else {
        throw std::invalid_argument("ablate: unknown axis " + axis);
    }
    return out;
}

// Trains each variant with the shared seed and evaluates the point-only
// deployment path on held-out scenes. jobs > 1 runs variants concurrently
// (every run is self-contained).
inline std::vector<AblateRow> ablate(const RunConfig& base, const std::string& axis, std::size_t jobs = 1,
                                     std::ostream* log = nullptr) {
    auto variants = ablate_variants(base, axis);
    std::vector<AblateRow> rows(variants.size());
    auto run_one = [&](std::size_t i) {
        RunConfig cfg = variants[i].second;
        cfg.out_dir.clear();  // in-memory
        Model model(cfg);
        std::vector<Scene> corpus = make_train_corpus(cfg);
        run_training(model, corpus);
        EvalResult ev = evaluate(model, make_eval_corpus(cfg), "point_only");
        rows[i] = {variants[i].first, cfg, ev.point};
        if (log) {
            (*log) << axis << " / " << variants[i].first << ": acc " << ev.point.acc << " edit " << ev.point.edit
                   << "\n";
            log->flush();
        }
    };
    if (jobs <= 1) {
        for (std::size_t i = 0; i < variants.size(); ++i) run_one(i);
    } else {
        std::vector<std::future<void>> fut;
        std::size_t next = 0;
        while (next < variants.size() || !fut.empty()) {
            while (fut.size() < jobs && next < variants.size())
                fut.push_back(std::async(std::launch::async, run_one, next++));
            fut.front().get();
            fut.erase(fut.begin());
        }
    }
    return rows;
}

}  // namespace pc4d
