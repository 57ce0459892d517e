// Acceptance suite: every release criterion exercised end to end, one
// pass/fail line each. Exit code is the number of failed criteria.
//
// Heavy criteria (5-7) train real models; on two cores the whole suite is
// budgeted to finish inside half an hour.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <future>
#include <sstream>
#include <string>
#include <vector>

#include "pc4d/gradcheck_suite.hpp"
#include "pc4d/trainer.hpp"

using namespace pc4d;

namespace {

struct Outcome {
    bool pass = false;
    std::string detail;
};

double now_s() {
    using clock = std::chrono::steady_clock;
    static const auto t0 = clock::now();
    return std::chrono::duration<double>(clock::now() - t0).count();
}

// ----- criterion 1: gradient correctness -----

Outcome criterion_gradients() {
    auto results = run_gradcheck_suite(1e-5);
    double worst = 0.0;
    std::string worst_name;
    bool pass = true;
    for (const auto& r : results) {
        if (r.max_rel_err > worst) {
            worst = r.max_rel_err;
            worst_name = r.name;
        }
        pass = pass && r.pass;
    }
    std::ostringstream os;
    os << results.size() << " checks, worst " << worst << " (" << worst_name << ")";
    return {pass, os.str()};
}

// ----- criterion 2: mask independence, before and after training -----

Outcome criterion_mask_independence() {
    Rng rng(2026);
    auto draws_pass = [&](const CrossModalParams& params, std::size_t draws) {
        for (std::size_t i = 0; i < draws; ++i) {
            std::size_t tp = 1 + rng.integer(5), ti = 1 + rng.integer(5);
            std::size_t d = params.layers[0].wq.dim(0);
            Tensor p = random_tensor({tp, d}, rng, -2.0, 2.0, false);
            Tensor a = random_tensor({ti, d}, rng, -2.0, 2.0, false);
            Tensor b = random_tensor({ti, d}, rng, -2.0, 2.0, false);
            CrossModalOut oa = cross_modal_train(p, a, params, true);
            CrossModalOut ob = cross_modal_train(p, b, params, true);
            if (oa.point_out.data() != ob.point_out.data()) return false;
            if (cross_modal_infer(p, params).data() != oa.point_out.data()) return false;
        }
        return true;
    };

    ParamStore store;
    Rng prng(77);
    CrossModalParams params = make_cross_modal(store, "g", 8, 2, prng);
    bool before = draws_pass(params, 100);

    // five training steps on a toy objective touching every parameter
    OptimizerState opt;
    opt.lr = 0.05;
    for (int step = 0; step < 5; ++step) {
        store.zero_grads();
        Tensor p = random_tensor({4, 8}, rng, -1.0, 1.0, false);
        Tensor im = random_tensor({4, 8}, rng, -1.0, 1.0, false);
        CrossModalOut out = cross_modal_train(p, im, params, true);
        add(mean_all(mul(out.point_out, out.point_out)), mean_all(mul(out.image_out, out.image_out))).backward();
        sgd_step(store, opt);
    }
    bool after = draws_pass(params, 100);

    // and through the full model: trained point head in dual mode is the
    // deployment output, bit for bit
    RunConfig cfg;
    cfg.T = 8;
    cfg.N = 48;
    cfg.H = 16;
    cfg.W = 16;
    cfg.M = 12;
    cfg.D = 16;
    cfg.p4_hidden = 8;
    cfg.point_layers = 1;
    cfg.xmodal_layers = 1;
    cfg.window_size = 1;
    cfg.epochs = 2;
    cfg.train_scenes = 2;
    cfg.eval_scenes = 2;
    cfg.warmup_epochs = 1;
    cfg.out_dir.clear();
    Model model(cfg);
    std::vector<Scene> corpus = make_train_corpus(cfg);
    run_training(model, corpus);
    bool full_model = true;
    for (const Scene& s : make_eval_corpus(cfg)) {
        Model::TrainForward fwd = model.forward_train(s.video, s.images);
        if (model.forward_infer(s.video).data() != fwd.point_logits.data()) full_model = false;
    }

    std::ostringstream os;
    os << "100 draws before: " << (before ? "exact" : "BROKEN") << ", 100 after 5 steps: "
       << (after ? "exact" : "BROKEN") << ", full model: " << (full_model ? "exact" : "BROKEN");
    return {before && after && full_model, os.str()};
}

// ----- criterion 3: loss oracle equivalence -----

std::vector<double> normalize_rows_plain(const std::vector<double>& x, std::size_t rows, std::size_t d) {
    std::vector<double> z(x.size());
    for (std::size_t i = 0; i < rows; ++i) {
        double ss = 0;
        for (std::size_t j = 0; j < d; ++j) ss += x[i * d + j] * x[i * d + j];
        double n = std::sqrt(ss);
        for (std::size_t j = 0; j < d; ++j) z[i * d + j] = n == 0 ? 0.0 : x[i * d + j] / n;
    }
    return z;
}

Outcome criterion_loss_oracles() {
    Rng rng(303);
    double worst = 0.0;
    const double tau = 0.07;
    for (int iter = 0; iter < 50; ++iter) {
        std::size_t t = 2 + rng.integer(7);  // T in [2, 8]
        std::size_t d = 3 + rng.integer(4);

        // contrastive over 2T stacked rows
        std::size_t rows = 2 * t;
        Tensor f = random_tensor({rows, d}, rng, -1.0, 1.0, false);
        std::vector<std::int64_t> labels(rows);
        for (auto& l : labels) l = static_cast<std::int64_t>(rng.integer(3));
        std::vector<double> z = normalize_rows_plain(f.data(), rows, d);
        auto dot = [&](std::size_t a, std::size_t b) {
            double s = 0;
            for (std::size_t j = 0; j < d; ++j) s += z[a * d + j] * z[b * d + j];
            return s;
        };
        double expect = 0;
        for (std::size_t k = 0; k < rows; ++k) {
            std::size_t npos = 0;
            double denom = 0, inner = 0;
            for (std::size_t j = 0; j < rows; ++j)
                if (j != k) denom += std::exp(dot(k, j) / tau);
            for (std::size_t u = 0; u < rows; ++u)
                if (u != k && labels[u] == labels[k]) {
                    ++npos;
                    inner += -std::log(std::exp(dot(k, u) / tau) / denom);
                }
            if (npos) expect += inner / static_cast<double>(npos);
        }
        worst = std::max(worst, std::abs(temporal_contrastive(f, labels, tau).item() - expect));

        // advance / lag consistency
        if (t >= 2) {
            Tensor fa = random_tensor({t, d}, rng, -1.0, 1.0, false);
            Tensor fb = random_tensor({t, d}, rng, -1.0, 1.0, false);
            std::vector<double> za = normalize_rows_plain(fa.data(), t, d);
            std::vector<double> zb = normalize_rows_plain(fb.data(), t, d);
            auto dot2 = [&](const std::vector<double>& a, std::size_t i, const std::vector<double>& b, std::size_t j) {
                double s = 0;
                for (std::size_t c = 0; c < d; ++c) s += a[i * d + c] * b[j * d + c];
                return s;
            };
            for (bool advance : {true, false}) {
                std::vector<double> sims;
                for (std::size_t i = 0; i + 1 < t; ++i)
                    sims.push_back((advance ? dot2(za, i, zb, i + 1) : dot2(za, i + 1, zb, i)) / tau);
                double denom = 0;
                for (double s : sims) denom += std::exp(s);
                double oracle = 0;
                for (double s : sims) oracle += -std::log(std::exp(s) / denom);
                double got = advance ? consistency_adv(fa, fb, tau).item() : consistency_lag(fa, fb, tau).item();
                worst = std::max(worst, std::abs(got - oracle));
            }
        }
    }

    // closed-form symmetric cases
    Tensor sym = Tensor::from({4, 2}, {1, 1, 1, 1, 1, 1, 1, 1});
    worst = std::max(worst, std::abs(temporal_contrastive(sym, {0, 0, 0, 0}, tau).item() - 4.0 * std::log(3.0)));
    std::vector<double> rows6;
    for (int i = 0; i < 6; ++i) {
        rows6.push_back(0.4);
        rows6.push_back(-0.9);
    }
    Tensor f6 = Tensor::from({6, 2}, rows6);
    worst = std::max(worst, std::abs(consistency_adv(f6, f6, tau).item() - 5.0 * std::log(5.0)));
    Tensor f2 = Tensor::from({2, 2}, {0.3, 0.4, -0.5, 0.1});
    worst = std::max(worst, std::abs(consistency_adv(f2, f2, tau).item()));
    worst = std::max(worst, std::abs(tac(f2, f2, tau).item()));

    std::ostringstream os;
    os << "50 random instances + closed forms, worst abs deviation " << worst;
    return {worst < 1e-10, os.str()};
}

// ----- criterion 4: metric oracle equivalence -----

Outcome criterion_metric_oracles() {
    Rng rng(404);
    std::size_t disagreements = 0;
    for (int iter = 0; iter < 1000; ++iter) {
        std::size_t t = 4 + rng.integer(40);
        std::size_t classes = 2 + rng.integer(4);
        std::vector<std::int64_t> pred(t), gt(t);
        for (auto& x : pred) x = static_cast<std::int64_t>(rng.integer(classes));
        for (auto& x : gt) x = static_cast<std::int64_t>(rng.integer(classes));
        auto ptl = segments_from_labels(pred);
        auto gtl = segments_from_labels(gt);
        if (std::abs(edit_score(ptl, gtl) - reference::edit_score(ptl, gtl)) > 1e-9) ++disagreements;
        for (double k : {0.10, 0.25, 0.50})
            if (std::abs(f1_at_k(ptl, gtl, k) - reference::f1_at_k(ptl, gtl, k)) > 1e-9) ++disagreements;
    }

    // hand-derived example
    std::vector<std::int64_t> pred = {0, 1, 1, 1}, gt = {0, 0, 1, 1};
    bool hand = std::abs(frame_accuracy(pred, gt) - 75.0) < 1e-12 &&
                std::abs(f1_at_k(segments_from_labels(pred), segments_from_labels(gt), 0.10) - 100.0) < 1e-12;

    std::ostringstream os;
    os << "1000 random timelines, " << disagreements << " disagreement(s); hand example "
       << (hand ? "exact" : "WRONG");
    return {disagreements == 0 && hand, os.str()};
}

// ----- criteria 5-7 share the desk-scale configuration -----

RunConfig desk_config() {
    RunConfig cfg;  // spec desk-scale defaults: T=24 N=256 M=64 D=64 H=W=32 A=4
    cfg.train_scenes = 64;
    cfg.eval_scenes = 16;
    cfg.epochs = 24;
    cfg.seed = 1;
    cfg.out_dir.clear();
    return cfg;
}

Outcome criterion_transfer_benefit() {
    RunConfig full = desk_config();
    RunConfig baseline = full;
    baseline.use_image = false;
    RunConfig unmasked = full;
    unmasked.use_mask = false;

    auto run_variant = [](RunConfig cfg) {
        Model model(cfg);
        std::vector<Scene> corpus = make_train_corpus(cfg);
        run_training(model, corpus);
        return evaluate(model, make_eval_corpus(cfg), "point_only").point;
    };

    auto fut_full = std::async(std::launch::async, run_variant, full);
    auto fut_base = std::async(std::launch::async, run_variant, baseline);
    MetricReport m_full = fut_full.get();
    MetricReport m_base = fut_base.get();
    MetricReport m_unmasked = run_variant(unmasked);

    bool acc_margin = m_full.acc >= m_base.acc + 3.0;
    bool edit_margin = m_full.edit >= m_base.edit + 3.0;
    bool mask_order = m_unmasked.acc < m_full.acc;
    std::ostringstream os;
    os.precision(4);
    os << "full acc/edit " << m_full.acc << "/" << m_full.edit << ", point-only " << m_base.acc << "/" << m_base.edit
       << ", unmasked acc " << m_unmasked.acc;
    return {acc_margin && edit_margin && mask_order, os.str()};
}

Outcome criterion_ablation_monotonic() {
    // reduced scale, 3 seeds per rung, mean edit must be non-decreasing
    // within a one-point noise band
    RunConfig base = desk_config();
    base.T = 16;
    base.N = 160;
    base.M = 32;
    base.D = 48;
    base.H = base.W = 24;
    base.p4_hidden = 24;
    base.train_scenes = 20;
    base.eval_scenes = 8;
    base.epochs = 10;
    base.warmup_epochs = 5;

    auto variants = ablate_variants(base, "losses_on_off");
    const std::vector<std::uint64_t> seeds = {1, 2, 3};
    std::vector<double> mean_edit(variants.size(), 0.0);

    struct Job {
        std::size_t variant;
        RunConfig cfg;
    };
    std::vector<Job> jobs;
    for (std::size_t v = 0; v < variants.size(); ++v)
        for (std::uint64_t s : seeds) {
            RunConfig cfg = variants[v].second;
            cfg.seed = s;
            jobs.push_back({v, cfg});
        }
    std::vector<double> edits(jobs.size(), 0.0);
    auto run_job = [&](std::size_t i) {
        Model model(jobs[i].cfg);
        std::vector<Scene> corpus = make_train_corpus(jobs[i].cfg);
        run_training(model, corpus);
        edits[i] = evaluate(model, make_eval_corpus(jobs[i].cfg), "point_only").point.edit;
    };
    std::vector<std::future<void>> running;
    std::size_t next = 0;
    while (next < jobs.size() || !running.empty()) {
        while (running.size() < 2 && next < jobs.size())
            running.push_back(std::async(std::launch::async, run_job, next++));
        running.front().get();
        running.erase(running.begin());
    }
    for (std::size_t i = 0; i < jobs.size(); ++i) mean_edit[jobs[i].variant] += edits[i] / seeds.size();

    bool monotone = true;
    std::ostringstream os;
    os.precision(4);
    for (std::size_t v = 0; v < variants.size(); ++v) {
        if (v) {
            os << " -> ";
            if (mean_edit[v] < mean_edit[v - 1] - 1.0) monotone = false;
        }
        os << variants[v].first << " " << mean_edit[v];
    }
    return {monotone, os.str()};
}

Outcome criterion_overfit_and_chance() {
    // memorize one scene; stop as soon as its frame accuracy clears 95
    RunConfig cfg = desk_config();
    cfg.train_scenes = 1;
    cfg.eval_scenes = 1;
    cfg.epochs = 100;
    cfg.augment = false;
    cfg.batch_size = 1;
    cfg.warmup_epochs = 5;
    Model model(cfg);
    std::vector<Scene> corpus = make_train_corpus(cfg);
    double train_acc = 0.0;
    std::size_t epochs_used = 0;
    run_training(model, corpus, {}, [&](const EpochRecord& rec) {
        epochs_used = rec.epoch;
        if (rec.epoch % 5 != 0 && rec.epoch != cfg.epochs) return false;
        train_acc = evaluate(model, corpus, "point_only").point.acc;
        return train_acc > 95.0;
    });
    if (train_acc <= 95.0) train_acc = evaluate(model, corpus, "point_only").point.acc;
    bool overfit = train_acc > 95.0;

    // untrained models stay in the chance band for A = 4
    double chance_sum = 0.0;
    for (std::uint64_t s : {11ULL, 12ULL, 13ULL}) {
        RunConfig fresh = desk_config();
        fresh.seed = s;
        fresh.eval_scenes = 8;
        Model m(fresh);
        chance_sum += evaluate(m, make_eval_corpus(fresh), "point_only").point.acc;
    }
    double chance = chance_sum / 3.0;
    bool in_band = chance >= 15.0 && chance <= 35.0;

    std::ostringstream os;
    os.precision(4);
    os << "single-scene acc " << train_acc << " after " << epochs_used << " epochs; untrained mean acc " << chance
       << " (band 15-35)";
    return {overfit && in_band, os.str()};
}

Outcome criterion_deployment_purity() {
    RunConfig cfg;
    cfg.T = 10;
    cfg.N = 64;
    cfg.H = 16;
    cfg.W = 16;
    cfg.M = 16;
    cfg.D = 24;
    cfg.p4_hidden = 12;
    cfg.point_layers = 1;
    cfg.xmodal_layers = 1;
    cfg.window_size = 1;
    cfg.epochs = 2;
    cfg.train_scenes = 3;
    cfg.eval_scenes = 3;
    cfg.warmup_epochs = 1;
    cfg.out_dir.clear();

    Model model(cfg);
    std::vector<Scene> corpus = make_train_corpus(cfg);
    run_training(model, corpus);
    std::vector<Scene> eval_set = make_eval_corpus(cfg);
    EvalResult point_only = evaluate(model, eval_set, "point_only");
    EvalResult dual = evaluate(model, eval_set, "dual");

    std::size_t train_n = model.count_train_params();
    std::size_t infer_n = model.count_infer_params();
    bool identity = train_n == infer_n + model.count_image_branch_params() + model.count_image_head_params();
    bool purity = point_only.image_branch_allocs == 0 && dual.image_branch_allocs > 0;
    bool subset = infer_n < train_n;

    std::ostringstream os;
    os << "point_only allocs " << point_only.image_branch_allocs << ", dual allocs " << dual.image_branch_allocs
       << "; params train " << train_n << " = infer " << infer_n << " + image " << model.count_image_branch_params()
       << " + head " << model.count_image_head_params() << (identity ? " (exact)" : " (VIOLATED)");
    return {identity && purity && subset, os.str()};
}

}  // namespace

int main(int argc, char** argv) {
    struct Criterion {
        int id;
        const char* name;
        std::function<Outcome()> run;
    };
    std::vector<Criterion> criteria = {
        {1, "gradient correctness", criterion_gradients},
        {2, "mask independence", criterion_mask_independence},
        {3, "loss oracle equivalence", criterion_loss_oracles},
        {4, "metric oracle equivalence", criterion_metric_oracles},
        {5, "desk-scale transfer benefit", criterion_transfer_benefit},
        {6, "ablation monotonicity", criterion_ablation_monotonic},
        {7, "overfit sanity and chance band", criterion_overfit_and_chance},
        {8, "deployment-path purity", criterion_deployment_purity},
    };

    int only = 0;
    if (argc > 1) only = std::atoi(argv[1]);

    int failures = 0;
    for (const auto& c : criteria) {
        if (only && c.id != only) continue;
        double t0 = now_s();
        Outcome out;
        try {
            out = c.run();
        } catch (const std::exception& e) {
            out = {false, std::string("exception: ") + e.what()};
        }
        std::printf("[%s] criterion %d (%s): %s  [%.1fs]\n", out.pass ? "PASS" : "FAIL", c.id, c.name,
                    out.detail.c_str(), now_s() - t0);
        std::fflush(stdout);
        if (!out.pass) ++failures;
    }
    return failures;
}
