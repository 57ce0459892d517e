#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "pc4d/crossmodal.hpp"
#include "pc4d/gradcheck.hpp"
#include "pc4d/losses.hpp"
#include "pc4d/optim.hpp"

using namespace pc4d;

// ----- independent brute-force oracles (double loops over plain arrays) -----

namespace {

std::vector<double> normalize_rows(const std::vector<double>& x, std::size_t rows, std::size_t d) {
    std::vector<double> z(x.size());
    for (std::size_t i = 0; i < rows; ++i) {
        double ss = 0;
        for (std::size_t j = 0; j < d; ++j) ss += x[i * d + j] * x[i * d + j];
        double n = std::sqrt(ss);
        for (std::size_t j = 0; j < d; ++j) z[i * d + j] = n == 0 ? 0.0 : x[i * d + j] / n;
    }
    return z;
}

double oracle_contrastive(const std::vector<double>& feats, const std::vector<std::int64_t>& labels, std::size_t d,
                          double tau) {
    const std::size_t n = labels.size();
    std::vector<double> z = normalize_rows(feats, n, d);
    auto dot = [&](std::size_t a, std::size_t b) {
        double s = 0;
        for (std::size_t j = 0; j < d; ++j) s += z[a * d + j] * z[b * d + j];
        return s;
    };
    double total = 0;
    for (std::size_t k = 0; k < n; ++k) {
        std::vector<std::size_t> positives;
        for (std::size_t u = 0; u < n; ++u)
            if (u != k && labels[u] == labels[k]) positives.push_back(u);
        if (positives.empty()) continue;
        double denom = 0;
        for (std::size_t j = 0; j < n; ++j)
            if (j != k) denom += std::exp(dot(k, j) / tau);
        double inner = 0;
        for (std::size_t u : positives) inner += -std::log(std::exp(dot(k, u) / tau) / denom);
        total += inner / static_cast<double>(positives.size());
    }
    return total;
}

double oracle_consistency(const std::vector<double>& fa, const std::vector<double>& fb, std::size_t t, std::size_t d,
                          double tau, bool advance) {
    std::vector<double> za = normalize_rows(fa, t, d);
    std::vector<double> zb = normalize_rows(fb, t, d);
    auto dot = [&](const std::vector<double>& a, std::size_t i, const std::vector<double>& b, std::size_t j) {
        double s = 0;
        for (std::size_t c = 0; c < d; ++c) s += a[i * d + c] * b[j * d + c];
        return s;
    };
    // advance: terms i=2..T pair (a[i-1], b[i]); lag: terms i=1..T-1 pair (a[i+1], b[i]); 1-based
    std::vector<double> sims;
    if (advance) {
        for (std::size_t i = 2; i <= t; ++i) sims.push_back(dot(za, i - 2, zb, i - 1) / tau);
    } else {
        for (std::size_t i = 1; i <= t - 1; ++i) sims.push_back(dot(za, i, zb, i - 1) / tau);
    }
    double denom = 0;
    for (double s : sims) denom += std::exp(s);
    double total = 0;
    for (double s : sims) total += -std::log(std::exp(s) / denom);
    return total;
}

}  // namespace

TEST_CASE("attention mask layout") {
    SECTION("3 + 3 mask matches the asymmetric pattern") {
        auto mask = build_attention_mask(3, 3);
        REQUIRE(mask.size() == 36);
        for (std::size_t r = 0; r < 3; ++r)
            for (std::size_t c = 0; c < 6; ++c) REQUIRE(mask[r * 6 + c] == (c < 3 ? 1 : 0));
        for (std::size_t r = 3; r < 6; ++r)
            for (std::size_t c = 0; c < 6; ++c) REQUIRE(mask[r * 6 + c] == 1);
    }
    SECTION("no image tokens degenerates to all-true") {
        auto mask = build_attention_mask(4, 0);
        REQUIRE(mask == std::vector<std::uint8_t>(16, 1));
    }
    SECTION("every row keeps at least one allowed column") {
        auto mask = build_attention_mask(2, 5);
        for (std::size_t r = 0; r < 7; ++r) {
            bool any = false;
            for (std::size_t c = 0; c < 7; ++c) any = any || mask[r * 7 + c];
            REQUIRE(any);
        }
    }
    SECTION("zero point tokens rejected") {
        REQUIRE_THROWS_AS(build_attention_mask(0, 3), std::invalid_argument);
    }
}

TEST_CASE("masked attention layer behavior") {
    ParamStore store;
    Rng rng(3);
    AttentionLayerParams layer = make_attention_layer(store, "l", "g", 6, 12, rng);
    Rng xr(4);
    Tensor tokens = random_tensor({5, 6}, xr, -1.0, 1.0, false);

    SECTION("all-true mask equals the unmasked path bit-for-bit") {
        std::vector<std::uint8_t> mask(25, 1);
        Tensor masked = attention_layer(tokens, layer, &mask);
        Tensor plain = attention_layer(tokens, layer, nullptr);
        REQUIRE(masked.data() == plain.data());
    }
    SECTION("single allowed column gets weight one") {
        std::vector<std::uint8_t> mask(25, 1);
        for (std::size_t c = 0; c < 5; ++c) mask[0 * 5 + c] = (c == 2);
        Tensor attn;
        attention_layer(tokens, layer, &mask, &attn);
        REQUIRE(attn.data()[0 * 5 + 2] == 1.0);
        for (std::size_t c = 0; c < 5; ++c)
            if (c != 2) REQUIRE(attn.data()[0 * 5 + c] == 0.0);
    }
    SECTION("masked rows are probability vectors over allowed columns") {
        auto mask = build_attention_mask(2, 3);
        Tensor attn;
        attention_layer(tokens, layer, &mask, &attn);
        for (std::size_t r = 0; r < 5; ++r) {
            double sum = 0;
            for (std::size_t c = 0; c < 5; ++c) sum += attn.data()[r * 5 + c];
            REQUIRE(std::abs(sum - 1.0) < 1e-12);
        }
        // point rows put zero weight on image columns
        for (std::size_t r = 0; r < 2; ++r)
            for (std::size_t c = 2; c < 5; ++c) REQUIRE(attn.data()[r * 5 + c] == 0.0);
    }
}

TEST_CASE("cross-modal mask independence") {
    ParamStore store;
    Rng rng(7);
    CrossModalParams params = make_cross_modal(store, "g", 8, 2, rng);
    Rng xr(8);
    Tensor p = random_tensor({4, 8}, xr, -1.0, 1.0, false);
    Tensor i1 = random_tensor({4, 8}, xr, -1.0, 1.0, false);
    Tensor i2 = random_tensor({4, 8}, xr, -1.0, 1.0, false);

    SECTION("point outputs ignore image token values exactly") {
        CrossModalOut a = cross_modal_train(p, i1, params, true);
        CrossModalOut b = cross_modal_train(p, i2, params, true);
        REQUIRE(a.point_out.data() == b.point_out.data());
        REQUIRE(a.image_out.data() != b.image_out.data());
    }
    SECTION("image outputs do depend on point tokens") {
        Tensor p2 = random_tensor({4, 8}, xr, -1.0, 1.0, false);
        CrossModalOut a = cross_modal_train(p, i1, params, true);
        CrossModalOut b = cross_modal_train(p2, i1, params, true);
        REQUIRE(a.image_out.data() != b.image_out.data());
    }
    SECTION("inference path equals the point half of training") {
        CrossModalOut a = cross_modal_train(p, i1, params, true);
        Tensor infer = cross_modal_infer(p, params);
        REQUIRE(infer.data() == a.point_out.data());
    }
    SECTION("without the mask the invariance breaks") {
        CrossModalOut a = cross_modal_train(p, i1, params, false);
        CrossModalOut b = cross_modal_train(p, i2, params, false);
        REQUIRE(a.point_out.data() != b.point_out.data());
    }
    SECTION("zero layers pass tokens through untouched") {
        CrossModalParams empty;
        CrossModalOut out = cross_modal_train(p, i1, empty, true);
        REQUIRE(out.point_out.data() == p.data());
        REQUIRE(out.image_out.data() == i1.data());
    }
    SECTION("width mismatch rejected") {
        REQUIRE_THROWS_AS(cross_modal_train(p, Tensor::zeros({4, 6}), params, true), std::invalid_argument);
    }
    SECTION("T = 1 degenerate sequence still runs") {
        Tensor p1 = random_tensor({1, 8}, xr, -1.0, 1.0, false);
        Tensor i3 = random_tensor({1, 8}, xr, -1.0, 1.0, false);
        CrossModalOut out = cross_modal_train(p1, i3, params, true);
        REQUIRE(cross_modal_infer(p1, params).data() == out.point_out.data());
    }
}

TEST_CASE("temporal contrastive loss") {
    SECTION("fully symmetric case: 4 ln 3") {
        Tensor f = Tensor::from({4, 3}, {1, 2, 3, 1, 2, 3, 1, 2, 3, 1, 2, 3});
        Tensor loss = temporal_contrastive(f, {0, 0, 0, 0}, 0.07);
        REQUIRE(loss.item() == Catch::Approx(4.0 * std::log(3.0)).margin(1e-10));
    }
    SECTION("anchor without positives is skipped") {
        Rng rng(11);
        Tensor f = random_tensor({3, 4}, rng, -1.0, 1.0, false);
        Tensor loss = temporal_contrastive(f, {0, 0, 7}, 0.07);
        REQUIRE(std::isfinite(loss.item()));
        double expect = oracle_contrastive(f.data(), {0, 0, 7}, 4, 0.07);
        REQUIRE(loss.item() == Catch::Approx(expect).margin(1e-10));
        // all labels unique: every anchor skipped, loss is exactly zero
        Tensor zero_loss = temporal_contrastive(f, {0, 1, 2}, 0.07);
        REQUIRE(zero_loss.item() == 0.0);
    }
    SECTION("matches the brute-force oracle on random instances") {
        Rng rng(13);
        for (int iter = 0; iter < 10; ++iter) {
            std::size_t t = 2 + rng.integer(3);  // 2T rows in [4, 8]
            std::size_t rows = 2 * t;
            Tensor f = random_tensor({rows, 5}, rng, -1.0, 1.0, false);
            std::vector<std::int64_t> labels(rows);
            for (auto& l : labels) l = static_cast<std::int64_t>(rng.integer(3));
            double expect = oracle_contrastive(f.data(), labels, 5, 0.07);
            REQUIRE(temporal_contrastive(f, labels, 0.07).item() == Catch::Approx(expect).margin(1e-10));
        }
    }
    SECTION("invariant to a common row permutation") {
        Rng rng(17);
        Tensor f = random_tensor({6, 4}, rng, -1.0, 1.0, false);
        std::vector<std::int64_t> labels = {0, 1, 0, 2, 1, 0};
        double base = temporal_contrastive(f, labels, 0.07).item();
        std::vector<std::size_t> perm = {3, 0, 5, 1, 4, 2};
        std::vector<double> pf(24);
        std::vector<std::int64_t> pl(6);
        for (std::size_t i = 0; i < 6; ++i) {
            pl[i] = labels[perm[i]];
            for (std::size_t j = 0; j < 4; ++j) pf[i * 4 + j] = f.data()[perm[i] * 4 + j];
        }
        REQUIRE(temporal_contrastive(Tensor::from({6, 4}, pf), pl, 0.07).item() ==
                Catch::Approx(base).margin(1e-10));
    }
    SECTION("invalid tau rejected") {
        REQUIRE_THROWS_AS(temporal_contrastive(Tensor::zeros({2, 2}), {0, 0}, 0.0), std::invalid_argument);
    }
}

TEST_CASE("consistency losses") {
    SECTION("T = 2 collapses to zero") {
        Rng rng(19);
        Tensor a = random_tensor({2, 4}, rng, -1.0, 1.0, false);
        Tensor b = random_tensor({2, 4}, rng, -1.0, 1.0, false);
        REQUIRE(consistency_adv(a, b, 0.07).item() == Catch::Approx(0.0).margin(1e-12));
        REQUIRE(consistency_lag(a, b, 0.07).item() == Catch::Approx(0.0).margin(1e-12));
        REQUIRE(tac(a, b, 0.07).item() == Catch::Approx(0.0).margin(1e-12));
    }
    SECTION("identical rows give the closed form (T-1) ln(T-1)") {
        const std::size_t t = 6;
        std::vector<double> row = {0.3, -0.7, 0.2};
        std::vector<double> data;
        for (std::size_t i = 0; i < t; ++i) data.insert(data.end(), row.begin(), row.end());
        Tensor f = Tensor::from({t, 3}, data);
        double expect = (t - 1) * std::log(static_cast<double>(t - 1));
        REQUIRE(consistency_adv(f, f, 0.07).item() == Catch::Approx(expect).margin(1e-10));
        REQUIRE(consistency_lag(f, f, 0.07).item() == Catch::Approx(expect).margin(1e-10));
        REQUIRE(tac(f, f, 0.07).item() == Catch::Approx(expect).margin(1e-10));
    }
    SECTION("matches the brute-force oracle") {
        Rng rng(23);
        for (int iter = 0; iter < 10; ++iter) {
            Tensor a = random_tensor({6, 4}, rng, -1.0, 1.0, false);
            Tensor b = random_tensor({6, 4}, rng, -1.0, 1.0, false);
            REQUIRE(consistency_adv(a, b, 0.07).item() ==
                    Catch::Approx(oracle_consistency(a.data(), b.data(), 6, 4, 0.07, true)).margin(1e-10));
            REQUIRE(consistency_lag(a, b, 0.07).item() ==
                    Catch::Approx(oracle_consistency(a.data(), b.data(), 6, 4, 0.07, false)).margin(1e-10));
        }
    }
    SECTION("lag loss prefers the correctly shifted pair") {
        // f_b leads f_a by one frame: lag pairs (a[i+1], b[i]) align exactly
        Rng rng(29);
        Tensor base = random_tensor({7, 4}, rng, -1.0, 1.0, false);
        std::vector<double> lead(6 * 4), trail(6 * 4);
        std::copy(base.data().begin() + 4, base.data().end(), trail.begin());      // a = rows 1..6
        std::copy(base.data().begin(), base.data().end() - 4, lead.begin());       // b = rows 0..5
        Tensor fa = Tensor::from({6, 4}, trail);
        Tensor fb = Tensor::from({6, 4}, lead);
        double aligned = consistency_lag(fb, fa, 0.07).item();
        Rng rng2(31);
        Tensor rnd = random_tensor({6, 4}, rng2, -1.0, 1.0, false);
        double random_pair = consistency_lag(rnd, fa, 0.07).item();
        REQUIRE(aligned < random_pair);
    }
    SECTION("too-short sequences rejected") {
        REQUIRE_THROWS_AS(consistency_adv(Tensor::zeros({1, 4}), Tensor::zeros({1, 4}), 0.07),
                          std::invalid_argument);
    }
    SECTION("losses are non-negative on random inputs") {
        Rng rng(37);
        for (int iter = 0; iter < 20; ++iter) {
            Tensor a = random_tensor({5, 3}, rng, -2.0, 2.0, false);
            Tensor b = random_tensor({5, 3}, rng, -2.0, 2.0, false);
            REQUIRE(consistency_adv(a, b, 0.07).item() >= -1e-12);
            REQUIRE(consistency_lag(a, b, 0.07).item() >= -1e-12);
            std::vector<std::int64_t> labels = {0, 1, 0, 1, 0};
            REQUIRE(temporal_contrastive(a, labels, 0.07).item() >= -1e-12);
        }
    }
}

TEST_CASE("task losses") {
    SECTION("near-one-hot logits approach zero loss") {
        Tensor logits = Tensor::from({2, 3}, {60, 0, 0, 0, 60, 0});
        REQUIRE(task_loss(logits, {0, 1}).value.item() < 1e-9);
    }
    SECTION("uniform logits give ln A") {
        Tensor logits = Tensor::zeros({4, 5});
        REQUIRE(task_loss(logits, {0, 1, 2, 3}).value.item() == Catch::Approx(std::log(5.0)).margin(1e-12));
    }
    SECTION("all ignored positions give zero with a warning flag") {
        Tensor logits = Tensor::zeros({3, 2});
        TaskLoss tl = task_loss(logits, {-1, -1, -1});
        REQUIRE(tl.value.item() == 0.0);
        REQUIRE(tl.all_ignored);
    }
    SECTION("video-level recognition loss") {
        Tensor logits = Tensor::from({2, 3}, {10, 0, 0, 10, 0, 0});
        REQUIRE(task_loss_video(logits, 0).item() < 1e-3);
        REQUIRE(task_loss_video(logits, 1).item() > 1.0);
    }
}

TEST_CASE("total loss algebra") {
    Tensor lp = Tensor::scalar(1.0), li = Tensor::scalar(2.0);
    Tensor x = Tensor::scalar(0.7);
    REQUIRE(total_loss(lp, li, x, x, 0.5).item() == Catch::Approx(3.7).margin(1e-12));
    Tensor cont = Tensor::scalar(5.0), cons = Tensor::scalar(11.0);
    REQUIRE(total_loss(lp, li, cont, cons, 1.0).item() == Catch::Approx(8.0).margin(1e-12));
    REQUIRE(total_loss(lp, li, cont, cons, 0.0).item() == Catch::Approx(14.0).margin(1e-12));
}

TEST_CASE("distillation baselines") {
    Rng rng(41);
    Tensor f = random_tensor({4, 3}, rng, -1.0, 1.0, false);
    SECTION("identical inputs give zero in every mode") {
        for (const char* mode : {"l2", "kl", "cosine"})
            REQUIRE(distill_loss(mode, f, f).item() == Catch::Approx(0.0).margin(1e-12));
    }
    SECTION("orthogonal unit rows give cosine loss one") {
        Tensor a = Tensor::from({2, 2}, {1, 0, 0, 1});
        Tensor b = Tensor::from({2, 2}, {0, 1, 1, 0});
        REQUIRE(distill_loss("cosine", a, b).item() == Catch::Approx(1.0).margin(1e-12));
    }
    SECTION("KL is non-negative on random rows") {
        for (int iter = 0; iter < 20; ++iter) {
            Tensor a = random_tensor({3, 4}, rng, -2.0, 2.0, false);
            Tensor b = random_tensor({3, 4}, rng, -2.0, 2.0, false);
            REQUIRE(distill_loss("kl", a, b).item() >= -1e-12);
        }
    }
    SECTION("unknown mode rejected") {
        REQUIRE_THROWS_AS(distill_loss("huber", f, f), std::invalid_argument);
    }
}

TEST_CASE("mask independence survives training steps") {
    // five SGD steps on a toy objective, then the invariance is re-checked
    ParamStore store;
    Rng rng(43);
    CrossModalParams params = make_cross_modal(store, "g", 6, 1, rng);
    OptimizerState opt;
    opt.lr = 0.05;
    Rng xr(44);
    for (int step = 0; step < 5; ++step) {
        store.zero_grads();
        Tensor p = random_tensor({3, 6}, xr, -1.0, 1.0, false);
        Tensor im = random_tensor({3, 6}, xr, -1.0, 1.0, false);
        CrossModalOut out = cross_modal_train(p, im, params, true);
        Tensor loss = add(mean_all(mul(out.point_out, out.point_out)), mean_all(mul(out.image_out, out.image_out)));
        loss.backward();
        sgd_step(store, opt);
    }
    Tensor p = random_tensor({3, 6}, xr, -1.0, 1.0, false);
    Tensor i1 = random_tensor({3, 6}, xr, -1.0, 1.0, false);
    Tensor i2 = random_tensor({3, 6}, xr, -1.0, 1.0, false);
    CrossModalOut a = cross_modal_train(p, i1, params, true);
    CrossModalOut b = cross_modal_train(p, i2, params, true);
    REQUIRE(a.point_out.data() == b.point_out.data());
    REQUIRE(cross_modal_infer(p, params).data() == a.point_out.data());
}
