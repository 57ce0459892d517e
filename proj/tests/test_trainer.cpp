#include <catch2/catch_amalgamated.hpp>

#include <filesystem>
#include <fstream>

#include "pc4d/trainer.hpp"

using namespace pc4d;

namespace {

// small enough to train in well under a second
RunConfig tiny_config(std::uint64_t seed = 1) {
    RunConfig cfg;
    cfg.T = 8;
    cfg.N = 48;
    cfg.H = 16;
    cfg.W = 16;
    cfg.M = 12;
    cfg.D = 16;
    cfg.p4_hidden = 8;
    cfg.point_layers = 1;
    cfg.git_layers = 1;
    cfg.xmodal_layers = 1;
    cfg.window_size = 1;
    cfg.epochs = 2;
    cfg.train_scenes = 3;
    cfg.eval_scenes = 2;
    cfg.batch_size = 2;
    cfg.warmup_epochs = 2;
    cfg.seed = seed;
    cfg.out_dir.clear();
    return cfg;
}

}  // namespace

TEST_CASE("config parse and serialize") {
    RunConfig cfg;
    cfg.T = 12;
    cfg.fusion_mode = "sum";
    cfg.tau = 0.1;
    cfg.use_mask = false;
    std::string text = serialize_config(cfg);
    RunConfig back = parse_config_text(text);
    REQUIRE(serialize_config(back) == text);
    REQUIRE(back.T == 12);
    REQUIRE(back.fusion_mode == "sum");
    REQUIRE_FALSE(back.use_mask);

    SECTION("unknown keys are errors") {
        REQUIRE_THROWS_AS(parse_config_text("nonsense_key=3\n"), std::invalid_argument);
        RunConfig c;
        REQUIRE_THROWS_AS(config_set(c, "not_a_key", "1"), std::invalid_argument);
    }
    SECTION("comments and blank lines are fine") {
        RunConfig c = parse_config_text("# a comment\n\nT=10  # trailing\n");
        REQUIRE(c.T == 10);
    }
    SECTION("malformed lines are errors") {
        REQUIRE_THROWS_AS(parse_config_text("T 10\n"), std::invalid_argument);
        REQUIRE_THROWS_AS(parse_config_text("use_mask=maybe\n"), std::invalid_argument);
    }
    SECTION("validation catches bad combinations") {
        RunConfig c = tiny_config();
        c.M = c.N + 1;
        REQUIRE_THROWS_AS(validate_config(c), std::invalid_argument);
        c = tiny_config();
        c.fusion_mode = "bilinear";
        REQUIRE_THROWS_AS(validate_config(c), std::invalid_argument);
        c = tiny_config();
        c.tg_stride = c.T;
        REQUIRE_THROWS_AS(validate_config(c), std::invalid_argument);
    }
}

TEST_CASE("parameter counting") {
    RunConfig cfg = tiny_config();
    SECTION("inference path is a strict subset when the image branch exists") {
        std::size_t train_n = count_params(cfg, "train");
        std::size_t infer_n = count_params(cfg, "infer");
        REQUIRE(infer_n < train_n);
        Model m(cfg);
        REQUIRE(train_n == infer_n + m.count_image_branch_params() + m.count_image_head_params());
    }
    SECTION("count is independent of the seed") {
        RunConfig other = tiny_config(99);
        REQUIRE(count_params(cfg, "train") == count_params(other, "train"));
        REQUIRE(count_params(cfg, "infer") == count_params(other, "infer"));
    }
    SECTION("point-only config has no image parameters") {
        RunConfig solo = tiny_config();
        solo.use_image = false;
        REQUIRE(count_params(solo, "train") == count_params(solo, "infer"));
    }
    SECTION("distillation drops the cross-modal encoder from both paths") {
        RunConfig dist = tiny_config();
        dist.distill_mode = "cosine";
        REQUIRE(count_params(dist, "infer") < count_params(cfg, "infer"));
    }
    SECTION("unknown path rejected") {
        REQUIRE_THROWS_AS(count_params(cfg, "both"), std::invalid_argument);
    }
}

TEST_CASE("training smoke run writes artifacts") {
    namespace fs = std::filesystem;
    RunConfig cfg = tiny_config();
    cfg.out_dir = (fs::temp_directory_path() / "pc4d_smoke_run").string();
    fs::remove_all(cfg.out_dir);
    TrainResult result = train(cfg);
    REQUIRE(result.records.size() == cfg.epochs);
    for (const EpochRecord& r : result.records) {
        REQUIRE(std::isfinite(r.total));
        REQUIRE(std::isfinite(r.lp));
        REQUIRE(std::isfinite(r.li));
        REQUIRE(std::isfinite(r.ltcont));
        REQUIRE(std::isfinite(r.ltac));
    }
    REQUIRE(fs::exists(fs::path(cfg.out_dir) / "config.txt"));
    REQUIRE(fs::exists(fs::path(cfg.out_dir) / "record.jsonl"));
    REQUIRE(fs::exists(result.checkpoint_path));

    // one record line per epoch
    std::ifstream rec(fs::path(cfg.out_dir) / "record.jsonl");
    std::string line;
    std::size_t lines = 0;
    while (std::getline(rec, line)) ++lines;
    REQUIRE(lines == cfg.epochs);

    SECTION("checkpoint restores the model bit-for-bit") {
        Checkpoint ck = load_checkpoint(result.checkpoint_path);
        RunConfig stored = parse_config_text(ck.config_text);
        Model restored(stored);
        load_into(ck, restored.params());
        Scene probe = make_eval_corpus(cfg)[0];
        Tensor a = restored.forward_infer(probe.video);
        Model fresh(cfg);
        load_into(ck, fresh.params());
        REQUIRE(a.data() == fresh.forward_infer(probe.video).data());
    }
    SECTION("checkpoint rejects a mismatched architecture") {
        Checkpoint ck = load_checkpoint(result.checkpoint_path);
        RunConfig wrong = cfg;
        wrong.D = cfg.D * 2;
        Model other(wrong);
        REQUIRE_THROWS_AS(load_into(ck, other.params()), std::runtime_error);
    }
    fs::remove_all(cfg.out_dir);
}

TEST_CASE("training is deterministic per seed") {
    RunConfig cfg = tiny_config(5);
    TrainResult a = train(cfg);
    TrainResult b = train(cfg);
    REQUIRE(a.records.size() == b.records.size());
    for (std::size_t i = 0; i < a.records.size(); ++i) {
        REQUIRE(a.records[i].total == b.records[i].total);
        REQUIRE(a.records[i].lp == b.records[i].lp);
    }
    REQUIRE(a.final_eval.point.acc == b.final_eval.point.acc);
}

TEST_CASE("loss decreases on a tiny corpus") {
    RunConfig cfg = tiny_config(7);
    cfg.epochs = 6;
    cfg.warmup_epochs = 2;
    TrainResult r = train(cfg);
    REQUIRE(r.records.back().total < r.records.front().total);
}

TEST_CASE("point-only evaluation matches dual point head bit-exactly") {
    RunConfig cfg = tiny_config(9);
    Model model(cfg);
    std::vector<Scene> corpus = make_train_corpus(cfg);
    run_training(model, corpus);
    std::vector<Scene> eval_set = make_eval_corpus(cfg);

    for (const Scene& scene : eval_set) {
        Tensor infer_logits = model.forward_infer(scene.video);
        Model::TrainForward fwd = model.forward_train(scene.video, scene.images);
        REQUIRE(infer_logits.data() == fwd.point_logits.data());
    }

    EvalResult point_only = evaluate(model, eval_set, "point_only");
    EvalResult dual = evaluate(model, eval_set, "dual");
    REQUIRE(point_only.point.acc == dual.point.acc);
    REQUIRE(point_only.point.edit == dual.point.edit);
    REQUIRE(dual.image.has_value());
}

TEST_CASE("point-only evaluation allocates no image-branch tensors") {
    RunConfig cfg = tiny_config(11);
    Model model(cfg);
    std::vector<Scene> eval_set = make_eval_corpus(cfg);
    EvalResult point_only = evaluate(model, eval_set, "point_only");
    REQUIRE(point_only.image_branch_allocs == 0);
    EvalResult dual = evaluate(model, eval_set, "dual");
    REQUIRE(dual.image_branch_allocs > 0);
}

TEST_CASE("non-finite loss aborts with the offending term named") {
    RunConfig cfg = tiny_config(13);
    Model model(cfg);
    // poison the point head: its NaN reaches the task loss unfiltered
    const_cast<ParamStore::Param*>(model.params().find("head.point_w"))->tensor.data()[0] =
        std::numeric_limits<double>::quiet_NaN();
    std::vector<Scene> corpus = make_train_corpus(cfg);
    try {
        run_training(model, corpus);
        FAIL("expected NumericalError");
    } catch (const NumericalError& e) {
        REQUIRE(std::string(e.what()).find("task_point") != std::string::npos);
    }
}

TEST_CASE("scene loss variants") {
    RunConfig cfg = tiny_config(15);
    SECTION("distillation mode produces finite losses") {
        for (const char* mode : {"l2", "kl", "cosine"}) {
            RunConfig c = cfg;
            c.distill_mode = mode;
            Model m(c);
            Scene s = make_train_corpus(c)[0];
            StepLosses sl = scene_losses(m, s, 42);
            REQUIRE(std::isfinite(sl.total.item()));
            REQUIRE(sl.ltcont.item() == 0.0);
            REQUIRE(sl.ltac.item() == 0.0);
        }
    }
    SECTION("point-only training uses the task loss alone") {
        RunConfig c = cfg;
        c.use_image = false;
        Model m(c);
        Scene s = make_train_corpus(c)[0];
        StepLosses sl = scene_losses(m, s, 42);
        REQUIRE(sl.total.item() == sl.lp.item());
        REQUIRE(sl.li.item() == 0.0);
    }
    SECTION("loss toggles zero out their terms") {
        RunConfig c = cfg;
        c.use_tcont = false;
        c.use_tac = false;
        Model m(c);
        Scene s = make_train_corpus(c)[0];
        StepLosses sl = scene_losses(m, s, 42);
        REQUIRE(sl.ltcont.item() == 0.0);
        REQUIRE(sl.ltac.item() == 0.0);
        REQUIRE(sl.total.item() == Catch::Approx(sl.lp.item() + sl.li.item()).margin(1e-12));
    }
}

TEST_CASE("semantic segmentation task trains and reports miou") {
    RunConfig cfg = tiny_config(17);
    cfg.task = "semseg";
    cfg.epochs = 2;
    Model model(cfg);
    std::vector<Scene> corpus = make_train_corpus(cfg);
    auto records = run_training(model, corpus);
    REQUIRE(std::isfinite(records.back().total));
    EvalResult ev = evaluate(model, make_eval_corpus(cfg), "point_only");
    REQUIRE(ev.point.miou.has_value());
    REQUIRE(*ev.point.miou >= 0.0);
    REQUIRE(*ev.point.miou <= 100.0);
    REQUIRE(ev.image_branch_allocs == 0);
}

TEST_CASE("ablate variants cover the advertised axes") {
    RunConfig cfg = tiny_config(19);
    REQUIRE(ablate_variants(cfg, "window_size").size() == 4);
    REQUIRE(ablate_variants(cfg, "fusion_mode").size() == 4);
    REQUIRE(ablate_variants(cfg, "tg_stride").size() == 3);
    REQUIRE(ablate_variants(cfg, "use_mask").size() == 2);
    REQUIRE(ablate_variants(cfg, "git_on_off").size() == 2);
    REQUIRE(ablate_variants(cfg, "distill_mode").size() == 4);
    auto ladder = ablate_variants(cfg, "losses_on_off");
    REQUIRE(ladder.size() == 5);
    REQUIRE(ladder[0].second.fusion_mode == "concat");
    REQUIRE_FALSE(ladder[0].second.use_tcont);
    REQUIRE(ladder[4].second.use_tac);
    REQUIRE_THROWS_AS(ablate_variants(cfg, "bogus"), std::invalid_argument);
}

TEST_CASE("ablate runs a tiny sweep") {
    RunConfig cfg = tiny_config(21);
    cfg.epochs = 1;
    cfg.train_scenes = 2;
    cfg.eval_scenes = 1;
    auto rows = ablate(cfg, "use_mask", /*jobs=*/2);
    REQUIRE(rows.size() == 2);
    for (const auto& row : rows) {
        REQUIRE(row.point.acc >= 0.0);
        REQUIRE(row.point.acc <= 100.0);
    }
}
