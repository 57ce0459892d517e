// Command-line front end: synth / train / eval / ablate / metrics / gradcheck.
// Exit codes: 0 success, 1 usage or config error, 2 numerical failure.

#include <filesystem>
#include <fstream>
#include <iostream>

#include "CLI11.hpp"
#include "json.hpp"

#include "pc4d/gradcheck_suite.hpp"
#include "pc4d/trainer.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct ConfigOpts {
    std::string config_file;
    std::vector<std::string> sets;
    std::int64_t seed = -1;
};

void add_config_opts(CLI::App* cmd, ConfigOpts& opts) {
    cmd->add_option("--config", opts.config_file, "key=value config file");
    cmd->add_option("--set", opts.sets, "override a config key, e.g. --set epochs=10")->take_all();
    cmd->add_option("--seed", opts.seed, "shorthand for --set seed=<n>");
}

pc4d::RunConfig resolve_config(const ConfigOpts& opts) {
    pc4d::RunConfig cfg;
    if (!opts.config_file.empty()) cfg = pc4d::load_config_file(opts.config_file);
    for (const std::string& kv : opts.sets) {
        auto eq = kv.find('=');
        if (eq == std::string::npos) throw std::invalid_argument("--set expects key=value, got '" + kv + "'");
        pc4d::config_set(cfg, kv.substr(0, eq), kv.substr(eq + 1));
    }
    if (opts.seed >= 0) cfg.seed = static_cast<std::uint64_t>(opts.seed);
    pc4d::validate_config(cfg);
    return cfg;
}

json report_json(const pc4d::MetricReport& r) {
    json j;
    j["acc"] = r.acc;
    j["edit"] = r.edit;
    j["f1_10"] = r.f1.count(0.10) ? json(r.f1.at(0.10)) : json();
    j["f1_25"] = r.f1.count(0.25) ? json(r.f1.at(0.25)) : json();
    j["f1_50"] = r.f1.count(0.50) ? json(r.f1.at(0.50)) : json();
    j["miou"] = r.miou ? json(*r.miou) : json();
    return j;
}

std::vector<std::int64_t> read_label_file(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("cannot open label file " + path);
    std::vector<std::int64_t> labels;
    std::int64_t v;
    while (is >> v) labels.push_back(v);
    if (labels.empty()) throw std::runtime_error("label file " + path + " is empty");
    return labels;
}

int cmd_synth(const ConfigOpts& opts, const std::string& out_dir, std::size_t count) {
    pc4d::RunConfig cfg = resolve_config(opts);
    for (std::size_t i = 0; i < count; ++i) {
        pc4d::Scene scene =
            pc4d::generate_scene(pc4d::scene_config(cfg, pc4d::detail::mix_seed(cfg.seed, 0x7261, i)));
        char name[32];
        std::snprintf(name, sizeof(name), "scene_%04zu", i);
        pc4d::write_scene_dump((fs::path(out_dir) / name).string(), scene);
    }
    std::cout << "wrote " << count << " scene(s) under " << out_dir << "\n";
    return 0;
}

int cmd_train(const ConfigOpts& opts, const std::string& out_dir) {
    pc4d::RunConfig cfg = resolve_config(opts);
    if (!out_dir.empty()) cfg.out_dir = out_dir;
    pc4d::TrainResult result = pc4d::train(cfg, &std::cout);

    json report;
    report["params"]["train"] = pc4d::count_params(cfg, "train");
    report["params"]["infer"] = pc4d::count_params(cfg, "infer");
    report["final"]["point"] = report_json(result.final_eval.point);
    if (result.final_eval.image) report["final"]["image"] = report_json(*result.final_eval.image);
    report["epochs"] = result.records.size();
    report["final_total_loss"] = result.records.empty() ? 0.0 : result.records.back().total;
    if (!cfg.out_dir.empty()) {
        std::ofstream(fs::path(cfg.out_dir) / "report.json") << report.dump(2) << "\n";
        std::cout << "checkpoint: " << result.checkpoint_path << "\n";
    }
    std::cout << report.dump(2) << "\n";
    return 0;
}

int cmd_eval(const ConfigOpts& opts, const std::string& ckpt_path, const std::string& mode) {
    pc4d::Checkpoint ck = pc4d::load_checkpoint(ckpt_path);
    pc4d::RunConfig cfg = pc4d::parse_config_text(ck.config_text);
    for (const std::string& kv : opts.sets) {
        auto eq = kv.find('=');
        if (eq == std::string::npos) throw std::invalid_argument("--set expects key=value, got '" + kv + "'");
        pc4d::config_set(cfg, kv.substr(0, eq), kv.substr(eq + 1));
    }
    pc4d::validate_config(cfg);
    pc4d::Model model(cfg);
    pc4d::load_into(ck, model.params());
    pc4d::EvalResult res = pc4d::evaluate(model, pc4d::make_eval_corpus(cfg), mode);

    json j;
    j["mode"] = mode;
    j["point"] = report_json(res.point);
    if (res.image) j["image"] = report_json(*res.image);
    j["image_branch_allocs"] = res.image_branch_allocs;
    std::cout << j.dump(2) << "\n";
    return 0;
}

int cmd_ablate(const ConfigOpts& opts, const std::string& axis, std::size_t jobs, const std::string& out_file) {
    pc4d::RunConfig cfg = resolve_config(opts);
    std::vector<pc4d::AblateRow> rows = pc4d::ablate(cfg, axis, jobs, &std::cout);

    std::cout << "\n" << axis << " sweep (point-only deployment, held-out scenes)\n";
    std::printf("%-18s %8s %8s %8s %8s %8s\n", "variant", "Acc", "Edit", "F1@10", "F1@25", "F1@50");
    json jrows = json::array();
    for (const auto& row : rows) {
        std::printf("%-18s %8.2f %8.2f %8.2f %8.2f %8.2f\n", row.label.c_str(), row.point.acc, row.point.edit,
                    row.point.f1.at(0.10), row.point.f1.at(0.25), row.point.f1.at(0.50));
        json r;
        r["variant"] = row.label;
        r["point"] = report_json(row.point);
        jrows.push_back(r);
    }
    if (!out_file.empty()) {
        std::ofstream(out_file) << jrows.dump(2) << "\n";
        std::cout << "wrote " << out_file << "\n";
    }
    return 0;
}

int cmd_metrics(const std::string& pred_path, const std::string& gt_path, bool scene_dirs) {
    json j;
    if (scene_dirs) {
        pc4d::Scene pred = pc4d::read_scene_dump(pred_path);
        pc4d::Scene gt = pc4d::read_scene_dump(gt_path);
        pc4d::MetricReport r = pc4d::compute_report(pred.video.frame_labels, gt.video.frame_labels);
        if (!pred.video.point_labels.empty() && !gt.video.point_labels.empty()) {
            std::int64_t classes = 0;
            for (auto l : gt.video.point_labels) classes = std::max(classes, l + 1);
            for (auto l : pred.video.point_labels) classes = std::max(classes, l + 1);
            r.miou = pc4d::mean_iou(pred.video.point_labels, gt.video.point_labels, classes);
        }
        j = report_json(r);
    } else {
        pc4d::MetricReport r = pc4d::compute_report(read_label_file(pred_path), read_label_file(gt_path));
        j = report_json(r);
    }
    std::cout << j.dump(2) << "\n";
    return 0;
}

int cmd_gradcheck(double tol) {
    auto results = pc4d::run_gradcheck_suite(tol);
    bool all_pass = true;
    for (const auto& r : results) {
        std::printf("%-32s max rel err %.3e  %s\n", r.name.c_str(), r.max_rel_err, r.pass ? "ok" : "FAIL");
        all_pass = all_pass && r.pass;
    }
    std::printf("%zu checks, tolerance %.1e: %s\n", results.size(), tol, all_pass ? "all ok" : "FAILURES");
    return all_pass ? 0 : 2;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"4D point cloud sequence understanding with image-assisted training"};
    app.require_subcommand(1);

    ConfigOpts opts;
    std::string out_dir, ckpt_path, mode = "point_only", axis, out_file;
    std::string pred_path, gt_path;
    bool scene_dirs = false;
    std::size_t count = 1, jobs = 1;
    double tol = 1e-5;

    auto* synth = app.add_subcommand("synth", "generate synthetic scenes and write scene dumps");
    add_config_opts(synth, opts);
    synth->add_option("--out", out_dir, "output directory")->required();
    synth->add_option("--count", count, "number of scenes");

    auto* train = app.add_subcommand("train", "train a model");
    add_config_opts(train, opts);
    train->add_option("--out", out_dir, "run directory (overrides config out_dir)");

    auto* eval = app.add_subcommand("eval", "evaluate a checkpoint");
    add_config_opts(eval, opts);
    eval->add_option("--ckpt", ckpt_path, "checkpoint file")->required();
    eval->add_option("--mode", mode, "point_only or dual");

    auto* ablate = app.add_subcommand("ablate", "train and compare a config sweep");
    add_config_opts(ablate, opts);
    ablate->add_option("--axis", axis, "git_on_off|fusion_mode|window_size|tg_stride|use_mask|distill_mode|losses_on_off")
        ->required();
    ablate->add_option("--jobs", jobs, "parallel runs");
    ablate->add_option("--out", out_file, "write the comparison table as JSON");

    auto* metrics = app.add_subcommand("metrics", "segmentation metrics from label files or scene dumps");
    metrics->add_option("--pred", pred_path, "predicted labels (one per line) or scene dump dir")->required();
    metrics->add_option("--gt", gt_path, "ground-truth labels or scene dump dir")->required();
    metrics->add_flag("--scene-dirs", scene_dirs, "treat --pred/--gt as scene dump directories");

    auto* gradcheck = app.add_subcommand("gradcheck", "finite-difference checks for all ops and losses");
    gradcheck->add_option("--tol", tol, "max relative error tolerance");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? 0 : 1;
    }

    try {
        if (synth->parsed()) return cmd_synth(opts, out_dir, count);
        if (train->parsed()) return cmd_train(opts, out_dir);
        if (eval->parsed()) return cmd_eval(opts, ckpt_path, mode);
        if (ablate->parsed()) return cmd_ablate(opts, axis, jobs, out_file);
        if (metrics->parsed()) return cmd_metrics(pred_path, gt_path, scene_dirs);
        if (gradcheck->parsed()) return cmd_gradcheck(tol);
    } catch (const pc4d::NumericalError& e) {
        std::cerr << "numerical failure: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 1;
}
