#pragma once

#include <cstdint>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "pc4d/synth.hpp"

namespace pc4d {

// Every tunable of the system, serialized verbatim into each run directory
// and into checkpoints. Plain key=value text; unknown keys are errors.
struct RunConfig {
    // scene
    std::size_t T = 24, N = 256, H = 32, W = 32, C = 1;
    std::size_t A = 4;            // action classes
    std::size_t S = 3;            // semantic classes
    std::size_t num_objects = 3;
    double motion_speed = 0.05;
    std::string render_mode = "intensity";

    // model
    std::size_t M = 64, D = 64;
    std::size_t point_layers = 2, git_layers = 1, xmodal_layers = 2;
    double radius = 0.3;
    std::size_t temporal_radius = 1, neighbor_cap = 10, p4_hidden = 32;

    // image branch
    std::size_t tg_stride = 1;
    std::size_t window_size = 3;  // window half-width
    bool use_window = true;
    std::string fusion_mode = "cross_attention";
    bool use_git = true;

    // cross-modal transformer
    bool use_mask = true;
    bool use_positional = false;

    // losses
    double tau = 0.07, omega = 0.5;
    std::string distill_mode = "none";
    bool use_tcont = true, use_tac = true;

    // optimizer
    double base_lr = 0.01;
    std::size_t warmup_epochs = 10;
    double weight_decay = 1e-4, momentum = 0.9;
    std::size_t batch_size = 2;

    // run
    std::size_t epochs = 40, train_scenes = 64, eval_scenes = 16;
    std::uint64_t seed = 1;
    bool use_image = true;
    bool augment = true;
    std::string task = "action_seg";  // action_seg | semseg
    std::string out_dir = "runs/run";
};

namespace detail {

// visits every config field with (name, reference); parse and serialize both
// ride on this so the key set cannot drift
template <typename F>
void for_each_config_key(RunConfig& c, F&& f) {
    f("T", c.T); f("N", c.N); f("H", c.H); f("W", c.W); f("C", c.C);
    f("A", c.A); f("S", c.S); f("num_objects", c.num_objects);
    f("motion_speed", c.motion_speed); f("render_mode", c.render_mode);
    f("M", c.M); f("D", c.D);
    f("point_layers", c.point_layers); f("git_layers", c.git_layers); f("xmodal_layers", c.xmodal_layers);
    f("radius", c.radius); f("temporal_radius", c.temporal_radius);
    f("neighbor_cap", c.neighbor_cap); f("p4_hidden", c.p4_hidden);
    f("tg_stride", c.tg_stride); f("window_size", c.window_size); f("use_window", c.use_window);
    f("fusion_mode", c.fusion_mode); f("use_git", c.use_git);
    f("use_mask", c.use_mask); f("use_positional", c.use_positional);
    f("tau", c.tau); f("omega", c.omega); f("distill_mode", c.distill_mode);
    f("use_tcont", c.use_tcont); f("use_tac", c.use_tac);
    f("base_lr", c.base_lr); f("warmup_epochs", c.warmup_epochs);
    f("weight_decay", c.weight_decay); f("momentum", c.momentum); f("batch_size", c.batch_size);
    f("epochs", c.epochs); f("train_scenes", c.train_scenes); f("eval_scenes", c.eval_scenes);
    f("seed", c.seed); f("use_image", c.use_image); f("augment", c.augment);
    f("task", c.task); f("out_dir", c.out_dir);
}

inline void parse_value(const std::string& raw, std::size_t& out) { out = std::stoull(raw); }
inline void parse_value(const std::string& raw, double& out) { out = std::stod(raw); }
inline void parse_value(const std::string& raw, std::string& out) { out = raw; }
inline void parse_value(const std::string& raw, bool& out) {
    if (raw == "true" || raw == "1") out = true;
    else if (raw == "false" || raw == "0") out = false;
    else throw std::invalid_argument("expected true/false, got '" + raw + "'");
}

inline std::string format_value(std::size_t v) { return std::to_string(v); }
inline std::string format_value(bool v) { return v ? "true" : "false"; }
inline std::string format_value(const std::string& v) { return v; }
inline std::string format_value(double v) {
    std::ostringstream os;
    os.precision(17);
    os << v;
    return os.str();
}

}  // namespace detail

inline void config_set(RunConfig& cfg, const std::string& key, const std::string& value) {
    bool found = false;
    detail::for_each_config_key(cfg, [&](const char* name, auto& field) {
        if (found || key != name) return;
        found = true;
        try {
            detail::parse_value(value, field);
        } catch (const std::exception& e) {
            throw std::invalid_argument("config key " + key + ": " + e.what());
        }
    });
    if (!found) throw std::invalid_argument("unknown config key '" + key + "'");
}

inline std::string serialize_config(const RunConfig& cfg) {
    std::ostringstream os;
    detail::for_each_config_key(const_cast<RunConfig&>(cfg),
                                [&](const char* name, auto& field) { os << name << "=" << detail::format_value(field) << "\n"; });
    return os.str();
}

inline RunConfig parse_config_text(const std::string& text) {
    RunConfig cfg;
    std::istringstream is(text);
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        auto hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        while (!line.empty() && (line.back() == ' ' || line.back() == '\r' || line.back() == '\t')) line.pop_back();
        std::size_t start = line.find_first_not_of(" \t");
        if (start == std::string::npos) continue;
        line = line.substr(start);
        auto eq = line.find('=');
        if (eq == std::string::npos)
            throw std::invalid_argument("config line " + std::to_string(lineno) + ": expected key=value, got '" + line + "'");
        config_set(cfg, line.substr(0, eq), line.substr(eq + 1));
    }
    return cfg;
}

inline RunConfig load_config_file(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("cannot open config file " + path);
    std::stringstream buf;
    buf << is.rdbuf();
    return parse_config_text(buf.str());
}

inline SceneConfig scene_config(const RunConfig& c, std::uint64_t seed_override = 0) {
    SceneConfig s;
    s.T = c.T;
    s.N = c.N;
    s.H = c.H;
    s.W = c.W;
    s.C = c.C;
    s.num_actions = c.A;
    s.num_semantic_classes = c.S;
    s.num_objects = c.num_objects;
    s.motion_speed = c.motion_speed;
    s.render_mode = c.render_mode;
    s.seed = seed_override ? seed_override : c.seed;
    s.camera = Camera::for_viewport(c.H, c.W);
    return s;
}

inline void validate_config(const RunConfig& c) {
    auto fail = [](const std::string& msg) { throw std::invalid_argument("config: " + msg); };
    if (c.M > c.N) fail("M must not exceed N");
    if (c.D < 4) fail("D must be at least 4");
    if (c.point_layers < 1) fail("point_layers must be >= 1");
    if (c.tg_stride < 1 || c.tg_stride >= c.T) fail("tg_stride must be in [1, T)");
    if (c.tau <= 0.0) fail("tau must be positive");
    if (c.omega < 0.0 || c.omega > 1.0) fail("omega must be in [0,1]");
    if (c.fusion_mode != "concat" && c.fusion_mode != "sum" && c.fusion_mode != "self_attention" &&
        c.fusion_mode != "cross_attention")
        fail("unknown fusion_mode " + c.fusion_mode);
    if (c.distill_mode != "none" && c.distill_mode != "l2" && c.distill_mode != "kl" && c.distill_mode != "cosine")
        fail("unknown distill_mode " + c.distill_mode);
    if (c.task != "action_seg" && c.task != "semseg") fail("task must be action_seg or semseg");
    if (c.batch_size < 1) fail("batch_size must be >= 1");
    if (c.epochs < 1) fail("epochs must be >= 1");
    if (c.train_scenes < 1) fail("train_scenes must be >= 1");
    if (c.radius <= 0.0) fail("radius must be positive");
    if (c.neighbor_cap < 1) fail("neighbor_cap must be >= 1");
    if (!c.use_image && c.distill_mode != "none") fail("distill_mode requires use_image=true");
    // scene-level constraints checked by the generator
    scene_config(c).validate();
}

}  // namespace pc4d
