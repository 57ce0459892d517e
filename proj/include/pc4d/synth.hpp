#pragma once

#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <limits>
#include <stdexcept>
#include <string>
#include <type_traits>
#include <vector>

#include "pc4d/rng.hpp"

// Deterministic synthetic 4D scenes: a textured "actor" object executes a
// scripted interaction with a static "target" while one or more decoy
// objects wander (and sometimes loiter near the target). The actor and the
// decoys are nearly the same shape, so the action phase is hard to read from
// subsampled geometry alone but easy to read from the rendered intensity
// patterns -- that asymmetry is what makes image-to-point transfer
// measurable on held-out scenes.

namespace pc4d {

struct PointCloudVideo {
    std::size_t T = 0, N = 0;
    std::vector<double> frames;              // T*N*3, row-major (t, n, xyz)
    std::vector<std::int64_t> frame_labels;  // T
    std::vector<std::int64_t> point_labels;  // T*N, may be empty

    double* frame(std::size_t t) { return frames.data() + t * N * 3; }
    const double* frame(std::size_t t) const { return frames.data() + t * N * 3; }
};

struct ImageSequence {
    std::size_t T = 0, H = 0, W = 0, C = 0;
    std::vector<double> frames;             // T*H*W*C in [0,1]
    std::vector<std::int32_t> label_maps;   // T*H*W, ignore = -1, may be empty

    double* frame(std::size_t t) { return frames.data() + t * H * W * C; }
    const double* frame(std::size_t t) const { return frames.data() + t * H * W * C; }
};

struct Scene {
    PointCloudVideo video;
    ImageSequence images;
};

// Pinhole camera at (0, 0, height) looking straight down the -z axis;
// +x maps to +u, +y to +v.
struct Camera {
    double fx = 22.4, fy = 22.4, cx = 15.5, cy = 15.5;
    double height = 2.2;

    static Camera for_viewport(std::size_t H, std::size_t W) {
        Camera c;
        c.fx = 0.7 * static_cast<double>(W);
        c.fy = 0.7 * static_cast<double>(H);
        c.cx = 0.5 * static_cast<double>(W) - 0.5;
        c.cy = 0.5 * static_cast<double>(H) - 0.5;
        return c;
    }

    // returns false when the point is behind (or too close to) the camera
    bool project(const double* p, double& u, double& v, double& depth) const {
        depth = height - p[2];
        if (depth < 0.05) return false;
        u = fx * p[0] / depth + cx;
        v = fy * p[1] / depth + cy;
        return true;
    }
};

struct SceneConfig {
    std::size_t T = 24, N = 256;
    std::size_t H = 32, W = 32, C = 1;
    std::size_t num_actions = 4;          // A
    std::size_t num_semantic_classes = 3; // S
    std::size_t num_objects = 3;
    double motion_speed = 0.05;           // meters per frame at the reference speed
    std::string render_mode = "intensity";  // or "depth"
    std::uint64_t seed = 1;
    Camera camera = Camera::for_viewport(32, 32);

    void validate() const {
        if (T < 2) throw std::invalid_argument("scene config: T must be >= 2");
        if (N < 16) throw std::invalid_argument("scene config: N must be >= 16");
        if (H < 8 || W < 8) throw std::invalid_argument("scene config: viewport must be at least 8x8");
        if (C != 1 && C != 3) throw std::invalid_argument("scene config: C must be 1 or 3");
        if (num_actions < 2 || num_actions > T / 2)
            throw std::invalid_argument("scene config: num_actions must be in [2, T/2]");
        if (num_objects < 3) throw std::invalid_argument("scene config: need at least target, actor and one decoy");
        if (num_semantic_classes < 3)
            throw std::invalid_argument("scene config: need at least 3 semantic classes");
        if (render_mode != "intensity" && render_mode != "depth")
            throw std::invalid_argument("scene config: render_mode must be intensity or depth");
        if (motion_speed < 0.0) throw std::invalid_argument("scene config: motion_speed must be >= 0");
    }
};

// z-buffered point-to-pixel label projection; unwritten pixels keep the
// ignore value, off-screen points are skipped, nearest point wins a pixel.
inline std::vector<std::int32_t> project_labels(const double* points, const std::int64_t* labels, std::size_t n,
                                                const Camera& cam, std::size_t H, std::size_t W,
                                                std::int32_t ignore = -1) {
    std::vector<std::int32_t> map(H * W, ignore);
    std::vector<double> zbuf(H * W, std::numeric_limits<double>::infinity());
    for (std::size_t i = 0; i < n; ++i) {
        double u, v, depth;
        if (!cam.project(points + i * 3, u, v, depth)) continue;
        auto px = static_cast<std::int64_t>(std::llround(u));
        auto py = static_cast<std::int64_t>(std::llround(v));
        if (px < 0 || py < 0 || px >= static_cast<std::int64_t>(W) || py >= static_cast<std::int64_t>(H)) continue;
        std::size_t idx = static_cast<std::size_t>(py) * W + static_cast<std::size_t>(px);
        if (depth < zbuf[idx]) {
            zbuf[idx] = depth;
            map[idx] = static_cast<std::int32_t>(labels[i]);
        }
    }
    return map;
}

namespace detail {

enum class Phase { Approach, Manipulate, Retreat, Idle };

inline Phase phase_kind(std::size_t action) {
    switch (action % 4) {
        case 0: return Phase::Approach;
        case 1: return Phase::Manipulate;
        case 2: return Phase::Retreat;
        default: return Phase::Idle;
    }
}

struct ObjectPoints {
    std::vector<double> local;      // n*3 local coordinates
    std::vector<double> intensity;  // n, base brightness in (0,1]
    std::vector<double> rgb;        // 3, object hue for C=3 renders
};

inline ObjectPoints sample_sphere(std::size_t n, double radius, Rng& rng) {
    ObjectPoints o;
    o.local.resize(n * 3);
    o.intensity.resize(n);
    o.rgb = {0.95, 0.65, 0.25};
    for (std::size_t i = 0; i < n; ++i) {
        double x = rng.normal(), y = rng.normal(), z = rng.normal();
        double nn = std::sqrt(x * x + y * y + z * z);
        if (nn < 1e-9) nn = 1.0;
        o.local[i * 3 + 0] = radius * x / nn;
        o.local[i * 3 + 1] = radius * y / nn;
        o.local[i * 3 + 2] = radius * z / nn;
        // ring texture keyed on azimuth
        o.intensity[i] = 0.55 + 0.25 * std::sin(6.0 * std::atan2(y, x));
    }
    return o;
}

inline ObjectPoints sample_cube(std::size_t n, double half, Rng& rng, bool bright) {
    ObjectPoints o;
    o.local.resize(n * 3);
    o.intensity.resize(n);
    o.rgb = bright ? std::vector<double>{0.3, 0.95, 0.4} : std::vector<double>{0.35, 0.45, 0.9};
    for (std::size_t i = 0; i < n; ++i) {
        // uniform on the cube surface: pick a face, then a point on it
        std::size_t face = rng.integer(6);
        double a = rng.uniform(-half, half), b = rng.uniform(-half, half);
        double p[3];
        p[face / 2] = (face % 2 ? half : -half);
        p[(face / 2 + 1) % 3] = a;
        p[(face / 2 + 2) % 3] = b;
        for (int c = 0; c < 3; ++c) o.local[i * 3 + c] = p[c];
        if (bright) {
            // checkerboard, bright
            int cell = static_cast<int>(std::floor(p[0] / 0.07)) + static_cast<int>(std::floor(p[1] / 0.07)) +
                       static_cast<int>(std::floor(p[2] / 0.07));
            o.intensity[i] = (cell & 1) ? 0.95 : 0.75;
        } else {
            // thin stripes, dim
            o.intensity[i] = std::sin(22.0 * p[0]) > 0.0 ? 0.30 : 0.20;
        }
    }
    return o;
}

}  // namespace detail

// Splits T into num_actions contiguous runs, each at least max(2, T/(2A)).
inline std::vector<std::size_t> action_script_lengths(std::size_t T, std::size_t A, Rng& rng) {
    std::size_t min_len = std::max<std::size_t>(2, T / (2 * A));
    std::vector<std::size_t> lens(A, min_len);
    std::size_t rest = T - min_len * A;
    for (std::size_t i = 0; i < rest; ++i) ++lens[rng.integer(A)];
    return lens;
}

inline Scene generate_scene(const SceneConfig& cfg) {
    cfg.validate();
    Rng root(cfg.seed);
    Rng geo = root.fork(1);
    Rng script_rng = root.fork(2);
    Rng motion = root.fork(3);

    const double speedf = cfg.motion_speed / 0.05;
    const std::size_t n_decoys = cfg.num_objects - 2;

    // point budget: 30% target, 40% actor, rest split across decoys
    std::vector<std::size_t> counts;
    counts.push_back(cfg.N * 3 / 10);
    counts.push_back(cfg.N * 4 / 10);
    std::size_t used = counts[0] + counts[1];
    for (std::size_t d = 0; d < n_decoys; ++d) {
        std::size_t c = (cfg.N - used) / (n_decoys - d);
        counts.push_back(c);
        used += c;
    }
    counts.back() += cfg.N - used;  // absorb rounding

    std::vector<detail::ObjectPoints> objs;
    objs.push_back(detail::sample_sphere(counts[0], 0.16, geo));
    objs.push_back(detail::sample_cube(counts[1], 0.14, geo, /*bright=*/true));
    for (std::size_t d = 0; d < n_decoys; ++d)
        objs.push_back(detail::sample_cube(counts[2 + d], 0.14 * 0.92, geo, /*bright=*/false));

    // layout: static target plus starting positions for the movers
    double ttheta = geo.uniform(0.0, 6.283185307179586);
    double tr = geo.uniform(0.15, 0.35);
    std::vector<std::array<double, 3>> pos(cfg.num_objects);
    pos[0] = {tr * std::cos(ttheta), tr * std::sin(ttheta), 0.05};
    double btheta = geo.uniform(0.0, 6.283185307179586);
    double d0 = geo.uniform(0.75, 0.95);
    pos[1] = {pos[0][0] + d0 * std::cos(btheta), pos[0][1] + d0 * std::sin(btheta), 0.10};
    for (std::size_t d = 0; d < n_decoys; ++d) {
        while (true) {
            std::array<double, 3> p = {geo.uniform(-0.8, 0.8), geo.uniform(-0.8, 0.8), 0.10};
            double dx = p[0] - pos[0][0], dy = p[1] - pos[0][1];
            if (std::sqrt(dx * dx + dy * dy) > 0.35) {
                pos[2 + d] = p;
                break;
            }
        }
    }
    auto clamp_xy = [](std::array<double, 3>& p) {
        p[0] = std::min(0.88, std::max(-0.88, p[0]));
        p[1] = std::min(0.88, std::max(-0.88, p[1]));
    };

    // action script
    std::vector<std::size_t> lens = action_script_lengths(cfg.T, cfg.num_actions, script_rng);
    std::vector<std::int64_t> frame_action(cfg.T);
    {
        std::size_t t = 0;
        for (std::size_t a = 0; a < lens.size(); ++a)
            for (std::size_t i = 0; i < lens[a]; ++i) frame_action[t++] = static_cast<std::int64_t>(a);
    }

    // decoy walk state
    struct DecoyState {
        std::array<double, 2> wp;
        std::size_t dwell = 0;
        double wig_phase = 0.0;
    };
    std::vector<DecoyState> dstate(n_decoys);
    auto draw_waypoint = [&](Rng& r) -> std::array<double, 2> {
        if (r.uniform() < 0.35) {
            // loiter near the target: the decoy mimicking a manipulation
            double a = r.uniform(0.0, 6.283185307179586);
            double rr = r.uniform(0.28, 0.42);
            return {pos[0][0] + rr * std::cos(a), pos[0][1] + rr * std::sin(a)};
        }
        return {r.uniform(-0.8, 0.8), r.uniform(-0.8, 0.8)};
    };
    for (auto& ds : dstate) ds.wp = draw_waypoint(motion);

    const double standoff = 0.30;
    double phase_speed = 0.0;
    std::size_t prev_action = static_cast<std::size_t>(-1);
    double wiggle_phase = 0.0, wiggle_rate = 0.0;
    std::array<double, 2> retreat_dir{0.0, 0.0};

    Scene scene;
    scene.video.T = cfg.T;
    scene.video.N = cfg.N;
    scene.video.frames.resize(cfg.T * cfg.N * 3);
    scene.video.frame_labels = frame_action;
    scene.video.point_labels.resize(cfg.T * cfg.N);
    scene.images.T = cfg.T;
    scene.images.H = cfg.H;
    scene.images.W = cfg.W;
    scene.images.C = cfg.C;
    scene.images.frames.assign(cfg.T * cfg.H * cfg.W * cfg.C, 0.0);
    scene.images.label_maps.assign(cfg.T * cfg.H * cfg.W, -1);

    for (std::size_t t = 0; t < cfg.T; ++t) {
        const auto action = static_cast<std::size_t>(frame_action[t]);
        detail::Phase ph = detail::phase_kind(action);
        if (action != prev_action) {
            prev_action = action;
            double dx = pos[1][0] - pos[0][0];
            double dy = pos[1][1] - pos[0][1];
            double dist = std::sqrt(dx * dx + dy * dy);
            std::size_t len = lens[action];
            if (ph == detail::Phase::Approach)
                phase_speed = std::max(0.0, dist - standoff) / static_cast<double>(len) * speedf;
            if (ph == detail::Phase::Retreat) {
                phase_speed = motion.uniform(0.45, 0.6) / static_cast<double>(len) * speedf;
                double ang = std::atan2(dy, dx) + motion.uniform(-0.5, 0.5);
                retreat_dir = {std::cos(ang), std::sin(ang)};
            }
            if (ph == detail::Phase::Manipulate) {
                wiggle_phase = motion.uniform(0.0, 6.28);
                wiggle_rate = 6.283185307179586 * motion.uniform(1.5, 2.5) / static_cast<double>(len);
            }
        }

        // actor motion
        switch (ph) {
            case detail::Phase::Approach: {
                double dx = pos[0][0] - pos[1][0], dy = pos[0][1] - pos[1][1];
                double dist = std::sqrt(dx * dx + dy * dy);
                if (dist > standoff && dist > 1e-9) {
                    double step = std::min(phase_speed, dist - standoff);
                    pos[1][0] += step * dx / dist;
                    pos[1][1] += step * dy / dist;
                }
                break;
            }
            case detail::Phase::Manipulate: {
                wiggle_phase += wiggle_rate;
                double dx = pos[1][0] - pos[0][0], dy = pos[1][1] - pos[0][1];
                double dist = std::max(1e-9, std::sqrt(dx * dx + dy * dy));
                double amp = 0.045 * speedf;
                pos[1][0] += amp * std::cos(wiggle_phase) * (-dy / dist);
                pos[1][1] += amp * std::cos(wiggle_phase) * (dx / dist);
                break;
            }
            case detail::Phase::Retreat:
                pos[1][0] += phase_speed * retreat_dir[0];
                pos[1][1] += phase_speed * retreat_dir[1];
                break;
            case detail::Phase::Idle:
                break;
        }
        clamp_xy(pos[1]);

        // decoy motion
        for (std::size_t d = 0; d < n_decoys; ++d) {
            auto& ds = dstate[d];
            auto& p = pos[2 + d];
            if (ds.dwell > 0) {
                --ds.dwell;
                ds.wig_phase += 0.9;
                double amp = 0.04 * speedf;
                p[0] += amp * std::cos(ds.wig_phase);
                p[1] += amp * std::sin(ds.wig_phase);
            } else {
                double dx = ds.wp[0] - p[0], dy = ds.wp[1] - p[1];
                double dist = std::sqrt(dx * dx + dy * dy);
                double step = 0.055 * speedf;
                if (dist <= step || dist < 1e-9) {
                    p[0] = ds.wp[0];
                    p[1] = ds.wp[1];
                    ds.dwell = 2 + motion.integer(5);
                    ds.wp = draw_waypoint(motion);
                } else {
                    p[0] += step * dx / dist;
                    p[1] += step * dy / dist;
                }
            }
            clamp_xy(p);
        }

        // write the frame: transformed points, semantic labels, render
        std::size_t at = 0;
        std::vector<double> intensity(cfg.N);
        std::vector<std::int64_t> semantic(cfg.N);
        double* fr = scene.video.frame(t);
        for (std::size_t o = 0; o < cfg.num_objects; ++o) {
            const auto& op = objs[o];
            std::size_t n = op.intensity.size();
            for (std::size_t i = 0; i < n; ++i) {
                fr[(at + i) * 3 + 0] = op.local[i * 3 + 0] + pos[o][0];
                fr[(at + i) * 3 + 1] = op.local[i * 3 + 1] + pos[o][1];
                fr[(at + i) * 3 + 2] = op.local[i * 3 + 2] + pos[o][2];
                intensity[at + i] = op.intensity[i];
                semantic[at + i] = static_cast<std::int64_t>(std::min<std::size_t>(o, 2));
            }
            at += n;
        }
        for (std::size_t i = 0; i < cfg.N; ++i) scene.video.point_labels[t * cfg.N + i] = semantic[i];

        // z-buffered splat render sharing the projection with project_labels
        std::vector<double> zbuf(cfg.H * cfg.W, std::numeric_limits<double>::infinity());
        double* img = scene.images.frame(t);
        std::int32_t* lm = scene.images.label_maps.data() + t * cfg.H * cfg.W;
        for (std::size_t i = 0; i < cfg.N; ++i) {
            double u, v, depth;
            if (!cfg.camera.project(fr + i * 3, u, v, depth)) continue;
            auto px = static_cast<std::int64_t>(std::llround(u));
            auto py = static_cast<std::int64_t>(std::llround(v));
            if (px < 0 || py < 0 || px >= static_cast<std::int64_t>(cfg.W) || py >= static_cast<std::int64_t>(cfg.H))
                continue;
            std::size_t pix = static_cast<std::size_t>(py) * cfg.W + static_cast<std::size_t>(px);
            if (depth >= zbuf[pix]) continue;
            zbuf[pix] = depth;
            lm[pix] = static_cast<std::int32_t>(semantic[i]);
            double value;
            if (cfg.render_mode == "depth") {
                value = std::min(1.0, std::max(0.0, (cfg.camera.height - depth + 0.4) / 1.6));
            } else {
                value = std::min(1.0, std::max(0.0, intensity[i]));
            }
            std::size_t obj = static_cast<std::size_t>(std::min<std::int64_t>(semantic[i], 2));
            for (std::size_t c = 0; c < cfg.C; ++c) {
                double chan = cfg.C == 3 ? value * objs[obj].rgb[c] : value;
                img[pix * cfg.C + c] = chan;
            }
        }
    }
    return scene;
}

// ----- augmentation -----

struct AugmentParams {
    double angle = 0.0;         // rotation about the vertical axis, radians
    double scale = 1.0;
    double jitter_sigma = 0.0;  // per-point gaussian, clipped
    double jitter_clip = 0.05;
    double brightness = 1.0;
    bool flip = false;          // horizontal image flip
};

inline AugmentParams draw_augment_params(Rng& rng) {
    AugmentParams p;
    p.angle = rng.uniform(-0.2617993877991494, 0.2617993877991494);  // +-15 degrees
    p.scale = rng.uniform(0.9, 1.1);
    p.jitter_sigma = 0.01;
    p.brightness = rng.uniform(0.8, 1.2);
    p.flip = rng.uniform() < 0.5;
    return p;
}

// Labels are untouched by design: augmentation must preserve the segment
// structure of the script.
inline Scene augment_with(const Scene& in, const AugmentParams& p, Rng& jitter_rng) {
    Scene out = in;
    const double ca = std::cos(p.angle), sa = std::sin(p.angle);
    for (std::size_t i = 0; i < out.video.frames.size(); i += 3) {
        double x = in.video.frames[i], y = in.video.frames[i + 1], z = in.video.frames[i + 2];
        double rx = ca * x - sa * y, ry = sa * x + ca * y;
        double jx = 0.0, jy = 0.0, jz = 0.0;
        if (p.jitter_sigma > 0.0) {
            auto clip = [&](double v) { return std::min(p.jitter_clip, std::max(-p.jitter_clip, v)); };
            jx = clip(jitter_rng.normal() * p.jitter_sigma);
            jy = clip(jitter_rng.normal() * p.jitter_sigma);
            jz = clip(jitter_rng.normal() * p.jitter_sigma);
        }
        out.video.frames[i] = p.scale * rx + jx;
        out.video.frames[i + 1] = p.scale * ry + jy;
        out.video.frames[i + 2] = p.scale * z + jz;
    }
    const std::size_t H = in.images.H, W = in.images.W, C = in.images.C;
    for (std::size_t t = 0; t < in.images.T; ++t) {
        const double* src = in.images.frame(t);
        double* dst = out.images.frame(t);
        for (std::size_t y = 0; y < H; ++y)
            for (std::size_t x = 0; x < W; ++x) {
                std::size_t sx = p.flip ? W - 1 - x : x;
                for (std::size_t c = 0; c < C; ++c) {
                    double v = src[(y * W + sx) * C + c] * p.brightness;
                    dst[(y * W + x) * C + c] = std::min(1.0, std::max(0.0, v));
                }
            }
        if (!in.images.label_maps.empty() && p.flip) {
            const std::int32_t* ls = in.images.label_maps.data() + t * H * W;
            std::int32_t* ld = out.images.label_maps.data() + t * H * W;
            for (std::size_t y = 0; y < H; ++y)
                for (std::size_t x = 0; x < W; ++x) ld[y * W + x] = ls[y * W + (W - 1 - x)];
        }
    }
    return out;
}

inline Scene augment(const Scene& in, std::uint64_t seed) {
    Rng rng(seed);
    AugmentParams p = draw_augment_params(rng);
    Rng jitter = rng.fork(7);
    return augment_with(in, p, jitter);
}

// ----- scene dump format (see README) -----

namespace detail {

template <typename T>
void write_flat(const std::filesystem::path& path, const std::vector<T>& v) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("scene dump: cannot write " + path.string());
    for (T x : v) {
        if constexpr (std::is_same_v<T, double>) {
            std::uint64_t b = std::bit_cast<std::uint64_t>(x);
            unsigned char raw[8];
            for (int i = 0; i < 8; ++i) raw[i] = static_cast<unsigned char>(b >> (8 * i));
            os.write(reinterpret_cast<char*>(raw), 8);
        } else {
            auto u = static_cast<std::uint32_t>(static_cast<std::int32_t>(x));
            unsigned char raw[4];
            for (int i = 0; i < 4; ++i) raw[i] = static_cast<unsigned char>(u >> (8 * i));
            os.write(reinterpret_cast<char*>(raw), 4);
        }
    }
}

template <typename T>
std::vector<T> read_flat(const std::filesystem::path& path, std::size_t count) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("scene dump: cannot read " + path.string());
    std::vector<T> v(count);
    for (T& x : v) {
        if constexpr (std::is_same_v<T, double>) {
            unsigned char raw[8];
            is.read(reinterpret_cast<char*>(raw), 8);
            std::uint64_t b = 0;
            for (int i = 0; i < 8; ++i) b |= std::uint64_t(raw[i]) << (8 * i);
            x = std::bit_cast<double>(b);
        } else {
            unsigned char raw[4];
            is.read(reinterpret_cast<char*>(raw), 4);
            std::uint32_t u = 0;
            for (int i = 0; i < 4; ++i) u |= std::uint32_t(raw[i]) << (8 * i);
            x = static_cast<T>(static_cast<std::int32_t>(u));
        }
        if (!is) throw std::runtime_error("scene dump: truncated " + path.string());
    }
    return v;
}

}  // namespace detail

inline void write_scene_dump(const std::string& dir, const Scene& s) {
    namespace fs = std::filesystem;
    fs::create_directories(dir);
    std::ofstream meta(fs::path(dir) / "meta.txt");
    meta << "T=" << s.video.T << "\nN=" << s.video.N << "\nH=" << s.images.H << "\nW=" << s.images.W << "\nC="
         << s.images.C << "\n";
    std::vector<std::int32_t> fl(s.video.frame_labels.begin(), s.video.frame_labels.end());
    std::vector<std::int32_t> pl(s.video.point_labels.begin(), s.video.point_labels.end());
    detail::write_flat(fs::path(dir) / "points.f64", s.video.frames);
    detail::write_flat(fs::path(dir) / "frame_labels.i32", fl);
    detail::write_flat(fs::path(dir) / "point_labels.i32", pl);
    detail::write_flat(fs::path(dir) / "images.f64", s.images.frames);
    detail::write_flat(fs::path(dir) / "label_maps.i32", s.images.label_maps);
}

inline Scene read_scene_dump(const std::string& dir) {
    namespace fs = std::filesystem;
    std::ifstream meta(fs::path(dir) / "meta.txt");
    if (!meta) throw std::runtime_error("scene dump: no meta.txt in " + dir);
    std::size_t T = 0, N = 0, H = 0, W = 0, C = 0;
    std::string line;
    while (std::getline(meta, line)) {
        auto eq = line.find('=');
        if (eq == std::string::npos) continue;
        std::string key = line.substr(0, eq);
        std::size_t val = std::stoull(line.substr(eq + 1));
        if (key == "T") T = val;
        else if (key == "N") N = val;
        else if (key == "H") H = val;
        else if (key == "W") W = val;
        else if (key == "C") C = val;
    }
    if (T == 0 || N == 0 || H == 0 || W == 0 || C == 0)
        throw std::runtime_error("scene dump: incomplete meta.txt in " + dir);
    Scene s;
    s.video.T = T;
    s.video.N = N;
    s.video.frames = detail::read_flat<double>(fs::path(dir) / "points.f64", T * N * 3);
    auto fl = detail::read_flat<std::int32_t>(fs::path(dir) / "frame_labels.i32", T);
    auto pl = detail::read_flat<std::int32_t>(fs::path(dir) / "point_labels.i32", T * N);
    s.video.frame_labels.assign(fl.begin(), fl.end());
    s.video.point_labels.assign(pl.begin(), pl.end());
    s.images.T = T;
    s.images.H = H;
    s.images.W = W;
    s.images.C = C;
    s.images.frames = detail::read_flat<double>(fs::path(dir) / "images.f64", T * H * W * C);
    s.images.label_maps = detail::read_flat<std::int32_t>(fs::path(dir) / "label_maps.i32", T * H * W);
    return s;
}

// temporal gradient of an image sequence: g_t = I_t - I_{min(t+n, T-1)},
// index clamped at the final frame so the output length stays T
inline ImageSequence temporal_gradient(const ImageSequence& images, std::size_t n) {
    if (n < 1 || n >= images.T)
        throw std::invalid_argument("temporal_gradient: stride " + std::to_string(n) + " must be in [1, T)");
    ImageSequence g;
    g.T = images.T;
    g.H = images.H;
    g.W = images.W;
    g.C = images.C;
    g.frames.resize(images.frames.size());
    const std::size_t fs = images.H * images.W * images.C;
    for (std::size_t t = 0; t < images.T; ++t) {
        std::size_t u = std::min(t + n, images.T - 1);
        const double* a = images.frame(t);
        const double* b = images.frame(u);
        double* dst = g.frames.data() + t * fs;
        for (std::size_t i = 0; i < fs; ++i) dst[i] = a[i] - b[i];
    }
    return g;
}

}  // namespace pc4d
