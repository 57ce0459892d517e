#pragma once

#include <stdexcept>
#include <string>
#include <vector>

#include "pc4d/rng.hpp"
#include "pc4d/tensor.hpp"

namespace pc4d {

// Ordered registry of named trainable tensors. Creation order is fixed by
// the model builder, which keeps seeded initialization reproducible. The
// group tags where a parameter lives ("point_branch", "xmodal", ...) so the
// train/infer path counts fall out of simple arithmetic.
class ParamStore {
public:
    struct Param {
        std::string name;
        std::string group;
        Tensor tensor;
    };

    // uniform init in [-1/sqrt(fan_in), +1/sqrt(fan_in)]
    Tensor create(const std::string& name, const std::string& group, Shape shape, std::size_t fan_in, Rng& rng) {
        double bound = 1.0 / std::sqrt(static_cast<double>(fan_in < 1 ? 1 : fan_in));
        std::vector<double> d(shape_numel(shape));
        for (double& x : d) x = rng.uniform(-bound, bound);
        return create_init(name, group, std::move(shape), std::move(d));
    }

    Tensor create_init(const std::string& name, const std::string& group, Shape shape, std::vector<double> init) {
        if (find(name) != nullptr) throw std::invalid_argument("param store: duplicate parameter name " + name);
        Tensor t = Tensor::from(std::move(shape), std::move(init), /*requires_grad=*/true);
        params_.push_back({name, group, t});
        return t;
    }

    const Param* find(const std::string& name) const {
        for (const Param& p : params_)
            if (p.name == name) return &p;
        return nullptr;
    }

    std::vector<Param>& all() { return params_; }
    const std::vector<Param>& all() const { return params_; }

    void zero_grads() {
        for (Param& p : params_) p.tensor.zero_grad();
    }

    std::size_t count_group(const std::string& group) const {
        std::size_t n = 0;
        for (const Param& p : params_)
            if (p.group == group) n += p.tensor.size();
        return n;
    }

    std::size_t count_total() const {
        std::size_t n = 0;
        for (const Param& p : params_) n += p.tensor.size();
        return n;
    }

private:
    std::vector<Param> params_;
};

struct OptimizerState {
    double lr = 0.01;
    double momentum = 0.9;
    double weight_decay = 1e-4;
    std::vector<std::vector<double>> velocity;  // one buffer per parameter, lazily sized
};

// v <- momentum*v + grad + weight_decay*param ; param <- param - lr*v
inline void sgd_step(ParamStore& params, OptimizerState& state) {
    auto& ps = params.all();
    if (state.velocity.size() != ps.size()) state.velocity.resize(ps.size());
    for (std::size_t i = 0; i < ps.size(); ++i) {
        Tensor& t = ps[i].tensor;
        auto& v = state.velocity[i];
        if (v.size() != t.size()) v.assign(t.size(), 0.0);
        auto& w = t.data();
        const auto& g = t.grad();
        if (g.size() != w.size())
            throw std::invalid_argument("sgd_step: grad shape does not match parameter " + ps[i].name);
        for (std::size_t j = 0; j < w.size(); ++j) {
            v[j] = state.momentum * v[j] + g[j] + state.weight_decay * w[j];
            w[j] -= state.lr * v[j];
        }
    }
}

// Linear ramp to base_lr over the first warmup_epochs epochs (1-based), flat
// afterwards.
inline double warmup_lr(std::size_t epoch, double base_lr, std::size_t warmup_epochs) {
    if (warmup_epochs == 0 || epoch >= warmup_epochs) return base_lr;
    return base_lr * static_cast<double>(epoch) / static_cast<double>(warmup_epochs);
}

}  // namespace pc4d
