#pragma once

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "pc4d/ops.hpp"
#include "pc4d/rng.hpp"

namespace pc4d {

// Central finite-difference oracle for reverse-mode gradients. `fn` must
// rebuild its graph from the given leaves on every call and return a scalar.
// Error metric: |analytic - fd| / max(1, |analytic|, |fd|).
struct GradCheckReport {
    double max_rel_err = 0.0;
    std::size_t checked = 0;
    std::string worst;
    bool passed(double tol = 1e-5) const { return checked > 0 && max_rel_err < tol; }
};

inline GradCheckReport check_gradients(const std::function<Tensor(const std::vector<Tensor>&)>& fn,
                                       std::vector<Tensor> inputs, double h = 1e-5) {
    GradCheckReport report;

    Tensor loss = fn(inputs);
    loss.backward();
    std::vector<std::vector<double>> analytic;
    for (const Tensor& t : inputs) analytic.push_back(t.requires_grad() ? t.grad() : std::vector<double>{});

    for (std::size_t ti = 0; ti < inputs.size(); ++ti) {
        if (!inputs[ti].requires_grad()) continue;
        for (std::size_t i = 0; i < inputs[ti].size(); ++i) {
            double orig = inputs[ti].data()[i];
            inputs[ti].data()[i] = orig + h;
            double fp = fn(inputs).item();
            inputs[ti].data()[i] = orig - h;
            double fm = fn(inputs).item();
            inputs[ti].data()[i] = orig;
            double fd = (fp - fm) / (2.0 * h);
            double an = analytic[ti][i];
            double rel = std::abs(an - fd) / std::max({1.0, std::abs(an), std::abs(fd)});
            ++report.checked;
            if (rel > report.max_rel_err) {
                report.max_rel_err = rel;
                report.worst = "input " + std::to_string(ti) + " elem " + std::to_string(i) + ": analytic " +
                               std::to_string(an) + " vs fd " + std::to_string(fd);
            }
        }
    }
    return report;
}

inline Tensor random_tensor(Shape s, Rng& rng, double lo = -1.0, double hi = 1.0, bool requires_grad = true) {
    std::vector<double> d(shape_numel(s));
    for (double& x : d) x = rng.uniform(lo, hi);
    return Tensor::from(std::move(s), std::move(d), requires_grad);
}

}  // namespace pc4d
