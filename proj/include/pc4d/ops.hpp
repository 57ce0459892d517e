#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "pc4d/tensor.hpp"

// Dense-tensor ops with reverse-mode gradients. Shapes must conform exactly;
// the only broadcasting anywhere is scalar*tensor (see scale / mul_scalar).
// Every op raises std::invalid_argument naming itself and the offending
// shapes, so shape bugs surface at the call site.

namespace pc4d {

namespace detail {

inline void require(bool ok, const std::string& msg) {
    if (!ok) throw std::invalid_argument(msg);
}

inline void check_same_shape(const char* op, Tensor a, Tensor b) {
    require(a.shape() == b.shape(),
            std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
}

// View of one reduction/normalization axis: index(o, j, i) = (o*len + j)*inner + i.
struct AxisView {
    std::size_t outer, len, inner;
};

inline AxisView axis_view(const char* op, const Shape& s, std::size_t axis) {
    require(axis < s.size(), std::string(op) + ": axis " + std::to_string(axis) + " out of range for " + shape_str(s));
    AxisView v{1, s[axis], 1};
    for (std::size_t i = 0; i < axis; ++i) v.outer *= s[i];
    for (std::size_t i = axis + 1; i < s.size(); ++i) v.inner *= s[i];
    return v;
}

}  // namespace detail

// ----- elementwise -----

inline Tensor add(Tensor a, Tensor b) {
    detail::check_same_shape("add", a, b);
    std::vector<double> out(a.size());
    const auto& ad = a.data();
    const auto& bd = b.data();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = ad[i] + bd[i];
    return detail::make_op("add", a.shape(), std::move(out), {a, b}, [a, b](TensorNode& self) mutable {
        if (a.node()->requires_grad) {
            auto& g = a.grad();
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
        }
        if (b.node()->requires_grad) {
            auto& g = b.grad();
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
        }
    });
}

inline Tensor sub(Tensor a, Tensor b) {
    detail::check_same_shape("sub", a, b);
    std::vector<double> out(a.size());
    const auto& ad = a.data();
    const auto& bd = b.data();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = ad[i] - bd[i];
    return detail::make_op("sub", a.shape(), std::move(out), {a, b}, [a, b](TensorNode& self) mutable {
        if (a.node()->requires_grad) {
            auto& g = a.grad();
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
        }
        if (b.node()->requires_grad) {
            auto& g = b.grad();
            for (std::size_t i = 0; i < g.size(); ++i) g[i] -= self.grad[i];
        }
    });
}

inline Tensor mul(Tensor a, Tensor b) {
    detail::check_same_shape("mul_elementwise", a, b);
    std::vector<double> out(a.size());
    const auto& ad = a.data();
    const auto& bd = b.data();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = ad[i] * bd[i];
    return detail::make_op("mul_elementwise", a.shape(), std::move(out), {a, b}, [a, b](TensorNode& self) mutable {
        if (a.node()->requires_grad) {
            auto& g = a.grad();
            const auto& bd = b.data();
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * bd[i];
        }
        if (b.node()->requires_grad) {
            auto& g = b.grad();
            const auto& ad = a.data();
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * ad[i];
        }
    });
}

inline Tensor mul_scalar(Tensor a, double c) {
    std::vector<double> out(a.size());
    const auto& ad = a.data();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = ad[i] * c;
    return detail::make_op("mul_scalar", a.shape(), std::move(out), {a}, [a, c](TensorNode& self) mutable {
        if (!a.node()->requires_grad) return;
        auto& g = a.grad();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * c;
    });
}

// scalar-tensor broadcast: out = a * s[0], differentiable in both.
inline Tensor scale(Tensor a, Tensor s) {
    detail::require(s.size() == 1, "scale: scale factor must be a 1-element tensor, got " + shape_str(s.shape()));
    double sv = s.data()[0];
    std::vector<double> out(a.size());
    const auto& ad = a.data();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = ad[i] * sv;
    return detail::make_op("scale", a.shape(), std::move(out), {a, s}, [a, s](TensorNode& self) mutable {
        if (a.node()->requires_grad) {
            auto& g = a.grad();
            double sv = s.data()[0];
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * sv;
        }
        if (s.node()->requires_grad) {
            const auto& ad = a.data();
            double acc = 0.0;
            for (std::size_t i = 0; i < ad.size(); ++i) acc += self.grad[i] * ad[i];
            s.grad()[0] += acc;
        }
    });
}

inline Tensor relu(Tensor a) {
    std::vector<double> out(a.size());
    const auto& ad = a.data();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = ad[i] > 0.0 ? ad[i] : 0.0;
    return detail::make_op("relu", a.shape(), std::move(out), {a}, [a](TensorNode& self) mutable {
        if (!a.node()->requires_grad) return;
        auto& g = a.grad();
        const auto& ad = a.data();
        for (std::size_t i = 0; i < g.size(); ++i)
            if (ad[i] > 0.0) g[i] += self.grad[i];
    });
}

inline Tensor exp_t(Tensor a) {
    std::vector<double> out(a.size());
    const auto& ad = a.data();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::exp(ad[i]);
    return detail::make_op("exp", a.shape(), std::move(out), {a}, [a](TensorNode& self) mutable {
        if (!a.node()->requires_grad) return;
        auto& g = a.grad();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * self.data[i];
    });
}

inline Tensor log_t(Tensor a) {
    std::vector<double> out(a.size());
    const auto& ad = a.data();
    for (std::size_t i = 0; i < out.size(); ++i) {
        detail::require(ad[i] > 0.0, "log: input must be strictly positive, got " + std::to_string(ad[i]));
        out[i] = std::log(ad[i]);
    }
    return detail::make_op("log", a.shape(), std::move(out), {a}, [a](TensorNode& self) mutable {
        if (!a.node()->requires_grad) return;
        auto& g = a.grad();
        const auto& ad = a.data();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] / ad[i];
    });
}

// ----- linear algebra -----

inline Tensor matmul(Tensor a, Tensor b) {
    detail::require(a.ndim() == 2 && b.ndim() == 2 && a.dim(1) == b.dim(0),
                    "matmul: shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
    std::vector<double> out(m * n, 0.0);
    const double* ad = a.data().data();
    const double* bd = b.data().data();
    for (std::size_t i = 0; i < m; ++i) {
        const double* arow = ad + i * k;
        double* orow = out.data() + i * n;
        for (std::size_t p = 0; p < k; ++p) {
            const double av = arow[p];
            if (av == 0.0) continue;
            const double* brow = bd + p * n;
            for (std::size_t j = 0; j < n; ++j) orow[j] += av * brow[j];
        }
    }
    return detail::make_op("matmul", {m, n}, std::move(out), {a, b}, [a, b, m, k, n](TensorNode& self) mutable {
        const double* g = self.grad.data();
        if (a.node()->requires_grad) {
            double* da = a.grad().data();
            const double* bd = b.data().data();
            // da[i,p] += sum_j g[i,j] * b[p,j]
            for (std::size_t i = 0; i < m; ++i) {
                const double* grow = g + i * n;
                double* darow = da + i * k;
                for (std::size_t p = 0; p < k; ++p) {
                    const double* brow = bd + p * n;
                    double acc = 0.0;
                    for (std::size_t j = 0; j < n; ++j) acc += grow[j] * brow[j];
                    darow[p] += acc;
                }
            }
        }
        if (b.node()->requires_grad) {
            double* db = b.grad().data();
            const double* ad = a.data().data();
            // db[p,j] += sum_i a[i,p] * g[i,j]
            for (std::size_t i = 0; i < m; ++i) {
                const double* arow = ad + i * k;
                const double* grow = g + i * n;
                for (std::size_t p = 0; p < k; ++p) {
                    const double av = arow[p];
                    if (av == 0.0) continue;
                    double* dbrow = db + p * n;
                    for (std::size_t j = 0; j < n; ++j) dbrow[j] += av * grow[j];
                }
            }
        }
    });
}

inline Tensor transpose(Tensor a) {
    detail::require(a.ndim() == 2, "transpose: expected 2-d tensor, got " + shape_str(a.shape()));
    const std::size_t m = a.dim(0), n = a.dim(1);
    std::vector<double> out(m * n);
    const auto& ad = a.data();
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) out[j * m + i] = ad[i * n + j];
    return detail::make_op("transpose", {n, m}, std::move(out), {a}, [a, m, n](TensorNode& self) mutable {
        if (!a.node()->requires_grad) return;
        auto& g = a.grad();
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < n; ++j) g[i * n + j] += self.grad[j * m + i];
    });
}

inline Tensor reshape(Tensor a, Shape s) {
    detail::require(shape_numel(s) == a.size(),
                    "reshape: cannot view " + shape_str(a.shape()) + " as " + shape_str(s));
    return detail::make_op("reshape", std::move(s), a.data(), {a}, [a](TensorNode& self) mutable {
        if (!a.node()->requires_grad) return;
        auto& g = a.grad();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    });
}

// ----- shape surgery -----

inline Tensor concat(std::vector<Tensor> parts, std::size_t axis) {
    detail::require(!parts.empty(), "concat: no inputs");
    const Shape& s0 = parts[0].shape();
    detail::require(axis < s0.size(), "concat: axis out of range for " + shape_str(s0));
    Shape out_shape = s0;
    std::size_t total = 0;
    for (const Tensor& p : parts) {
        detail::require(p.ndim() == s0.size(), "concat: rank mismatch " + shape_str(p.shape()) + " vs " + shape_str(s0));
        for (std::size_t i = 0; i < s0.size(); ++i)
            detail::require(i == axis || p.shape()[i] == s0[i],
                            "concat: shape mismatch " + shape_str(p.shape()) + " vs " + shape_str(s0));
        total += p.dim(axis);
    }
    out_shape[axis] = total;

    auto ov = detail::axis_view("concat", out_shape, axis);
    std::vector<std::size_t> lens(parts.size());
    for (std::size_t pi = 0; pi < parts.size(); ++pi) lens[pi] = parts[pi].dim(axis);
    std::vector<double> out(shape_numel(out_shape));
    std::size_t at = 0;
    for (std::size_t pi = 0; pi < parts.size(); ++pi) {
        const std::size_t len = lens[pi];
        const auto& pd = parts[pi].data();
        for (std::size_t o = 0; o < ov.outer; ++o) {
            const double* src = pd.data() + o * len * ov.inner;
            double* dst = out.data() + (o * ov.len + at) * ov.inner;
            std::copy(src, src + len * ov.inner, dst);
        }
        at += len;
    }
    return detail::make_op("concat", out_shape, std::move(out), parts, [parts, ov, lens](TensorNode& self) mutable {
        std::size_t at = 0;
        for (std::size_t pi = 0; pi < parts.size(); ++pi) {
            const std::size_t len = lens[pi];
            if (parts[pi].node()->requires_grad) {
                auto& g = parts[pi].grad();
                for (std::size_t o = 0; o < ov.outer; ++o) {
                    const double* src = self.grad.data() + (o * ov.len + at) * ov.inner;
                    double* dst = g.data() + o * len * ov.inner;
                    for (std::size_t i = 0; i < len * ov.inner; ++i) dst[i] += src[i];
                }
            }
            at += len;
        }
    });
}

inline Tensor slice(Tensor a, std::size_t axis, std::size_t begin, std::size_t end) {
    detail::require(axis < a.ndim() && begin < end && end <= a.dim(axis),
                    "slice: range [" + std::to_string(begin) + "," + std::to_string(end) + ") invalid for axis " +
                        std::to_string(axis) + " of " + shape_str(a.shape()));
    auto v = detail::axis_view("slice", a.shape(), axis);
    Shape out_shape = a.shape();
    out_shape[axis] = end - begin;
    const std::size_t len = end - begin;
    std::vector<double> out(shape_numel(out_shape));
    const auto& ad = a.data();
    for (std::size_t o = 0; o < v.outer; ++o) {
        const double* src = ad.data() + (o * v.len + begin) * v.inner;
        std::copy(src, src + len * v.inner, out.data() + o * len * v.inner);
    }
    return detail::make_op("slice", out_shape, std::move(out), {a}, [a, v, begin, len](TensorNode& self) mutable {
        if (!a.node()->requires_grad) return;
        auto& g = a.grad();
        for (std::size_t o = 0; o < v.outer; ++o) {
            const double* src = self.grad.data() + o * len * v.inner;
            double* dst = g.data() + (o * v.len + begin) * v.inner;
            for (std::size_t i = 0; i < len * v.inner; ++i) dst[i] += src[i];
        }
    });
}

// ----- reductions -----

inline Tensor sum_axis(Tensor a, std::size_t axis) {
    auto v = detail::axis_view("sum", a.shape(), axis);
    Shape out_shape = a.shape();
    out_shape.erase(out_shape.begin() + static_cast<std::ptrdiff_t>(axis));
    if (out_shape.empty()) out_shape = {1};
    std::vector<double> out(v.outer * v.inner, 0.0);
    const auto& ad = a.data();
    for (std::size_t o = 0; o < v.outer; ++o)
        for (std::size_t j = 0; j < v.len; ++j) {
            const double* src = ad.data() + (o * v.len + j) * v.inner;
            double* dst = out.data() + o * v.inner;
            for (std::size_t i = 0; i < v.inner; ++i) dst[i] += src[i];
        }
    return detail::make_op("sum", out_shape, std::move(out), {a}, [a, v](TensorNode& self) mutable {
        if (!a.node()->requires_grad) return;
        auto& g = a.grad();
        for (std::size_t o = 0; o < v.outer; ++o)
            for (std::size_t j = 0; j < v.len; ++j) {
                const double* src = self.grad.data() + o * v.inner;
                double* dst = g.data() + (o * v.len + j) * v.inner;
                for (std::size_t i = 0; i < v.inner; ++i) dst[i] += src[i];
            }
    });
}

inline Tensor mean_axis(Tensor a, std::size_t axis) {
    auto v = detail::axis_view("mean", a.shape(), axis);
    Tensor s = sum_axis(a, axis);
    return mul_scalar(s, 1.0 / static_cast<double>(v.len));
}

inline Tensor max_axis(Tensor a, std::size_t axis) {
    auto v = detail::axis_view("max", a.shape(), axis);
    detail::require(v.len > 0, "max: empty axis");
    Shape out_shape = a.shape();
    out_shape.erase(out_shape.begin() + static_cast<std::ptrdiff_t>(axis));
    if (out_shape.empty()) out_shape = {1};
    std::vector<double> out(v.outer * v.inner, -std::numeric_limits<double>::infinity());
    auto argmax = std::make_shared<std::vector<std::size_t>>(v.outer * v.inner, 0);
    const auto& ad = a.data();
    for (std::size_t o = 0; o < v.outer; ++o)
        for (std::size_t i = 0; i < v.inner; ++i) {
            double best = ad[(o * v.len) * v.inner + i];
            std::size_t bj = 0;
            for (std::size_t j = 1; j < v.len; ++j) {
                double x = ad[(o * v.len + j) * v.inner + i];
                if (x > best) {
                    best = x;
                    bj = j;
                }
            }
            out[o * v.inner + i] = best;
            (*argmax)[o * v.inner + i] = bj;
        }
    return detail::make_op("max", out_shape, std::move(out), {a}, [a, v, argmax](TensorNode& self) mutable {
        if (!a.node()->requires_grad) return;
        auto& g = a.grad();
        for (std::size_t o = 0; o < v.outer; ++o)
            for (std::size_t i = 0; i < v.inner; ++i) {
                std::size_t j = (*argmax)[o * v.inner + i];
                g[(o * v.len + j) * v.inner + i] += self.grad[o * v.inner + i];
            }
    });
}

inline Tensor sum_all(Tensor a) {
    double acc = 0.0;
    for (double x : a.data()) acc += x;
    return detail::make_op("sum_all", {1}, {acc}, {a}, [a](TensorNode& self) mutable {
        if (!a.node()->requires_grad) return;
        auto& g = a.grad();
        const double gv = self.grad[0];
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += gv;
    });
}

inline Tensor mean_all(Tensor a) {
    return mul_scalar(sum_all(a), 1.0 / static_cast<double>(a.size()));
}

// max over rows of segments of a (R,D) matrix; segment i covers rows
// [offset_i, offset_i + sizes_i). Empty segments produce a zero row, which is
// the contract for anchors with no neighbors.
inline Tensor segment_max(Tensor a, const std::vector<std::size_t>& sizes) {
    detail::require(a.ndim() == 2, "segment_max: expected 2-d input, got " + shape_str(a.shape()));
    std::size_t total = 0;
    for (std::size_t s : sizes) total += s;
    detail::require(total == a.dim(0), "segment_max: segment sizes sum to " + std::to_string(total) +
                                           " but input has " + std::to_string(a.dim(0)) + " rows");
    const std::size_t S = sizes.size(), D = a.dim(1);
    std::vector<double> out(S * D, 0.0);
    auto argmax = std::make_shared<std::vector<std::int64_t>>(S * D, -1);
    const auto& ad = a.data();
    std::size_t row = 0;
    for (std::size_t s = 0; s < S; ++s) {
        if (sizes[s] > 0) {
            for (std::size_t d = 0; d < D; ++d) {
                double best = ad[row * D + d];
                std::size_t br = row;
                for (std::size_t r = row + 1; r < row + sizes[s]; ++r) {
                    if (ad[r * D + d] > best) {
                        best = ad[r * D + d];
                        br = r;
                    }
                }
                out[s * D + d] = best;
                (*argmax)[s * D + d] = static_cast<std::int64_t>(br);
            }
        }
        row += sizes[s];
    }
    return detail::make_op("segment_max", {S, D}, std::move(out), {a}, [a, S, D, argmax](TensorNode& self) mutable {
        if (!a.node()->requires_grad) return;
        auto& g = a.grad();
        for (std::size_t s = 0; s < S; ++s)
            for (std::size_t d = 0; d < D; ++d) {
                std::int64_t r = (*argmax)[s * D + d];
                if (r >= 0) g[static_cast<std::size_t>(r) * D + d] += self.grad[s * D + d];
            }
    });
}

// ----- normalizations -----

inline Tensor softmax(Tensor a, std::size_t axis) {
    auto v = detail::axis_view("softmax", a.shape(), axis);
    std::vector<double> out(a.size());
    const auto& ad = a.data();
    for (std::size_t o = 0; o < v.outer; ++o)
        for (std::size_t i = 0; i < v.inner; ++i) {
            double m = -std::numeric_limits<double>::infinity();
            for (std::size_t j = 0; j < v.len; ++j) m = std::max(m, ad[(o * v.len + j) * v.inner + i]);
            double denom = 0.0;
            for (std::size_t j = 0; j < v.len; ++j) {
                double e = std::exp(ad[(o * v.len + j) * v.inner + i] - m);
                out[(o * v.len + j) * v.inner + i] = e;
                denom += e;
            }
            for (std::size_t j = 0; j < v.len; ++j) out[(o * v.len + j) * v.inner + i] /= denom;
        }
    return detail::make_op("softmax", a.shape(), std::move(out), {a}, [a, v](TensorNode& self) mutable {
        if (!a.node()->requires_grad) return;
        auto& g = a.grad();
        for (std::size_t o = 0; o < v.outer; ++o)
            for (std::size_t i = 0; i < v.inner; ++i) {
                double dot = 0.0;
                for (std::size_t j = 0; j < v.len; ++j) {
                    std::size_t idx = (o * v.len + j) * v.inner + i;
                    dot += self.grad[idx] * self.data[idx];
                }
                for (std::size_t j = 0; j < v.len; ++j) {
                    std::size_t idx = (o * v.len + j) * v.inner + i;
                    g[idx] += self.data[idx] * (self.grad[idx] - dot);
                }
            }
    });
}

// Row softmax over allowed columns only; disallowed outputs are exactly 0.
// A row with no allowed column cannot be normalized and is rejected.
inline Tensor masked_softmax(Tensor a, const std::vector<std::uint8_t>& allowed) {
    detail::require(a.ndim() == 2, "masked_softmax: expected 2-d logits, got " + shape_str(a.shape()));
    detail::require(allowed.size() == a.size(), "masked_softmax: mask has " + std::to_string(allowed.size()) +
                                                    " entries for logits " + shape_str(a.shape()));
    const std::size_t m = a.dim(0), n = a.dim(1);
    std::vector<double> out(m * n, 0.0);
    const auto& ad = a.data();
    for (std::size_t i = 0; i < m; ++i) {
        double mx = -std::numeric_limits<double>::infinity();
        for (std::size_t j = 0; j < n; ++j)
            if (allowed[i * n + j]) mx = std::max(mx, ad[i * n + j]);
        detail::require(mx != -std::numeric_limits<double>::infinity(),
                        "masked_softmax: row " + std::to_string(i) + " has no allowed columns");
        double denom = 0.0;
        for (std::size_t j = 0; j < n; ++j)
            if (allowed[i * n + j]) {
                double e = std::exp(ad[i * n + j] - mx);
                out[i * n + j] = e;
                denom += e;
            }
        for (std::size_t j = 0; j < n; ++j)
            if (allowed[i * n + j]) out[i * n + j] /= denom;
    }
    return detail::make_op("masked_softmax", a.shape(), std::move(out), {a}, [a, m, n](TensorNode& self) mutable {
        if (!a.node()->requires_grad) return;
        auto& g = a.grad();
        // disallowed entries have s == 0, so the softmax backward formula
        // already routes zero gradient through them
        for (std::size_t i = 0; i < m; ++i) {
            double dot = 0.0;
            for (std::size_t j = 0; j < n; ++j) dot += self.grad[i * n + j] * self.data[i * n + j];
            for (std::size_t j = 0; j < n; ++j) {
                std::size_t idx = i * n + j;
                g[idx] += self.data[idx] * (self.grad[idx] - dot);
            }
        }
    });
}

// Unit-normalize along one axis. The zero vector maps to the zero vector
// (contrastive inputs can be zero-initialized) and gets zero gradient.
inline Tensor l2_normalize(Tensor a, std::size_t axis) {
    auto v = detail::axis_view("l2_normalize", a.shape(), axis);
    std::vector<double> out(a.size());
    auto norms = std::make_shared<std::vector<double>>(v.outer * v.inner, 0.0);
    const auto& ad = a.data();
    for (std::size_t o = 0; o < v.outer; ++o)
        for (std::size_t i = 0; i < v.inner; ++i) {
            double ss = 0.0;
            for (std::size_t j = 0; j < v.len; ++j) {
                double x = ad[(o * v.len + j) * v.inner + i];
                ss += x * x;
            }
            double nn = std::sqrt(ss);
            (*norms)[o * v.inner + i] = nn;
            for (std::size_t j = 0; j < v.len; ++j) {
                std::size_t idx = (o * v.len + j) * v.inner + i;
                out[idx] = nn == 0.0 ? 0.0 : ad[idx] / nn;
            }
        }
    return detail::make_op("l2_normalize", a.shape(), std::move(out), {a}, [a, v, norms](TensorNode& self) mutable {
        if (!a.node()->requires_grad) return;
        auto& g = a.grad();
        for (std::size_t o = 0; o < v.outer; ++o)
            for (std::size_t i = 0; i < v.inner; ++i) {
                double nn = (*norms)[o * v.inner + i];
                if (nn == 0.0) continue;
                double dot = 0.0;
                for (std::size_t j = 0; j < v.len; ++j) {
                    std::size_t idx = (o * v.len + j) * v.inner + i;
                    dot += self.grad[idx] * self.data[idx];
                }
                for (std::size_t j = 0; j < v.len; ++j) {
                    std::size_t idx = (o * v.len + j) * v.inner + i;
                    g[idx] += (self.grad[idx] - self.data[idx] * dot) / nn;
                }
            }
    });
}

inline Tensor layer_norm(Tensor x, Tensor gamma, Tensor beta, double eps = 1e-5) {
    detail::require(x.ndim() == 2, "layer_norm: expected 2-d input, got " + shape_str(x.shape()));
    const std::size_t m = x.dim(0), n = x.dim(1);
    detail::require(gamma.size() == n && beta.size() == n,
                    "layer_norm: gain/bias " + shape_str(gamma.shape()) + "/" + shape_str(beta.shape()) +
                        " do not match row width " + std::to_string(n));
    std::vector<double> out(m * n);
    auto xhat = std::make_shared<std::vector<double>>(m * n);
    auto inv = std::make_shared<std::vector<double>>(m);
    const auto& xd = x.data();
    const auto& gd = gamma.data();
    const auto& bd = beta.data();
    for (std::size_t i = 0; i < m; ++i) {
        double mu = 0.0;
        for (std::size_t j = 0; j < n; ++j) mu += xd[i * n + j];
        mu /= static_cast<double>(n);
        double var = 0.0;
        for (std::size_t j = 0; j < n; ++j) {
            double d = xd[i * n + j] - mu;
            var += d * d;
        }
        var /= static_cast<double>(n);
        double iv = 1.0 / std::sqrt(var + eps);
        (*inv)[i] = iv;
        for (std::size_t j = 0; j < n; ++j) {
            double xh = (xd[i * n + j] - mu) * iv;
            (*xhat)[i * n + j] = xh;
            out[i * n + j] = gd[j] * xh + bd[j];
        }
    }
    return detail::make_op("layer_norm", x.shape(), std::move(out), {x, gamma, beta},
                           [x, gamma, beta, m, n, xhat, inv](TensorNode& self) mutable {
        const auto& gd = gamma.data();
        if (gamma.node()->requires_grad) {
            auto& gg = gamma.grad();
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t j = 0; j < n; ++j) gg[j] += self.grad[i * n + j] * (*xhat)[i * n + j];
        }
        if (beta.node()->requires_grad) {
            auto& gb = beta.grad();
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t j = 0; j < n; ++j) gb[j] += self.grad[i * n + j];
        }
        if (x.node()->requires_grad) {
            auto& gx = x.grad();
            for (std::size_t i = 0; i < m; ++i) {
                double mean_dxh = 0.0, mean_dxh_xh = 0.0;
                for (std::size_t j = 0; j < n; ++j) {
                    double dxh = self.grad[i * n + j] * gd[j];
                    mean_dxh += dxh;
                    mean_dxh_xh += dxh * (*xhat)[i * n + j];
                }
                mean_dxh /= static_cast<double>(n);
                mean_dxh_xh /= static_cast<double>(n);
                for (std::size_t j = 0; j < n; ++j) {
                    double dxh = self.grad[i * n + j] * gd[j];
                    gx[i * n + j] += (*inv)[i] * (dxh - mean_dxh - (*xhat)[i * n + j] * mean_dxh_xh);
                }
            }
        }
    });
}

// ----- classification -----

// Mean cross-entropy over rows whose label != ignore. Fused log-softmax for
// stability. If every row is ignored the loss is 0 and *all_ignored is set.
inline Tensor cross_entropy(Tensor logits, const std::vector<std::int64_t>& labels,
                            std::int64_t ignore = -1, bool* all_ignored = nullptr) {
    detail::require(logits.ndim() == 2, "cross_entropy: expected 2-d logits, got " + shape_str(logits.shape()));
    const std::size_t m = logits.dim(0), k = logits.dim(1);
    detail::require(labels.size() == m, "cross_entropy: " + std::to_string(labels.size()) + " labels for logits " +
                                            shape_str(logits.shape()));
    const auto& ld = logits.data();
    double total = 0.0;
    std::size_t cnt = 0;
    for (std::size_t i = 0; i < m; ++i) {
        if (labels[i] == ignore) continue;
        detail::require(labels[i] >= 0 && static_cast<std::size_t>(labels[i]) < k,
                        "cross_entropy: label " + std::to_string(labels[i]) + " out of range [0," + std::to_string(k) + ")");
        double mx = ld[i * k];
        for (std::size_t j = 1; j < k; ++j) mx = std::max(mx, ld[i * k + j]);
        double denom = 0.0;
        for (std::size_t j = 0; j < k; ++j) denom += std::exp(ld[i * k + j] - mx);
        total += mx + std::log(denom) - ld[i * k + static_cast<std::size_t>(labels[i])];
        ++cnt;
    }
    if (all_ignored) *all_ignored = (cnt == 0);
    double value = cnt == 0 ? 0.0 : total / static_cast<double>(cnt);
    auto labels_copy = std::make_shared<std::vector<std::int64_t>>(labels);
    return detail::make_op("cross_entropy", {1}, {value}, {logits},
                           [logits, labels_copy, ignore, m, k, cnt](TensorNode& self) mutable {
        if (!logits.node()->requires_grad || cnt == 0) return;
        auto& g = logits.grad();
        const auto& ld = logits.data();
        const double gv = self.grad[0] / static_cast<double>(cnt);
        for (std::size_t i = 0; i < m; ++i) {
            std::int64_t y = (*labels_copy)[i];
            if (y == ignore) continue;
            double mx = ld[i * k];
            for (std::size_t j = 1; j < k; ++j) mx = std::max(mx, ld[i * k + j]);
            double denom = 0.0;
            for (std::size_t j = 0; j < k; ++j) denom += std::exp(ld[i * k + j] - mx);
            for (std::size_t j = 0; j < k; ++j) {
                double p = std::exp(ld[i * k + j] - mx) / denom;
                g[i * k + j] += gv * (p - (static_cast<std::size_t>(y) == j ? 1.0 : 0.0));
            }
        }
    });
}

inline Tensor embedding_lookup(Tensor table, const std::vector<std::int64_t>& ids) {
    detail::require(table.ndim() == 2, "embedding_lookup: expected 2-d table, got " + shape_str(table.shape()));
    const std::size_t v = table.dim(0), d = table.dim(1), r = ids.size();
    std::vector<double> out(r * d);
    const auto& td = table.data();
    for (std::size_t i = 0; i < r; ++i) {
        detail::require(ids[i] >= 0 && static_cast<std::size_t>(ids[i]) < v,
                        "embedding_lookup: id " + std::to_string(ids[i]) + " out of range [0," + std::to_string(v) + ")");
        std::copy(td.begin() + static_cast<std::ptrdiff_t>(ids[i] * d),
                  td.begin() + static_cast<std::ptrdiff_t>((ids[i] + 1) * d),
                  out.begin() + static_cast<std::ptrdiff_t>(i * d));
    }
    auto ids_copy = std::make_shared<std::vector<std::int64_t>>(ids);
    return detail::make_op("embedding_lookup", {r, d}, std::move(out), {table},
                           [table, ids_copy, d, r](TensorNode& self) mutable {
        if (!table.node()->requires_grad) return;
        auto& g = table.grad();
        for (std::size_t i = 0; i < r; ++i) {
            double* dst = g.data() + static_cast<std::size_t>((*ids_copy)[i]) * d;
            const double* src = self.grad.data() + i * d;
            for (std::size_t j = 0; j < d; ++j) dst[j] += src[j];
        }
    });
}

// ----- 2-d image ops (layout: channels, height, width) -----

inline Tensor conv2d(Tensor x, Tensor kernel, std::size_t stride = 1, std::size_t pad = 0) {
    detail::require(x.ndim() == 3 && kernel.ndim() == 4 && kernel.dim(1) == x.dim(0),
                    "conv2d: shape mismatch input " + shape_str(x.shape()) + " kernel " + shape_str(kernel.shape()));
    detail::require(stride >= 1, "conv2d: stride must be >= 1");
    const std::size_t C = x.dim(0), H = x.dim(1), W = x.dim(2);
    const std::size_t F = kernel.dim(0), KH = kernel.dim(2), KW = kernel.dim(3);
    detail::require(H + 2 * pad >= KH && W + 2 * pad >= KW, "conv2d: kernel larger than padded input");
    const std::size_t OH = (H + 2 * pad - KH) / stride + 1;
    const std::size_t OW = (W + 2 * pad - KW) / stride + 1;
    std::vector<double> out(F * OH * OW, 0.0);
    const double* xd = x.data().data();
    const double* kd = kernel.data().data();
    for (std::size_t f = 0; f < F; ++f)
        for (std::size_t c = 0; c < C; ++c) {
            const double* xc = xd + c * H * W;
            const double* kc = kd + (f * C + c) * KH * KW;
            for (std::size_t oy = 0; oy < OH; ++oy)
                for (std::size_t ky = 0; ky < KH; ++ky) {
                    const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * stride + ky) - static_cast<std::ptrdiff_t>(pad);
                    if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(H)) continue;
                    double* orow = out.data() + (f * OH + oy) * OW;
                    const double* xrow = xc + static_cast<std::size_t>(iy) * W;
                    for (std::size_t kx = 0; kx < KW; ++kx) {
                        const double kv = kc[ky * KW + kx];
                        if (kv == 0.0) continue;
                        for (std::size_t ox = 0; ox < OW; ++ox) {
                            const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * stride + kx) - static_cast<std::ptrdiff_t>(pad);
                            if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(W)) continue;
                            orow[ox] += kv * xrow[static_cast<std::size_t>(ix)];
                        }
                    }
                }
        }
    return detail::make_op("conv2d", {F, OH, OW}, std::move(out), {x, kernel},
                           [x, kernel, stride, pad, C, H, W, F, KH, KW, OH, OW](TensorNode& self) mutable {
        const double* g = self.grad.data();
        const double* xd = x.data().data();
        const double* kd = kernel.data().data();
        const bool dx_on = x.node()->requires_grad;
        const bool dk_on = kernel.node()->requires_grad;
        double* dx = dx_on ? x.grad().data() : nullptr;
        double* dk = dk_on ? kernel.grad().data() : nullptr;
        for (std::size_t f = 0; f < F; ++f)
            for (std::size_t c = 0; c < C; ++c) {
                const double* xc = xd + c * H * W;
                const double* kc = kd + (f * C + c) * KH * KW;
                double* dxc = dx_on ? dx + c * H * W : nullptr;
                double* dkc = dk_on ? dk + (f * C + c) * KH * KW : nullptr;
                for (std::size_t oy = 0; oy < OH; ++oy)
                    for (std::size_t ky = 0; ky < KH; ++ky) {
                        const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * stride + ky) - static_cast<std::ptrdiff_t>(pad);
                        if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(H)) continue;
                        const double* grow = g + (f * OH + oy) * OW;
                        const double* xrow = xc + static_cast<std::size_t>(iy) * W;
                        double* dxrow = dx_on ? dxc + static_cast<std::size_t>(iy) * W : nullptr;
                        for (std::size_t kx = 0; kx < KW; ++kx) {
                            const double kv = kc[ky * KW + kx];
                            double dkv = 0.0;
                            for (std::size_t ox = 0; ox < OW; ++ox) {
                                const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * stride + kx) - static_cast<std::ptrdiff_t>(pad);
                                if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(W)) continue;
                                const double gv = grow[ox];
                                if (dx_on) dxrow[static_cast<std::size_t>(ix)] += gv * kv;
                                dkv += gv * xrow[static_cast<std::size_t>(ix)];
                            }
                            if (dk_on) dkc[ky * KW + kx] += dkv;
                        }
                    }
            }
    });
}

inline Tensor maxpool2d(Tensor x, std::size_t ksize = 2, std::size_t stride = 2) {
    detail::require(x.ndim() == 3, "maxpool2d: expected (C,H,W) input, got " + shape_str(x.shape()));
    detail::require(ksize >= 1 && stride >= 1 && x.dim(1) >= ksize && x.dim(2) >= ksize,
                    "maxpool2d: window " + std::to_string(ksize) + " invalid for " + shape_str(x.shape()));
    const std::size_t C = x.dim(0), H = x.dim(1), W = x.dim(2);
    const std::size_t OH = (H - ksize) / stride + 1, OW = (W - ksize) / stride + 1;
    std::vector<double> out(C * OH * OW);
    auto argmax = std::make_shared<std::vector<std::size_t>>(C * OH * OW);
    const auto& xd = x.data();
    for (std::size_t c = 0; c < C; ++c)
        for (std::size_t oy = 0; oy < OH; ++oy)
            for (std::size_t ox = 0; ox < OW; ++ox) {
                double best = -std::numeric_limits<double>::infinity();
                std::size_t bi = 0;
                for (std::size_t ky = 0; ky < ksize; ++ky)
                    for (std::size_t kx = 0; kx < ksize; ++kx) {
                        std::size_t idx = (c * H + oy * stride + ky) * W + ox * stride + kx;
                        if (xd[idx] > best) {
                            best = xd[idx];
                            bi = idx;
                        }
                    }
                out[(c * OH + oy) * OW + ox] = best;
                (*argmax)[(c * OH + oy) * OW + ox] = bi;
            }
    return detail::make_op("maxpool2d", {C, OH, OW}, std::move(out), {x}, [x, argmax](TensorNode& self) mutable {
        if (!x.node()->requires_grad) return;
        auto& g = x.grad();
        for (std::size_t i = 0; i < self.grad.size(); ++i) g[(*argmax)[i]] += self.grad[i];
    });
}

inline Tensor upsample2d_nearest(Tensor x, std::size_t factor) {
    detail::require(x.ndim() == 3 && factor >= 1, "upsample2d: expected (C,H,W) input and factor >= 1");
    const std::size_t C = x.dim(0), H = x.dim(1), W = x.dim(2);
    const std::size_t OH = H * factor, OW = W * factor;
    std::vector<double> out(C * OH * OW);
    const auto& xd = x.data();
    for (std::size_t c = 0; c < C; ++c)
        for (std::size_t oy = 0; oy < OH; ++oy)
            for (std::size_t ox = 0; ox < OW; ++ox)
                out[(c * OH + oy) * OW + ox] = xd[(c * H + oy / factor) * W + ox / factor];
    return detail::make_op("upsample2d", {C, OH, OW}, std::move(out), {x},
                           [x, C, H, W, factor, OH, OW](TensorNode& self) mutable {
        if (!x.node()->requires_grad) return;
        auto& g = x.grad();
        for (std::size_t c = 0; c < C; ++c)
            for (std::size_t oy = 0; oy < OH; ++oy)
                for (std::size_t ox = 0; ox < OW; ++ox)
                    g[(c * H + oy / factor) * W + ox / factor] += self.grad[(c * OH + oy) * OW + ox];
    });
}

// ----- composites -----

// y = x W + b with b a (1,n) row replicated across rows via an explicit
// ones-column product, keeping the no-broadcast rule intact.
inline Tensor linear(Tensor x, Tensor w, Tensor b) {
    Tensor y = matmul(x, w);
    Tensor ones = Tensor::full({y.dim(0), 1}, 1.0);
    return add(y, matmul(ones, b));
}

// per-row dot product of two (m,n) matrices -> (m) vector
inline Tensor dot_rows(Tensor a, Tensor b) {
    return sum_axis(mul(a, b), 1);
}

}  // namespace pc4d
