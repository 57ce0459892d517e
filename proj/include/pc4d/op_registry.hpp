#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "pc4d/ops.hpp"

namespace pc4d {

// String-keyed entry point over the typed op set. The library itself calls
// the typed functions; this exists for the gradcheck driver and anything
// that wants to enumerate ops uniformly.
struct OpAttrs {
    std::size_t axis = 0;
    std::size_t stride = 1;
    std::size_t pad = 0;
    std::size_t ksize = 2;
    std::size_t pool_stride = 2;
    std::size_t factor = 2;
    std::size_t begin = 0;
    std::size_t end = 0;
    double scalar = 1.0;
    std::vector<std::int64_t> labels;  // cross_entropy labels or embedding ids
    std::int64_t ignore = -1;
};

inline const std::vector<std::string>& op_kinds() {
    static const std::vector<std::string> kinds = {
        "matmul", "add", "sub", "mul_scalar", "mul_elementwise", "concat", "softmax", "relu",
        "mean", "max", "exp", "log", "l2_normalize", "transpose", "slice", "embedding_lookup",
        "conv2d", "maxpool2d", "layer_norm", "cross_entropy",
    };
    return kinds;
}

inline Tensor forward_op(const std::string& kind, const std::vector<Tensor>& inputs, const OpAttrs& a = {}) {
    auto need = [&](std::size_t n) {
        detail::require(inputs.size() == n, "forward_op(" + kind + "): expected " + std::to_string(n) +
                                                " inputs, got " + std::to_string(inputs.size()));
    };
    if (kind == "matmul") { need(2); return matmul(inputs[0], inputs[1]); }
    if (kind == "add") { need(2); return add(inputs[0], inputs[1]); }
    if (kind == "sub") { need(2); return sub(inputs[0], inputs[1]); }
    if (kind == "mul_scalar") { need(1); return mul_scalar(inputs[0], a.scalar); }
    if (kind == "mul_elementwise") { need(2); return mul(inputs[0], inputs[1]); }
    if (kind == "concat") { return concat(inputs, a.axis); }
    if (kind == "softmax") { need(1); return softmax(inputs[0], a.axis); }
    if (kind == "relu") { need(1); return relu(inputs[0]); }
    if (kind == "mean") { need(1); return mean_axis(inputs[0], a.axis); }
    if (kind == "max") { need(1); return max_axis(inputs[0], a.axis); }
    if (kind == "exp") { need(1); return exp_t(inputs[0]); }
    if (kind == "log") { need(1); return log_t(inputs[0]); }
    if (kind == "l2_normalize") { need(1); return l2_normalize(inputs[0], a.axis); }
    if (kind == "transpose") { need(1); return transpose(inputs[0]); }
    if (kind == "slice") { need(1); return slice(inputs[0], a.axis, a.begin, a.end); }
    if (kind == "embedding_lookup") { need(1); return embedding_lookup(inputs[0], a.labels); }
    if (kind == "conv2d") { need(2); return conv2d(inputs[0], inputs[1], a.stride, a.pad); }
    if (kind == "maxpool2d") { need(1); return maxpool2d(inputs[0], a.ksize, a.pool_stride); }
    if (kind == "layer_norm") { need(3); return layer_norm(inputs[0], inputs[1], inputs[2]); }
    if (kind == "cross_entropy") { need(1); return cross_entropy(inputs[0], a.labels, a.ignore); }
    throw std::invalid_argument("forward_op: unknown op kind '" + kind + "'");
}

}  // namespace pc4d
