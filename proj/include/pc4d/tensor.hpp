#pragma once

#include <algorithm>
#include <atomic>
#include <cstdint>
#include <functional>
#include <memory>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace pc4d {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_numel(const Shape& s) {
    std::size_t n = 1;
    for (std::size_t d : s) n *= d;
    return n;
}

inline std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << "(";
    for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
    os << ")";
    return os.str();
}

namespace detail {

// Set while the image branch is executing; lets tests prove the point-only
// inference path allocates nothing on the image side. Both the flag and the
// counter are per-thread so concurrent runs cannot pollute each other's
// instrumentation.
inline thread_local bool t_count_image_allocs = false;
inline thread_local std::uint64_t t_image_branch_allocs = 0;

inline std::atomic<std::uint64_t>& node_id_counter() {
    static std::atomic<std::uint64_t> c{0};
    return c;
}

}  // namespace detail

// image-branch tensor allocations observed on this thread so far
inline std::uint64_t image_branch_allocs() { return detail::t_image_branch_allocs; }

struct ImageBranchScope {
    bool prev;
    ImageBranchScope() : prev(detail::t_count_image_allocs) {
        detail::t_count_image_allocs = true;
    }
    ~ImageBranchScope() { detail::t_count_image_allocs = prev; }
};

struct TensorNode;
using NodePtr = std::shared_ptr<TensorNode>;

// One node of the computation graph. Creation order is a valid topological
// order (an op's inputs always exist before the op node), so backward just
// visits ids in descending order.
struct TensorNode {
    Shape shape;
    std::vector<double> data;
    std::vector<double> grad;  // empty until needed; same length as data when present
    bool requires_grad = false;
    std::uint64_t id;
    const char* op = "leaf";
    std::vector<NodePtr> parents;
    std::function<void(TensorNode&)> backward_fn;

    TensorNode(Shape s, std::vector<double> d)
        : shape(std::move(s)), data(std::move(d)),
          id(detail::node_id_counter().fetch_add(1, std::memory_order_relaxed)) {
        if (detail::t_count_image_allocs) ++detail::t_image_branch_allocs;
    }

    void ensure_grad() {
        if (grad.size() != data.size()) grad.assign(data.size(), 0.0);
    }
};

class Tensor {
public:
    Tensor() = default;
    explicit Tensor(NodePtr n) : n_(std::move(n)) {}

    static Tensor from(Shape s, std::vector<double> d, bool requires_grad = false) {
        if (shape_numel(s) != d.size())
            throw std::invalid_argument("tensor: shape " + shape_str(s) + " does not match data length " +
                                        std::to_string(d.size()));
        auto n = std::make_shared<TensorNode>(std::move(s), std::move(d));
        n->requires_grad = requires_grad;
        if (requires_grad) n->ensure_grad();
        return Tensor(std::move(n));
    }

    static Tensor zeros(Shape s, bool requires_grad = false) {
        std::vector<double> d(shape_numel(s), 0.0);
        return from(std::move(s), std::move(d), requires_grad);
    }

    static Tensor full(Shape s, double v) {
        std::vector<double> d(shape_numel(s), v);
        return from(std::move(s), std::move(d));
    }

    static Tensor scalar(double v) { return from({1}, {v}); }

    bool defined() const { return n_ != nullptr; }
    const Shape& shape() const { return n_->shape; }
    std::size_t ndim() const { return n_->shape.size(); }
    std::size_t dim(std::size_t i) const { return n_->shape[i]; }
    std::size_t size() const { return n_->data.size(); }

    const std::vector<double>& data() const { return n_->data; }
    std::vector<double>& data() { return n_->data; }
    double item() const {
        if (size() != 1) throw std::invalid_argument("item: tensor has " + std::to_string(size()) + " elements");
        return n_->data[0];
    }

    bool requires_grad() const { return n_->requires_grad; }
    const std::vector<double>& grad() const {
        n_->ensure_grad();
        return n_->grad;
    }
    std::vector<double>& grad() {
        n_->ensure_grad();
        return n_->grad;
    }
    void zero_grad() { n_->grad.assign(n_->data.size(), 0.0); }

    const NodePtr& node() const { return n_; }
    const char* op() const { return n_->op; }

    void backward() const;

private:
    NodePtr n_;
};

namespace detail {

// Open-addressed pointer set; backward visits ~1e5 nodes per training graph
// and std::unordered_set shows up in profiles.
class NodeSet {
public:
    bool insert(TensorNode* p) {
        if (slots_.empty()) slots_.assign(1024, nullptr);
        std::size_t mask = slots_.size() - 1;
        std::size_t h = (reinterpret_cast<std::size_t>(p) >> 4) & mask;
        while (true) {
            if (slots_[h] == p) return false;
            if (slots_[h] == nullptr) {
                slots_[h] = p;
                if (++count_ * 2 > slots_.size()) grow();
                return true;
            }
            h = (h + 1) & mask;
        }
    }

private:
    void grow() {
        std::vector<TensorNode*> old = std::move(slots_);
        slots_.assign(old.size() * 2, nullptr);
        count_ = 0;
        for (TensorNode* p : old)
            if (p) insert(p);
    }
    std::vector<TensorNode*> slots_;
    std::size_t count_ = 0;
};

}  // namespace detail

// Reverse-mode pass from a scalar loss. Grads of every node reachable from
// the loss are reset first, so repeated calls give identical results.
inline void backward(const Tensor& loss) {
    if (!loss.defined() || loss.size() != 1)
        throw std::invalid_argument("backward: loss must be a defined scalar tensor");

    std::vector<TensorNode*> reachable;
    std::vector<TensorNode*> stack{loss.node().get()};
    detail::NodeSet seen;
    seen.insert(loss.node().get());
    while (!stack.empty()) {
        TensorNode* n = stack.back();
        stack.pop_back();
        reachable.push_back(n);
        for (const NodePtr& p : n->parents)
            if (p->requires_grad && seen.insert(p.get())) stack.push_back(p.get());
    }

    for (TensorNode* n : reachable) n->grad.assign(n->data.size(), 0.0);
    loss.node()->grad[0] = 1.0;

    std::sort(reachable.begin(), reachable.end(),
              [](const TensorNode* a, const TensorNode* b) { return a->id > b->id; });
    for (TensorNode* n : reachable)
        if (n->backward_fn) n->backward_fn(*n);
}

inline void Tensor::backward() const { pc4d::backward(*this); }

namespace detail {

// Shared glue for op construction: output requires grad iff any input does,
// and the backward closure is only attached in that case.
inline Tensor make_op(const char* op, Shape out_shape, std::vector<double> out_data,
                      std::vector<Tensor> inputs, std::function<void(TensorNode&)> bwd) {
    auto n = std::make_shared<TensorNode>(std::move(out_shape), std::move(out_data));
    n->op = op;
    bool rg = false;
    for (const Tensor& t : inputs) rg = rg || t.requires_grad();
    n->requires_grad = rg;
    if (rg) {
        n->parents.reserve(inputs.size());
        for (Tensor& t : inputs) n->parents.push_back(t.node());
        n->backward_fn = std::move(bwd);
    }
    return Tensor(std::move(n));
}

}  // namespace detail

}  // namespace pc4d
