#pragma once

#include <algorithm>
#include <cstddef>
#include <functional>
#include <memory>
#include <sstream>
#include <unordered_set>
#include <utility>
#include <vector>

#include "loasp/common.hpp"

namespace loasp {

// -------------------- tensor + reverse-mode autodiff --------------------
//
// Dense 64-bit float tensors with a dynamically recorded computation graph.
// A Tensor is a cheap shared handle onto a node.  Operations build result
// nodes that remember their inputs and a callback that pushes the upstream
// gradient back into them.  backward() walks the graph once in reverse
// topological order; gradients on leaves accumulate across calls until
// zero_grad().

class Tensor;

namespace detail {

// Receives the gradient of the loss w.r.t. the node's value and must
// accumulate into the parents' grad buffers.
using BackwardFn = std::function<void(const std::vector<double>&)>;

struct TensorNode {
    std::vector<long> shape;
    std::vector<double> value;
    std::vector<double> grad;  // allocated on first use, same length as value
    bool requires_grad = false;
    std::vector<Tensor> parents;
    BackwardFn backward;  // null on leaves
    const char* op = "leaf";
};

inline bool& grad_mode_flag() {
    thread_local bool enabled = true;
    return enabled;
}

}  // namespace detail

inline bool grad_mode_enabled() { return detail::grad_mode_flag(); }

// Disables graph recording in a scope (evaluation passes).
struct NoGradGuard {
    NoGradGuard() : prev_(detail::grad_mode_flag()) { detail::grad_mode_flag() = false; }
    ~NoGradGuard() { detail::grad_mode_flag() = prev_; }
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

  private:
    bool prev_;
};

inline long shape_numel(const std::vector<long>& shape) {
    if (shape.empty()) throw ShapeError("tensor shape must have at least one extent");
    long n = 1;
    for (long e : shape) {
        if (e <= 0) throw ShapeError("tensor extents must be positive");
        n *= e;
    }
    return n;
}

inline std::string shape_str(const std::vector<long>& shape) {
    std::ostringstream os;
    os << "[";
    for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
    os << "]";
    return os.str();
}

// Constness of a Tensor handle is shallow, as with std::shared_ptr: a const
// Tensor still exposes mutable node storage.  This keeps by-value lambda
// captures of function arguments usable inside backward callbacks.
class Tensor {
  public:
    Tensor() = default;

    static Tensor zeros(std::vector<long> shape) {
        Tensor t;
        std::size_t n = static_cast<std::size_t>(shape_numel(shape));
        t.node_ = std::make_shared<detail::TensorNode>();
        t.node_->shape = std::move(shape);
        t.node_->value.assign(n, 0.0);
        return t;
    }

    static Tensor full(std::vector<long> shape, double v) {
        Tensor t = zeros(std::move(shape));
        std::fill(t.node_->value.begin(), t.node_->value.end(), v);
        return t;
    }

    static Tensor from_data(std::vector<double> data, std::vector<long> shape) {
        if (static_cast<long>(data.size()) != shape_numel(shape))
            throw ShapeError("data length does not match shape " + shape_str(shape));
        Tensor t;
        t.node_ = std::make_shared<detail::TensorNode>();
        t.node_->shape = std::move(shape);
        t.node_->value = std::move(data);
        return t;
    }

    static Tensor scalar(double v) { return from_data({v}, {1}); }

    bool defined() const { return node_ != nullptr; }
    const std::vector<long>& shape() const { return node_->shape; }
    long size() const { return static_cast<long>(node_->value.size()); }
    long dim(int i) const { return node_->shape.at(static_cast<std::size_t>(i)); }
    int rank() const { return static_cast<int>(node_->shape.size()); }

    double* data() const { return node_->value.data(); }
    std::vector<double>& values() const { return node_->value; }

    double item() const {
        if (size() != 1) throw ShapeError("item() requires a single-element tensor, got " + shape_str(shape()));
        return node_->value[0];
    }

    double at(std::initializer_list<long> idx) const {
        if (idx.size() != node_->shape.size()) throw ShapeError("index rank mismatch");
        long off = 0;
        std::size_t k = 0;
        for (long i : idx) {
            off = off * node_->shape[k] + i;
            ++k;
        }
        return node_->value[static_cast<std::size_t>(off)];
    }

    bool requires_grad() const { return node_->requires_grad; }

    Tensor& set_requires_grad(bool b) {
        if (b && node_->backward)
            throw ContractError("requires_grad can only be toggled on leaf tensors");
        node_->requires_grad = b;
        return *this;
    }

    bool is_leaf() const { return !node_->backward; }
    const char* op_name() const { return node_->op; }

    bool grad_populated() const { return !node_->grad.empty(); }

    std::vector<double>& grad() const {
        if (node_->grad.empty()) node_->grad.assign(node_->value.size(), 0.0);
        return node_->grad;
    }

    void zero_grad() const {
        if (!node_->grad.empty()) std::fill(node_->grad.begin(), node_->grad.end(), 0.0);
    }

    detail::TensorNode* node() const { return node_.get(); }

  private:
    std::shared_ptr<detail::TensorNode> node_;
};

inline void check_finite(const Tensor& t, const char* op) {
    const double* p = t.data();
    long n = t.size();
    for (long i = 0; i < n; ++i) {
        if (!std::isfinite(p[i]))
            throw NumericError(std::string("non-finite value produced by '") + op + "'");
    }
}

// Builds an op result node.  `backward` receives the gradient w.r.t. the
// result and must accumulate into the parents it cares about.  The callback
// may capture the parent tensors by value; parents never own their children
// so no reference cycles arise.
inline Tensor make_result(std::vector<long> shape, std::vector<Tensor> parents, const char* op,
                          detail::BackwardFn backward) {
    Tensor out = Tensor::zeros(std::move(shape));
    out.node()->op = op;
    bool needs = false;
    if (grad_mode_enabled()) {
        for (const Tensor& p : parents)
            if (p.requires_grad()) needs = true;
    }
    if (needs) {
        out.node()->requires_grad = true;
        out.node()->parents = std::move(parents);
        out.node()->backward = std::move(backward);
    }
    return out;
}

inline void backward(const Tensor& loss) {
    if (loss.size() != 1)
        throw ShapeError("backward requires a scalar loss, got " + shape_str(loss.shape()));
    if (!loss.requires_grad())
        throw ContractError("backward called on a tensor with no recorded graph");

    if (loss.is_leaf()) {
        loss.node()->grad.assign(1, 0.0);
        loss.node()->grad[0] += 1.0;
        return;
    }

    // Post-order DFS over grad-requiring inputs: every node lands after all
    // of its inputs, so the reversed list runs each node before its inputs.
    std::vector<detail::TensorNode*> order;
    std::unordered_set<const detail::TensorNode*> seen;
    std::vector<std::pair<detail::TensorNode*, std::size_t>> stack;
    stack.emplace_back(loss.node(), 0);
    seen.insert(loss.node());
    while (!stack.empty()) {
        auto& top = stack.back();
        detail::TensorNode* node = top.first;
        if (top.second < node->parents.size()) {
            detail::TensorNode* p = node->parents[top.second].node();
            ++top.second;
            if (p->requires_grad && !seen.count(p)) {
                seen.insert(p);
                stack.emplace_back(p, 0);
            }
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }

    // Interior gradients belong to this pass alone; leaf gradients persist
    // so that repeated backward calls accumulate.
    for (detail::TensorNode* n : order) {
        if (n->backward && !n->grad.empty()) std::fill(n->grad.begin(), n->grad.end(), 0.0);
    }

    loss.node()->grad.assign(1, 1.0);

    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        detail::TensorNode* n = *it;
        if (!n->backward) continue;
        if (n->grad.empty()) continue;  // no gradient flowed into this node
        for (double g : n->grad) {
            if (!std::isfinite(g))
                throw NumericError(std::string("non-finite gradient at node '") + n->op + "'");
        }
        n->backward(n->grad);
    }
}

}  // namespace loasp
