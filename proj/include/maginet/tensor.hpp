// SPDX-License-Identifier: Apache-2.0
//
// Dense double-precision tensor with reverse-mode automatic differentiation.
//
// Every differentiable operation records a node holding its inputs and a
// backward rule. Nodes carry a global, strictly increasing sequence number,
// so the order of recording is a topological order of the graph; backward()
// collects the nodes reachable from the output into a tape and replays their
// rules exactly once in reverse record order.
#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <unordered_set>
#include <utility>
#include <vector>

#include "maginet/errors.hpp"

namespace maginet {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_numel(const Shape& shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>{});
}

namespace detail {

struct Node {
    Shape shape;
    std::vector<double> data;
    std::vector<double> grad;  // same length as data when requires_grad
    bool requires_grad = false;
    std::uint64_t seq = 0;     // 0 for leaves
    std::vector<std::shared_ptr<Node>> inputs;
    // Accumulates self.grad into the grads of self.inputs.
    std::function<void(Node& self)> backward_rule;

    void ensure_grad() {
        if (grad.size() != data.size()) grad.assign(data.size(), 0.0);
    }
};

inline std::atomic<std::uint64_t>& sequence_counter() {
    static std::atomic<std::uint64_t> counter{0};
    return counter;
}

inline bool& grad_disabled_flag() {
    thread_local bool disabled = false;
    return disabled;
}

}  // namespace detail

/// While alive, operations on this thread record no graph (inference mode).
class NoGradGuard {
public:
    NoGradGuard() : previous_(detail::grad_disabled_flag()) { detail::grad_disabled_flag() = true; }
    ~NoGradGuard() { detail::grad_disabled_flag() = previous_; }
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool previous_;
};

/// Reference-counted handle to a tensor node. Copies share storage, like a
/// parameter handle; use clone() for an independent copy.
class Tensor {
public:
    Tensor() = default;

    static Tensor from_data(Shape shape, std::vector<double> values, bool requires_grad = false) {
        if (shape_numel(shape) != values.size()) {
            throw DimensionError("tensor shape " + shape_str(shape) + " does not match " +
                                 std::to_string(values.size()) + " values");
        }
        auto node = std::make_shared<detail::Node>();
        node->shape = std::move(shape);
        node->data = std::move(values);
        node->requires_grad = requires_grad;
        if (requires_grad) node->ensure_grad();
        return Tensor(std::move(node));
    }

    static Tensor full(Shape shape, double value, bool requires_grad = false) {
        const auto n = shape_numel(shape);
        return from_data(std::move(shape), std::vector<double>(n, value), requires_grad);
    }

    static Tensor zeros(Shape shape, bool requires_grad = false) {
        return full(std::move(shape), 0.0, requires_grad);
    }

    static Tensor scalar(double value, bool requires_grad = false) {
        return from_data({}, {value}, requires_grad);
    }

    bool defined() const { return node_ != nullptr; }
    const Shape& shape() const { return node_->shape; }
    std::size_t rank() const { return node_->shape.size(); }
    std::size_t dim(std::size_t axis) const { return node_->shape.at(axis); }
    std::size_t numel() const { return node_->data.size(); }

    std::span<const double> data() const { return node_->data; }
    /// Direct write access, intended for leaves (initialization, optimizer).
    std::span<double> mutable_data() { return node_->data; }
    double operator[](std::size_t flat) const { return node_->data[flat]; }

    double item() const {
        if (numel() != 1) throw ContractError("item() on tensor of shape " + shape_str(shape()));
        return node_->data[0];
    }

    bool requires_grad() const { return node_->requires_grad; }
    bool is_leaf() const { return node_->seq == 0; }

    std::span<const double> grad() const { return node_->grad; }
    std::span<double> mutable_grad() { return node_->grad; }

    void zero_grad() {
        std::fill(node_->grad.begin(), node_->grad.end(), 0.0);
    }

    /// Independent copy of the values, detached from any graph.
    Tensor clone(bool requires_grad = false) const {
        return from_data(shape(), node_->data, requires_grad);
    }

    detail::Node* node() const { return node_.get(); }
    const std::shared_ptr<detail::Node>& node_ptr() const { return node_; }

    explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}

private:
    std::shared_ptr<detail::Node> node_;
};

namespace detail {

/// Builds the result of an operation. The graph edge is recorded only when
/// some input requires a gradient and recording is enabled.
inline Tensor make_result(Shape shape, std::vector<double> values, std::vector<Tensor> inputs,
                          std::function<void(Node&)> rule) {
    auto node = std::make_shared<Node>();
    node->shape = std::move(shape);
    node->data = std::move(values);
    bool needs = false;
    if (!grad_disabled_flag()) {
        for (const auto& in : inputs) needs = needs || in.requires_grad();
    }
    if (needs) {
        node->requires_grad = true;
        node->seq = ++sequence_counter();
        node->inputs.reserve(inputs.size());
        for (const auto& in : inputs) node->inputs.push_back(in.node_ptr());
        node->backward_rule = std::move(rule);
    }
    return Tensor(std::move(node));
}

/// Gradient buffer of input i, or nullptr when that input takes no gradient.
inline double* input_grad(Node& self, std::size_t i) {
    Node& in = *self.inputs[i];
    if (!in.requires_grad) return nullptr;
    in.ensure_grad();
    return in.grad.data();
}

}  // namespace detail

/// Populates grad of every requires_grad leaf reachable from a one-element
/// output. Leaf gradients accumulate across calls until zeroed.
inline void backward(const Tensor& output) {
    if (output.numel() != 1) {
        throw ContractError("backward() needs a one-element output, got shape " + shape_str(output.shape()));
    }
    if (!output.requires_grad()) return;

    // Tape: every recorded node reachable from the output.
    std::vector<detail::Node*> tape;
    std::unordered_set<detail::Node*> seen;
    std::vector<detail::Node*> stack{output.node()};
    while (!stack.empty()) {
        detail::Node* n = stack.back();
        stack.pop_back();
        if (n->seq == 0 || !seen.insert(n).second) continue;
        tape.push_back(n);
        for (const auto& in : n->inputs) {
            if (in->requires_grad) stack.push_back(in.get());
        }
    }
    std::sort(tape.begin(), tape.end(), [](const auto* a, const auto* b) { return a->seq > b->seq; });

    for (auto* n : tape) n->grad.assign(n->data.size(), 0.0);
    output.node()->grad[0] = 1.0;
    for (auto* n : tape) {
        n->backward_rule(*n);
        // Interior gradients are not needed once propagated.
        std::vector<double>().swap(n->grad);
    }
}

}  // namespace maginet
