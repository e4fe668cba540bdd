// Copyright (c) 2026 aukit contributors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <functional>
#include <memory>
#include <utility>
#include <vector>

#include "aukit/num/tensor.hpp"

namespace aukit::num {

struct Node;
using NodePtr = std::shared_ptr<Node>;

/// One vertex of the reverse-mode computation graph: a value, its
/// gradient accumulator of identical shape, and the rule that pushes
/// this node's gradient into its parents.
struct Node {
    Tensor value;
    Tensor grad;
    std::vector<NodePtr> parents;
    std::function<void(Node&)> backward_fn;  // empty for leaves
    bool requires_grad = true;
    const char* op = "leaf";

    Node(Tensor v, bool rg) : value(std::move(v)), grad(Tensor::zeros_like(value)), requires_grad(rg) {}
};

/// Cheap handle to a graph node. Building ops on Vars grows the graph;
/// dropping the last handle to a subgraph frees it (parent edges only,
/// so no cycles).
class Var {
public:
    Var() = default;

    /// New leaf holding `value`. Leaves with requires_grad accumulate
    /// into their grad tensor across backward() calls until zeroed.
    explicit Var(Tensor value, bool requires_grad = true)
        : node_(std::make_shared<Node>(std::move(value), requires_grad)) {}

    static Var constant(Tensor value) { return Var(std::move(value), false); }
    static Var scalar(double v) { return Var(Tensor::scalar(v)); }
    static Var scalar_const(double v) { return Var(Tensor::scalar(v), false); }

    bool defined() const { return node_ != nullptr; }

    const Tensor& value() const { return node_->value; }
    Tensor& mutable_value() { return node_->value; }
    const Tensor& grad() const { return node_->grad; }
    Tensor& mutable_grad() { return node_->grad; }
    bool requires_grad() const { return node_->requires_grad; }

    const Shape& shape() const { return node_->value.shape(); }
    double item() const { return node_->value.item(); }

    void zero_grad() { node_->grad.fill(0.0); }

    /// Reverse-mode sweep from this (scalar) node. Each reachable node's
    /// backward rule fires exactly once, after all gradient contributions
    /// from its consumers have accumulated.
    void backward() const;

    NodePtr node() const { return node_; }

private:
    explicit Var(NodePtr n) : node_(std::move(n)) {}
    friend Var make_op(const char* name, Tensor value, std::vector<Var> parents,
                       std::function<void(Node&)> backward_fn);

    NodePtr node_;
};

/// Internal: construct an op node. requires_grad is inherited from parents.
Var make_op(const char* name, Tensor value, std::vector<Var> parents,
            std::function<void(Node&)> backward_fn);

}  // namespace aukit::num
