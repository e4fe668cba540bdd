// Copyright (c) 2026 aukit contributors
// SPDX-License-Identifier: Apache-2.0

#include "aukit/num/autodiff.hpp"

#include <unordered_set>

namespace aukit::num {

Var make_op(const char* name, Tensor value, std::vector<Var> parents,
            std::function<void(Node&)> backward_fn) {
    bool rg = false;
    for (const auto& p : parents) rg = rg || p.requires_grad();
    auto n = std::make_shared<Node>(std::move(value), rg);
    n->op = name;
    n->parents.reserve(parents.size());
    for (auto& p : parents) n->parents.push_back(p.node());
    if (rg) n->backward_fn = std::move(backward_fn);
    return Var(std::move(n));
}

void Var::backward() const {
    if (!node_) throw ContractError("backward() on empty Var");
    if (node_->value.size() != 1) {
        throw ContractError("backward() requires a scalar root, got shape " +
                            shape_str(node_->value.shape()));
    }

    // Iterative post-order DFS; reversed post-order is a valid topological
    // order (children before parents), so each node fires once with its
    // gradient fully accumulated.
    std::vector<Node*> order;
    std::unordered_set<Node*> seen;
    std::vector<std::pair<Node*, std::size_t>> stack;
    stack.emplace_back(node_.get(), 0);
    seen.insert(node_.get());
    while (!stack.empty()) {
        auto& [n, next] = stack.back();
        if (next < n->parents.size()) {
            Node* p = n->parents[next++].get();
            if (p->requires_grad && seen.insert(p).second) {
                stack.emplace_back(p, 0);
            }
        } else {
            order.push_back(n);
            stack.pop_back();
        }
    }

    node_->grad.fill(1.0);
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node* n = *it;
        if (n->backward_fn) n->backward_fn(*n);
    }
}

}  // namespace aukit::num
