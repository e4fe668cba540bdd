// Copyright (c) 2026 aukit contributors
// SPDX-License-Identifier: Apache-2.0
//
// Sparse Mixture-of-Experts adapter: a router picks the top-k expert FFNs
// per token from a full softmax, their outputs are combined under the
// renormalized gate weights, projected into the target embedding width,
// and layer-normalized. A load-balancing penalty discourages collapse
// onto a few experts.

#pragma once

#include <cstddef>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "aukit/common/rng.hpp"
#include "aukit/num/autodiff.hpp"
#include "aukit/num/ops.hpp"

namespace aukit::moe {

struct AdapterConfig {
    std::size_t d_in = 0;             // encoder feature width
    std::size_t d_expert_hidden = 0;  // expert FFN hidden width
    std::size_t d_out = 0;            // backbone embedding width
    std::size_t num_experts = 0;      // E
    std::size_t top_k = 0;            // k, 1 <= k <= E
    double aux_weight = 0.01;         // lambda for the balance penalty

    /// Throws ConfigError on violated invariants.
    void validate() const;

    void save(const std::filesystem::path& path) const;
    static AdapterConfig load(const std::filesystem::path& path);
};

struct ExpertParams {
    num::Var w1, b1;  // d_in -> hidden
    num::Var w2, b2;  // hidden -> d_in
};

struct AdapterParams {
    num::Var w_g;                      // router, d_in x E, no bias
    std::vector<ExpertParams> experts;
    num::Var w_p;                      // projection, d_in x d_out
    num::Var ln_gamma, ln_beta;        // output layer-norm affine, d_out

    static AdapterParams init(const AdapterConfig& cfg, Rng& rng);

    /// Stable name -> handle view for optimizers and checkpoints.
    std::vector<std::pair<std::string, num::Var>> named() const;

    /// Throws ShapeError if any tensor disagrees with cfg.
    void check_shapes(const AdapterConfig& cfg) const;
};

/// Everything the routing decision produced for one batch of B tokens.
struct RoutingReport {
    std::size_t batch = 0;                             // B
    num::Tensor p;                                     // B x E full softmax probs
    std::vector<std::vector<std::size_t>> selected;    // per token, k expert ids
    std::vector<std::vector<double>> gate_weights;     // per token, k weights summing to 1
    std::vector<double> p_bar;                         // length E, mean prob per expert
    std::vector<double> f_frac;                        // length E, routed-token fraction

    /// Graph handle over p, populated by adapt(); undefined for reports
    /// built by the plain route() path or by hand.
    num::Var probs;
};

/// Top-k by probability, ties broken toward the lower expert index.
std::vector<std::size_t> top_k_indices(std::span<const double> probs, std::size_t k);

/// Routing decision from precomputed logits (one row per token).
RoutingReport route_logits(const num::Tensor& logits, std::size_t k);

/// Routing decision for raw features: full softmax over x·W_g, then top-k.
RoutingReport route(const num::Tensor& x, const AdapterParams& params,
                    const AdapterConfig& cfg);

/// Full adapter map: y = LN(W_P · Σ_{i∈selected} gate_i · E_i(x)).
/// Gradients flow through gate weights and experts; the index selection
/// itself is non-differentiable and treated as data.
std::pair<num::Var, RoutingReport> adapt(const num::Var& x, const AdapterParams& params,
                                         const AdapterConfig& cfg);

/// Balance penalty E · Σ_e P̄_e f̄_e. Differentiable through P̄ (via the
/// report's probs handle when present); f̄ enters as a constant.
num::Var aux_loss(const RoutingReport& report);

/// f̄_e per expert; sums to k.
std::vector<double> expert_utilization(const RoutingReport& report);

}  // namespace aukit::moe
