// Copyright (c) 2026 aukit contributors
// SPDX-License-Identifier: Apache-2.0

#include "aukit/moe/adapter.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>

#include "aukit/common/kv.hpp"

namespace aukit::moe {

using num::Shape;
using num::Tensor;
using num::Var;

void AdapterConfig::validate() const {
    if (d_in < 1 || d_expert_hidden < 1 || d_out < 1) {
        throw ConfigError("adapter dims must all be >= 1");
    }
    if (num_experts < 1) throw ConfigError("num_experts must be >= 1");
    if (top_k < 1 || top_k > num_experts) {
        throw ConfigError("top_k must satisfy 1 <= k <= E, got k=" + std::to_string(top_k) +
                          " E=" + std::to_string(num_experts));
    }
    if (!std::isfinite(aux_weight) || aux_weight < 0.0) {
        throw ConfigError("aux_weight must be finite and non-negative");
    }
}

void AdapterConfig::save(const std::filesystem::path& path) const {
    KvMap kv;
    kv["d_in"] = std::to_string(d_in);
    kv["d_expert_hidden"] = std::to_string(d_expert_hidden);
    kv["d_out"] = std::to_string(d_out);
    kv["num_experts"] = std::to_string(num_experts);
    kv["top_k"] = std::to_string(top_k);
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", aux_weight);
    kv["aux_weight"] = buf;
    save_kv(path, kv);
}

AdapterConfig AdapterConfig::load(const std::filesystem::path& path) {
    KvMap kv = load_kv(path);
    AdapterConfig cfg;
    cfg.d_in = static_cast<std::size_t>(kv_int(kv, "d_in"));
    cfg.d_expert_hidden = static_cast<std::size_t>(kv_int(kv, "d_expert_hidden"));
    cfg.d_out = static_cast<std::size_t>(kv_int(kv, "d_out"));
    cfg.num_experts = static_cast<std::size_t>(kv_int(kv, "num_experts"));
    cfg.top_k = static_cast<std::size_t>(kv_int(kv, "top_k"));
    cfg.aux_weight = kv_double(kv, "aux_weight");
    cfg.validate();
    return cfg;
}

namespace {

Var normal_leaf(Rng& rng, Shape shape, double stddev) {
    Tensor t(std::move(shape));
    for (auto& v : t.flat()) v = rng.normal() * stddev;
    return Var(std::move(t));
}

}  // namespace

AdapterParams AdapterParams::init(const AdapterConfig& cfg, Rng& rng) {
    cfg.validate();
    AdapterParams p;
    double in_scale = 1.0 / std::sqrt(static_cast<double>(cfg.d_in));
    double hid_scale = 1.0 / std::sqrt(static_cast<double>(cfg.d_expert_hidden));
    p.w_g = normal_leaf(rng, {cfg.d_in, cfg.num_experts}, in_scale);
    p.experts.reserve(cfg.num_experts);
    for (std::size_t e = 0; e < cfg.num_experts; ++e) {
        ExpertParams ep;
        ep.w1 = normal_leaf(rng, {cfg.d_in, cfg.d_expert_hidden}, in_scale);
        ep.b1 = Var(Tensor(Shape{cfg.d_expert_hidden}));
        ep.w2 = normal_leaf(rng, {cfg.d_expert_hidden, cfg.d_in}, hid_scale);
        ep.b2 = Var(Tensor(Shape{cfg.d_in}));
        p.experts.push_back(std::move(ep));
    }
    p.w_p = normal_leaf(rng, {cfg.d_in, cfg.d_out}, in_scale);
    Tensor gamma(Shape{cfg.d_out});
    gamma.fill(1.0);
    p.ln_gamma = Var(std::move(gamma));
    p.ln_beta = Var(Tensor(Shape{cfg.d_out}));
    return p;
}

std::vector<std::pair<std::string, Var>> AdapterParams::named() const {
    std::vector<std::pair<std::string, Var>> out;
    out.emplace_back("adapter.router.w_g", w_g);
    for (std::size_t e = 0; e < experts.size(); ++e) {
        std::string base = "adapter.expert" + std::to_string(e) + ".";
        out.emplace_back(base + "w1", experts[e].w1);
        out.emplace_back(base + "b1", experts[e].b1);
        out.emplace_back(base + "w2", experts[e].w2);
        out.emplace_back(base + "b2", experts[e].b2);
    }
    out.emplace_back("adapter.proj.w_p", w_p);
    out.emplace_back("adapter.ln.gamma", ln_gamma);
    out.emplace_back("adapter.ln.beta", ln_beta);
    return out;
}

void AdapterParams::check_shapes(const AdapterConfig& cfg) const {
    auto want = [](const Var& v, Shape s, const char* name) {
        if (!v.defined() || v.shape() != s) {
            throw ShapeError(std::string("adapter param ") + name + " must have shape " +
                             num::shape_str(s));
        }
    };
    want(w_g, {cfg.d_in, cfg.num_experts}, "w_g");
    if (experts.size() != cfg.num_experts) {
        throw ShapeError("adapter has " + std::to_string(experts.size()) + " experts, config says " +
                         std::to_string(cfg.num_experts));
    }
    for (const auto& e : experts) {
        want(e.w1, {cfg.d_in, cfg.d_expert_hidden}, "expert.w1");
        want(e.b1, {cfg.d_expert_hidden}, "expert.b1");
        want(e.w2, {cfg.d_expert_hidden, cfg.d_in}, "expert.w2");
        want(e.b2, {cfg.d_in}, "expert.b2");
    }
    want(w_p, {cfg.d_in, cfg.d_out}, "w_p");
    want(ln_gamma, {cfg.d_out}, "ln_gamma");
    want(ln_beta, {cfg.d_out}, "ln_beta");
}

std::vector<std::size_t> top_k_indices(std::span<const double> probs, std::size_t k) {
    std::vector<std::size_t> idx(probs.size());
    std::iota(idx.begin(), idx.end(), 0);
    // Stable sort on descending probability keeps the lower index first
    // among exact ties.
    std::stable_sort(idx.begin(), idx.end(),
                     [&](std::size_t a, std::size_t b) { return probs[a] > probs[b]; });
    idx.resize(k);
    std::sort(idx.begin(), idx.end());  // report selections in index order
    return idx;
}

namespace {

/// Fill every report field (except the graph handle) from the full
/// probability matrix. Shared by the plain and differentiable paths so
/// the two cannot drift.
RoutingReport assemble_report(Tensor p, std::size_t k) {
    std::size_t b = p.rows();
    std::size_t e = p.cols();
    RoutingReport r;
    r.batch = b;
    r.selected.reserve(b);
    r.gate_weights.reserve(b);
    r.p_bar.assign(e, 0.0);
    r.f_frac.assign(e, 0.0);
    for (std::size_t t = 0; t < b; ++t) {
        std::span<const double> row(p.data() + t * e, e);
        auto sel = top_k_indices(row, k);
        std::vector<double> gates(k);
        if (k == e) {
            // Dense limit: the renormalizer is exactly 1 by definition, so
            // report the softmax row itself rather than row/sum(row).
            for (std::size_t j = 0; j < k; ++j) gates[j] = row[sel[j]];
        } else {
            double denom = 0.0;
            for (std::size_t i : sel) denom += row[i];
            for (std::size_t j = 0; j < k; ++j) gates[j] = row[sel[j]] / denom;
        }
        for (std::size_t i : sel) r.f_frac[i] += 1.0;
        for (std::size_t c = 0; c < e; ++c) r.p_bar[c] += row[c];
        r.selected.push_back(std::move(sel));
        r.gate_weights.push_back(std::move(gates));
    }
    double invb = 1.0 / static_cast<double>(b);
    for (std::size_t c = 0; c < e; ++c) {
        r.p_bar[c] *= invb;
        r.f_frac[c] *= invb;
    }
    r.p = std::move(p);
    return r;
}

}  // namespace

RoutingReport route_logits(const Tensor& logits, std::size_t k) {
    if (logits.rows() < 1) throw ContractError("route_logits: empty batch");
    if (k < 1 || k > logits.cols()) throw ConfigError("route_logits: bad k");
    num::require_finite(logits, "router logits");
    Tensor p(logits.shape());
    std::size_t e = logits.cols();
    for (std::size_t t = 0; t < logits.rows(); ++t) {
        auto sm = num::softmax_values({logits.data() + t * e, e});
        std::copy(sm.begin(), sm.end(), p.data() + t * e);
    }
    return assemble_report(std::move(p), k);
}

RoutingReport route(const Tensor& x, const AdapterParams& params, const AdapterConfig& cfg) {
    cfg.validate();
    params.check_shapes(cfg);
    Var logits = num::matmul(Var::constant(x), Var::constant(params.w_g.value()));
    return route_logits(logits.value(), cfg.top_k);
}

std::pair<Var, RoutingReport> adapt(const Var& x, const AdapterParams& params,
                                    const AdapterConfig& cfg) {
    cfg.validate();
    params.check_shapes(cfg);
    if (x.shape().size() != 2 || x.shape()[1] != cfg.d_in) {
        throw ShapeError("adapt: input must be [B x d_in], got " + num::shape_str(x.shape()));
    }
    std::size_t b = x.shape()[0];
    std::size_t e = cfg.num_experts;
    std::size_t k = cfg.top_k;

    Var probs = num::row_softmax(num::matmul(x, params.w_g));
    RoutingReport report = assemble_report(probs.value(), k);
    report.probs = probs;

    // Renormalized gate weights, differentiable through the selected
    // probabilities: gather the k probs per token and divide by their sum.
    std::vector<std::size_t> flat;  // (token, slot) -> flat index into probs
    flat.reserve(b * k);
    for (std::size_t t = 0; t < b; ++t)
        for (std::size_t i : report.selected[t]) flat.push_back(t * e + i);
    Var gathered = num::gather_elems(probs, flat);          // [B*k]
    Var denom = num::sum_groups(gathered, k);               // [B]
    Var gates = num::div(gathered, num::repeat_each(denom, k));  // [B*k]

    // Per-expert dispatch: run each expert on its token subset, weight the
    // rows by the matching gate entries, and scatter back into B rows.
    Var combined;
    for (std::size_t ex = 0; ex < e; ++ex) {
        std::vector<std::size_t> tokens, gate_slots;
        for (std::size_t t = 0; t < b; ++t) {
            const auto& sel = report.selected[t];
            for (std::size_t j = 0; j < k; ++j) {
                if (sel[j] == ex) {
                    tokens.push_back(t);
                    gate_slots.push_back(t * k + j);
                }
            }
        }
        if (tokens.empty()) continue;
        const ExpertParams& ep = params.experts[ex];
        Var xi = num::gather_rows(x, tokens);
        Var h = num::silu(num::add_bias_rows(num::matmul(xi, ep.w1), ep.b1));
        Var out = num::add_bias_rows(num::matmul(h, ep.w2), ep.b2);
        Var weighted = num::scale_rows(out, num::gather_elems(gates, gate_slots));
        Var scattered = num::scatter_add_rows(weighted, tokens, b);
        combined = combined.defined() ? num::add(combined, scattered) : scattered;
    }

    Var projected = num::matmul(combined, params.w_p);
    Var y = num::layer_norm(projected, params.ln_gamma, params.ln_beta, 1e-5);
    return {y, report};
}

Var aux_loss(const RoutingReport& report) {
    if (report.batch < 1 || report.f_frac.empty()) {
        throw ContractError("aux_loss: empty routing report");
    }
    std::size_t e = report.f_frac.size();
    // Differentiable path when the report came from adapt(); otherwise the
    // raw probabilities enter as constants and the value is still exact.
    Var probs = report.probs.defined() ? report.probs : Var::constant(report.p);
    Tensor f(Shape{e}, std::vector<double>(report.f_frac.begin(), report.f_frac.end()));
    return num::scale(num::dot_const(num::col_mean(probs), f), static_cast<double>(e));
}

std::vector<double> expert_utilization(const RoutingReport& report) {
    return report.f_frac;
}

}  // namespace aukit::moe
