// Copyright (c) 2026 aukit contributors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "aukit/num/autodiff.hpp"

namespace aukit::num {

// ---- elementwise / arithmetic -------------------------------------------

Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var div(const Var& a, const Var& b);
Var scale(const Var& a, double c);

/// [N x D] plus a length-D bias added to every row. The only broadcast
/// this kernel supports besides row-wise norms.
Var add_bias_rows(const Var& x, const Var& bias);

// ---- linear algebra ------------------------------------------------------

/// Standard product [m x k]·[k x n]. Backward: a.grad += g·b^T, b.grad += a^T·g.
Var matmul(const Var& a, const Var& b);

/// a · b^T for [m x k]·[n x k]^T; saves materializing transposes.
Var matmul_nt(const Var& a, const Var& b);

// ---- activations / normalization ----------------------------------------

Var silu(const Var& x);

/// Numerically stable softmax of a length-n vector (max-subtraction).
Var softmax(const Var& x);

/// Softmax applied independently to each row of [N x D].
Var row_softmax(const Var& x);

/// [T x T] attention scores -> row i softmaxed over columns 0..i,
/// zero beyond. Masked positions never see an infinity.
Var causal_row_softmax(const Var& x);

/// Layer norm over the last axis of [N x D] (or a bare length-D vector),
/// eps added to the biased variance, then affine gamma/beta.
Var layer_norm(const Var& x, const Var& gamma, const Var& beta, double eps);

// ---- reductions ----------------------------------------------------------

Var sum(const Var& x);
Var col_mean(const Var& x);                       // [N x D] -> [D]
Var dot_const(const Var& x, const Tensor& w);     // scalar, w is data not graph

// ---- indexing / reshaping ------------------------------------------------

Var gather_rows(const Var& x, std::vector<std::size_t> idx);
Var scatter_add_rows(const Var& x, std::vector<std::size_t> idx, std::size_t out_rows);
Var gather_elems(const Var& x, std::vector<std::size_t> flat_idx);
Var repeat_each(const Var& x, std::size_t k);     // [B] -> [B*k]
Var sum_groups(const Var& x, std::size_t k);      // [B*k] -> [B]
Var scale_rows(const Var& x, const Var& w);       // row i scaled by w[i]
Var concat_rows(const Var& a, const Var& b);
Var slice_cols(const Var& x, std::size_t c0, std::size_t c1);
Var concat_cols(const std::vector<Var>& xs);

// ---- losses ---------------------------------------------------------------

/// -log softmax(logits)[target] for a single length-V logit vector.
Var cross_entropy(const Var& logits, std::size_t target);

/// Mean of -log P(target_t | ...) over positions where mask[t] != 0.
/// logits is [T x V]; targets[t] is consulted only where masked.
Var masked_ntp(const Var& logits, std::span<const int> targets,
               std::span<const std::uint8_t> mask);

// ---- plain-tensor helpers (no graph) --------------------------------------

/// Softmax of a raw vector, same numerics as the op.
std::vector<double> softmax_values(std::span<const double> x);

/// Row-normalized values before the affine step; exposed for invariant checks.
Tensor layer_norm_normalized(const Tensor& x, double eps);

}  // namespace aukit::num
