// Copyright (c) 2026 aukit contributors
// SPDX-License-Identifier: Apache-2.0
//
// A tiny decoder-only autoregressive model. Acoustic feature frames pass
// through the MoE adapter into embedding space and are concatenated with
// token embeddings along the sequence axis; a stack of pre-norm causal
// attention + FFN blocks produces next-token logits.

#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "aukit/common/rng.hpp"
#include "aukit/moe/adapter.hpp"
#include "aukit/num/autodiff.hpp"

namespace aukit::backbone {

/// Half-open token-id interval [lo, hi).
struct IdRange {
    std::size_t lo = 0;
    std::size_t hi = 0;
    std::size_t width() const { return hi - lo; }
    bool contains(long long id) const {
        return id >= 0 && static_cast<std::size_t>(id) >= lo && static_cast<std::size_t>(id) < hi;
    }
};

struct BackboneConfig {
    std::size_t vocab_size = 0;
    std::size_t d_model = 0;  // must equal the adapter's d_out when paired
    std::size_t n_layers = 0;
    std::size_t n_heads = 1;
    std::size_t max_seq_len = 0;
    IdRange text_tokens;   // ids used by text
    IdRange audio_tokens;  // ids used by discrete semantic audio tokens
    bool final_norm = true;
    bool tied_head = false;  // logits via tok_emb^T instead of a head matrix

    std::size_t d_head() const { return d_model / n_heads; }
    void validate() const;
};

struct BlockParams {
    num::Var ln1_gamma, ln1_beta;
    num::Var wq, wk, wv, wo;  // each d_model x d_model, no biases
    num::Var ln2_gamma, ln2_beta;
    num::Var w1, b1;  // d_model -> 4*d_model
    num::Var w2, b2;  // 4*d_model -> d_model
};

struct BackboneParams {
    num::Var tok_emb;  // V x d_model
    num::Var pos_emb;  // max_seq_len x d_model (learned absolute positions)
    std::vector<BlockParams> blocks;
    num::Var final_gamma, final_beta;  // defined iff cfg.final_norm
    num::Var head_w;                   // d_model x V, defined iff !cfg.tied_head

    static BackboneParams init(const BackboneConfig& cfg, Rng& rng);
    std::vector<std::pair<std::string, num::Var>> named() const;
    void check_shapes(const BackboneConfig& cfg) const;
};

/// One training sequence: optional acoustic frames occupying positions
/// 0..T_a-1, then token ids at positions T_a..T-1. loss_mask[t] == 1
/// marks position t as supervised — the model must predict the token at
/// position t+1 from everything up to t.
struct SequenceExample {
    std::string id;
    std::optional<num::Tensor> frames;  // [T_a x d_in]
    std::vector<int> tokens;            // ids for positions T_a..T-1
    std::vector<std::uint8_t> loss_mask;  // length T

    std::size_t audio_len() const { return frames ? frames->rows() : 0; }
    std::size_t length() const { return audio_len() + tokens.size(); }

    /// Throws on: empty sequence, T > max_seq_len, ids outside the vocab,
    /// or a masked position whose target is not a token.
    void validate(const BackboneConfig& cfg) const;
};

using SequenceBatch = std::vector<SequenceExample>;

/// Token+position embeddings for one example, with `adapted` (the MoE
/// output rows for this example's frames) occupying the audio positions.
/// Pass an undefined Var when the example has no frames.
num::Var embed_sequence(const SequenceExample& ex, const num::Var& adapted,
                        const BackboneParams& p, const BackboneConfig& cfg);

/// The decoder stack: embeddings [T x d_model] -> logits [T x V].
/// Position t's logits depend only on rows <= t of z.
num::Var decode(const num::Var& z, const BackboneParams& p, const BackboneConfig& cfg);

struct ForwardResult {
    num::Var logits;            // [T x V]
    moe::RoutingReport report;  // populated iff routed
    bool routed = false;
};

/// Convenience single-example pass: adapter on frames (if any), embed,
/// decode.
ForwardResult forward(const SequenceExample& ex, const moe::AdapterParams& ap,
                      const moe::AdapterConfig& ac, const BackboneParams& bp,
                      const BackboneConfig& bc);

/// Mean of -log P(y_{t+1} | ...) over masked positions of one example.
num::Var ntp_loss(const num::Var& logits, const SequenceExample& ex);

}  // namespace aukit::backbone
