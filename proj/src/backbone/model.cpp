// Copyright (c) 2026 aukit contributors
// SPDX-License-Identifier: Apache-2.0

#include "aukit/backbone/model.hpp"

#include <cmath>

namespace aukit::backbone {

using num::Shape;
using num::Tensor;
using num::Var;

void BackboneConfig::validate() const {
    if (vocab_size < 2) throw ConfigError("vocab_size must be >= 2");
    if (d_model < 1 || max_seq_len < 1) throw ConfigError("d_model and max_seq_len must be >= 1");
    if (n_heads < 1 || d_model % n_heads != 0) {
        throw ConfigError("d_model (" + std::to_string(d_model) +
                          ") must be divisible by n_heads (" + std::to_string(n_heads) + ")");
    }
    auto check_range = [&](const IdRange& r, const char* name) {
        if (r.lo >= r.hi || r.hi > vocab_size) {
            throw ConfigError(std::string(name) + " token range [" + std::to_string(r.lo) + "," +
                              std::to_string(r.hi) + ") invalid for vocab " +
                              std::to_string(vocab_size));
        }
    };
    check_range(text_tokens, "text");
    check_range(audio_tokens, "audio");
    if (text_tokens.lo < audio_tokens.hi && audio_tokens.lo < text_tokens.hi) {
        throw ConfigError("text and audio token ranges overlap");
    }
}

namespace {

Var normal_leaf(Rng& rng, Shape shape, double stddev) {
    Tensor t(std::move(shape));
    for (auto& v : t.flat()) v = rng.normal() * stddev;
    return Var(std::move(t));
}

Var ones_leaf(Shape shape) {
    Tensor t(std::move(shape));
    t.fill(1.0);
    return Var(std::move(t));
}

}  // namespace

BackboneParams BackboneParams::init(const BackboneConfig& cfg, Rng& rng) {
    cfg.validate();
    double s = 1.0 / std::sqrt(static_cast<double>(cfg.d_model));
    BackboneParams p;
    p.tok_emb = normal_leaf(rng, {cfg.vocab_size, cfg.d_model}, 0.5);
    p.pos_emb = normal_leaf(rng, {cfg.max_seq_len, cfg.d_model}, 0.1);
    p.blocks.reserve(cfg.n_layers);
    std::size_t hidden = 4 * cfg.d_model;
    for (std::size_t l = 0; l < cfg.n_layers; ++l) {
        BlockParams b;
        b.ln1_gamma = ones_leaf({cfg.d_model});
        b.ln1_beta = Var(Tensor(Shape{cfg.d_model}));
        b.wq = normal_leaf(rng, {cfg.d_model, cfg.d_model}, s);
        b.wk = normal_leaf(rng, {cfg.d_model, cfg.d_model}, s);
        b.wv = normal_leaf(rng, {cfg.d_model, cfg.d_model}, s);
        b.wo = normal_leaf(rng, {cfg.d_model, cfg.d_model}, s);
        b.ln2_gamma = ones_leaf({cfg.d_model});
        b.ln2_beta = Var(Tensor(Shape{cfg.d_model}));
        b.w1 = normal_leaf(rng, {cfg.d_model, hidden}, s);
        b.b1 = Var(Tensor(Shape{hidden}));
        b.w2 = normal_leaf(rng, {hidden, cfg.d_model}, 1.0 / std::sqrt(static_cast<double>(hidden)));
        b.b2 = Var(Tensor(Shape{cfg.d_model}));
        p.blocks.push_back(std::move(b));
    }
    if (cfg.final_norm) {
        p.final_gamma = ones_leaf({cfg.d_model});
        p.final_beta = Var(Tensor(Shape{cfg.d_model}));
    }
    if (!cfg.tied_head) {
        p.head_w = normal_leaf(rng, {cfg.d_model, cfg.vocab_size}, s);
    }
    return p;
}

std::vector<std::pair<std::string, Var>> BackboneParams::named() const {
    std::vector<std::pair<std::string, Var>> out;
    out.emplace_back("backbone.tok_emb", tok_emb);
    out.emplace_back("backbone.pos_emb", pos_emb);
    for (std::size_t l = 0; l < blocks.size(); ++l) {
        std::string base = "backbone.layer" + std::to_string(l) + ".";
        const BlockParams& b = blocks[l];
        out.emplace_back(base + "ln1.gamma", b.ln1_gamma);
        out.emplace_back(base + "ln1.beta", b.ln1_beta);
        out.emplace_back(base + "attn.wq", b.wq);
        out.emplace_back(base + "attn.wk", b.wk);
        out.emplace_back(base + "attn.wv", b.wv);
        out.emplace_back(base + "attn.wo", b.wo);
        out.emplace_back(base + "ln2.gamma", b.ln2_gamma);
        out.emplace_back(base + "ln2.beta", b.ln2_beta);
        out.emplace_back(base + "ffn.w1", b.w1);
        out.emplace_back(base + "ffn.b1", b.b1);
        out.emplace_back(base + "ffn.w2", b.w2);
        out.emplace_back(base + "ffn.b2", b.b2);
    }
    if (final_gamma.defined()) {
        out.emplace_back("backbone.final_ln.gamma", final_gamma);
        out.emplace_back("backbone.final_ln.beta", final_beta);
    }
    if (head_w.defined()) {
        out.emplace_back("backbone.head.w", head_w);
    }
    return out;
}

void BackboneParams::check_shapes(const BackboneConfig& cfg) const {
    auto want = [](const Var& v, Shape s, const std::string& name) {
        if (!v.defined() || v.shape() != s) {
            throw ShapeError("backbone param " + name + " must have shape " + num::shape_str(s));
        }
    };
    want(tok_emb, {cfg.vocab_size, cfg.d_model}, "tok_emb");
    want(pos_emb, {cfg.max_seq_len, cfg.d_model}, "pos_emb");
    if (blocks.size() != cfg.n_layers) {
        throw ShapeError("backbone has " + std::to_string(blocks.size()) + " layers, config says " +
                         std::to_string(cfg.n_layers));
    }
    std::size_t hidden = 4 * cfg.d_model;
    for (const auto& b : blocks) {
        want(b.ln1_gamma, {cfg.d_model}, "ln1.gamma");
        want(b.ln1_beta, {cfg.d_model}, "ln1.beta");
        want(b.wq, {cfg.d_model, cfg.d_model}, "attn.wq");
        want(b.wk, {cfg.d_model, cfg.d_model}, "attn.wk");
        want(b.wv, {cfg.d_model, cfg.d_model}, "attn.wv");
        want(b.wo, {cfg.d_model, cfg.d_model}, "attn.wo");
        want(b.ln2_gamma, {cfg.d_model}, "ln2.gamma");
        want(b.ln2_beta, {cfg.d_model}, "ln2.beta");
        want(b.w1, {cfg.d_model, hidden}, "ffn.w1");
        want(b.b1, {hidden}, "ffn.b1");
        want(b.w2, {hidden, cfg.d_model}, "ffn.w2");
        want(b.b2, {cfg.d_model}, "ffn.b2");
    }
    if (cfg.final_norm) {
        want(final_gamma, {cfg.d_model}, "final_ln.gamma");
        want(final_beta, {cfg.d_model}, "final_ln.beta");
    }
    if (!cfg.tied_head) {
        want(head_w, {cfg.d_model, cfg.vocab_size}, "head.w");
    }
}

void SequenceExample::validate(const BackboneConfig& cfg) const {
    std::size_t t_a = audio_len();
    std::size_t t = length();
    if (t == 0) throw DataError("example " + id + ": empty sequence");
    if (t > cfg.max_seq_len) {
        throw DataError("example " + id + ": length " + std::to_string(t) +
                        " exceeds max_seq_len " + std::to_string(cfg.max_seq_len));
    }
    if (loss_mask.size() != t) {
        throw DataError("example " + id + ": loss mask length " + std::to_string(loss_mask.size()) +
                        " != sequence length " + std::to_string(t));
    }
    for (int tok : tokens) {
        if (tok < 0 || static_cast<std::size_t>(tok) >= cfg.vocab_size) {
            throw DataError("example " + id + ": token id " + std::to_string(tok) +
                            " outside vocab " + std::to_string(cfg.vocab_size));
        }
    }
    for (std::size_t i = 0; i < t; ++i) {
        if (!loss_mask[i]) continue;
        // Supervised position i predicts position i+1, which must hold a token.
        if (i + 1 < t_a || i + 1 >= t) {
            throw DataError("example " + id + ": masked position " + std::to_string(i) +
                            " has no token target");
        }
    }
}

Var embed_sequence(const SequenceExample& ex, const Var& adapted, const BackboneParams& p,
                   const BackboneConfig& cfg) {
    std::size_t t_a = ex.audio_len();
    std::size_t t = ex.length();
    if (t_a > 0 && (!adapted.defined() || adapted.shape() != Shape{t_a, cfg.d_model})) {
        throw ShapeError("embed_sequence: adapted frames must be [" + std::to_string(t_a) + " x " +
                         std::to_string(cfg.d_model) + "]");
    }

    Var content;
    if (!ex.tokens.empty()) {
        std::vector<std::size_t> ids(ex.tokens.begin(), ex.tokens.end());
        Var tok = num::gather_rows(p.tok_emb, ids);
        content = t_a > 0 ? num::concat_rows(adapted, tok) : tok;
    } else {
        content = adapted;
    }

    std::vector<std::size_t> positions(t);
    for (std::size_t i = 0; i < t; ++i) positions[i] = i;
    return num::add(content, num::gather_rows(p.pos_emb, positions));
}

Var decode(const Var& z, const BackboneParams& p, const BackboneConfig& cfg) {
    cfg.validate();
    p.check_shapes(cfg);
    if (z.shape().size() != 2 || z.shape()[1] != cfg.d_model) {
        throw ShapeError("decode: embeddings must be [T x d_model], got " +
                         num::shape_str(z.shape()));
    }
    double inv_sqrt_dh = 1.0 / std::sqrt(static_cast<double>(cfg.d_head()));

    Var h = z;
    for (const BlockParams& b : p.blocks) {
        Var n1 = num::layer_norm(h, b.ln1_gamma, b.ln1_beta, 1e-5);
        Var q = num::matmul(n1, b.wq);
        Var k = num::matmul(n1, b.wk);
        Var v = num::matmul(n1, b.wv);
        std::vector<Var> head_outs;
        head_outs.reserve(cfg.n_heads);
        for (std::size_t hd = 0; hd < cfg.n_heads; ++hd) {
            std::size_t c0 = hd * cfg.d_head();
            std::size_t c1 = c0 + cfg.d_head();
            Var qh = num::slice_cols(q, c0, c1);
            Var kh = num::slice_cols(k, c0, c1);
            Var vh = num::slice_cols(v, c0, c1);
            Var scores = num::scale(num::matmul_nt(qh, kh), inv_sqrt_dh);
            Var attn = num::causal_row_softmax(scores);
            head_outs.push_back(num::matmul(attn, vh));
        }
        Var concat = cfg.n_heads == 1 ? head_outs[0] : num::concat_cols(head_outs);
        h = num::add(h, num::matmul(concat, b.wo));

        Var n2 = num::layer_norm(h, b.ln2_gamma, b.ln2_beta, 1e-5);
        Var f = num::silu(num::add_bias_rows(num::matmul(n2, b.w1), b.b1));
        Var ff = num::add_bias_rows(num::matmul(f, b.w2), b.b2);
        h = num::add(h, ff);
    }

    if (cfg.final_norm) {
        h = num::layer_norm(h, p.final_gamma, p.final_beta, 1e-5);
    }
    return cfg.tied_head ? num::matmul_nt(h, p.tok_emb) : num::matmul(h, p.head_w);
}

ForwardResult forward(const SequenceExample& ex, const moe::AdapterParams& ap,
                      const moe::AdapterConfig& ac, const BackboneParams& bp,
                      const BackboneConfig& bc) {
    ex.validate(bc);
    ForwardResult res;
    Var adapted;
    if (ex.audio_len() > 0) {
        auto [y, report] = moe::adapt(Var::constant(*ex.frames), ap, ac);
        adapted = y;
        res.report = std::move(report);
        res.routed = true;
    }
    Var z = embed_sequence(ex, adapted, bp, bc);
    res.logits = decode(z, bp, bc);
    return res;
}

Var ntp_loss(const num::Var& logits, const SequenceExample& ex) {
    std::size_t t = ex.length();
    std::size_t t_a = ex.audio_len();
    if (logits.shape().size() != 2 || logits.shape()[0] != t) {
        throw ShapeError("ntp_loss: logits rows must equal sequence length");
    }
    // Per-position target ids; only masked slots are consulted.
    std::vector<int> targets(t, 0);
    for (std::size_t i = 0; i + 1 < t; ++i) {
        if (i + 1 >= t_a) targets[i] = ex.tokens[i + 1 - t_a];
    }
    return num::masked_ntp(logits, targets, ex.loss_mask);
}

}  // namespace aukit::backbone
