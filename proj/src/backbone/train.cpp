// Copyright (c) 2026 aukit contributors
// SPDX-License-Identifier: Apache-2.0

#include "aukit/backbone/train.hpp"

#include <cmath>

#include <json.hpp>

#include "aukit/num/serialize.hpp"

namespace aukit::backbone {

using num::Tensor;
using num::Var;

const char* stage_name(TrainingStage s) {
    switch (s) {
        case TrainingStage::Align: return "Align";
        case TrainingStage::JointPretrain: return "JointPretrain";
        case TrainingStage::SFT: return "SFT";
    }
    throw ContractError("unknown training stage");
}

TrainingStage stage_from_name(const std::string& name) {
    if (name == "Align") return TrainingStage::Align;
    if (name == "JointPretrain") return TrainingStage::JointPretrain;
    if (name == "SFT") return TrainingStage::SFT;
    throw ConfigError("unknown training stage: '" + name + "'");
}

FreezeMask stage_freeze(TrainingStage stage) {
    FreezeMask m;
    m.adapter_trainable = true;
    m.backbone_trainable = stage != TrainingStage::Align;
    return m;
}

void TrainConfig::validate() const {
    if (!(lr > 0.0) || !std::isfinite(lr)) throw ConfigError("lr must be positive and finite");
    if (!(beta2 > 0.0) || beta2 >= 1.0) throw ConfigError("beta2 must be in (0, 1)");
    if (!(eps > 0.0)) throw ConfigError("eps must be positive");
    if (!std::isfinite(lambda) || lambda < 0.0) {
        throw ConfigError("lambda must be finite and non-negative");
    }
}

LossParts total_loss(const SequenceBatch& batch, const moe::AdapterParams& ap,
                     const moe::AdapterConfig& ac, const BackboneParams& bp,
                     const BackboneConfig& bc, double lambda) {
    if (batch.empty()) throw ContractError("total_loss: empty batch");
    for (const auto& ex : batch) ex.validate(bc);

    // Route every frame in the batch through the adapter at once: the
    // balance statistics are then batch-level, as a per-token objective
    // should be.
    std::vector<std::size_t> frame_offset(batch.size(), 0);
    std::size_t total_frames = 0;
    for (std::size_t i = 0; i < batch.size(); ++i) {
        frame_offset[i] = total_frames;
        total_frames += batch[i].audio_len();
    }

    LossParts parts;
    Var adapted_all;
    if (total_frames > 0) {
        Tensor frames(num::Shape{total_frames, ac.d_in});
        for (std::size_t i = 0; i < batch.size(); ++i) {
            if (!batch[i].frames) continue;
            const Tensor& f = *batch[i].frames;
            if (f.cols() != ac.d_in) {
                throw ShapeError("example " + batch[i].id + ": frame width " +
                                 std::to_string(f.cols()) + " != adapter d_in " +
                                 std::to_string(ac.d_in));
            }
            std::copy_n(f.data(), f.size(), frames.data() + frame_offset[i] * ac.d_in);
        }
        auto [y, report] = moe::adapt(Var::constant(frames), ap, ac);
        adapted_all = y;
        parts.report = std::move(report);
        parts.routed = true;
    }

    // Weighted mean of per-example NTP means = one global mean over all
    // supervised positions.
    double total_masked = 0.0;
    std::vector<double> weights(batch.size(), 0.0);
    for (std::size_t i = 0; i < batch.size(); ++i) {
        for (auto m : batch[i].loss_mask) weights[i] += m ? 1.0 : 0.0;
        total_masked += weights[i];
    }
    if (total_masked == 0.0) throw ContractError("total_loss: no supervised positions in batch");

    Var ntp;
    for (std::size_t i = 0; i < batch.size(); ++i) {
        if (weights[i] == 0.0) continue;
        const auto& ex = batch[i];
        Var adapted;
        if (ex.audio_len() > 0) {
            std::vector<std::size_t> rows(ex.audio_len());
            for (std::size_t r = 0; r < rows.size(); ++r) rows[r] = frame_offset[i] + r;
            adapted = num::gather_rows(adapted_all, rows);
        }
        Var logits = decode(embed_sequence(ex, adapted, bp, bc), bp, bc);
        Var li = num::scale(ntp_loss(logits, ex), weights[i] / total_masked);
        ntp = ntp.defined() ? num::add(ntp, li) : li;
    }
    parts.l_ntp = ntp.item();

    if (parts.routed) {
        Var aux = moe::aux_loss(parts.report);
        parts.l_aux = aux.item();
        parts.total = num::add(ntp, num::scale(aux, lambda));
    } else {
        parts.total = ntp;
    }
    num::require_finite(parts.total.value(), "total loss");
    return parts;
}

std::string metrics_jsonl(const StepMetrics& m) {
    nlohmann::json j;
    j["step"] = m.step;
    j["total"] = m.total;
    j["l_ntp"] = m.l_ntp;
    j["l_aux"] = m.l_aux;
    j["utilization"] = m.utilization;
    return j.dump();
}

Trainer::Trainer(moe::AdapterConfig ac, moe::AdapterParams ap, BackboneConfig bc,
                 BackboneParams bp, TrainConfig tc)
    : adapter_cfg_(std::move(ac)),
      adapter_params_(std::move(ap)),
      backbone_cfg_(std::move(bc)),
      backbone_params_(std::move(bp)),
      cfg_(tc) {
    adapter_cfg_.validate();
    backbone_cfg_.validate();
    cfg_.validate();
    adapter_params_.check_shapes(adapter_cfg_);
    backbone_params_.check_shapes(backbone_cfg_);
    if (adapter_cfg_.d_out != backbone_cfg_.d_model) {
        throw ConfigError("adapter d_out (" + std::to_string(adapter_cfg_.d_out) +
                          ") must equal backbone d_model (" +
                          std::to_string(backbone_cfg_.d_model) + ")");
    }
}

std::vector<std::pair<std::string, Var>> Trainer::named_params() const {
    auto out = adapter_params_.named();
    auto bb = backbone_params_.named();
    out.insert(out.end(), bb.begin(), bb.end());
    return out;
}

void Trainer::apply_update(Var& param, const std::string& name) {
    Tensor& w = param.mutable_value();
    const Tensor& g = param.grad();
    switch (cfg_.optimizer) {
        case OptimizerKind::Sgd: {
            for (std::size_t i = 0; i < w.size(); ++i) w.at(i) -= cfg_.lr * g.at(i);
            break;
        }
        case OptimizerKind::AdaptiveRms: {
            // Momentum-free second-moment scaling with bias correction.
            auto [it, fresh] = second_moment_.try_emplace(name, Tensor::zeros_like(w));
            Tensor& v = it->second;
            double correction = 1.0 - std::pow(cfg_.beta2, static_cast<double>(step_ + 1));
            for (std::size_t i = 0; i < w.size(); ++i) {
                double gi = g.at(i);
                v.at(i) = cfg_.beta2 * v.at(i) + (1.0 - cfg_.beta2) * gi * gi;
                double vhat = v.at(i) / correction;
                w.at(i) -= cfg_.lr * gi / (std::sqrt(vhat) + cfg_.eps);
            }
            break;
        }
    }
}

StepMetrics Trainer::step(const SequenceBatch& batch) {
    FreezeMask freeze = stage_freeze(cfg_.stage);

    auto params = named_params();
    for (auto& [name, p] : params) p.zero_grad();

    LossParts parts = total_loss(batch, adapter_params_, adapter_cfg_, backbone_params_,
                                 backbone_cfg_, cfg_.lambda);
    if (!std::isfinite(parts.total.item())) {
        throw NumericError("training diverged: non-finite loss at step " +
                           std::to_string(step_));
    }
    parts.total.backward();

    for (auto& [name, p] : params) {
        bool adapter_param = name.rfind("adapter.", 0) == 0;
        bool trainable = adapter_param ? freeze.adapter_trainable : freeze.backbone_trainable;
        if (trainable) apply_update(p, name);
    }

    StepMetrics m;
    m.step = step_++;
    m.total = parts.total.item();
    m.l_ntp = parts.l_ntp;
    m.l_aux = parts.l_aux;
    if (parts.routed) m.utilization = moe::expert_utilization(parts.report);
    return m;
}

void Trainer::save_checkpoint(const std::filesystem::path& dir) const {
    std::map<std::string, Tensor> sink;
    for (const auto& [name, p] : named_params()) sink.emplace(name, p.value());
    num::save_checkpoint(dir, sink);
}

void Trainer::load_checkpoint(const std::filesystem::path& dir) {
    auto src = num::load_checkpoint(dir);
    for (auto& [name, p] : named_params()) {
        auto it = src.find(name);
        if (it == src.end()) throw DataError("checkpoint missing tensor " + name);
        if (it->second.shape() != p.shape()) {
            throw DataError("checkpoint tensor " + name + " has shape " +
                            num::shape_str(it->second.shape()) + ", model needs " +
                            num::shape_str(p.shape()));
        }
        p.mutable_value() = it->second;
    }
}

}  // namespace aukit::backbone
