// Copyright (c) 2026 aukit contributors
// SPDX-License-Identifier: Apache-2.0
//
// Staged training over the adapter + backbone pair: the combined
// objective L = L_NTP + lambda * L_aux, per-stage freeze masks, and two
// small fixed-hyperparameter optimizers.

#pragma once

#include <cstddef>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "aukit/backbone/model.hpp"

namespace aukit::backbone {

enum class TrainingStage { Align, JointPretrain, SFT };

const char* stage_name(TrainingStage s);
TrainingStage stage_from_name(const std::string& name);

struct FreezeMask {
    bool adapter_trainable = true;
    bool backbone_trainable = true;
};

/// Align trains only the adapter; the later stages unfreeze everything.
FreezeMask stage_freeze(TrainingStage stage);

enum class OptimizerKind { Sgd, AdaptiveRms };

struct TrainConfig {
    TrainingStage stage = TrainingStage::JointPretrain;
    OptimizerKind optimizer = OptimizerKind::Sgd;
    double lr = 0.05;
    double beta2 = 0.999;  // AdaptiveRms second-moment decay
    double eps = 1e-8;     // AdaptiveRms denominator floor
    double lambda = 0.01;  // aux-loss weight in the combined objective

    void validate() const;
};

/// The combined objective for one batch, with its measured parts.
struct LossParts {
    num::Var total;             // scalar graph node: L_NTP + lambda * L_aux
    double l_ntp = 0.0;
    double l_aux = 0.0;         // 0 when the batch routed no frames
    bool routed = false;
    moe::RoutingReport report;  // batch-level routing (valid iff routed)
};

/// Forward the whole batch. All acoustic frames in the batch go through
/// the adapter as ONE routed token batch, so L_aux is the batch-level
/// balance penalty; per-example NTP means are combined weighted by their
/// masked-position counts (one global mean over supervised positions).
LossParts total_loss(const SequenceBatch& batch, const moe::AdapterParams& ap,
                     const moe::AdapterConfig& ac, const BackboneParams& bp,
                     const BackboneConfig& bc, double lambda);

struct StepMetrics {
    std::size_t step = 0;
    double total = 0.0;
    double l_ntp = 0.0;
    double l_aux = 0.0;
    std::vector<double> utilization;  // f per expert (empty if nothing routed)
};

/// One line-delimited JSON record per step.
std::string metrics_jsonl(const StepMetrics& m);

/// Owns the parameters, the optimizer state, and the stage freeze mask.
class Trainer {
public:
    Trainer(moe::AdapterConfig ac, moe::AdapterParams ap, BackboneConfig bc,
            BackboneParams bp, TrainConfig tc);

    /// Forward, backward, and an in-place update of the trainable subset.
    /// Throws NumericError if the loss goes non-finite.
    StepMetrics step(const SequenceBatch& batch);

    void set_stage(TrainingStage stage) { cfg_.stage = stage; }
    TrainingStage stage() const { return cfg_.stage; }
    std::size_t steps_taken() const { return step_; }

    const moe::AdapterParams& adapter_params() const { return adapter_params_; }
    const BackboneParams& backbone_params() const { return backbone_params_; }
    const moe::AdapterConfig& adapter_config() const { return adapter_cfg_; }
    const BackboneConfig& backbone_config() const { return backbone_cfg_; }

    /// All parameters (adapter + backbone) as stable name -> handle pairs.
    std::vector<std::pair<std::string, num::Var>> named_params() const;

    void save_checkpoint(const std::filesystem::path& dir) const;
    void load_checkpoint(const std::filesystem::path& dir);

private:
    void apply_update(num::Var& param, const std::string& name);

    moe::AdapterConfig adapter_cfg_;
    moe::AdapterParams adapter_params_;
    BackboneConfig backbone_cfg_;
    BackboneParams backbone_params_;
    TrainConfig cfg_;
    std::size_t step_ = 0;
    std::map<std::string, num::Tensor> second_moment_;  // AdaptiveRms state
};

}  // namespace aukit::backbone
