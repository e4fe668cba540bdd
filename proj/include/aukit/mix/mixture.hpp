// Copyright (c) 2026 aukit contributors
// SPDX-License-Identifier: Apache-2.0
//
// Staged multi-task data mixtures: the task taxonomy as sequence-template
// builders, weighted task sampling with stage presets, and epoch planning
// under a token budget with a 1:1 audio/text modality balance.

#pragma once

#include <array>
#include <cstddef>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "aukit/backbone/model.hpp"
#include "aukit/common/rng.hpp"

namespace aukit::mix {

enum class TaskKind {
    AudioUnimodal,
    AudioTextMapping_ASR,
    AudioTextMapping_TTS,
    AudioTextInterleaving,
    AudioCaptioning,
    SFT_ASR,
    SFT_Paralinguistic,
    SFT_Semantic,
    SFT_DenseCaption,
};
inline constexpr std::size_t kNumTaskKinds = 9;

const char* task_name(TaskKind t);
TaskKind task_from_name(const std::string& name);

/// Ratio-table rows: the two mapping directions share one row.
enum class TaskCategory {
    AudioUnimodal,
    AudioTextMapping,
    AudioTextInterleaving,
    AudioCaptioning,
    SFT_ASR,
    SFT_Paralinguistic,
    SFT_Semantic,
    SFT_DenseCaption,
};
TaskCategory category_of(TaskKind t);
const char* category_name(TaskCategory c);

enum class MixStage { Pretrain1, Pretrain2, Sft };
const char* stage_label(MixStage s);

struct MixtureSpec {
    MixStage stage = MixStage::Pretrain1;
    std::array<double, kNumTaskKinds> weights{};  // per TaskKind, sums to 1
    double audio_text_ratio = 1.0;                // audio:text token target

    void validate() const;

    double weight(TaskKind t) const { return weights[static_cast<std::size_t>(t)]; }
    std::map<TaskCategory, double> category_weights() const;

    /// Stage presets. The audio-text mapping weight is split evenly
    /// between the ASR and TTS directions.
    static MixtureSpec stage1();  // 0.20 / 0.45 / 0.35
    static MixtureSpec stage2();  // 0.03 / 0.56 / 0.07 / 0.34
    static MixtureSpec sft();     // 0.60 / 0.10 / 0.20 / 0.10

    void save(const std::filesystem::path& path) const;
    static MixtureSpec load(const std::filesystem::path& path);
};

/// One multinomial draw by spec weights. Zero-weight tasks are never
/// returned. Throws ConfigError for a degenerate (all-zero) spec.
TaskKind sample_task(const MixtureSpec& spec, Rng& rng);

/// A unit of training data with whatever payloads it carries and the
/// tasks it may serve.
struct CorpusRecord {
    std::string id;
    std::optional<num::Tensor> frames;  // acoustic features [T_a x d_in]
    std::vector<int> audio_tokens;      // discrete semantic audio ids
    std::vector<int> text_tokens;       // text ids
    std::string caption;                // dense caption (synthesis/eval only)
    std::vector<TaskKind> eligible;

    bool eligible_for(TaskKind t) const;
    /// Payloads must exist for every task the record is tagged for.
    void validate() const;
};

struct BuildOptions {
    std::size_t interleave_chunk = 16;  // positions per modality chunk
    std::size_t instruction_len = 3;    // synthetic instruction prefix length
};

/// Number of audio-side / text-side positions build_sequence would emit;
/// cheap length accounting for the planner.
struct Footprint {
    std::size_t audio = 0;
    std::size_t text = 0;
    std::size_t total() const { return audio + text; }
};
Footprint sequence_footprint(TaskKind task, const CorpusRecord& rec, const BuildOptions& opt);

/// Instantiate the task's sequence template over one record. Throws
/// DataError (naming record and task) when a needed payload is missing.
backbone::SequenceExample build_sequence(TaskKind task, const CorpusRecord& rec,
                                         const backbone::BackboneConfig& bc,
                                         const BuildOptions& opt);

struct PlanItem {
    TaskKind task;
    std::string record_id;
    std::size_t audio_tokens = 0;
    std::size_t text_tokens = 0;
};

struct EpochPlan {
    std::vector<PlanItem> items;
    std::size_t total_audio = 0;
    std::size_t total_text = 0;
    std::size_t total_tokens() const { return total_audio + total_text; }
    std::map<TaskCategory, std::size_t> tokens_by_category() const;

    /// Line-delimited JSON export for audit.
    void save_jsonl(const std::filesystem::path& path) const;
};

/// Sample an ordered epoch plan close to `token_budget` total tokens.
/// Task identities follow `spec`'s weights exactly (pure multinomial);
/// the per-task record choice greedily steers the cumulative audio:text
/// token ratio toward `spec`'s target.
EpochPlan plan_epoch(const MixtureSpec& spec, const std::vector<CorpusRecord>& corpus,
                     std::size_t token_budget, Rng& rng,
                     const BuildOptions& opt = {});

struct SyntheticCorpusOptions {
    std::size_t n_records = 64;
    std::size_t d_in = 8;            // acoustic feature width
    std::size_t min_frames = 4, max_frames = 10;
    std::size_t min_tokens = 4, max_tokens = 12;
};

/// Seeded synthetic corpus: smooth random acoustic trajectories, audio
/// token streams from the reserved id range, text streams, and a short
/// caption; every record is tagged for the tasks its payloads support.
std::vector<CorpusRecord> make_synthetic_corpus(const backbone::BackboneConfig& bc,
                                                const SyntheticCorpusOptions& opt, Rng& rng);

}  // namespace aukit::mix
