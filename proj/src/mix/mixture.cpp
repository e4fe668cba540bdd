// Copyright (c) 2026 aukit contributors
// SPDX-License-Identifier: Apache-2.0

#include "aukit/mix/mixture.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>

#include <json.hpp>

#include "aukit/common/kv.hpp"

namespace aukit::mix {

using backbone::SequenceExample;

namespace {

constexpr std::array<const char*, kNumTaskKinds> kTaskNames = {
    "AudioUnimodal",       "AudioTextMapping_ASR", "AudioTextMapping_TTS",
    "AudioTextInterleaving", "AudioCaptioning",    "SFT_ASR",
    "SFT_Paralinguistic",  "SFT_Semantic",         "SFT_DenseCaption",
};

constexpr std::array<const char*, 8> kCategoryNames = {
    "AudioUnimodal",   "AudioTextMapping", "AudioTextInterleaving", "AudioCaptioning",
    "SFT_ASR",         "SFT_Paralinguistic", "SFT_Semantic",        "SFT_DenseCaption",
};

}  // namespace

const char* task_name(TaskKind t) { return kTaskNames[static_cast<std::size_t>(t)]; }

TaskKind task_from_name(const std::string& name) {
    for (std::size_t i = 0; i < kNumTaskKinds; ++i) {
        if (name == kTaskNames[i]) return static_cast<TaskKind>(i);
    }
    throw ConfigError("unknown task kind: '" + name + "'");
}

TaskCategory category_of(TaskKind t) {
    switch (t) {
        case TaskKind::AudioUnimodal: return TaskCategory::AudioUnimodal;
        case TaskKind::AudioTextMapping_ASR:
        case TaskKind::AudioTextMapping_TTS: return TaskCategory::AudioTextMapping;
        case TaskKind::AudioTextInterleaving: return TaskCategory::AudioTextInterleaving;
        case TaskKind::AudioCaptioning: return TaskCategory::AudioCaptioning;
        case TaskKind::SFT_ASR: return TaskCategory::SFT_ASR;
        case TaskKind::SFT_Paralinguistic: return TaskCategory::SFT_Paralinguistic;
        case TaskKind::SFT_Semantic: return TaskCategory::SFT_Semantic;
        case TaskKind::SFT_DenseCaption: return TaskCategory::SFT_DenseCaption;
    }
    throw ContractError("unknown task kind");
}

const char* category_name(TaskCategory c) { return kCategoryNames[static_cast<std::size_t>(c)]; }

const char* stage_label(MixStage s) {
    switch (s) {
        case MixStage::Pretrain1: return "pretrain1";
        case MixStage::Pretrain2: return "pretrain2";
        case MixStage::Sft: return "sft";
    }
    throw ContractError("unknown mix stage");
}

void MixtureSpec::validate() const {
    double sum = 0.0;
    for (double w : weights) {
        if (!std::isfinite(w) || w < 0.0) {
            throw ConfigError("mixture weights must be finite and non-negative");
        }
        sum += w;
    }
    if (sum == 0.0) throw ConfigError("mixture spec has no positive-weight task");
    if (std::fabs(sum - 1.0) > 1e-9) {
        throw ConfigError("mixture weights must sum to 1, got " + std::to_string(sum));
    }
    if (!(audio_text_ratio > 0.0) || !std::isfinite(audio_text_ratio)) {
        throw ConfigError("audio_text_ratio must be positive and finite");
    }
}

std::map<TaskCategory, double> MixtureSpec::category_weights() const {
    std::map<TaskCategory, double> out;
    for (std::size_t i = 0; i < kNumTaskKinds; ++i) {
        if (weights[i] > 0.0) out[category_of(static_cast<TaskKind>(i))] += weights[i];
    }
    return out;
}

MixtureSpec MixtureSpec::stage1() {
    MixtureSpec s;
    s.stage = MixStage::Pretrain1;
    s.weights[static_cast<std::size_t>(TaskKind::AudioUnimodal)] = 0.20;
    s.weights[static_cast<std::size_t>(TaskKind::AudioTextMapping_ASR)] = 0.225;
    s.weights[static_cast<std::size_t>(TaskKind::AudioTextMapping_TTS)] = 0.225;
    s.weights[static_cast<std::size_t>(TaskKind::AudioTextInterleaving)] = 0.35;
    return s;
}

MixtureSpec MixtureSpec::stage2() {
    MixtureSpec s;
    s.stage = MixStage::Pretrain2;
    s.weights[static_cast<std::size_t>(TaskKind::AudioUnimodal)] = 0.03;
    s.weights[static_cast<std::size_t>(TaskKind::AudioTextMapping_ASR)] = 0.28;
    s.weights[static_cast<std::size_t>(TaskKind::AudioTextMapping_TTS)] = 0.28;
    s.weights[static_cast<std::size_t>(TaskKind::AudioTextInterleaving)] = 0.07;
    s.weights[static_cast<std::size_t>(TaskKind::AudioCaptioning)] = 0.34;
    return s;
}

MixtureSpec MixtureSpec::sft() {
    MixtureSpec s;
    s.stage = MixStage::Sft;
    s.weights[static_cast<std::size_t>(TaskKind::SFT_ASR)] = 0.60;
    s.weights[static_cast<std::size_t>(TaskKind::SFT_Paralinguistic)] = 0.10;
    s.weights[static_cast<std::size_t>(TaskKind::SFT_Semantic)] = 0.20;
    s.weights[static_cast<std::size_t>(TaskKind::SFT_DenseCaption)] = 0.10;
    return s;
}

void MixtureSpec::save(const std::filesystem::path& path) const {
    validate();
    KvMap kv;
    kv["stage"] = stage_label(stage);
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", audio_text_ratio);
    kv["audio_text_ratio"] = buf;
    for (std::size_t i = 0; i < kNumTaskKinds; ++i) {
        std::snprintf(buf, sizeof buf, "%.17g", weights[i]);
        kv[std::string("weight.") + kTaskNames[i]] = buf;
    }
    save_kv(path, kv);
}

MixtureSpec MixtureSpec::load(const std::filesystem::path& path) {
    KvMap kv = load_kv(path);
    MixtureSpec s;
    std::string stage = kv_require(kv, "stage");
    if (stage == "pretrain1") s.stage = MixStage::Pretrain1;
    else if (stage == "pretrain2") s.stage = MixStage::Pretrain2;
    else if (stage == "sft") s.stage = MixStage::Sft;
    else throw ConfigError("unknown mixture stage: '" + stage + "'");
    s.audio_text_ratio = kv_double(kv, "audio_text_ratio");
    for (std::size_t i = 0; i < kNumTaskKinds; ++i) {
        std::string key = std::string("weight.") + kTaskNames[i];
        s.weights[i] = kv.count(key) ? kv_double(kv, key) : 0.0;
    }
    s.validate();
    return s;
}

TaskKind sample_task(const MixtureSpec& spec, Rng& rng) {
    spec.validate();
    double u = rng.uniform();  // in [0, 1)
    double cum = 0.0;
    std::size_t last_positive = kNumTaskKinds;
    for (std::size_t i = 0; i < kNumTaskKinds; ++i) {
        if (spec.weights[i] <= 0.0) continue;  // zero weight: never sampled
        last_positive = i;
        cum += spec.weights[i];
        if (u < cum) return static_cast<TaskKind>(i);
    }
    // Rounding left u marginally above the final cumulative sum.
    return static_cast<TaskKind>(last_positive);
}

bool CorpusRecord::eligible_for(TaskKind t) const {
    return std::find(eligible.begin(), eligible.end(), t) != eligible.end();
}

namespace {

bool needs_frames(TaskKind t) {
    switch (t) {
        case TaskKind::AudioTextMapping_ASR:
        case TaskKind::AudioCaptioning:
        case TaskKind::SFT_ASR:
        case TaskKind::SFT_Paralinguistic:
        case TaskKind::SFT_Semantic:
        case TaskKind::SFT_DenseCaption: return true;
        default: return false;
    }
}

bool needs_audio_tokens(TaskKind t) {
    switch (t) {
        case TaskKind::AudioUnimodal:
        case TaskKind::AudioTextMapping_TTS:
        case TaskKind::AudioTextInterleaving: return true;
        default: return false;
    }
}

bool needs_text_tokens(TaskKind t) { return t != TaskKind::AudioUnimodal; }

void require_payloads(TaskKind t, const CorpusRecord& rec) {
    auto missing = [&](const char* what) {
        throw DataError("record " + rec.id + " lacks " + what + " required by task " +
                        task_name(t));
    };
    if (needs_frames(t) && (!rec.frames || rec.frames->ndim() != 2)) missing("acoustic frames");
    if (needs_audio_tokens(t) && rec.audio_tokens.empty()) missing("audio tokens");
    if (needs_text_tokens(t) && rec.text_tokens.empty()) missing("text tokens");
}

/// Synthetic instruction prefix: a deterministic per-task token pattern
/// from the text range, standing in for a tokenized natural-language
/// instruction.
std::vector<int> instruction_tokens(TaskKind t, const backbone::BackboneConfig& bc,
                                    std::size_t len) {
    std::vector<int> out;
    out.reserve(len);
    std::size_t base = bc.text_tokens.lo;
    std::size_t width = bc.text_tokens.width();
    for (std::size_t i = 0; i < len; ++i) {
        out.push_back(static_cast<int>(base + (static_cast<std::size_t>(t) * 7 + i * 3) % width));
    }
    return out;
}

}  // namespace

void CorpusRecord::validate() const {
    for (TaskKind t : eligible) require_payloads(t, *this);
}

Footprint sequence_footprint(TaskKind task, const CorpusRecord& rec, const BuildOptions& opt) {
    require_payloads(task, rec);
    Footprint f;
    switch (task) {
        case TaskKind::AudioUnimodal:
            f.audio = rec.audio_tokens.size();
            break;
        case TaskKind::AudioTextMapping_ASR:
            f.audio = rec.frames->rows();
            f.text = rec.text_tokens.size();
            break;
        case TaskKind::AudioTextMapping_TTS:
            f.text = rec.text_tokens.size();
            f.audio = rec.audio_tokens.size();
            break;
        case TaskKind::AudioTextInterleaving:
            f.audio = rec.audio_tokens.size();
            f.text = rec.text_tokens.size();
            break;
        case TaskKind::AudioCaptioning:
        case TaskKind::SFT_ASR:
        case TaskKind::SFT_Paralinguistic:
        case TaskKind::SFT_Semantic:
        case TaskKind::SFT_DenseCaption:
            f.audio = rec.frames->rows();
            f.text = opt.instruction_len + rec.text_tokens.size();
            break;
    }
    return f;
}

SequenceExample build_sequence(TaskKind task, const CorpusRecord& rec,
                               const backbone::BackboneConfig& bc, const BuildOptions& opt) {
    if (!rec.eligible_for(task)) {
        throw DataError("record " + rec.id + " is not tagged for task " + task_name(task));
    }
    require_payloads(task, rec);

    SequenceExample ex;
    ex.id = rec.id + ":" + task_name(task);

    switch (task) {
        case TaskKind::AudioUnimodal: {
            // Pure semantic-audio-token NTP.
            ex.tokens = rec.audio_tokens;
            std::size_t t = ex.tokens.size();
            ex.loss_mask.assign(t, 0);
            for (std::size_t i = 0; i + 1 < t; ++i) ex.loss_mask[i] = 1;
            break;
        }
        case TaskKind::AudioTextMapping_ASR: {
            // [frames][transcript], loss on the transcript.
            ex.frames = *rec.frames;
            ex.tokens = rec.text_tokens;
            std::size_t t_a = ex.frames->rows();
            std::size_t t = t_a + ex.tokens.size();
            ex.loss_mask.assign(t, 0);
            for (std::size_t i = t_a - 1; i + 1 < t; ++i) ex.loss_mask[i] = 1;
            break;
        }
        case TaskKind::AudioTextMapping_TTS: {
            // [text][audio tokens], loss on the audio tokens.
            ex.tokens = rec.text_tokens;
            ex.tokens.insert(ex.tokens.end(), rec.audio_tokens.begin(), rec.audio_tokens.end());
            std::size_t t = ex.tokens.size();
            std::size_t text_len = rec.text_tokens.size();
            ex.loss_mask.assign(t, 0);
            for (std::size_t i = text_len - 1; i + 1 < t; ++i) ex.loss_mask[i] = 1;
            break;
        }
        case TaskKind::AudioTextInterleaving: {
            // Alternating fixed-size chunks starting with audio; loss on
            // every position with a successor.
            std::size_t c = opt.interleave_chunk;
            if (c == 0) throw ConfigError("interleave_chunk must be positive");
            std::size_t ai = 0, ti = 0;
            bool audio_turn = true;
            while (ai < rec.audio_tokens.size() || ti < rec.text_tokens.size()) {
                const auto& src = audio_turn ? rec.audio_tokens : rec.text_tokens;
                std::size_t& idx = audio_turn ? ai : ti;
                for (std::size_t step = 0; step < c && idx < src.size(); ++step, ++idx) {
                    ex.tokens.push_back(src[idx]);
                }
                audio_turn = !audio_turn;
            }
            std::size_t t = ex.tokens.size();
            ex.loss_mask.assign(t, 0);
            for (std::size_t i = 0; i + 1 < t; ++i) ex.loss_mask[i] = 1;
            break;
        }
        case TaskKind::AudioCaptioning:
        case TaskKind::SFT_ASR:
        case TaskKind::SFT_Paralinguistic:
        case TaskKind::SFT_Semantic:
        case TaskKind::SFT_DenseCaption: {
            // [frames][instruction][target], loss on the target.
            ex.frames = *rec.frames;
            ex.tokens = instruction_tokens(task, bc, opt.instruction_len);
            std::size_t target_start = ex.frames->rows() + ex.tokens.size();
            ex.tokens.insert(ex.tokens.end(), rec.text_tokens.begin(), rec.text_tokens.end());
            std::size_t t = ex.frames->rows() + ex.tokens.size();
            ex.loss_mask.assign(t, 0);
            for (std::size_t i = target_start - 1; i + 1 < t; ++i) ex.loss_mask[i] = 1;
            break;
        }
    }

    ex.validate(bc);
    return ex;
}

std::map<TaskCategory, std::size_t> EpochPlan::tokens_by_category() const {
    std::map<TaskCategory, std::size_t> out;
    for (const auto& it : items) out[category_of(it.task)] += it.audio_tokens + it.text_tokens;
    return out;
}

void EpochPlan::save_jsonl(const std::filesystem::path& path) const {
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw DataError("cannot write plan file " + path.string());
    for (const auto& it : items) {
        nlohmann::json j;
        j["task"] = task_name(it.task);
        j["record"] = it.record_id;
        j["audio_tokens"] = it.audio_tokens;
        j["text_tokens"] = it.text_tokens;
        os << j.dump() << "\n";
    }
}

EpochPlan plan_epoch(const MixtureSpec& spec, const std::vector<CorpusRecord>& corpus,
                     std::size_t token_budget, Rng& rng, const BuildOptions& opt) {
    spec.validate();
    if (corpus.empty()) throw ConfigError("plan_epoch: empty corpus");
    if (token_budget == 0) throw ConfigError("plan_epoch: zero token budget");

    // Records usable per positive-weight task.
    std::array<std::vector<std::size_t>, kNumTaskKinds> by_task;
    for (std::size_t r = 0; r < corpus.size(); ++r) {
        for (TaskKind t : corpus[r].eligible) {
            by_task[static_cast<std::size_t>(t)].push_back(r);
        }
    }
    for (std::size_t i = 0; i < kNumTaskKinds; ++i) {
        if (spec.weights[i] > 0.0 && by_task[i].empty()) {
            throw ConfigError(std::string("corpus has no record eligible for weighted task ") +
                              kTaskNames[i]);
        }
    }

    EpochPlan plan;
    // Greedy candidate scan bound: enough diversity without quadratic cost.
    constexpr std::size_t kCandidates = 16;
    while (true) {
        TaskKind task = sample_task(spec, rng);
        const auto& pool = by_task[static_cast<std::size_t>(task)];

        // Among a sampled window of eligible records, pick the one that
        // best steers the cumulative audio:text balance to the target.
        std::size_t best = pool.front();
        double best_dev = 0.0;
        bool first = true;
        for (std::size_t c = 0; c < std::min(kCandidates, pool.size()); ++c) {
            std::size_t cand = pool[rng.below(pool.size())];
            Footprint f = sequence_footprint(task, corpus[cand], opt);
            double a = static_cast<double>(plan.total_audio + f.audio);
            double x = static_cast<double>(plan.total_text + f.text);
            // Deviation from the target ratio, measured in tokens.
            double dev = std::fabs(a - spec.audio_text_ratio * x);
            if (first || dev < best_dev) {
                best = cand;
                best_dev = dev;
                first = false;
            }
        }

        Footprint f = sequence_footprint(task, corpus[best], opt);
        std::size_t next_total = plan.total_tokens() + f.total();
        // Stop at the closest approach to the budget.
        if (plan.total_tokens() >= token_budget ||
            (next_total > token_budget &&
             next_total - token_budget > token_budget - plan.total_tokens())) {
            break;
        }
        PlanItem item;
        item.task = task;
        item.record_id = corpus[best].id;
        item.audio_tokens = f.audio;
        item.text_tokens = f.text;
        plan.total_audio += f.audio;
        plan.total_text += f.text;
        plan.items.push_back(std::move(item));
    }
    return plan;
}

std::vector<CorpusRecord> make_synthetic_corpus(const backbone::BackboneConfig& bc,
                                                const SyntheticCorpusOptions& opt, Rng& rng) {
    bc.validate();
    if (opt.n_records == 0) throw ConfigError("synthetic corpus needs n_records >= 1");
    if (opt.min_frames < 1 || opt.max_frames < opt.min_frames || opt.min_tokens < 1 ||
        opt.max_tokens < opt.min_tokens) {
        throw ConfigError("synthetic corpus length bounds are inconsistent");
    }

    auto draw_len = [&](std::size_t lo, std::size_t hi) {
        return lo + rng.below(hi - lo + 1);
    };
    auto draw_ids = [&](const backbone::IdRange& range, std::size_t n) {
        std::vector<int> out(n);
        for (auto& v : out) v = static_cast<int>(range.lo + rng.below(range.width()));
        return out;
    };

    std::vector<CorpusRecord> corpus;
    corpus.reserve(opt.n_records);
    for (std::size_t i = 0; i < opt.n_records; ++i) {
        CorpusRecord rec;
        rec.id = "syn-" + std::to_string(i);

        // Smooth random acoustic trajectory: a damped random walk.
        std::size_t t_a = draw_len(opt.min_frames, opt.max_frames);
        num::Tensor frames(num::Shape{t_a, opt.d_in});
        for (std::size_t c = 0; c < opt.d_in; ++c) {
            double v = rng.normal();
            for (std::size_t t = 0; t < t_a; ++t) {
                v = 0.85 * v + 0.15 * rng.normal();
                frames.at(t, c) = v;
            }
        }
        rec.frames = std::move(frames);
        rec.audio_tokens = draw_ids(bc.audio_tokens, draw_len(opt.min_tokens, opt.max_tokens));
        rec.text_tokens = draw_ids(bc.text_tokens, draw_len(opt.min_tokens, opt.max_tokens));
        rec.caption = "synthetic clip " + std::to_string(i);

        rec.eligible = {
            TaskKind::AudioUnimodal,        TaskKind::AudioTextMapping_ASR,
            TaskKind::AudioTextMapping_TTS, TaskKind::AudioTextInterleaving,
            TaskKind::AudioCaptioning,      TaskKind::SFT_ASR,
            TaskKind::SFT_Paralinguistic,   TaskKind::SFT_Semantic,
            TaskKind::SFT_DenseCaption,
        };
        rec.validate();
        corpus.push_back(std::move(rec));
    }
    return corpus;
}

}  // namespace aukit::mix
