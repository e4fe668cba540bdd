// Copyright (c) 2026 aukit contributors
// SPDX-License-Identifier: Apache-2.0
//
// The three-step instruction-data synthesis workflow: query-choice
// generation from dense captions, multi-model answering, and automated
// verdict-based verification — as a resumable batch pipeline with strict
// schema validation and append-only JSONL persistence.

#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "aukit/common/error.hpp"
#include "aukit/flux/prompt.hpp"
#include "aukit/gateway/gateway.hpp"

namespace aukit::flux {

/// Forward-only lifecycle. Ingested is the pre-pipeline entry point;
/// persisted snapshots always carry a post-transition state.
enum class FluxState {
    Ingested,
    Captioned,
    QueriesGenerated,
    Answered,
    Judged,
    Kept,
    Discarded,
};
const char* state_name(FluxState s);
FluxState state_from_name(const std::string& name);
/// a strictly before b along the lifecycle (Kept/Discarded are terminal
/// peers; Judged precedes both).
bool state_precedes(FluxState a, FluxState b);

struct AnswerTrace {
    std::string cot;
    std::string answer;  // "A".."D" when valid
    bool valid = false;
};

enum class Consistency { StrongMatch, WeakMatch, Conflict };
enum class Winner { ModelA, ModelB, Tie, None };
enum class FinalAction { KeepUsingWinner, Discard };

const char* consistency_name(Consistency c);
const char* winner_name(Winner w);
const char* final_action_name(FinalAction a);

struct JudgeVerdict {
    bool consensus = false;
    Consistency consistency = Consistency::Conflict;
    Winner winner = Winner::None;
    std::string reasoning;
    FinalAction final_action = FinalAction::Discard;
};

struct GenerationResult {
    bool is_success = false;
    std::vector<std::string> questions;  // exactly 5 when is_success
};

struct FluxRecord {
    std::string id;
    std::string audio_ref;              // opaque reference (path/uri)
    std::string audio_base64;           // inline payload for desk runs
    std::string audio_media_type = "audio/wav";
    std::string caption;                // empty => captioner fills it
    std::string taxonomy_path;          // "L0>L1>L2[>L3]"
    std::vector<std::string> questions; // question + four option lines each
    std::size_t judged_question = 0;    // index the traces belong to
    AnswerTrace trace_a, trace_b;
    std::optional<JudgeVerdict> verdict;
    std::string winner_model;           // "MODEL_A"/"MODEL_B" on Kept
    std::string discard_reason;         // reason code on Discarded
    FluxState state = FluxState::Ingested;
};

/// JSONL (de)serialization for persistence.
std::string record_to_json(const FluxRecord& rec);
FluxRecord record_from_json(const std::string& line);

/// "Question\nA. ..\nB. ..\nC. ..\nD. .." — exactly five lines, options
/// prefixed in order.
bool question_is_well_formed(const std::string& q);

/// Strict parse of the generator reply: exact keys {is_success,
/// questions}, exact types, 5 well-formed questions iff is_success.
/// Throws SchemaError with a reason code on any deviation.
GenerationResult parse_generation(const std::string& reply);

/// Strict parse of the judge reply: exact keys and enum spellings;
/// KEEP_USING_WINNER requires a concrete winner (A/B/TIE).
JudgeVerdict parse_verdict(const std::string& reply);

/// Tolerant option-letter extraction: accepts "A", "A.", "(A)",
/// "Answer: A", an option line "B. text", case-insensitive, scanning
/// from the last line upward; cot = text preceding the answer line.
std::optional<AnswerTrace> split_trace(const std::string& reply);

/// Everything the steps need besides the record. Endpoints must cover
/// the roles the requested steps use.
struct FluxContext {
    gateway::Gateway* gw = nullptr;
    std::map<gateway::Role, gateway::ModelEndpoint> endpoints;
    PromptTemplate caption_tpl;  // no placeholders
    PromptTemplate query_tpl;    // Mustache
    PromptTemplate judge_tpl;    // PyFormat
    Taxonomy taxonomy;
    std::string few_shots;
    std::string judge_rules;
    std::size_t parse_retries = 2;  // extra prompts after the first parse failure
    bool strict_match = false;      // keep STRONG_MATCH only

    void validate() const;
};

/// Loads the bundled templates, taxonomy, few-shots, and judge rules
/// from a data directory (gateway/endpoints left to the caller).
FluxContext load_flux_assets(const std::filesystem::path& data_dir);

/// First half of step 1: fill the caption (captioner call when the
/// record arrives without one) and advance Ingested -> Captioned.
/// Transport/auth errors propagate so the caller can park the record.
void step1_caption(FluxRecord& rec, FluxContext& ctx);

/// Step 1: caption if missing (delegates to step1_caption), then
/// generate five query-choice strings. Mutates the record (state,
/// caption, questions, discard bookkeeping).
GenerationResult step1_generate_queries(FluxRecord& rec, FluxContext& ctx);

/// Step 2: every question goes to both answerers with the audio; the
/// record keeps the traces of the first question with a valid answer.
void step2_answer(FluxRecord& rec, FluxContext& ctx);

/// Step 3, judging half: obtain and parse a verdict for the kept
/// question's traces; advance to Judged (or Discarded on parse
/// exhaustion). Filtering is a separate transition via apply_filter.
JudgeVerdict step3_judge(FluxRecord& rec, FluxContext& ctx);

/// The filtering rule: KEEP_USING_WINNER and not CONFLICT; strict mode
/// additionally demands STRONG_MATCH.
bool keep_verdict(const JudgeVerdict& v, bool strict);

/// Step 3, filtering half: Judged -> Kept (winner recorded, TIE resolves
/// to Model A) or Judged -> Discarded("filtered").
void apply_filter(FluxRecord& rec, bool strict);

/// Append-only persistence: one JSONL file per entered state plus a
/// state index; snapshots are whole records, so the furthest snapshot
/// per id reconstructs the run.
class FluxStore {
public:
    explicit FluxStore(std::filesystem::path dir);

    /// Append the record snapshot to its state's file, then the index.
    void persist(const FluxRecord& rec);

    /// id -> furthest persisted snapshot.
    std::map<std::string, FluxRecord> load_latest() const;

    const std::filesystem::path& dir() const { return dir_; }

private:
    std::filesystem::path dir_;
};

struct PipelineConfig {
    std::filesystem::path out_dir;
    std::size_t parallelism = 1;
    bool strict_match = false;
    std::size_t parse_retries = 2;
    std::vector<int> steps = {1, 2, 3};
    /// Test hook simulating a crash: stop cleanly after this many
    /// persisted transitions.
    std::optional<std::size_t> stop_after_transitions;
};

struct PipelineSummary {
    std::size_t input = 0;
    std::size_t kept = 0;
    std::size_t parked = 0;  // not yet terminal (transport failures, early stop)
    std::map<std::string, std::size_t> discarded_by_reason;

    std::size_t discarded() const;
    /// kept + discarded + parked == input
    bool reconciles() const;
};

/// Drive records through the configured steps with resume: records
/// already past a step (per the store) are not reprocessed.
PipelineSummary run_pipeline(const std::vector<FluxRecord>& corpus, FluxContext& ctx,
                             const PipelineConfig& cfg);

}  // namespace aukit::flux
