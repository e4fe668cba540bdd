// Copyright (c) 2026 aukit contributors
// SPDX-License-Identifier: Apache-2.0
//
// Caption-conditioned multiple-choice evaluation: stage 1 captions the
// audio, stage 2 asks a text reader the question against that caption,
// and scoring reconciles per-item outcomes into a deterministic report.

#pragma once

#include <array>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "aukit/common/error.hpp"
#include "aukit/flux/prompt.hpp"
#include "aukit/gateway/gateway.hpp"

namespace aukit::eval {

struct EvalItem {
    std::string id;
    std::string audio_ref;
    std::string audio_base64;  // inline payload for desk runs
    std::string audio_media_type = "audio/wav";
    std::string question;      // bare question; choices are folded in at ask time
    std::array<std::string, 4> choices;
    char gold = 'A';           // 'A'..'D'
    std::string transcript;    // optional, ASR items
    std::string category;      // optional taxonomy tag for breakdowns

    void validate() const;
    /// The question with "A."–"D." choice lines appended — the exact
    /// string both DataFlux and the QA reader see.
    std::string folded_question() const;
};

/// Line-delimited JSON: {id, audio, question, choices[4], gold,
/// transcript?, category?, audio_base64?, media_type?}.
std::vector<EvalItem> load_items(const std::filesystem::path& path);
void save_items(const std::filesystem::path& path, const std::vector<EvalItem>& items);

struct QAOutcome {
    std::string id;
    std::string caption;    // stage-1 output
    std::string raw_reply;  // stage-2 reader text
    std::string answer;     // extracted letter, "" when unextractable
    bool extracted = false;
    bool correct = false;
    std::string error;      // transport/auth note; item still scored
};

/// Per-item log round-trip so accuracy is recomputable offline.
void save_outcomes(const std::filesystem::path& path, const std::vector<QAOutcome>& outcomes);
std::vector<QAOutcome> load_outcomes(const std::filesystem::path& path);

/// Endpoints + templates for the two stages.
struct QAHarness {
    gateway::Gateway* gw = nullptr;
    gateway::ModelEndpoint captioner;
    gateway::ModelEndpoint qa_reader;
    flux::PromptTemplate caption_tpl;  // no placeholders
    flux::PromptTemplate qa_tpl;       // PyFormat: {caption}, {question}

    void validate() const;
    /// Loads the two templates from the data directory; gateway and
    /// endpoints are wired by the caller.
    static QAHarness load(const std::filesystem::path& data_dir);
};

/// Runs both stages for one item. Never mutates the item; an
/// unextractable reader reply scores incorrect and is flagged, never
/// dropped. Transport/auth failures are captured in `error` (also
/// scored incorrect) so batch denominators stay honest.
QAOutcome caption_then_answer(const EvalItem& item, const QAHarness& h);

/// Bounded-parallel batch; results align with item order.
std::vector<QAOutcome> caption_then_answer_many(const std::vector<EvalItem>& items,
                                                const QAHarness& h, std::size_t parallelism);

struct CategoryScore {
    std::size_t total = 0;
    std::size_t correct = 0;
};

struct ScoreReport {
    std::size_t total = 0;
    std::size_t correct = 0;
    std::size_t unextracted = 0;
    std::size_t errored = 0;
    double accuracy = 0.0;  // correct / total
    std::map<std::string, CategoryScore> by_category;

    std::string to_json() const;   // deterministic (sorted keys)
    std::string to_table() const;  // plain-text summary
};

/// Joins items and outcomes by id (order-insensitive) and scores them.
/// Missing or surplus outcome ids raise a reconciliation DataError.
ScoreReport score_set(const std::vector<EvalItem>& items,
                      const std::vector<QAOutcome>& results);

}  // namespace aukit::eval
