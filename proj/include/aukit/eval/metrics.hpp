// Copyright (c) 2026 aukit contributors
// SPDX-License-Identifier: Apache-2.0
//
// Word and character error rates over unit-cost Levenshtein alignments,
// with explicit, configurable text normalization so reported numbers are
// reproducible.

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "aukit/common/error.hpp"

namespace aukit::eval {

/// Counts from a minimal unit-cost alignment. S+I+D always equals the
/// Levenshtein distance between the token sequences.
struct EditOps {
    std::size_t substitutions = 0;
    std::size_t insertions = 0;
    std::size_t deletions = 0;
    std::size_t ref_len = 0;
    /// The reference tokenized to nothing; the rate denominator was
    /// guarded by max(1, ref_len).
    bool empty_reference = false;

    std::size_t distance() const { return substitutions + insertions + deletions; }
    double rate() const {
        return static_cast<double>(distance()) / static_cast<double>(ref_len ? ref_len : 1);
    }
};

/// Normalization applied to both sides before alignment. Defaults: ASCII
/// lowercasing, punctuation stripping (ASCII plus common fullwidth CJK
/// marks); CER additionally removes whitespace. All code-point safe.
struct TextNormalization {
    bool lowercase = true;
    bool strip_punctuation = true;
    bool cer_remove_whitespace = true;
};

/// One string per Unicode scalar (by UTF-8 byte structure; invalid bytes
/// pass through as single tokens).
std::vector<std::string> utf8_code_points(const std::string& text);

std::string normalize_text(const std::string& text, const TextNormalization& norm);

/// Whitespace-split words of the normalized text.
std::vector<std::string> word_tokens(const std::string& text, const TextNormalization& norm);
/// Code points of the normalized text, minus whitespace when configured.
std::vector<std::string> char_tokens(const std::string& text, const TextNormalization& norm);

/// Minimal unit-cost alignment counts between token sequences.
EditOps edit_ops(const std::vector<std::string>& ref, const std::vector<std::string>& hyp);

EditOps wer(const std::string& reference, const std::string& hypothesis,
            const TextNormalization& norm = {});
EditOps cer(const std::string& reference, const std::string& hypothesis,
            const TextNormalization& norm = {});

}  // namespace aukit::eval
