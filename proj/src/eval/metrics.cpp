// Copyright (c) 2026 aukit contributors
// SPDX-License-Identifier: Apache-2.0

#include "aukit/eval/metrics.hpp"

#include <algorithm>

namespace aukit::eval {

namespace {

std::uint32_t cp_value(const std::string& cp) {
    auto b = [&](std::size_t i) { return static_cast<std::uint32_t>(static_cast<unsigned char>(cp[i])); };
    switch (cp.size()) {
        case 1: return b(0);
        case 2: return ((b(0) & 0x1F) << 6) | (b(1) & 0x3F);
        case 3: return ((b(0) & 0x0F) << 12) | ((b(1) & 0x3F) << 6) | (b(2) & 0x3F);
        case 4:
            return ((b(0) & 0x07) << 18) | ((b(1) & 0x3F) << 12) | ((b(2) & 0x3F) << 6) |
                   (b(3) & 0x3F);
        default: return 0xFFFD;
    }
}

bool is_space_cp(std::uint32_t v) {
    return v == ' ' || v == '\t' || v == '\n' || v == '\r' || v == '\f' || v == '\v' ||
           v == 0x00A0 || v == 0x3000;  // NBSP, ideographic space
}

bool is_punct_cp(std::uint32_t v) {
    if (v < 0x80) {
        return (v >= '!' && v <= '/') || (v >= ':' && v <= '@') || (v >= '[' && v <= '`') ||
               (v >= '{' && v <= '~');
    }
    switch (v) {
        case 0x3001:  // 、
        case 0x3002:  // 。
        case 0xFF01:  // ！
        case 0xFF0C:  // ，
        case 0xFF1A:  // ：
        case 0xFF1B:  // ；
        case 0xFF1F:  // ？
        case 0x2018:
        case 0x2019:
        case 0x201C:
        case 0x201D:
        case 0x2026:  // …
            return true;
        default: return false;
    }
}

}  // namespace

std::vector<std::string> utf8_code_points(const std::string& text) {
    std::vector<std::string> cps;
    cps.reserve(text.size());
    for (std::size_t i = 0; i < text.size();) {
        unsigned char c = static_cast<unsigned char>(text[i]);
        std::size_t len = 1;
        if ((c & 0xE0) == 0xC0) len = 2;
        else if ((c & 0xF0) == 0xE0) len = 3;
        else if ((c & 0xF8) == 0xF0) len = 4;
        len = std::min(len, text.size() - i);
        cps.push_back(text.substr(i, len));
        i += len;
    }
    return cps;
}

std::string normalize_text(const std::string& text, const TextNormalization& norm) {
    std::string out;
    out.reserve(text.size());
    for (auto& cp : utf8_code_points(text)) {
        std::uint32_t v = cp_value(cp);
        if (norm.strip_punctuation && is_punct_cp(v)) continue;
        if (norm.lowercase && cp.size() == 1 && v >= 'A' && v <= 'Z') {
            out += static_cast<char>(v - 'A' + 'a');
        } else {
            out += cp;
        }
    }
    return out;
}

std::vector<std::string> word_tokens(const std::string& text, const TextNormalization& norm) {
    std::string n = normalize_text(text, norm);
    std::vector<std::string> words;
    std::string cur;
    for (auto& cp : utf8_code_points(n)) {
        if (is_space_cp(cp_value(cp))) {
            if (!cur.empty()) words.push_back(std::move(cur));
            cur.clear();
        } else {
            cur += cp;
        }
    }
    if (!cur.empty()) words.push_back(std::move(cur));
    return words;
}

std::vector<std::string> char_tokens(const std::string& text, const TextNormalization& norm) {
    std::string n = normalize_text(text, norm);
    std::vector<std::string> chars;
    for (auto& cp : utf8_code_points(n)) {
        if (norm.cer_remove_whitespace && is_space_cp(cp_value(cp))) continue;
        chars.push_back(cp);
    }
    return chars;
}

EditOps edit_ops(const std::vector<std::string>& ref, const std::vector<std::string>& hyp) {
    const std::size_t n = ref.size();
    const std::size_t m = hyp.size();
    std::vector<std::vector<std::uint32_t>> d(n + 1, std::vector<std::uint32_t>(m + 1, 0));
    for (std::size_t i = 0; i <= n; ++i) d[i][0] = static_cast<std::uint32_t>(i);
    for (std::size_t j = 0; j <= m; ++j) d[0][j] = static_cast<std::uint32_t>(j);
    for (std::size_t i = 1; i <= n; ++i) {
        for (std::size_t j = 1; j <= m; ++j) {
            std::uint32_t sub = d[i - 1][j - 1] + (ref[i - 1] != hyp[j - 1] ? 1 : 0);
            std::uint32_t del = d[i - 1][j] + 1;
            std::uint32_t ins = d[i][j - 1] + 1;
            d[i][j] = std::min({sub, del, ins});
        }
    }

    EditOps ops;
    ops.ref_len = n;
    ops.empty_reference = (n == 0);
    std::size_t i = n, j = m;
    while (i > 0 || j > 0) {
        if (i > 0 && j > 0 &&
            d[i][j] == d[i - 1][j - 1] + (ref[i - 1] != hyp[j - 1] ? 1 : 0)) {
            if (ref[i - 1] != hyp[j - 1]) ++ops.substitutions;
            --i;
            --j;
        } else if (i > 0 && d[i][j] == d[i - 1][j] + 1) {
            ++ops.deletions;
            --i;
        } else {
            ++ops.insertions;
            --j;
        }
    }
    return ops;
}

EditOps wer(const std::string& reference, const std::string& hypothesis,
            const TextNormalization& norm) {
    return edit_ops(word_tokens(reference, norm), word_tokens(hypothesis, norm));
}

EditOps cer(const std::string& reference, const std::string& hypothesis,
            const TextNormalization& norm) {
    return edit_ops(char_tokens(reference, norm), char_tokens(hypothesis, norm));
}

}  // namespace aukit::eval
