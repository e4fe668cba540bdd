// Copyright (c) 2026 aukit contributors
// SPDX-License-Identifier: Apache-2.0
//
// Byte-stable prompt templates in two placeholder dialects, plus the
// bundled paralinguistic taxonomy the query-generation prompt consumes.

#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "aukit/common/error.hpp"

namespace aukit::flux {

/// Mustache resolves {{NAME}} and leaves single braces alone (the
/// query-generation template contains literal JSON). PyFormat resolves
/// {name} and treats {{ }} as escaped literal braces (the verification
/// and QA templates embed JSON examples that way).
enum class RenderMode { Mustache, PyFormat };

struct PromptTemplate {
    std::string id;
    RenderMode mode = RenderMode::Mustache;
    std::string text;

    /// Deterministic rendering; throws ConfigError on any unresolved or
    /// malformed placeholder so drift never ships silently.
    std::string render(const std::map<std::string, std::string>& vars) const;

    static PromptTemplate from_file(const std::filesystem::path& path, RenderMode mode,
                                    std::string id);
};

struct TaxonomyPath {
    std::string l0, l1, l2;
    std::optional<std::string> l3;

    /// "L0 > L1 > L2[ > L3]"
    std::string joined() const;
    /// The {{HIERARCHY_BLOCK}} rendering: one "- Ln: value" line per level.
    std::string hierarchy_block() const;
};

class Taxonomy {
public:
    static Taxonomy load(const std::filesystem::path& path);

    /// Match "L0>L1>L2" or "L0>L1>L2>L3" (whitespace around '>' ignored;
    /// an L3 must be listed under its L2). Throws DataError when absent.
    TaxonomyPath resolve(const std::string& path_text) const;

    const std::vector<TaxonomyPath>& paths() const { return paths_; }

private:
    std::vector<TaxonomyPath> paths_;  // one entry per L2 leaf; l3 unset
    std::map<std::string, std::vector<std::string>> l3_by_l2_;  // joined L2 key -> options
};

}  // namespace aukit::flux
