// Copyright (c) 2026 aukit contributors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <filesystem>
#include <map>
#include <string>

#include "aukit/common/error.hpp"

namespace aukit {

/// Plain "key = value" config files: one pair per line, '#' starts a
/// comment, surrounding whitespace ignored. Values stay strings; use the
/// typed getters for conversion with a config error on bad input.
using KvMap = std::map<std::string, std::string>;

KvMap load_kv(const std::filesystem::path& path);
void save_kv(const std::filesystem::path& path, const KvMap& kv);

/// Parse a single "key = value" line into `out`; returns false for blank
/// or comment lines. Exposed so stream-based callers share the grammar.
bool parse_kv_line(const std::string& line, KvMap& out);

const std::string& kv_require(const KvMap& kv, const std::string& key);
double kv_double(const KvMap& kv, const std::string& key);
long long kv_int(const KvMap& kv, const std::string& key);
bool kv_bool(const KvMap& kv, const std::string& key);

}  // namespace aukit
