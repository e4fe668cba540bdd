// Copyright (c) 2026 aukit contributors
// SPDX-License-Identifier: Apache-2.0

#include "aukit/common/kv.hpp"

#include <cstdlib>
#include <fstream>

namespace aukit {

namespace {

std::string trim(const std::string& s) {
    std::size_t b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return "";
    std::size_t e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

}  // namespace

bool parse_kv_line(const std::string& line, KvMap& out) {
    std::string body = line.substr(0, line.find('#'));
    std::string t = trim(body);
    if (t.empty()) return false;
    std::size_t eq = t.find('=');
    if (eq == std::string::npos) {
        throw ConfigError("config line has no '=': " + trim(line));
    }
    std::string key = trim(t.substr(0, eq));
    std::string value = trim(t.substr(eq + 1));
    if (key.empty()) throw ConfigError("config line has empty key: " + trim(line));
    out[key] = value;
    return true;
}

KvMap load_kv(const std::filesystem::path& path) {
    std::ifstream is(path);
    if (!is) throw ConfigError("cannot open config file " + path.string());
    KvMap out;
    std::string line;
    while (std::getline(is, line)) parse_kv_line(line, out);
    return out;
}

void save_kv(const std::filesystem::path& path, const KvMap& kv) {
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw ConfigError("cannot write config file " + path.string());
    for (const auto& [k, v] : kv) os << k << " = " << v << "\n";
}

const std::string& kv_require(const KvMap& kv, const std::string& key) {
    auto it = kv.find(key);
    if (it == kv.end()) throw ConfigError("missing config key: " + key);
    return it->second;
}

double kv_double(const KvMap& kv, const std::string& key) {
    const std::string& s = kv_require(kv, key);
    char* end = nullptr;
    double v = std::strtod(s.c_str(), &end);
    if (end == s.c_str() || *end != '\0') {
        throw ConfigError("config key " + key + " is not a number: '" + s + "'");
    }
    return v;
}

long long kv_int(const KvMap& kv, const std::string& key) {
    const std::string& s = kv_require(kv, key);
    char* end = nullptr;
    long long v = std::strtoll(s.c_str(), &end, 10);
    if (end == s.c_str() || *end != '\0') {
        throw ConfigError("config key " + key + " is not an integer: '" + s + "'");
    }
    return v;
}

bool kv_bool(const KvMap& kv, const std::string& key) {
    const std::string& s = kv_require(kv, key);
    if (s == "true" || s == "1" || s == "yes" || s == "on") return true;
    if (s == "false" || s == "0" || s == "no" || s == "off") return false;
    throw ConfigError("config key " + key + " is not a boolean: '" + s + "'");
}

}  // namespace aukit
