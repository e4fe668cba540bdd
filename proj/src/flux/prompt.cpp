// Copyright (c) 2026 aukit contributors
// SPDX-License-Identifier: Apache-2.0

#include "aukit/flux/prompt.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <sstream>

#include <json.hpp>

namespace aukit::flux {

namespace {

bool ident_char(char c) {
    return std::isalnum(static_cast<unsigned char>(c)) || c == '_';
}

std::string render_mustache(const std::string& id, const std::string& text,
                            const std::map<std::string, std::string>& vars) {
    std::string out;
    out.reserve(text.size());
    std::size_t i = 0;
    while (i < text.size()) {
        if (text[i] == '{' && i + 1 < text.size() && text[i + 1] == '{') {
            std::size_t name_start = i + 2;
            std::size_t j = name_start;
            while (j < text.size() && ident_char(text[j])) ++j;
            if (j > name_start && j + 1 < text.size() && text[j] == '}' && text[j + 1] == '}') {
                std::string name = text.substr(name_start, j - name_start);
                auto it = vars.find(name);
                if (it == vars.end()) {
                    throw ConfigError("template " + id + ": unresolved placeholder {{" + name +
                                      "}}");
                }
                out += it->second;
                i = j + 2;
                continue;
            }
            // "{{" not forming a placeholder (e.g. part of literal JSON
            // braces) passes through untouched.
        }
        out += text[i++];
    }
    return out;
}

std::string render_pyformat(const std::string& id, const std::string& text,
                            const std::map<std::string, std::string>& vars) {
    std::string out;
    out.reserve(text.size());
    std::size_t i = 0;
    while (i < text.size()) {
        char c = text[i];
        if (c == '{') {
            if (i + 1 < text.size() && text[i + 1] == '{') {
                out += '{';
                i += 2;
                continue;
            }
            std::size_t name_start = i + 1;
            std::size_t j = name_start;
            while (j < text.size() && ident_char(text[j])) ++j;
            if (j == name_start || j >= text.size() || text[j] != '}') {
                throw ConfigError("template " + id + ": malformed '{' at offset " +
                                  std::to_string(i));
            }
            std::string name = text.substr(name_start, j - name_start);
            auto it = vars.find(name);
            if (it == vars.end()) {
                throw ConfigError("template " + id + ": unresolved placeholder {" + name + "}");
            }
            out += it->second;
            i = j + 1;
            continue;
        }
        if (c == '}') {
            if (i + 1 < text.size() && text[i + 1] == '}') {
                out += '}';
                i += 2;
                continue;
            }
            throw ConfigError("template " + id + ": stray '}' at offset " + std::to_string(i));
        }
        out += c;
        ++i;
    }
    return out;
}

std::string trimmed(const std::string& s) {
    std::size_t b = s.find_first_not_of(" \t");
    if (b == std::string::npos) return "";
    std::size_t e = s.find_last_not_of(" \t");
    return s.substr(b, e - b + 1);
}

}  // namespace

std::string PromptTemplate::render(const std::map<std::string, std::string>& vars) const {
    return mode == RenderMode::Mustache ? render_mustache(id, text, vars)
                                        : render_pyformat(id, text, vars);
}

PromptTemplate PromptTemplate::from_file(const std::filesystem::path& path, RenderMode mode,
                                         std::string id) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw ConfigError("cannot open template " + path.string());
    std::ostringstream ss;
    ss << is.rdbuf();
    return PromptTemplate{std::move(id), mode, ss.str()};
}

std::string TaxonomyPath::joined() const {
    std::string s = l0 + " > " + l1 + " > " + l2;
    if (l3) s += " > " + *l3;
    return s;
}

std::string TaxonomyPath::hierarchy_block() const {
    std::string s = "- L0: " + l0 + "\n- L1: " + l1 + "\n- L2: " + l2;
    if (l3) s += "\n- L3: " + *l3;
    return s;
}

Taxonomy Taxonomy::load(const std::filesystem::path& path) {
    std::ifstream is(path);
    if (!is) throw ConfigError("cannot open taxonomy " + path.string());
    nlohmann::json j;
    try {
        is >> j;
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError("taxonomy " + path.string() + ": " + e.what());
    }
    if (!j.contains("taxonomy") || !j["taxonomy"].is_array()) {
        throw ConfigError("taxonomy file needs a \"taxonomy\" array");
    }
    Taxonomy t;
    for (const auto& row : j["taxonomy"]) {
        TaxonomyPath p;
        try {
            p.l0 = row.at("l0").get<std::string>();
            p.l1 = row.at("l1").get<std::string>();
            p.l2 = row.at("l2").get<std::string>();
            std::vector<std::string> l3s;
            if (row.contains("l3")) l3s = row["l3"].get<std::vector<std::string>>();
            t.l3_by_l2_[p.l0 + ">" + p.l1 + ">" + p.l2] = l3s;
        } catch (const nlohmann::json::exception& e) {
            throw ConfigError("taxonomy row: " + std::string(e.what()));
        }
        t.paths_.push_back(std::move(p));
    }
    if (t.paths_.empty()) throw ConfigError("taxonomy is empty");
    return t;
}

TaxonomyPath Taxonomy::resolve(const std::string& path_text) const {
    std::vector<std::string> parts;
    std::string cur;
    std::istringstream ss(path_text);
    while (std::getline(ss, cur, '>')) parts.push_back(trimmed(cur));
    if (parts.size() < 3 || parts.size() > 4) {
        throw DataError("taxonomy path '" + path_text + "' must have 3 or 4 levels");
    }
    std::string key = parts[0] + ">" + parts[1] + ">" + parts[2];
    auto it = l3_by_l2_.find(key);
    if (it == l3_by_l2_.end()) {
        throw DataError("taxonomy path '" + path_text + "' not in the hierarchy");
    }
    TaxonomyPath p;
    p.l0 = parts[0];
    p.l1 = parts[1];
    p.l2 = parts[2];
    if (parts.size() == 4) {
        const auto& opts = it->second;
        if (std::find(opts.begin(), opts.end(), parts[3]) == opts.end()) {
            throw DataError("taxonomy leaf '" + parts[3] + "' not listed under " + key);
        }
        p.l3 = parts[3];
    }
    return p;
}

}  // namespace aukit::flux
