// Copyright (c) 2026 aukit contributors
// SPDX-License-Identifier: Apache-2.0

#include "aukit/flux/pipeline.hpp"

#include <algorithm>
#include <array>
#include <atomic>
#include <cctype>
#include <fstream>
#include <mutex>
#include <sstream>
#include <thread>

#include <json.hpp>

namespace aukit::flux {

using gateway::AudioAttachment;
using gateway::ChatRequest;
using gateway::Role;
using nlohmann::json;

namespace {

constexpr std::array<const char*, 7> kStateNames = {
    "Ingested", "Captioned", "QueriesGenerated", "Answered", "Judged", "Kept", "Discarded",
};

/// Kept and Discarded are terminal peers at the same rank.
int state_rank(FluxState s) {
    switch (s) {
        case FluxState::Ingested: return 0;
        case FluxState::Captioned: return 1;
        case FluxState::QueriesGenerated: return 2;
        case FluxState::Answered: return 3;
        case FluxState::Judged: return 4;
        case FluxState::Kept:
        case FluxState::Discarded: return 5;
    }
    throw ContractError("unknown flux state");
}

std::string base64_encode(const std::string& bytes) {
    static const char* tbl = "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";
    std::string out;
    out.reserve((bytes.size() + 2) / 3 * 4);
    std::size_t i = 0;
    while (i + 2 < bytes.size()) {
        unsigned v = (static_cast<unsigned char>(bytes[i]) << 16) |
                     (static_cast<unsigned char>(bytes[i + 1]) << 8) |
                     static_cast<unsigned char>(bytes[i + 2]);
        out += tbl[(v >> 18) & 63];
        out += tbl[(v >> 12) & 63];
        out += tbl[(v >> 6) & 63];
        out += tbl[v & 63];
        i += 3;
    }
    if (i < bytes.size()) {
        unsigned v = static_cast<unsigned char>(bytes[i]) << 16;
        bool two = i + 1 < bytes.size();
        if (two) v |= static_cast<unsigned char>(bytes[i + 1]) << 8;
        out += tbl[(v >> 18) & 63];
        out += tbl[(v >> 12) & 63];
        out += two ? tbl[(v >> 6) & 63] : '=';
        out += '=';
    }
    return out;
}

const gateway::ModelEndpoint& endpoint_for(const FluxContext& ctx, Role role) {
    auto it = ctx.endpoints.find(role);
    if (it == ctx.endpoints.end()) {
        throw ConfigError(std::string("no endpoint configured for role ") +
                          gateway::role_name(role));
    }
    return it->second;
}

AudioAttachment audio_attachment(const FluxRecord& rec) {
    if (!rec.audio_base64.empty()) return {rec.audio_media_type, rec.audio_base64};
    if (!rec.audio_ref.empty() && std::filesystem::exists(rec.audio_ref)) {
        std::ifstream is(rec.audio_ref, std::ios::binary);
        std::ostringstream ss;
        ss << is.rdbuf();
        return {rec.audio_media_type, base64_encode(ss.str())};
    }
    throw DataError("record " + rec.id + " has no audio payload");
}

ChatRequest user_message(std::string text, std::optional<AudioAttachment> audio = std::nullopt) {
    ChatRequest req;
    req.messages.push_back({"user", std::move(text), std::move(audio)});
    return req;
}

json verdict_to_json(const JudgeVerdict& v) {
    return json{{"consensus", v.consensus},
                {"consistency_with_caption", consistency_name(v.consistency)},
                {"winner", winner_name(v.winner)},
                {"reasoning", v.reasoning},
                {"final_action", final_action_name(v.final_action)}};
}

Consistency consistency_from(const std::string& s) {
    if (s == "STRONG_MATCH") return Consistency::StrongMatch;
    if (s == "WEAK_MATCH") return Consistency::WeakMatch;
    if (s == "CONFLICT") return Consistency::Conflict;
    throw SchemaError("verdict: invalid consistency_with_caption '" + s + "'");
}

Winner winner_from(const std::string& s) {
    if (s == "MODEL_A") return Winner::ModelA;
    if (s == "MODEL_B") return Winner::ModelB;
    if (s == "TIE") return Winner::Tie;
    if (s == "NONE") return Winner::None;
    throw SchemaError("verdict: invalid winner '" + s + "'");
}

FinalAction final_action_from(const std::string& s) {
    if (s == "KEEP_USING_WINNER") return FinalAction::KeepUsingWinner;
    if (s == "DISCARD") return FinalAction::Discard;
    throw SchemaError("verdict: invalid final_action '" + s + "'");
}

JudgeVerdict verdict_from_json(const json& j) {
    JudgeVerdict v;
    v.consensus = j.at("consensus").get<bool>();
    v.consistency = consistency_from(j.at("consistency_with_caption").get<std::string>());
    v.winner = winner_from(j.at("winner").get<std::string>());
    v.reasoning = j.at("reasoning").get<std::string>();
    v.final_action = final_action_from(j.at("final_action").get<std::string>());
    return v;
}

json trace_to_json(const AnswerTrace& t) {
    return json{{"cot", t.cot}, {"answer", t.answer}, {"valid", t.valid}};
}

AnswerTrace trace_from_json(const json& j) {
    AnswerTrace t;
    t.cot = j.at("cot").get<std::string>();
    t.answer = j.at("answer").get<std::string>();
    t.valid = j.at("valid").get<bool>();
    return t;
}

void require_exact_keys(const json& j, const std::vector<std::string>& keys,
                        const char* what) {
    for (const auto& k : keys) {
        if (!j.contains(k)) {
            throw SchemaError(std::string(what) + ": missing key '" + k + "'");
        }
    }
    for (const auto& [k, v] : j.items()) {
        (void)v;
        if (std::find(keys.begin(), keys.end(), k) == keys.end()) {
            throw SchemaError(std::string(what) + ": unexpected key '" + k + "'");
        }
    }
}

std::string trim(const std::string& s) {
    std::size_t b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    std::size_t e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

bool is_option_char(char c) { return c >= 'A' && c <= 'D'; }

/// The tolerant per-line matcher behind split_trace.
std::optional<char> extract_option_letter(const std::string& raw) {
    std::string line = trim(raw);
    if (line.empty()) return std::nullopt;

    auto decorated = [](char c) {
        return c == '(' || c == ')' || c == '*' || c == '"' || c == '\'' || c == '.' ||
               c == '[' || c == ']' || c == ':' || c == ' ' || c == '\t';
    };

    // Standalone letter, possibly decorated: "B", "(b)", "**C.**".
    {
        std::size_t b = 0, e = line.size();
        while (b < e && decorated(line[b])) ++b;
        while (e > b && decorated(line[e - 1])) --e;
        if (e - b == 1) {
            char c = static_cast<char>(std::toupper(static_cast<unsigned char>(line[b])));
            if (is_option_char(c)) return c;
        }
    }

    // "... answer ... X": last occurrence of the keyword wins.
    {
        std::string lower(line);
        std::transform(lower.begin(), lower.end(), lower.begin(),
                       [](unsigned char c) { return std::tolower(c); });
        auto pos = lower.rfind("answer");
        if (pos != std::string::npos) {
            std::size_t i = pos + 6;
            while (i < line.size() && decorated(line[i])) ++i;
            if (i + 1 < line.size() && lower.compare(i, 2, "is") == 0) {
                i += 2;
                while (i < line.size() && decorated(line[i])) ++i;
            }
            if (i < line.size()) {
                char c = static_cast<char>(std::toupper(static_cast<unsigned char>(line[i])));
                bool boundary = i + 1 >= line.size() ||
                                !std::isalnum(static_cast<unsigned char>(line[i + 1]));
                if (is_option_char(c) && boundary) return c;
            }
        }
    }

    // Option-line shape: "C. the chosen text".
    if (line.size() >= 2 && line[1] == '.') {
        char c = static_cast<char>(std::toupper(static_cast<unsigned char>(line[0])));
        if (is_option_char(c)) return c;
    }
    return std::nullopt;
}

std::vector<std::string> split_lines(const std::string& text) {
    std::vector<std::string> lines;
    std::string cur;
    std::istringstream ss(text);
    while (std::getline(ss, cur)) lines.push_back(cur);
    return lines;
}

}  // namespace

const char* state_name(FluxState s) { return kStateNames[static_cast<std::size_t>(s)]; }

FluxState state_from_name(const std::string& name) {
    for (std::size_t i = 0; i < kStateNames.size(); ++i) {
        if (name == kStateNames[i]) return static_cast<FluxState>(i);
    }
    throw DataError("unknown flux state: '" + name + "'");
}

bool state_precedes(FluxState a, FluxState b) { return state_rank(a) < state_rank(b); }

const char* consistency_name(Consistency c) {
    switch (c) {
        case Consistency::StrongMatch: return "STRONG_MATCH";
        case Consistency::WeakMatch: return "WEAK_MATCH";
        case Consistency::Conflict: return "CONFLICT";
    }
    throw ContractError("unknown consistency");
}

const char* winner_name(Winner w) {
    switch (w) {
        case Winner::ModelA: return "MODEL_A";
        case Winner::ModelB: return "MODEL_B";
        case Winner::Tie: return "TIE";
        case Winner::None: return "NONE";
    }
    throw ContractError("unknown winner");
}

const char* final_action_name(FinalAction a) {
    switch (a) {
        case FinalAction::KeepUsingWinner: return "KEEP_USING_WINNER";
        case FinalAction::Discard: return "DISCARD";
    }
    throw ContractError("unknown final action");
}

std::string record_to_json(const FluxRecord& rec) {
    json j;
    j["id"] = rec.id;
    j["audio_ref"] = rec.audio_ref;
    j["audio_base64"] = rec.audio_base64;
    j["audio_media_type"] = rec.audio_media_type;
    j["caption"] = rec.caption;
    j["taxonomy_path"] = rec.taxonomy_path;
    j["questions"] = rec.questions;
    j["judged_question"] = rec.judged_question;
    j["trace_a"] = trace_to_json(rec.trace_a);
    j["trace_b"] = trace_to_json(rec.trace_b);
    j["verdict"] = rec.verdict ? verdict_to_json(*rec.verdict) : json(nullptr);
    j["winner_model"] = rec.winner_model;
    j["discard_reason"] = rec.discard_reason;
    j["state"] = state_name(rec.state);
    return j.dump();
}

FluxRecord record_from_json(const std::string& line) {
    json j;
    try {
        j = json::parse(line);
    } catch (const json::exception& e) {
        throw DataError(std::string("bad record line: ") + e.what());
    }
    FluxRecord rec;
    try {
        rec.id = j.at("id").get<std::string>();
        rec.audio_ref = j.at("audio_ref").get<std::string>();
        rec.audio_base64 = j.at("audio_base64").get<std::string>();
        rec.audio_media_type = j.at("audio_media_type").get<std::string>();
        rec.caption = j.at("caption").get<std::string>();
        rec.taxonomy_path = j.at("taxonomy_path").get<std::string>();
        rec.questions = j.at("questions").get<std::vector<std::string>>();
        rec.judged_question = j.at("judged_question").get<std::size_t>();
        rec.trace_a = trace_from_json(j.at("trace_a"));
        rec.trace_b = trace_from_json(j.at("trace_b"));
        if (!j.at("verdict").is_null()) rec.verdict = verdict_from_json(j.at("verdict"));
        rec.winner_model = j.at("winner_model").get<std::string>();
        rec.discard_reason = j.at("discard_reason").get<std::string>();
        rec.state = state_from_name(j.at("state").get<std::string>());
    } catch (const json::exception& e) {
        throw DataError(std::string("bad record fields: ") + e.what());
    }
    return rec;
}

bool question_is_well_formed(const std::string& q) {
    auto lines = split_lines(q);
    if (lines.size() != 5) return false;
    if (trim(lines[0]).empty()) return false;
    const char* prefixes[] = {"A.", "B.", "C.", "D."};
    for (int i = 0; i < 4; ++i) {
        if (lines[i + 1].rfind(prefixes[i], 0) != 0) return false;
    }
    return true;
}

GenerationResult parse_generation(const std::string& reply) {
    json j;
    try {
        j = json::parse(reply);
    } catch (const json::exception& e) {
        throw SchemaError(std::string("generation: invalid JSON: ") + e.what());
    }
    if (!j.is_object()) throw SchemaError("generation: reply is not a JSON object");
    require_exact_keys(j, {"is_success", "questions"}, "generation");
    if (!j["is_success"].is_boolean()) throw SchemaError("generation: is_success must be boolean");
    if (!j["questions"].is_array()) throw SchemaError("generation: questions must be an array");

    GenerationResult r;
    r.is_success = j["is_success"].get<bool>();
    if (!r.is_success) {
        if (!j["questions"].empty()) {
            throw SchemaError("generation: mismatch result must carry no questions");
        }
        return r;
    }
    if (j["questions"].size() != 5) {
        throw SchemaError("generation: expected 5 questions, got " +
                          std::to_string(j["questions"].size()));
    }
    for (const auto& q : j["questions"]) {
        if (!q.is_string()) throw SchemaError("generation: question is not a string");
        std::string s = q.get<std::string>();
        if (!question_is_well_formed(s)) {
            throw SchemaError("generation: question lacks the question+A.-D. line structure");
        }
        r.questions.push_back(std::move(s));
    }
    return r;
}

JudgeVerdict parse_verdict(const std::string& reply) {
    json j;
    try {
        j = json::parse(reply);
    } catch (const json::exception& e) {
        throw SchemaError(std::string("verdict: invalid JSON: ") + e.what());
    }
    if (!j.is_object()) throw SchemaError("verdict: reply is not a JSON object");
    require_exact_keys(
        j, {"consensus", "consistency_with_caption", "winner", "reasoning", "final_action"},
        "verdict");
    if (!j["consensus"].is_boolean()) throw SchemaError("verdict: consensus must be boolean");
    for (const char* k : {"consistency_with_caption", "winner", "reasoning", "final_action"}) {
        if (!j[k].is_string()) {
            throw SchemaError(std::string("verdict: ") + k + " must be a string");
        }
    }
    JudgeVerdict v = verdict_from_json(j);
    if (v.final_action == FinalAction::KeepUsingWinner && v.winner == Winner::None) {
        throw SchemaError("verdict: KEEP_USING_WINNER requires a concrete winner");
    }
    return v;
}

std::optional<AnswerTrace> split_trace(const std::string& reply) {
    auto lines = split_lines(reply);
    for (std::size_t i = lines.size(); i-- > 0;) {
        auto letter = extract_option_letter(lines[i]);
        if (!letter) continue;
        AnswerTrace t;
        t.answer = std::string(1, *letter);
        std::string cot;
        for (std::size_t k = 0; k < i; ++k) {
            if (k) cot += '\n';
            cot += lines[k];
        }
        while (!cot.empty() && (cot.back() == '\n' || cot.back() == ' ')) cot.pop_back();
        t.cot = cot;
        t.valid = true;
        return t;
    }
    return std::nullopt;
}

void FluxContext::validate() const {
    if (!gw) throw ConfigError("flux context has no gateway");
    if (query_tpl.text.empty() || judge_tpl.text.empty() || caption_tpl.text.empty()) {
        throw ConfigError("flux context templates are not loaded");
    }
    if (taxonomy.paths().empty()) throw ConfigError("flux context taxonomy is empty");
}

FluxContext load_flux_assets(const std::filesystem::path& data_dir) {
    FluxContext ctx;
    ctx.caption_tpl =
        PromptTemplate::from_file(data_dir / "prompts" / "dense_caption.txt",
                                  RenderMode::Mustache, "dense_caption");
    ctx.query_tpl = PromptTemplate::from_file(data_dir / "prompts" / "query_choices.txt",
                                              RenderMode::Mustache, "query_choices");
    ctx.judge_tpl = PromptTemplate::from_file(data_dir / "prompts" / "answer_verification.txt",
                                              RenderMode::PyFormat, "answer_verification");
    ctx.taxonomy = Taxonomy::load(data_dir / "taxonomy.json");

    auto slurp = [](const std::filesystem::path& p) {
        std::ifstream is(p, std::ios::binary);
        if (!is) throw ConfigError("cannot open " + p.string());
        std::ostringstream ss;
        ss << is.rdbuf();
        return ss.str();
    };
    ctx.few_shots = slurp(data_dir / "few_shots.txt");
    ctx.judge_rules = slurp(data_dir / "judge_rules" / "default.txt");
    return ctx;
}

void step1_caption(FluxRecord& rec, FluxContext& ctx) {
    ctx.validate();
    if (rec.state != FluxState::Ingested) {
        throw ContractError("captioning expects an Ingested record, got " +
                            std::string(state_name(rec.state)));
    }
    ctx.taxonomy.resolve(rec.taxonomy_path);  // fail fast on a bad path
    if (rec.caption.empty()) {
        auto req = user_message(ctx.caption_tpl.render({}), audio_attachment(rec));
        rec.caption = ctx.gw->complete(endpoint_for(ctx, Role::Captioner), req).text;
    }
    rec.state = FluxState::Captioned;
}

GenerationResult step1_generate_queries(FluxRecord& rec, FluxContext& ctx) {
    ctx.validate();
    if (rec.state == FluxState::Ingested) step1_caption(rec, ctx);
    if (rec.state != FluxState::Captioned) {
        throw ContractError("query generation expects a Captioned record, got " +
                            std::string(state_name(rec.state)));
    }
    TaxonomyPath path = ctx.taxonomy.resolve(rec.taxonomy_path);
    std::string prompt = ctx.query_tpl.render({{"AUDIO_CAPTION", rec.caption},
                                               {"HIERARCHY_BLOCK", path.hierarchy_block()},
                                               {"FEW_SHOT_CONTENT", ctx.few_shots}});
    auto req = user_message(prompt);

    for (std::size_t attempt = 0; attempt <= ctx.parse_retries; ++attempt) {
        auto resp = ctx.gw->complete(endpoint_for(ctx, Role::Generator), req);
        GenerationResult g;
        try {
            g = parse_generation(resp.text);
        } catch (const SchemaError&) {
            continue;  // re-prompt with the identical rendered template
        }
        if (!g.is_success) {
            rec.state = FluxState::Discarded;
            rec.discard_reason = "category mismatch";
            return g;
        }
        rec.questions = g.questions;
        rec.state = FluxState::QueriesGenerated;
        return g;
    }
    rec.state = FluxState::Discarded;
    rec.discard_reason = "schema failure";
    return GenerationResult{};
}

void step2_answer(FluxRecord& rec, FluxContext& ctx) {
    ctx.validate();
    if (rec.state != FluxState::QueriesGenerated) {
        throw ContractError("answering expects QueriesGenerated, got " +
                            std::string(state_name(rec.state)));
    }
    const auto& ep_a = endpoint_for(ctx, Role::AnswererA);
    const auto& ep_b = endpoint_for(ctx, Role::AnswererB);
    auto audio = audio_attachment(rec);

    bool chosen = false;
    for (std::size_t qi = 0; qi < rec.questions.size(); ++qi) {
        auto req = user_message(rec.questions[qi], audio);
        auto reply_a = ctx.gw->complete(ep_a, req).text;
        auto reply_b = ctx.gw->complete(ep_b, req).text;

        auto ta = split_trace(reply_a);
        auto tb = split_trace(reply_b);
        // An unextractable reply keeps its raw text as the trace body.
        AnswerTrace a = ta.value_or(AnswerTrace{reply_a, "", false});
        AnswerTrace b = tb.value_or(AnswerTrace{reply_b, "", false});
        if (!chosen && (a.valid || b.valid)) {
            rec.judged_question = qi;
            rec.trace_a = a;
            rec.trace_b = b;
            chosen = true;
        }
    }
    if (!chosen) {
        rec.state = FluxState::Discarded;
        rec.discard_reason = "no valid answers";
        return;
    }
    rec.state = FluxState::Answered;
}

JudgeVerdict step3_judge(FluxRecord& rec, FluxContext& ctx) {
    ctx.validate();
    if (rec.state != FluxState::Answered) {
        throw ContractError("judging expects Answered, got " +
                            std::string(state_name(rec.state)));
    }
    if (!rec.trace_a.valid && !rec.trace_b.valid) {
        throw ContractError("judging needs at least one valid trace");
    }
    TaxonomyPath path = ctx.taxonomy.resolve(rec.taxonomy_path);
    std::string l2 = path.l3 ? path.l2 + " > " + *path.l3 : path.l2;
    std::string prompt = ctx.judge_tpl.render({
        {"L0", path.l0},
        {"L1", path.l1},
        {"L2", l2},
        {"caption", rec.caption},
        {"query", rec.questions.at(rec.judged_question)},
        {"model_a_cot", rec.trace_a.cot},
        {"model_a_response", rec.trace_a.valid ? rec.trace_a.answer : "INVALID"},
        {"model_b_cot", rec.trace_b.cot},
        {"model_b_response", rec.trace_b.valid ? rec.trace_b.answer : "INVALID"},
        {"INJECTION_RULES", ctx.judge_rules},
    });
    auto req = user_message(prompt);

    for (std::size_t attempt = 0; attempt <= ctx.parse_retries; ++attempt) {
        auto resp = ctx.gw->complete(endpoint_for(ctx, Role::Judge), req);
        JudgeVerdict v;
        try {
            v = parse_verdict(resp.text);
        } catch (const SchemaError&) {
            continue;
        }
        rec.verdict = v;
        rec.state = FluxState::Judged;
        return v;
    }
    rec.state = FluxState::Discarded;
    rec.discard_reason = "judge schema failure";
    return JudgeVerdict{};
}

bool keep_verdict(const JudgeVerdict& v, bool strict) {
    if (v.final_action != FinalAction::KeepUsingWinner) return false;
    if (v.consistency == Consistency::Conflict) return false;
    if (strict && v.consistency != Consistency::StrongMatch) return false;
    return true;
}

void apply_filter(FluxRecord& rec, bool strict) {
    if (rec.state != FluxState::Judged || !rec.verdict) {
        throw ContractError("filtering expects a Judged record with a verdict");
    }
    const JudgeVerdict& v = *rec.verdict;
    if (keep_verdict(v, strict)) {
        // TIE resolves to Model A by convention; NONE cannot reach here.
        rec.winner_model = v.winner == Winner::ModelB ? "MODEL_B" : "MODEL_A";
        rec.state = FluxState::Kept;
        return;
    }
    rec.state = FluxState::Discarded;
    rec.discard_reason = "filtered";
}

namespace {

std::filesystem::path stage_file(const std::filesystem::path& dir, FluxState s) {
    switch (s) {
        case FluxState::Captioned: return dir / "captioned.jsonl";
        case FluxState::QueriesGenerated: return dir / "queries_generated.jsonl";
        case FluxState::Answered: return dir / "answered.jsonl";
        case FluxState::Judged: return dir / "judged.jsonl";
        case FluxState::Kept: return dir / "kept.jsonl";
        case FluxState::Discarded: return dir / "discarded.jsonl";
        case FluxState::Ingested: break;
    }
    throw ContractError("no stage file for pre-pipeline records");
}

void append_line(const std::filesystem::path& path, const std::string& line) {
    std::ofstream os(path, std::ios::app | std::ios::binary);
    if (!os) throw DataError("cannot append to " + path.string());
    os << line << "\n";
    os.flush();
}

}  // namespace

FluxStore::FluxStore(std::filesystem::path dir) : dir_(std::move(dir)) {
    std::filesystem::create_directories(dir_);
}

void FluxStore::persist(const FluxRecord& rec) {
    if (rec.state == FluxState::Ingested) {
        throw ContractError("refusing to persist a record before its first transition");
    }
    // Snapshot first, index second: a crash between the two leaves a
    // resumable store (the snapshot is the authority).
    append_line(stage_file(dir_, rec.state), record_to_json(rec));
    append_line(dir_ / "index.jsonl",
                json{{"id", rec.id}, {"state", state_name(rec.state)}}.dump());
}

std::map<std::string, FluxRecord> FluxStore::load_latest() const {
    std::map<std::string, FluxRecord> latest;
    for (FluxState s : {FluxState::Captioned, FluxState::QueriesGenerated, FluxState::Answered,
                        FluxState::Judged, FluxState::Kept, FluxState::Discarded}) {
        auto path = stage_file(dir_, s);
        std::ifstream is(path, std::ios::binary);
        if (!is) continue;
        std::string line;
        while (std::getline(is, line)) {
            if (line.empty()) continue;
            FluxRecord rec = record_from_json(line);
            auto it = latest.find(rec.id);
            if (it == latest.end() || !state_precedes(rec.state, it->second.state)) {
                latest[rec.id] = std::move(rec);
            }
        }
    }
    return latest;
}

std::size_t PipelineSummary::discarded() const {
    std::size_t n = 0;
    for (const auto& [reason, c] : discarded_by_reason) {
        (void)reason;
        n += c;
    }
    return n;
}

bool PipelineSummary::reconciles() const { return kept + discarded() + parked == input; }

PipelineSummary run_pipeline(const std::vector<FluxRecord>& corpus, FluxContext& ctx,
                             const PipelineConfig& cfg) {
    ctx.validate();
    if (cfg.steps.empty()) throw ConfigError("pipeline needs at least one step");
    for (int s : cfg.steps) {
        if (s < 1 || s > 3) throw ConfigError("pipeline steps must be in {1,2,3}");
    }
    auto wants = [&](int s) {
        return std::find(cfg.steps.begin(), cfg.steps.end(), s) != cfg.steps.end();
    };
    // Fail fast on missing endpoints instead of mid-run.
    if (wants(1)) {
        endpoint_for(ctx, Role::Captioner);
        endpoint_for(ctx, Role::Generator);
    }
    if (wants(2)) {
        endpoint_for(ctx, Role::AnswererA);
        endpoint_for(ctx, Role::AnswererB);
    }
    if (wants(3)) endpoint_for(ctx, Role::Judge);

    ctx.parse_retries = cfg.parse_retries;
    ctx.strict_match = cfg.strict_match;

    FluxStore store(cfg.out_dir);
    auto resume = store.load_latest();

    std::vector<FluxRecord> work;
    work.reserve(corpus.size());
    {
        std::map<std::string, bool> seen;
        for (const auto& rec : corpus) {
            if (rec.id.empty()) throw DataError("pipeline record with empty id");
            if (seen.count(rec.id)) throw DataError("duplicate record id " + rec.id);
            seen[rec.id] = true;
            auto it = resume.find(rec.id);
            work.push_back(it != resume.end() ? it->second : rec);
        }
    }

    std::mutex store_mu;
    std::atomic<std::size_t> transitions{0};
    // Reserves one transition slot; false once the stop budget is spent.
    auto may_transition = [&]() {
        if (!cfg.stop_after_transitions) {
            transitions.fetch_add(1);
            return true;
        }
        std::size_t before = transitions.fetch_add(1);
        return before < *cfg.stop_after_transitions;
    };
    auto persist = [&](const FluxRecord& rec) {
        std::lock_guard<std::mutex> lock(store_mu);
        store.persist(rec);
    };

    std::atomic<std::size_t> cursor{0};
    std::exception_ptr fatal;
    std::mutex fatal_mu;
    auto worker = [&]() {
        while (true) {
            {
                std::lock_guard<std::mutex> lock(fatal_mu);
                if (fatal) return;
            }
            std::size_t i = cursor.fetch_add(1);
            if (i >= work.size()) return;
            FluxRecord& rec = work[i];
            try {
                if (rec.state == FluxState::Ingested && wants(1)) {
                    if (!may_transition()) continue;
                    step1_caption(rec, ctx);
                    persist(rec);
                }
                if (rec.state == FluxState::Captioned && wants(1)) {
                    if (!may_transition()) continue;
                    step1_generate_queries(rec, ctx);
                    persist(rec);
                }
                if (rec.state == FluxState::QueriesGenerated && wants(2)) {
                    if (!may_transition()) continue;
                    step2_answer(rec, ctx);
                    persist(rec);
                }
                if (rec.state == FluxState::Answered && wants(3)) {
                    if (!may_transition()) continue;
                    step3_judge(rec, ctx);
                    persist(rec);
                }
                if (rec.state == FluxState::Judged && wants(3)) {
                    if (!may_transition()) continue;
                    apply_filter(rec, ctx.strict_match);
                    persist(rec);
                }
            } catch (const TransportError&) {
                // Parked: the record keeps its last persisted state and a
                // later run retries it.
            } catch (const AuthError&) {
                // Parked likewise.
            } catch (const MalformedResponseError&) {
                // Broken HTTP envelope; parked like a transport failure.
            } catch (...) {
                // Config/data/contract problems abort the run.
                std::lock_guard<std::mutex> lock(fatal_mu);
                if (!fatal) fatal = std::current_exception();
                return;
            }
        }
    };

    std::size_t n_threads = std::max<std::size_t>(1, std::min(cfg.parallelism, work.size()));
    if (n_threads <= 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        pool.reserve(n_threads);
        for (std::size_t t = 0; t < n_threads; ++t) pool.emplace_back(worker);
        for (auto& th : pool) th.join();
    }
    if (fatal) std::rethrow_exception(fatal);

    PipelineSummary sum;
    sum.input = work.size();
    for (const auto& rec : work) {
        if (rec.state == FluxState::Kept) {
            ++sum.kept;
        } else if (rec.state == FluxState::Discarded) {
            ++sum.discarded_by_reason[rec.discard_reason];
        } else {
            ++sum.parked;
        }
    }
    return sum;
}

}  // namespace aukit::flux
