// Copyright (c) 2026 aukit contributors
// SPDX-License-Identifier: Apache-2.0

#include "aukit/eval/harness.hpp"

#include <algorithm>
#include <atomic>
#include <fstream>
#include <sstream>
#include <thread>

#include <json.hpp>

#include "aukit/flux/pipeline.hpp"

namespace aukit::eval {

using nlohmann::json;

void EvalItem::validate() const {
    if (id.empty()) throw DataError("eval item with empty id");
    if (gold < 'A' || gold > 'D') {
        throw DataError("eval item " + id + ": gold must be A..D, got '" +
                        std::string(1, gold) + "'");
    }
    if (question.empty()) throw DataError("eval item " + id + ": empty question");
    for (const auto& c : choices) {
        if (c.empty()) throw DataError("eval item " + id + ": empty choice");
    }
}

std::string EvalItem::folded_question() const {
    static const char* prefixes[] = {"A. ", "B. ", "C. ", "D. "};
    std::string out = question;
    for (int i = 0; i < 4; ++i) {
        out += "\n";
        out += prefixes[i];
        out += choices[i];
    }
    return out;
}

std::vector<EvalItem> load_items(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw ConfigError("cannot open items file " + path.string());
    std::vector<EvalItem> items;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        if (line.empty()) continue;
        json j;
        try {
            j = json::parse(line);
        } catch (const json::exception& e) {
            throw DataError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
        }
        EvalItem item;
        try {
            item.id = j.at("id").get<std::string>();
            item.audio_ref = j.value("audio", "");
            item.question = j.at("question").get<std::string>();
            auto ch = j.at("choices").get<std::vector<std::string>>();
            if (ch.size() != 4) {
                throw DataError("eval item " + item.id + ": choices must have length 4");
            }
            std::copy(ch.begin(), ch.end(), item.choices.begin());
            auto gold = j.at("gold").get<std::string>();
            item.gold = gold.size() == 1 ? gold[0] : '?';
            if (j.contains("transcript")) item.transcript = j["transcript"].get<std::string>();
            if (j.contains("category")) item.category = j["category"].get<std::string>();
            if (j.contains("audio_base64"))
                item.audio_base64 = j["audio_base64"].get<std::string>();
            if (j.contains("media_type"))
                item.audio_media_type = j["media_type"].get<std::string>();
        } catch (const json::exception& e) {
            throw DataError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
        }
        item.validate();
        items.push_back(std::move(item));
    }
    return items;
}

void save_items(const std::filesystem::path& path, const std::vector<EvalItem>& items) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw DataError("cannot write items file " + path.string());
    for (const auto& item : items) {
        json j;
        j["id"] = item.id;
        j["audio"] = item.audio_ref;
        j["question"] = item.question;
        j["choices"] = item.choices;
        j["gold"] = std::string(1, item.gold);
        if (!item.transcript.empty()) j["transcript"] = item.transcript;
        if (!item.category.empty()) j["category"] = item.category;
        if (!item.audio_base64.empty()) j["audio_base64"] = item.audio_base64;
        os << j.dump() << "\n";
    }
}

void save_outcomes(const std::filesystem::path& path, const std::vector<QAOutcome>& outcomes) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw DataError("cannot write outcomes file " + path.string());
    for (const auto& o : outcomes) {
        os << json{{"id", o.id},         {"caption", o.caption},
                   {"raw_reply", o.raw_reply}, {"answer", o.answer},
                   {"extracted", o.extracted}, {"correct", o.correct},
                   {"error", o.error}}
                  .dump()
           << "\n";
    }
}

std::vector<QAOutcome> load_outcomes(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw ConfigError("cannot open outcomes file " + path.string());
    std::vector<QAOutcome> out;
    std::string line;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        json j;
        try {
            j = json::parse(line);
            QAOutcome o;
            o.id = j.at("id").get<std::string>();
            o.caption = j.at("caption").get<std::string>();
            o.raw_reply = j.at("raw_reply").get<std::string>();
            o.answer = j.at("answer").get<std::string>();
            o.extracted = j.at("extracted").get<bool>();
            o.correct = j.at("correct").get<bool>();
            o.error = j.at("error").get<std::string>();
            out.push_back(std::move(o));
        } catch (const json::exception& e) {
            throw DataError("bad outcome line: " + std::string(e.what()));
        }
    }
    return out;
}

void QAHarness::validate() const {
    if (!gw) throw ConfigError("qa harness has no gateway");
    if (caption_tpl.text.empty() || qa_tpl.text.empty()) {
        throw ConfigError("qa harness templates are not loaded");
    }
}

QAHarness QAHarness::load(const std::filesystem::path& data_dir) {
    QAHarness h;
    h.caption_tpl = flux::PromptTemplate::from_file(
        data_dir / "prompts" / "dense_caption.txt", flux::RenderMode::Mustache,
        "dense_caption");
    h.qa_tpl = flux::PromptTemplate::from_file(
        data_dir / "prompts" / "question_answering.txt", flux::RenderMode::PyFormat,
        "question_answering");
    return h;
}

namespace {

gateway::ChatRequest one_user_message(std::string text,
                                      std::optional<gateway::AudioAttachment> audio = {}) {
    gateway::ChatRequest req;
    req.messages.push_back({"user", std::move(text), std::move(audio)});
    return req;
}

}  // namespace

QAOutcome caption_then_answer(const EvalItem& item, const QAHarness& h) {
    h.validate();
    item.validate();
    QAOutcome out;
    out.id = item.id;
    try {
        if (item.audio_base64.empty() && item.audio_ref.empty()) {
            throw DataError("eval item " + item.id + " has no audio payload");
        }
        gateway::AudioAttachment audio{item.audio_media_type, item.audio_base64};
        auto cap_req = one_user_message(h.caption_tpl.render({}), audio);
        out.caption = h.gw->complete(h.captioner, cap_req).text;

        std::string prompt = h.qa_tpl.render(
            {{"caption", out.caption}, {"question", item.folded_question()}});
        out.raw_reply = h.gw->complete(h.qa_reader, one_user_message(prompt)).text;
    } catch (const TransportError& e) {
        out.error = e.what();
        return out;
    } catch (const AuthError& e) {
        out.error = e.what();
        return out;
    } catch (const MalformedResponseError& e) {
        out.error = e.what();
        return out;
    }

    if (auto trace = flux::split_trace(out.raw_reply)) {
        out.extracted = true;
        out.answer = trace->answer;
        out.correct = (trace->answer.size() == 1 && trace->answer[0] == item.gold);
    }
    return out;
}

std::vector<QAOutcome> caption_then_answer_many(const std::vector<EvalItem>& items,
                                                const QAHarness& h, std::size_t parallelism) {
    h.validate();
    if (parallelism == 0) throw ConfigError("parallelism must be >= 1");
    std::vector<QAOutcome> out(items.size());
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
            if (i >= items.size()) return;
            try {
                out[i] = caption_then_answer(items[i], h);
            } catch (...) {
                std::lock_guard<std::mutex> lock(fatal_mu);
                if (!fatal) fatal = std::current_exception();
                return;
            }
        }
    };
    std::size_t n_threads = std::max<std::size_t>(1, std::min(parallelism, items.size()));
    if (n_threads <= 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        for (std::size_t t = 0; t < n_threads; ++t) pool.emplace_back(worker);
        for (auto& th : pool) th.join();
    }
    if (fatal) std::rethrow_exception(fatal);
    return out;
}

std::string ScoreReport::to_json() const {
    json cats = json::object();
    for (const auto& [name, score] : by_category) {
        cats[name] = json{{"total", score.total},
                          {"correct", score.correct},
                          {"accuracy", score.total ? static_cast<double>(score.correct) /
                                                         static_cast<double>(score.total)
                                                   : 0.0}};
    }
    return json{{"total", total},
                {"correct", correct},
                {"unextracted", unextracted},
                {"errored", errored},
                {"accuracy", accuracy},
                {"by_category", cats}}
        .dump(2);
}

std::string ScoreReport::to_table() const {
    std::ostringstream os;
    os << "items:       " << total << "\n";
    os << "correct:     " << correct << "\n";
    os << "unextracted: " << unextracted << "\n";
    os << "errored:     " << errored << "\n";
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.4f", accuracy);
    os << "accuracy:    " << buf << "\n";
    for (const auto& [name, score] : by_category) {
        std::snprintf(buf, sizeof(buf), "%.4f",
                      score.total ? static_cast<double>(score.correct) /
                                        static_cast<double>(score.total)
                                  : 0.0);
        os << "  " << name << ": " << score.correct << "/" << score.total << " (" << buf
           << ")\n";
    }
    return os.str();
}

ScoreReport score_set(const std::vector<EvalItem>& items,
                      const std::vector<QAOutcome>& results) {
    if (items.size() != results.size()) {
        throw DataError("score reconciliation: " + std::to_string(items.size()) +
                        " items vs " + std::to_string(results.size()) + " results");
    }
    std::map<std::string, const QAOutcome*> by_id;
    for (const auto& r : results) {
        if (!by_id.emplace(r.id, &r).second) {
            throw DataError("score reconciliation: duplicate result id " + r.id);
        }
    }
    ScoreReport rep;
    rep.total = items.size();
    for (const auto& item : items) {
        auto it = by_id.find(item.id);
        if (it == by_id.end()) {
            throw DataError("score reconciliation: no result for item " + item.id);
        }
        const QAOutcome& o = *it->second;
        if (o.correct) ++rep.correct;
        if (!o.extracted && o.error.empty()) ++rep.unextracted;
        if (!o.error.empty()) ++rep.errored;
        std::string cat = item.category.empty() ? "(uncategorized)" : item.category;
        auto& c = rep.by_category[cat];
        ++c.total;
        if (o.correct) ++c.correct;
    }
    rep.accuracy = rep.total ? static_cast<double>(rep.correct) /
                                   static_cast<double>(rep.total)
                             : 0.0;
    return rep;
}

}  // namespace aukit::eval
