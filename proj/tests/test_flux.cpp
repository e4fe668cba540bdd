// Copyright (c) 2026 aukit contributors
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <cctype>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>

#include <json.hpp>

#include "aukit/flux/pipeline.hpp"
#include "support/golden.hpp"

using namespace aukit;
using namespace aukit::flux;
using gateway::Gateway;
using gateway::GatewayOptions;
using gateway::MockTransport;
using gateway::ModelEndpoint;
using gateway::RawResponse;
using gateway::Role;
using nlohmann::json;

namespace {

std::filesystem::path data_dir() { return aukit::testing::repo_root() / "data"; }

std::filesystem::path fresh_dir(const std::string& tag) {
    auto dir = std::filesystem::temp_directory_path() / ("aukit_flux_" + tag);
    std::filesystem::remove_all(dir);
    return dir;
}

std::string chat_reply(const std::string& text) {
    json j;
    j["choices"] = json::array(
        {json{{"message", json{{"role", "assistant"}, {"content", text}}},
              {"finish_reason", "stop"}}});
    j["usage"] = json{{"prompt_tokens", 3}, {"completion_tokens", 4}};
    return j.dump();
}

RawResponse ok_reply(const std::string& text) { return {200, chat_reply(text)}; }

// Record ids look like "rec-17"; every request body carries the id via
// the audio payload or the caption, so mocks can route per record.
int rec_num(const std::string& body) {
    auto pos = body.find("rec-");
    if (pos == std::string::npos) return -1;
    int n = 0;
    for (std::size_t i = pos + 4; i < body.size() && isdigit((unsigned char)body[i]); ++i) {
        n = n * 10 + (body[i] - '0');
    }
    return n;
}

// Questions are "What is sound <k>?..." so answer mocks can vary per question.
int q_num(const std::string& body) {
    auto pos = body.find("What is sound ");
    if (pos == std::string::npos) return -1;
    return body[pos + 14] - '0';
}

std::string question_text(int k) {
    return "What is sound " + std::to_string(k) + "?\nA. rain\nB. wind\nC. speech\nD. music";
}

std::string gen_questions_json() {
    json qs = json::array();
    for (int k = 0; k < 5; ++k) qs.push_back(question_text(k));
    return json{{"is_success", true}, {"questions", qs}}.dump();
}

std::string gen_mismatch_json() {
    return json{{"is_success", false}, {"questions", json::array()}}.dump();
}

std::string verdict_json(const char* consistency, const char* winner, const char* action,
                         bool consensus = true) {
    return json{{"consensus", consensus},
                {"consistency_with_caption", consistency},
                {"winner", winner},
                {"reasoning", "because"},
                {"final_action", action}}
        .dump();
}

std::map<Role, ModelEndpoint> mock_endpoints() {
    std::map<Role, ModelEndpoint> eps;
    auto mk = [&](Role r, const char* model) {
        ModelEndpoint ep;
        ep.role = r;
        ep.base_url = "http://mock";
        ep.model = model;
        ep.max_retries = 0;  // one POST per complete(): exact call accounting
        eps[r] = ep;
    };
    mk(Role::Captioner, "m-cap");
    mk(Role::Generator, "m-gen");
    mk(Role::AnswererA, "m-ansa");
    mk(Role::AnswererB, "m-ansb");
    mk(Role::Judge, "m-judge");
    return eps;
}

/// A gateway + context wired to a scripted transport.
struct MockRig {
    std::shared_ptr<MockTransport> transport;
    std::unique_ptr<Gateway> gw;
    FluxContext ctx;

    explicit MockRig(MockTransport::Handler handler)
        : transport(std::make_shared<MockTransport>(std::move(handler))) {
        GatewayOptions opt;
        opt.sleeper = [](double) {};
        gw = std::make_unique<Gateway>(transport, opt);
        ctx = load_flux_assets(data_dir());
        ctx.gw = gw.get();
        ctx.endpoints = mock_endpoints();
    }

    std::size_t calls_to(const std::string& model) const {
        std::size_t n = 0;
        for (const auto& pr : transport->records()) {
            if (json::parse(pr.body).at("model") == model) ++n;
        }
        return n;
    }

    std::vector<std::string> bodies_to(const std::string& model) const {
        std::vector<std::string> out;
        for (const auto& pr : transport->records()) {
            if (json::parse(pr.body).at("model") == model) out.push_back(pr.body);
        }
        return out;
    }
};

FluxRecord make_record(int n, const std::string& caption = "") {
    FluxRecord rec;
    rec.id = "rec-" + std::to_string(n);
    rec.audio_ref = "mem://" + rec.id;
    rec.audio_base64 = "cGF5bG9hZA_rec-" + std::to_string(n);
    rec.caption = caption;
    rec.taxonomy_path = "Acoustic Scene>Environment>Nature";
    return rec;
}

std::vector<FluxRecord> make_corpus(int n) {
    std::vector<FluxRecord> out;
    for (int i = 0; i < n; ++i) out.push_back(make_record(i));
    return out;
}

/// Every record sails through: caption, five questions, valid answers,
/// STRONG_MATCH keep with MODEL_A.
MockTransport::Handler accept_all() {
    return [](const MockTransport::PostRecord& pr) -> RawResponse {
        std::string model = json::parse(pr.body).at("model");
        int n = rec_num(pr.body);
        if (model == "m-cap") return ok_reply("caption for rec-" + std::to_string(n));
        if (model == "m-gen") return ok_reply(gen_questions_json());
        if (model == "m-ansa") return ok_reply("Listening closely.\nAnswer: A");
        if (model == "m-ansb") return ok_reply("I hear rain.\nAnswer: B");
        if (model == "m-judge")
            return ok_reply(verdict_json("STRONG_MATCH", "MODEL_A", "KEEP_USING_WINNER"));
        return {500, "unknown model"};
    };
}

/// Programmed outcome by id mod 7: one bucket per failure mode, the
/// remainder kept. The oracle partition is computed club-side in tests.
MockTransport::Handler partitioned() {
    return [](const MockTransport::PostRecord& pr) -> RawResponse {
        std::string model = json::parse(pr.body).at("model");
        int n = rec_num(pr.body);
        int bucket = n % 7;
        if (model == "m-cap") return ok_reply("caption for rec-" + std::to_string(n));
        if (model == "m-gen") {
            if (bucket == 0) return ok_reply(gen_mismatch_json());
            if (bucket == 1) return ok_reply("** not json **");
            return ok_reply(gen_questions_json());
        }
        if (model == "m-ansa" || model == "m-ansb") {
            if (bucket == 2) return ok_reply("hmm, hard to say.");
            return ok_reply(model == "m-ansa" ? "thinking.\nAnswer: C" : "pondering.\nAnswer: C");
        }
        if (model == "m-judge") {
            if (bucket == 3)
                return ok_reply(verdict_json("CONFLICT", "MODEL_A", "KEEP_USING_WINNER"));
            if (bucket == 4) return ok_reply(verdict_json("STRONG_MATCH", "NONE", "DISCARD"));
            if (bucket == 5) return ok_reply(json{{"winner", "MODEL_C"}}.dump());
            return ok_reply(verdict_json("STRONG_MATCH", "TIE", "KEEP_USING_WINNER"));
        }
        return {500, "unknown model"};
    };
}

std::map<std::string, std::size_t> index_count_by_id(const std::filesystem::path& dir) {
    std::map<std::string, std::size_t> counts;
    std::ifstream is(dir / "index.jsonl");
    std::string line;
    while (std::getline(is, line)) {
        if (!line.empty()) ++counts[json::parse(line).at("id").get<std::string>()];
    }
    return counts;
}

}  // namespace

TEST_CASE("mustache rendering resolves placeholders and keeps literal braces") {
    PromptTemplate tpl{"t", RenderMode::Mustache, "a {{X}} b {not} c {{ raw {\"k\": 1}"};
    CHECK(tpl.render({{"X", "1"}}) == "a 1 b {not} c {{ raw {\"k\": 1}");
    CHECK_THROWS_WITH_AS(tpl.render({}), doctest::Contains("unresolved placeholder {{X}}"),
                         ConfigError);
    PromptTemplate none{"t2", RenderMode::Mustache, "no placeholders"};
    CHECK(none.render({}) == "no placeholders");
}

TEST_CASE("pyformat rendering resolves {name} and unescapes doubled braces") {
    PromptTemplate tpl{"t", RenderMode::PyFormat, "{{\"k\": \"v\"}} and {name}!"};
    CHECK(tpl.render({{"name", "z"}}) == "{\"k\": \"v\"} and z!");
    CHECK_THROWS_WITH_AS(tpl.render({}), doctest::Contains("unresolved placeholder {name}"),
                         ConfigError);

    PromptTemplate stray{"t", RenderMode::PyFormat, "oops } here"};
    CHECK_THROWS_WITH_AS(stray.render({}), doctest::Contains("stray '}'"), ConfigError);
    PromptTemplate open{"t", RenderMode::PyFormat, "oops { here"};
    CHECK_THROWS_AS(open.render({}), ConfigError);
}

TEST_CASE("taxonomy loads, resolves paths, and rejects unknown ones") {
    auto tax = Taxonomy::load(data_dir() / "taxonomy.json");
    CHECK(tax.paths().size() >= 8);

    auto p = tax.resolve("Acoustic Scene>Environment>Nature");
    CHECK(p.joined() == "Acoustic Scene > Environment > Nature");
    CHECK(!p.l3.has_value());
    CHECK(p.hierarchy_block() ==
          "- L0: Acoustic Scene\n- L1: Environment\n- L2: Nature");

    auto q = tax.resolve(" Acoustic Scene > Environment > Nature > Rain ");
    CHECK(q.joined() == "Acoustic Scene > Environment > Nature > Rain");
    CHECK(q.hierarchy_block() ==
          "- L0: Acoustic Scene\n- L1: Environment\n- L2: Nature\n- L3: Rain");

    CHECK_THROWS_AS(tax.resolve("Acoustic Scene>Environment>Volcano"), DataError);
    CHECK_THROWS_AS(tax.resolve("Acoustic Scene>Environment>Nature>Lava"), DataError);
    CHECK_THROWS_AS(tax.resolve("Nature"), DataError);
}

TEST_CASE("bundled prompt templates render byte-for-byte against goldens") {
    auto ctx = load_flux_assets(data_dir());
    auto path = ctx.taxonomy.resolve("Acoustic Scene>Environment>Nature>Rain");

    SUBCASE("dense caption") {
        std::string actual = ctx.caption_tpl.render({});
        CHECK(actual == aukit::testing::golden(actual, "flux_caption_prompt.txt"));
    }
    SUBCASE("query and choices") {
        std::string actual = ctx.query_tpl.render(
            {{"AUDIO_CAPTION",
              "A steady rain falls on a tin roof while distant thunder rolls."},
             {"HIERARCHY_BLOCK", path.hierarchy_block()},
             {"FEW_SHOT_CONTENT", ctx.few_shots}});
        CHECK(actual == aukit::testing::golden(actual, "flux_query_prompt.txt"));
    }
    SUBCASE("answer verification") {
        std::string actual = ctx.judge_tpl.render(
            {{"L0", path.l0},
             {"L1", path.l1},
             {"L2", path.l2 + " > " + *path.l3},
             {"caption", "A steady rain falls on a tin roof while distant thunder rolls."},
             {"query", question_text(0)},
             {"model_a_cot", "The droplets are periodic, so rain."},
             {"model_a_response", "A"},
             {"model_b_cot", "Could be wind against the window."},
             {"model_b_response", "B"},
             {"INJECTION_RULES", ctx.judge_rules}});
        CHECK(actual == aukit::testing::golden(actual, "flux_judge_prompt.txt"));
    }
    SUBCASE("question answering") {
        auto qa = PromptTemplate::from_file(data_dir() / "prompts" / "question_answering.txt",
                                            RenderMode::PyFormat, "question_answering");
        std::string actual = qa.render(
            {{"caption", "A steady rain falls on a tin roof while distant thunder rolls."},
             {"question", question_text(0)}});
        CHECK(actual == aukit::testing::golden(actual, "flux_qa_prompt.txt"));
    }
}

TEST_CASE("question well-formedness demands five lines with ordered options") {
    CHECK(question_is_well_formed(question_text(0)));
    CHECK(question_is_well_formed("Q?\nA. a\nB. b\nC. c\nD. d"));
    CHECK(!question_is_well_formed("Q?\nA. a\nB. b\nC. c"));                    // 4 lines
    CHECK(!question_is_well_formed("Q?\nA. a\nB. b\nC. c\nD. d\nE. e"));        // 6 lines
    CHECK(!question_is_well_formed("Q?\nA. a\nC. c\nB. b\nD. d"));              // out of order
    CHECK(!question_is_well_formed("\nA. a\nB. b\nC. c\nD. d"));                // empty question
    CHECK(!question_is_well_formed("Q?\na. a\nB. b\nC. c\nD. d"));              // lowercase prefix
    CHECK(!question_is_well_formed(""));
}

TEST_CASE("generation parsing accepts only the exact success schema") {
    auto good = parse_generation(gen_questions_json());
    CHECK(good.is_success);
    CHECK(good.questions.size() == 5);
    CHECK(good.questions[0].substr(0, good.questions[0].find('\n')) == "What is sound 0?");

    auto miss = parse_generation(gen_mismatch_json());
    CHECK(!miss.is_success);
    CHECK(miss.questions.empty());
}

TEST_CASE("generation parsing rejects every malformed shape with a reason") {
    auto q5 = json::parse(gen_questions_json());

    CHECK_THROWS_WITH_AS(parse_generation("not json"), doctest::Contains("invalid JSON"),
                         SchemaError);
    CHECK_THROWS_WITH_AS(parse_generation("[1,2]"), doctest::Contains("not a JSON object"),
                         SchemaError);
    CHECK_THROWS_WITH_AS(parse_generation(json{{"is_success", true}}.dump()),
                         doctest::Contains("missing key 'questions'"), SchemaError);
    {
        json j = q5;
        j["extra"] = 1;
        CHECK_THROWS_WITH_AS(parse_generation(j.dump()),
                             doctest::Contains("unexpected key 'extra'"), SchemaError);
    }
    {
        json j = q5;
        j["is_success"] = "yes";
        CHECK_THROWS_WITH_AS(parse_generation(j.dump()),
                             doctest::Contains("is_success must be boolean"), SchemaError);
    }
    {
        json j = q5;
        j["questions"] = "a string";
        CHECK_THROWS_WITH_AS(parse_generation(j.dump()),
                             doctest::Contains("questions must be an array"), SchemaError);
    }
    {
        json j = q5;
        j["questions"].erase(4);  // 4-question list
        CHECK_THROWS_WITH_AS(parse_generation(j.dump()),
                             doctest::Contains("expected 5 questions, got 4"), SchemaError);
    }
    {
        json j = q5;
        j["questions"].push_back(question_text(5));  // 6 questions
        CHECK_THROWS_AS(parse_generation(j.dump()), SchemaError);
    }
    {
        json j = q5;
        j["questions"][2] = 7;
        CHECK_THROWS_WITH_AS(parse_generation(j.dump()),
                             doctest::Contains("question is not a string"), SchemaError);
    }
    {
        json j = q5;
        j["questions"][1] = "Q?\nA. a\nB. b\nC. c";  // structurally broken
        CHECK_THROWS_AS(parse_generation(j.dump()), SchemaError);
    }
    {
        json j = json{{"is_success", false}, {"questions", json::array({question_text(0)})}};
        CHECK_THROWS_WITH_AS(parse_generation(j.dump()),
                             doctest::Contains("mismatch result must carry no questions"),
                             SchemaError);
    }
}

TEST_CASE("verdict parsing enforces exact keys and enum spellings") {
    auto v = parse_verdict(verdict_json("STRONG_MATCH", "MODEL_B", "KEEP_USING_WINNER"));
    CHECK(v.consensus);
    CHECK(v.consistency == Consistency::StrongMatch);
    CHECK(v.winner == Winner::ModelB);
    CHECK(v.reasoning == "because");
    CHECK(v.final_action == FinalAction::KeepUsingWinner);

    CHECK(parse_verdict(verdict_json("WEAK_MATCH", "TIE", "KEEP_USING_WINNER")).winner ==
          Winner::Tie);
    CHECK(parse_verdict(verdict_json("CONFLICT", "NONE", "DISCARD")).final_action ==
          FinalAction::Discard);

    CHECK_THROWS_WITH_AS(parse_verdict(verdict_json("STRONG_MATCH", "MODEL_C", "DISCARD")),
                         doctest::Contains("invalid winner 'MODEL_C'"), SchemaError);
    CHECK_THROWS_WITH_AS(parse_verdict(verdict_json("strong_match", "TIE", "DISCARD")),
                         doctest::Contains("invalid consistency_with_caption"), SchemaError);
    CHECK_THROWS_WITH_AS(parse_verdict(verdict_json("STRONG_MATCH", "TIE", "keep")),
                         doctest::Contains("invalid final_action"), SchemaError);
    CHECK_THROWS_WITH_AS(
        parse_verdict(verdict_json("STRONG_MATCH", "NONE", "KEEP_USING_WINNER")),
        doctest::Contains("requires a concrete winner"), SchemaError);

    json base = json::parse(verdict_json("STRONG_MATCH", "TIE", "KEEP_USING_WINNER"));
    {
        json j = base;
        j.erase("reasoning");
        CHECK_THROWS_WITH_AS(parse_verdict(j.dump()),
                             doctest::Contains("missing key 'reasoning'"), SchemaError);
    }
    {
        json j = base;
        j["confidence"] = 0.9;
        CHECK_THROWS_WITH_AS(parse_verdict(j.dump()),
                             doctest::Contains("unexpected key 'confidence'"), SchemaError);
    }
    {
        json j = base;
        j["consensus"] = "true";
        CHECK_THROWS_WITH_AS(parse_verdict(j.dump()),
                             doctest::Contains("consensus must be boolean"), SchemaError);
    }
    {
        json j = base;
        j["winner"] = 2;
        CHECK_THROWS_AS(parse_verdict(j.dump()), SchemaError);
    }
    CHECK_THROWS_AS(parse_verdict("{broken"), SchemaError);
}

TEST_CASE("trace splitting pulls the final option letter tolerantly") {
    auto t = split_trace("...reasoning...\nAnswer: B");
    REQUIRE(t.has_value());
    CHECK(t->cot == "...reasoning...");
    CHECK(t->answer == "B");
    CHECK(t->valid);

    CHECK(split_trace("The answer is C.")->answer == "C");
    CHECK(split_trace("some thoughts\n(a)")->answer == "A");
    CHECK(split_trace("pick one\nB. Closing a door")->answer == "B");
    CHECK(split_trace("D")->answer == "D");
    CHECK(split_trace("**Answer:** C")->answer == "C");
    CHECK(split_trace("line one\nline two\nanswer: d\n\n")->answer == "D");

    auto multi = split_trace("first thought\nsecond thought\nAnswer: A");
    CHECK(multi->cot == "first thought\nsecond thought");

    // The keyword earlier in the reply does not shadow the final line.
    auto late = split_trace("the answer is E... wait\nFinal verdict\nAnswer: B");
    CHECK(late->answer == "B");
    CHECK(late->cot == "the answer is E... wait\nFinal verdict");

    CHECK(!split_trace("no option letter anywhere").has_value());
    CHECK(!split_trace("").has_value());
    CHECK(!split_trace("E").has_value());
    CHECK(!split_trace("options are A, B, C and D among others").has_value());
}

TEST_CASE("records round-trip through JSONL") {
    FluxRecord rec = make_record(7, "a caption");
    rec.questions = {question_text(0), question_text(1), question_text(2), question_text(3),
                     question_text(4)};
    rec.judged_question = 2;
    rec.trace_a = {"cot a", "A", true};
    rec.trace_b = {"raw invalid reply", "", false};
    rec.verdict = parse_verdict(verdict_json("WEAK_MATCH", "MODEL_A", "KEEP_USING_WINNER"));
    rec.winner_model = "MODEL_A";
    rec.state = FluxState::Kept;

    FluxRecord back = record_from_json(record_to_json(rec));
    CHECK(back.id == rec.id);
    CHECK(back.audio_base64 == rec.audio_base64);
    CHECK(back.caption == rec.caption);
    CHECK(back.taxonomy_path == rec.taxonomy_path);
    CHECK(back.questions == rec.questions);
    CHECK(back.judged_question == 2);
    CHECK(back.trace_a.answer == "A");
    CHECK(back.trace_b.valid == false);
    CHECK(back.trace_b.cot == "raw invalid reply");
    REQUIRE(back.verdict.has_value());
    CHECK(back.verdict->consistency == Consistency::WeakMatch);
    CHECK(back.winner_model == "MODEL_A");
    CHECK(back.state == FluxState::Kept);

    CHECK_THROWS_AS(record_from_json("{oops"), DataError);
    CHECK_THROWS_AS(record_from_json("{\"id\": \"x\"}"), DataError);
    CHECK_THROWS_AS(state_from_name("Limbo"), DataError);
}

TEST_CASE("lifecycle ordering is forward-only with terminal peers") {
    CHECK(state_precedes(FluxState::Ingested, FluxState::Captioned));
    CHECK(state_precedes(FluxState::Captioned, FluxState::QueriesGenerated));
    CHECK(state_precedes(FluxState::QueriesGenerated, FluxState::Answered));
    CHECK(state_precedes(FluxState::Answered, FluxState::Judged));
    CHECK(state_precedes(FluxState::Judged, FluxState::Kept));
    CHECK(state_precedes(FluxState::Judged, FluxState::Discarded));
    CHECK(!state_precedes(FluxState::Kept, FluxState::Discarded));
    CHECK(!state_precedes(FluxState::Discarded, FluxState::Kept));
    CHECK(!state_precedes(FluxState::Answered, FluxState::Captioned));
    CHECK(state_from_name("QueriesGenerated") == FluxState::QueriesGenerated);
}

TEST_CASE("step 1 captions when missing and generates five questions") {
    MockRig rig(accept_all());

    SUBCASE("missing caption calls the captioner once") {
        FluxRecord rec = make_record(3);
        auto g = step1_generate_queries(rec, rig.ctx);
        CHECK(g.is_success);
        CHECK(rec.state == FluxState::QueriesGenerated);
        CHECK(rec.caption == "caption for rec-3");
        CHECK(rec.questions.size() == 5);
        CHECK(rig.calls_to("m-cap") == 1);
        CHECK(rig.calls_to("m-gen") == 1);

        // The generator prompt embeds the caption and the hierarchy.
        auto gen_bodies = rig.bodies_to("m-gen");
        CHECK(gen_bodies[0].find("caption for rec-3") != std::string::npos);
        CHECK(gen_bodies[0].find("- L2: Nature") != std::string::npos);
    }
    SUBCASE("present caption skips the captioner") {
        FluxRecord rec = make_record(4, "already captioned rec-4");
        step1_generate_queries(rec, rig.ctx);
        CHECK(rec.state == FluxState::QueriesGenerated);
        CHECK(rig.calls_to("m-cap") == 0);
    }
    SUBCASE("unknown taxonomy path fails fast") {
        FluxRecord rec = make_record(5);
        rec.taxonomy_path = "No>Such>Path";
        CHECK_THROWS_AS(step1_generate_queries(rec, rig.ctx), DataError);
        CHECK(rig.transport->calls() == 0);
    }
}

TEST_CASE("step 1 mismatch and schema outcomes") {
    SUBCASE("is_success=false discards as category mismatch") {
        MockRig rig([](const MockTransport::PostRecord& pr) -> RawResponse {
            std::string model = json::parse(pr.body).at("model");
            if (model == "m-cap") return ok_reply("c");
            return ok_reply(gen_mismatch_json());
        });
        FluxRecord rec = make_record(0);
        auto g = step1_generate_queries(rec, rig.ctx);
        CHECK(!g.is_success);
        CHECK(rec.state == FluxState::Discarded);
        CHECK(rec.discard_reason == "category mismatch");
        CHECK(rig.calls_to("m-gen") == 1);  // a mismatch is not retried
    }
    SUBCASE("parse failures retry with the byte-identical prompt, then give up") {
        int gen_calls = 0;
        MockRig rig([&](const MockTransport::PostRecord& pr) -> RawResponse {
            std::string model = json::parse(pr.body).at("model");
            if (model == "m-cap") return ok_reply("c");
            ++gen_calls;
            return ok_reply("garbage reply");
        });
        FluxRecord rec = make_record(1);
        rig.ctx.parse_retries = 2;
        step1_generate_queries(rec, rig.ctx);
        CHECK(rec.state == FluxState::Discarded);
        CHECK(rec.discard_reason == "schema failure");
        CHECK(gen_calls == 3);  // 1 + 2 retries
        auto bodies = rig.bodies_to("m-gen");
        REQUIRE(bodies.size() == 3);
        CHECK(bodies[0] == bodies[1]);
        CHECK(bodies[1] == bodies[2]);
    }
    SUBCASE("a retry that parses wins") {
        int gen_calls = 0;
        MockRig rig([&](const MockTransport::PostRecord& pr) -> RawResponse {
            std::string model = json::parse(pr.body).at("model");
            if (model == "m-cap") return ok_reply("c");
            ++gen_calls;
            return gen_calls < 3 ? ok_reply("garbage") : ok_reply(gen_questions_json());
        });
        FluxRecord rec = make_record(2);
        step1_generate_queries(rec, rig.ctx);
        CHECK(rec.state == FluxState::QueriesGenerated);
        CHECK(gen_calls == 3);
    }
}

TEST_CASE("step 2 sends every question to both answerers") {
    SUBCASE("first question with a valid answer is judged") {
        MockRig rig([](const MockTransport::PostRecord& pr) -> RawResponse {
            std::string model = json::parse(pr.body).at("model");
            int qi = q_num(pr.body);
            if (model == "m-ansa")
                return qi == 0 ? ok_reply("no letter here")
                               : ok_reply("thinking.\nAnswer: C");
            if (model == "m-ansb") return ok_reply("unparseable mumbling");
            return {500, "unexpected role"};
        });
        FluxRecord rec = make_record(0, "cap");
        rec.questions = {question_text(0), question_text(1), question_text(2),
                         question_text(3), question_text(4)};
        rec.state = FluxState::QueriesGenerated;
        step2_answer(rec, rig.ctx);

        CHECK(rec.state == FluxState::Answered);
        CHECK(rec.judged_question == 1);  // q0 had no valid answer on either side
        CHECK(rec.trace_a.valid);
        CHECK(rec.trace_a.answer == "C");
        CHECK(rec.trace_a.cot == "thinking.");
        CHECK(!rec.trace_b.valid);
        CHECK(rec.trace_b.cot == "unparseable mumbling");
        // All five questions still go to both models.
        CHECK(rig.calls_to("m-ansa") == 5);
        CHECK(rig.calls_to("m-ansb") == 5);
    }
    SUBCASE("no valid answers anywhere discards") {
        MockRig rig([](const MockTransport::PostRecord&) -> RawResponse {
            return ok_reply("shrug");
        });
        FluxRecord rec = make_record(1, "cap");
        rec.questions = {question_text(0), question_text(1)};
        rec.state = FluxState::QueriesGenerated;
        step2_answer(rec, rig.ctx);
        CHECK(rec.state == FluxState::Discarded);
        CHECK(rec.discard_reason == "no valid answers");
    }
    SUBCASE("wrong state is a contract violation") {
        MockRig rig(accept_all());
        FluxRecord rec = make_record(2);
        CHECK_THROWS_AS(step2_answer(rec, rig.ctx), ContractError);
    }
}

TEST_CASE("step 3 judges the kept traces and the filter decides") {
    auto answered = [](int n) {
        FluxRecord rec = make_record(n, "caption for rec-" + std::to_string(n));
        rec.questions = {question_text(0), question_text(1), question_text(2),
                         question_text(3), question_text(4)};
        rec.judged_question = 1;
        rec.trace_a = {"a thinks", "A", true};
        rec.trace_b = {"raw b text", "", false};
        rec.state = FluxState::Answered;
        return rec;
    };

    SUBCASE("prompt carries caption, traces, hierarchy, and rules; INVALID for bad trace") {
        MockRig rig(accept_all());
        rig.ctx.taxonomy.resolve("Acoustic Scene>Environment>Nature");  // sanity
        FluxRecord rec = answered(6);
        rec.taxonomy_path = "Acoustic Scene>Environment>Nature>Rain";
        auto v = step3_judge(rec, rig.ctx);
        CHECK(v.final_action == FinalAction::KeepUsingWinner);
        CHECK(rec.state == FluxState::Judged);
        REQUIRE(rec.verdict.has_value());

        auto bodies = rig.bodies_to("m-judge");
        REQUIRE(bodies.size() == 1);
        const std::string& b = bodies[0];
        CHECK(b.find("caption for rec-6") != std::string::npos);
        CHECK(b.find("What is sound 1?") != std::string::npos);
        CHECK(b.find("a thinks") != std::string::npos);
        CHECK(b.find("raw b text") != std::string::npos);
        CHECK(b.find("INVALID") != std::string::npos);  // model B had no letter
        // L3 folds into the L2 slot of the judge template.
        CHECK(b.find("Acoustic Scene") != std::string::npos);
        CHECK(b.find("Nature > Rain") != std::string::npos);
        CHECK(b.find("clearer evidence chain") != std::string::npos);  // injected rules
    }
    SUBCASE("judge schema failure after retries discards") {
        MockRig rig([](const MockTransport::PostRecord&) -> RawResponse {
            return ok_reply("not a verdict");
        });
        FluxRecord rec = answered(7);
        step3_judge(rec, rig.ctx);
        CHECK(rec.state == FluxState::Discarded);
        CHECK(rec.discard_reason == "judge schema failure");
        CHECK(rig.calls_to("m-judge") == 3);
    }
    SUBCASE("judging without a valid trace is a contract violation") {
        MockRig rig(accept_all());
        FluxRecord rec = answered(8);
        rec.trace_a.valid = false;
        CHECK_THROWS_AS(step3_judge(rec, rig.ctx), ContractError);
    }
}

TEST_CASE("the filtering rule") {
    auto judged = [](const char* cons, const char* winner, const char* action) {
        FluxRecord rec;
        rec.id = "x";
        rec.verdict = parse_verdict(verdict_json(cons, winner, action));
        rec.state = FluxState::Judged;
        return rec;
    };

    SUBCASE("keep with strong match wins; TIE resolves to model A") {
        auto rec = judged("STRONG_MATCH", "MODEL_B", "KEEP_USING_WINNER");
        apply_filter(rec, false);
        CHECK(rec.state == FluxState::Kept);
        CHECK(rec.winner_model == "MODEL_B");

        auto tie = judged("STRONG_MATCH", "TIE", "KEEP_USING_WINNER");
        apply_filter(tie, false);
        CHECK(tie.state == FluxState::Kept);
        CHECK(tie.winner_model == "MODEL_A");
    }
    SUBCASE("conflict overrides a keep") {
        auto rec = judged("CONFLICT", "MODEL_A", "KEEP_USING_WINNER");
        apply_filter(rec, false);
        CHECK(rec.state == FluxState::Discarded);
        CHECK(rec.discard_reason == "filtered");
    }
    SUBCASE("weak match survives default mode but not strict mode") {
        auto rec = judged("WEAK_MATCH", "MODEL_A", "KEEP_USING_WINNER");
        CHECK(keep_verdict(*rec.verdict, false));
        CHECK(!keep_verdict(*rec.verdict, true));
        apply_filter(rec, true);
        CHECK(rec.state == FluxState::Discarded);
    }
    SUBCASE("judge-side discard") {
        auto rec = judged("STRONG_MATCH", "NONE", "DISCARD");
        apply_filter(rec, false);
        CHECK(rec.state == FluxState::Discarded);
    }
    SUBCASE("filtering a non-judged record is a contract violation") {
        FluxRecord rec;
        rec.state = FluxState::Answered;
        CHECK_THROWS_AS(apply_filter(rec, false), ContractError);
    }
}

TEST_CASE("the store appends snapshots and reloads the furthest state") {
    auto dir = fresh_dir("store");
    FluxStore store(dir);

    FluxRecord rec = make_record(0, "cap");
    rec.state = FluxState::Captioned;
    store.persist(rec);
    rec.questions = {question_text(0), question_text(1), question_text(2), question_text(3),
                     question_text(4)};
    rec.state = FluxState::QueriesGenerated;
    store.persist(rec);

    FluxRecord other = make_record(1, "cap");
    other.state = FluxState::Captioned;
    store.persist(other);

    auto latest = store.load_latest();
    REQUIRE(latest.size() == 2);
    CHECK(latest.at("rec-0").state == FluxState::QueriesGenerated);
    CHECK(latest.at("rec-0").questions.size() == 5);
    CHECK(latest.at("rec-1").state == FluxState::Captioned);

    // The snapshot files are the authority; the index is advisory and a
    // missing one (crash between the two appends) must not break resume.
    std::filesystem::remove(dir / "index.jsonl");
    auto again = store.load_latest();
    CHECK(again.at("rec-0").state == FluxState::QueriesGenerated);

    FluxRecord fresh = make_record(2);
    CHECK_THROWS_AS(store.persist(fresh), ContractError);  // still Ingested
}

TEST_CASE("pipeline: all-accepting mocks keep everything") {
    auto dir = fresh_dir("e2e_accept");
    MockRig rig(accept_all());
    PipelineConfig cfg;
    cfg.out_dir = dir;

    auto sum = run_pipeline(make_corpus(20), rig.ctx, cfg);
    CHECK(sum.input == 20);
    CHECK(sum.kept == 20);
    CHECK(sum.parked == 0);
    CHECK(sum.discarded() == 0);
    CHECK(sum.reconciles());

    // Call accounting: 1 caption + 1 generation + 5*2 answers + 1 verdict each.
    CHECK(rig.calls_to("m-cap") == 20);
    CHECK(rig.calls_to("m-gen") == 20);
    CHECK(rig.calls_to("m-ansa") == 100);
    CHECK(rig.calls_to("m-ansb") == 100);
    CHECK(rig.calls_to("m-judge") == 20);

    // Five transitions per record, all indexed.
    auto counts = index_count_by_id(dir);
    CHECK(counts.size() == 20);
    for (const auto& [id, n] : counts) {
        CAPTURE(id);
        CHECK(n == 5);
    }

    // Every kept record re-satisfies the filter and the structural check.
    auto latest = FluxStore(dir).load_latest();
    for (const auto& [id, rec] : latest) {
        CAPTURE(id);
        CHECK(rec.state == FluxState::Kept);
        REQUIRE(rec.verdict.has_value());
        CHECK(keep_verdict(*rec.verdict, false));
        CHECK(question_is_well_formed(rec.questions.at(rec.judged_question)));
        CHECK(rec.winner_model == "MODEL_A");
    }
}

TEST_CASE("pipeline: programmed mocks partition records exactly") {
    auto dir = fresh_dir("e2e_partition");
    MockRig rig(partitioned());
    PipelineConfig cfg;
    cfg.out_dir = dir;

    auto sum = run_pipeline(make_corpus(21), rig.ctx, cfg);  // ids 0..20, 3 per bucket
    CHECK(sum.input == 21);
    CHECK(sum.kept == 3);      // bucket 6
    CHECK(sum.parked == 0);
    CHECK(sum.discarded_by_reason.at("category mismatch") == 3);     // bucket 0
    CHECK(sum.discarded_by_reason.at("schema failure") == 3);        // bucket 1
    CHECK(sum.discarded_by_reason.at("no valid answers") == 3);      // bucket 2
    CHECK(sum.discarded_by_reason.at("filtered") == 6);              // buckets 3,4
    CHECK(sum.discarded_by_reason.at("judge schema failure") == 3);  // bucket 5
    CHECK(sum.reconciles());

    auto latest = FluxStore(dir).load_latest();
    for (int i = 0; i < 21; ++i) {
        auto& rec = latest.at("rec-" + std::to_string(i));
        if (i % 7 == 6) {
            CHECK(rec.state == FluxState::Kept);
            CHECK(rec.winner_model == "MODEL_A");  // TIE resolution
        } else {
            CHECK(rec.state == FluxState::Discarded);
        }
    }
}

TEST_CASE("pipeline: kill and resume matches the uninterrupted run") {
    auto dir_kill = fresh_dir("e2e_kill");
    auto dir_full = fresh_dir("e2e_full");

    PipelineSummary interrupted;
    {
        MockRig rig(partitioned());
        PipelineConfig cfg;
        cfg.out_dir = dir_kill;
        cfg.stop_after_transitions = 13;  // dies mid-corpus
        interrupted = run_pipeline(make_corpus(21), rig.ctx, cfg);
    }
    CHECK(interrupted.parked > 0);
    CHECK(interrupted.reconciles());

    PipelineSummary resumed;
    std::size_t resumed_caption_calls = 0;
    {
        MockRig rig(partitioned());
        PipelineConfig cfg;
        cfg.out_dir = dir_kill;
        resumed = run_pipeline(make_corpus(21), rig.ctx, cfg);
        resumed_caption_calls = rig.calls_to("m-cap");
    }

    PipelineSummary baseline;
    {
        MockRig rig(partitioned());
        PipelineConfig cfg;
        cfg.out_dir = dir_full;
        baseline = run_pipeline(make_corpus(21), rig.ctx, cfg);
    }

    CHECK(resumed.input == baseline.input);
    CHECK(resumed.kept == baseline.kept);
    CHECK(resumed.parked == baseline.parked);
    CHECK(resumed.discarded_by_reason == baseline.discarded_by_reason);

    // Records that finished before the kill were not re-captioned.
    CHECK(resumed_caption_calls < 21);

    // No duplication under resume: each id is indexed at most once per state,
    // and its persisted sequence only ever moves forward.
    std::map<std::string, std::vector<FluxState>> seq;
    std::ifstream is(dir_kill / "index.jsonl");
    std::string line;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        auto j = json::parse(line);
        seq[j.at("id").get<std::string>()].push_back(
            state_from_name(j.at("state").get<std::string>()));
    }
    CHECK(seq.size() == 21);
    for (const auto& [id, states] : seq) {
        CAPTURE(id);
        for (std::size_t k = 1; k < states.size(); ++k) {
            CHECK(state_precedes(states[k - 1], states[k]));
        }
    }

    // The kept sets themselves agree.
    auto kept_ids = [](const std::filesystem::path& dir) {
        std::set<std::string> ids;
        for (const auto& [id, rec] : FluxStore(dir).load_latest()) {
            if (rec.state == FluxState::Kept) ids.insert(id);
        }
        return ids;
    };
    CHECK(kept_ids(dir_kill) == kept_ids(dir_full));
}

TEST_CASE("pipeline: step subsets advance records in stages") {
    auto dir = fresh_dir("e2e_stages");

    {
        MockRig rig(accept_all());
        PipelineConfig cfg;
        cfg.out_dir = dir;
        cfg.steps = {1};
        auto sum = run_pipeline(make_corpus(6), rig.ctx, cfg);
        CHECK(sum.kept == 0);
        CHECK(sum.parked == 6);  // staged, not terminal
        CHECK(rig.calls_to("m-ansa") == 0);
        CHECK(rig.calls_to("m-judge") == 0);
    }
    {
        MockRig rig(accept_all());
        PipelineConfig cfg;
        cfg.out_dir = dir;
        cfg.steps = {2, 3};
        auto sum = run_pipeline(make_corpus(6), rig.ctx, cfg);
        CHECK(sum.kept == 6);
        CHECK(sum.parked == 0);
        CHECK(rig.calls_to("m-cap") == 0);  // step 1 work was not redone
        CHECK(rig.calls_to("m-gen") == 0);
    }
}

TEST_CASE("pipeline: transport failures park records for a later run") {
    auto dir = fresh_dir("e2e_park");

    {
        auto flaky = [](const MockTransport::PostRecord& pr) -> RawResponse {
            if (rec_num(pr.body) >= 10) throw TransportError("backend down");
            return accept_all()(pr);
        };
        MockRig rig(flaky);
        PipelineConfig cfg;
        cfg.out_dir = dir;
        auto sum = run_pipeline(make_corpus(14), rig.ctx, cfg);
        CHECK(sum.kept == 10);
        CHECK(sum.parked == 4);
        CHECK(sum.discarded() == 0);
        CHECK(sum.reconciles());
    }
    {
        MockRig rig(accept_all());
        PipelineConfig cfg;
        cfg.out_dir = dir;
        auto sum = run_pipeline(make_corpus(14), rig.ctx, cfg);
        CHECK(sum.kept == 14);
        CHECK(sum.parked == 0);
    }
}

TEST_CASE("pipeline: bounded parallelism reaches the same partition") {
    auto dir = fresh_dir("e2e_parallel");
    MockRig rig(partitioned());
    PipelineConfig cfg;
    cfg.out_dir = dir;
    cfg.parallelism = 4;

    auto sum = run_pipeline(make_corpus(21), rig.ctx, cfg);
    CHECK(sum.kept == 3);
    CHECK(sum.discarded() == 18);
    CHECK(sum.parked == 0);
    CHECK(sum.reconciles());
}

TEST_CASE("pipeline: configuration and corpus errors") {
    MockRig rig(accept_all());
    PipelineConfig cfg;
    cfg.out_dir = fresh_dir("e2e_errors");

    SUBCASE("duplicate ids") {
        auto corpus = make_corpus(2);
        corpus.push_back(make_record(1));
        CHECK_THROWS_WITH_AS(run_pipeline(corpus, rig.ctx, cfg),
                             doctest::Contains("duplicate record id rec-1"), DataError);
    }
    SUBCASE("empty id") {
        std::vector<FluxRecord> corpus = {FluxRecord{}};
        CHECK_THROWS_AS(run_pipeline(corpus, rig.ctx, cfg), DataError);
    }
    SUBCASE("bad step list") {
        cfg.steps = {0};
        CHECK_THROWS_AS(run_pipeline(make_corpus(1), rig.ctx, cfg), ConfigError);
        cfg.steps = {};
        CHECK_THROWS_AS(run_pipeline(make_corpus(1), rig.ctx, cfg), ConfigError);
    }
    SUBCASE("missing endpoint for a requested step") {
        rig.ctx.endpoints.erase(Role::Judge);
        CHECK_THROWS_WITH_AS(run_pipeline(make_corpus(1), rig.ctx, cfg),
                             doctest::Contains("judge"), ConfigError);
    }
    SUBCASE("missing audio payload aborts rather than parks") {
        auto corpus = make_corpus(1);
        corpus[0].audio_base64.clear();
        corpus[0].audio_ref.clear();
        CHECK_THROWS_AS(run_pipeline(corpus, rig.ctx, cfg), DataError);
    }
}

TEST_CASE("flux context validation") {
    FluxContext empty;
    CHECK_THROWS_WITH_AS(empty.validate(), doctest::Contains("no gateway"), ConfigError);
    CHECK_THROWS_AS(load_flux_assets(data_dir() / "nope"), ConfigError);

    auto ctx = load_flux_assets(data_dir());
    CHECK(ctx.query_tpl.mode == RenderMode::Mustache);
    CHECK(ctx.judge_tpl.mode == RenderMode::PyFormat);
    CHECK(!ctx.few_shots.empty());
    CHECK(!ctx.judge_rules.empty());
}
