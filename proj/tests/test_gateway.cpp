// Copyright (c) 2026 aukit contributors
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <atomic>
#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <thread>

#include <httplib.h>
#include <json.hpp>

#include "aukit/gateway/gateway.hpp"
#include "support/golden.hpp"

using namespace aukit;
using namespace aukit::gateway;
using nlohmann::json;

namespace {

ModelEndpoint mock_endpoint(std::size_t retries = 3) {
    ModelEndpoint ep;
    ep.role = Role::Generator;
    ep.base_url = "http://mock";
    ep.model = "test-model";
    ep.max_retries = retries;
    ep.timeout_s = 5.0;
    return ep;
}

ChatRequest text_request(const std::string& text) {
    ChatRequest req;
    req.messages.push_back({"user", text, std::nullopt});
    return req;
}

std::string canned_reply(const std::string& text) {
    json j;
    j["choices"] = json::array(
        {{{"message", {{"role", "assistant"}, {"content", text}}}, {"finish_reason", "stop"}}});
    j["usage"] = {{"prompt_tokens", 17}, {"completion_tokens", 5}};
    return j.dump();
}

/// Gateway with a non-sleeping sleeper that records requested delays.
Gateway fast_gateway(std::shared_ptr<Transport> t, std::vector<double>* delays = nullptr,
                     std::vector<std::string>* log = nullptr) {
    GatewayOptions opt;
    opt.sleeper = [delays](double s) {
        if (delays) delays->push_back(s);
    };
    if (log) {
        opt.log_sink = [log](const std::string& line) { log->push_back(line); };
    }
    return Gateway(std::move(t), std::move(opt));
}

}  // namespace

TEST_CASE("roles round-trip by name") {
    for (std::size_t i = 0; i < kNumRoles; ++i) {
        auto r = static_cast<Role>(i);
        CHECK(role_from_name(role_name(r)) == r);
    }
    CHECK_THROWS_AS(role_from_name("oracle"), ConfigError);
}

TEST_CASE("endpoint and request validation") {
    ModelEndpoint ep = mock_endpoint();
    CHECK_NOTHROW(ep.validate());
    ep.base_url = "";
    CHECK_THROWS_AS(ep.validate(), ConfigError);

    ep = mock_endpoint();
    ep.path = "v1/chat";  // missing leading slash
    CHECK_THROWS_AS(ep.validate(), ConfigError);
    ep = mock_endpoint();
    ep.timeout_s = 0.0;
    CHECK_THROWS_AS(ep.validate(), ConfigError);

    ChatRequest empty;
    CHECK_THROWS_AS(empty.validate(), ContractError);

    ChatRequest two_audio;
    AudioAttachment a{"audio/wav", "QUJD"};
    two_audio.messages.push_back({"user", "one", a});
    two_audio.messages.push_back({"user", "two", a});
    CHECK_THROWS_AS(two_audio.validate(), ContractError);

    ChatRequest bad_role;
    bad_role.messages.push_back({"narrator", "hi", std::nullopt});
    CHECK_THROWS_AS(bad_role.validate(), ContractError);
}

TEST_CASE("request bodies pin the wire shape byte-for-byte") {
    ModelEndpoint ep = mock_endpoint();
    ep.temperature = 0.7;
    ep.max_tokens = 256;

    ChatRequest req;
    req.messages.push_back({"system", "You describe audio.", std::nullopt});
    req.messages.push_back({"user", "What do you hear?",
                            AudioAttachment{"audio/wav", "UklGRgAAAABXQVZF"}});

    std::string body = request_body(ep, req);
    CHECK(body == testing::golden(body, "gateway_chat_request.json"));

    // Audio-free messages use the plain string content form.
    std::string plain = request_body(ep, text_request("hello"));
    auto j = json::parse(plain);
    CHECK(j["messages"][0]["content"] == "hello");
}

TEST_CASE("mock endpoint returns canned text with latency and usage") {
    auto mock = std::make_shared<MockTransport>(
        [](const MockTransport::PostRecord&) { return RawResponse{200, canned_reply("verbatim text")}; });
    auto gw = fast_gateway(mock);

    auto resp = gw.complete(mock_endpoint(), text_request("q"));
    CHECK(resp.text == "verbatim text");
    CHECK(resp.finish_reason == "stop");
    CHECK(resp.prompt_tokens == 17);
    CHECK(resp.completion_tokens == 5);
    CHECK(resp.attempts == 1);
    CHECK(resp.latency_s >= 0.0);
    CHECK(mock->calls() == 1);
}

TEST_CASE("two transient failures then success: attempts=3, bodies identical") {
    std::atomic<int> n{0};
    auto mock = std::make_shared<MockTransport>([&](const MockTransport::PostRecord&) {
        int i = n.fetch_add(1);
        if (i < 2) return RawResponse{500, "upstream exploded"};
        return RawResponse{200, canned_reply("ok")};
    });
    std::vector<double> delays;
    auto gw = fast_gateway(mock, &delays);

    auto resp = gw.complete(mock_endpoint(3), text_request("same"));
    CHECK(resp.attempts == 3);
    CHECK(resp.text == "ok");

    auto recs = mock->records();
    REQUIRE(recs.size() == 3);
    CHECK(recs[0].body == recs[1].body);
    CHECK(recs[1].body == recs[2].body);

    // Backoff: base 0.5 s doubling, jitter within +-20%.
    REQUIRE(delays.size() == 2);
    CHECK(delays[0] >= 0.4);
    CHECK(delays[0] <= 0.6);
    CHECK(delays[1] >= 0.8);
    CHECK(delays[1] <= 1.2);
}

TEST_CASE("four failures with retries=3: transport error after exactly 4 attempts") {
    auto mock = std::make_shared<MockTransport>(
        [](const MockTransport::PostRecord&) { return RawResponse{503, "down"}; });
    std::vector<double> delays;
    auto gw = fast_gateway(mock, &delays);

    CHECK_THROWS_WITH_AS(gw.complete(mock_endpoint(3), text_request("q")),
                         doctest::Contains("4 attempts"), TransportError);
    CHECK(mock->calls() == 4);
    CHECK(delays.size() == 3);
}

TEST_CASE("4xx never retries; 401/403 map to auth errors; 429 retries") {
    auto deny = std::make_shared<MockTransport>(
        [](const MockTransport::PostRecord&) { return RawResponse{401, "no"}; });
    auto gw1 = fast_gateway(deny);
    CHECK_THROWS_AS(gw1.complete(mock_endpoint(), text_request("q")), AuthError);
    CHECK(deny->calls() == 1);

    auto bad = std::make_shared<MockTransport>(
        [](const MockTransport::PostRecord&) { return RawResponse{400, "bad request"}; });
    auto gw2 = fast_gateway(bad);
    CHECK_THROWS_AS(gw2.complete(mock_endpoint(), text_request("q")), TransportError);
    CHECK(bad->calls() == 1);

    std::atomic<int> n{0};
    auto limited = std::make_shared<MockTransport>([&](const MockTransport::PostRecord&) {
        return n.fetch_add(1) == 0 ? RawResponse{429, "slow down"}
                                   : RawResponse{200, canned_reply("after limit")};
    });
    auto gw3 = fast_gateway(limited);
    auto resp = gw3.complete(mock_endpoint(), text_request("q"));
    CHECK(resp.attempts == 2);
    CHECK(resp.text == "after limit");
}

TEST_CASE("connection failures are transient; malformed success bodies are not") {
    std::atomic<int> n{0};
    auto flaky = std::make_shared<MockTransport>([&](const MockTransport::PostRecord&) -> RawResponse {
        if (n.fetch_add(1) == 0) throw TransportError("connect timeout");
        return RawResponse{200, canned_reply("recovered")};
    });
    auto gw = fast_gateway(flaky);
    CHECK(gw.complete(mock_endpoint(), text_request("q")).text == "recovered");
    CHECK(flaky->calls() == 2);

    auto garbled = std::make_shared<MockTransport>(
        [](const MockTransport::PostRecord&) { return RawResponse{200, "not json at all"}; });
    auto gw2 = fast_gateway(garbled);
    CHECK_THROWS_AS(gw2.complete(mock_endpoint(), text_request("q")), MalformedResponseError);
    CHECK(garbled->calls() == 1);  // schema problems do not retry

    auto hollow = std::make_shared<MockTransport>(
        [](const MockTransport::PostRecord&) { return RawResponse{200, R"({"choices": []})"}; });
    auto gw3 = fast_gateway(hollow);
    CHECK_THROWS_AS(gw3.complete(mock_endpoint(), text_request("q")), MalformedResponseError);
}

TEST_CASE("auth token reaches the wire but never the log") {
    REQUIRE(setenv("AUKIT_TEST_TOKEN", "sk-secret-12345", 1) == 0);
    auto mock = std::make_shared<MockTransport>(
        [](const MockTransport::PostRecord&) { return RawResponse{200, canned_reply("hi")}; });
    std::vector<std::string> log;
    auto gw = fast_gateway(mock, nullptr, &log);

    ModelEndpoint ep = mock_endpoint();
    ep.auth_env = "AUKIT_TEST_TOKEN";
    gw.complete(ep, text_request("sensitive run"));

    auto recs = mock->records();
    REQUIRE(recs.size() == 1);
    CHECK(recs[0].headers.at("Authorization") == "Bearer sk-secret-12345");
    CHECK(recs[0].body.find("sk-secret") == std::string::npos);

    CHECK(log.size() >= 2);  // request + response lines
    for (const auto& line : log) {
        CAPTURE(line);
        CHECK(line.find("sk-secret") == std::string::npos);
        CHECK(line.find("Authorization") == std::string::npos);
    }
    unsetenv("AUKIT_TEST_TOKEN");
}

TEST_CASE("complete_many preserves input order under bounded parallelism") {
    auto mock = std::make_shared<MockTransport>([](const MockTransport::PostRecord& rec) {
        auto j = json::parse(rec.body);
        std::string text = j["messages"][0]["content"].get<std::string>();
        // Vary service time so completion order scrambles.
        auto ms = 5 + 20 * (text.back() % 3);
        std::this_thread::sleep_for(std::chrono::milliseconds(ms));
        return RawResponse{200, canned_reply("echo:" + text)};
    });
    auto gw = fast_gateway(mock);

    std::vector<ChatRequest> reqs;
    for (int i = 0; i < 10; ++i) reqs.push_back(text_request("req-" + std::to_string(i)));
    auto out = gw.complete_many(mock_endpoint(), reqs, 4);

    REQUIRE(out.size() == 10);
    for (int i = 0; i < 10; ++i) {
        REQUIRE(out[i].ok());
        CHECK(out[i].response->text == "echo:req-" + std::to_string(i));
    }
    CHECK(mock->max_in_flight() <= 4);
    CHECK(mock->max_in_flight() >= 2);  // it did actually run in parallel
}

TEST_CASE("complete_many with parallelism=1 is sequential") {
    auto mock = std::make_shared<MockTransport>([](const MockTransport::PostRecord&) {
        std::this_thread::sleep_for(std::chrono::milliseconds(2));
        return RawResponse{200, canned_reply("x")};
    });
    auto gw = fast_gateway(mock);
    std::vector<ChatRequest> reqs(5, text_request("q"));
    auto out = gw.complete_many(mock_endpoint(), reqs, 1);
    CHECK(out.size() == 5);
    CHECK(mock->max_in_flight() == 1);
    CHECK_THROWS_AS(gw.complete_many(mock_endpoint(), reqs, 0), ConfigError);
}

TEST_CASE("one poisoned request yields nine successes and one in-place error") {
    auto mock = std::make_shared<MockTransport>([](const MockTransport::PostRecord& rec) {
        if (rec.body.find("req-3") != std::string::npos) return RawResponse{400, "poison"};
        return RawResponse{200, canned_reply("fine")};
    });
    auto gw = fast_gateway(mock);

    std::vector<ChatRequest> reqs;
    for (int i = 0; i < 10; ++i) reqs.push_back(text_request("req-" + std::to_string(i)));
    auto out = gw.complete_many(mock_endpoint(), reqs, 3);

    std::size_t ok = 0;
    for (int i = 0; i < 10; ++i) {
        if (i == 3) {
            CHECK_FALSE(out[i].ok());
            CHECK(out[i].error_kind == "transport");
            CHECK_FALSE(out[i].error.empty());
        } else {
            CHECK(out[i].ok());
            ++ok;
        }
    }
    CHECK(ok == 9);
}

TEST_CASE("endpoint config files load, validate, and reject junk") {
    auto dir = std::filesystem::temp_directory_path() / "aukit_gateway_cfg";
    std::filesystem::create_directories(dir);
    auto path = dir / "endpoints.json";
    {
        std::ofstream os(path);
        os << R"({"endpoints": {
            "judge": {"base_url": "http://j:1", "model": "m-j", "temperature": 0.0},
            "captioner": {"base_url": "http://c:2", "model": "m-c", "max_retries": 5}
        }})";
    }
    auto eps = load_endpoints(path);
    REQUIRE(eps.size() == 2);
    CHECK(eps.at(Role::Judge).base_url == "http://j:1");
    CHECK(eps.at(Role::Captioner).max_retries == 5);
    CHECK(eps.at(Role::Captioner).path == "/v1/chat/completions");

    {
        std::ofstream os(path);
        os << R"({"endpoints": {"archbishop": {"base_url": "http://x", "model": "m"}}})";
    }
    CHECK_THROWS_AS(load_endpoints(path), ConfigError);
    {
        std::ofstream os(path);
        os << R"({"endpoints": {"judge": {"model": "m"}}})";
    }
    CHECK_THROWS_AS(load_endpoints(path), ConfigError);
    CHECK_THROWS_AS(load_endpoints(dir / "absent.json"), ConfigError);

    // The shipped example covers every role.
    auto example = load_endpoints(testing::repo_root() / "data" / "endpoints.example.json");
    CHECK(example.size() == kNumRoles);
}

TEST_CASE("real HTTP round-trip over loopback") {
    httplib::Server server;
    std::string seen_content_type;
    server.Post("/v1/chat/completions", [&](const httplib::Request& req, httplib::Response& res) {
        seen_content_type = req.get_header_value("Content-Type");
        res.set_content(canned_reply("loopback says hi"), "application/json");
    });
    server.Post("/broken", [](const httplib::Request&, httplib::Response& res) {
        res.status = 404;
    });

    int port = server.bind_to_any_port("127.0.0.1");
    REQUIRE(port > 0);
    std::thread srv([&] { server.listen_after_bind(); });
    server.wait_until_ready();

    ModelEndpoint ep = mock_endpoint();
    ep.base_url = "http://127.0.0.1:" + std::to_string(port);
    Gateway gw(std::make_shared<HttpTransport>());

    auto resp = gw.complete(ep, text_request("over the wire"));
    CHECK(resp.text == "loopback says hi");
    CHECK(seen_content_type == "application/json");

    ep.path = "/broken";
    CHECK_THROWS_AS(gw.complete(ep, text_request("x")), TransportError);

    server.stop();
    srv.join();
}
