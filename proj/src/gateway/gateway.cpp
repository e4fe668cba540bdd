// Copyright (c) 2026 aukit contributors
// SPDX-License-Identifier: Apache-2.0

#include "aukit/gateway/gateway.hpp"

#include <array>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <thread>

#include <json.hpp>

#include "aukit/common/rng.hpp"

namespace aukit::gateway {

using nlohmann::json;

namespace {

constexpr std::array<const char*, kNumRoles> kRoleNames = {
    "captioner", "generator", "answerer_a", "answerer_b", "judge", "qa_reader",
};

double now_s() {
    using clock = std::chrono::steady_clock;
    return std::chrono::duration<double>(clock::now().time_since_epoch()).count();
}

bool transient_status(int status) { return status == 429 || (status >= 500 && status < 600); }

/// "audio/wav" -> "wav"; pass through names without a slash.
std::string media_format(const std::string& media_type) {
    auto slash = media_type.find('/');
    return slash == std::string::npos ? media_type : media_type.substr(slash + 1);
}

}  // namespace

const char* role_name(Role r) { return kRoleNames[static_cast<std::size_t>(r)]; }

Role role_from_name(const std::string& name) {
    for (std::size_t i = 0; i < kNumRoles; ++i) {
        if (name == kRoleNames[i]) return static_cast<Role>(i);
    }
    throw ConfigError("unknown endpoint role: '" + name + "'");
}

void ModelEndpoint::validate() const {
    if (base_url.empty()) throw ConfigError("endpoint base_url is empty");
    if (path.empty() || path.front() != '/') throw ConfigError("endpoint path must start with '/'");
    if (model.empty()) throw ConfigError("endpoint model name is empty");
    if (!(timeout_s > 0.0)) throw ConfigError("endpoint timeout must be positive");
    if (!(temperature >= 0.0)) throw ConfigError("endpoint temperature must be >= 0");
    if (max_tokens == 0) throw ConfigError("endpoint max_tokens must be positive");
}

std::map<Role, ModelEndpoint> load_endpoints(const std::filesystem::path& path) {
    std::ifstream is(path);
    if (!is) throw ConfigError("cannot open endpoint config " + path.string());
    json j;
    try {
        is >> j;
    } catch (const json::exception& e) {
        throw ConfigError("endpoint config " + path.string() + ": " + e.what());
    }
    if (!j.is_object() || !j.contains("endpoints") || !j["endpoints"].is_object()) {
        throw ConfigError("endpoint config needs a top-level \"endpoints\" object");
    }
    std::map<Role, ModelEndpoint> out;
    for (const auto& [key, val] : j["endpoints"].items()) {
        ModelEndpoint ep;
        ep.role = role_from_name(key);
        try {
            ep.base_url = val.at("base_url").get<std::string>();
            ep.model = val.at("model").get<std::string>();
            if (val.contains("path")) ep.path = val["path"].get<std::string>();
            if (val.contains("auth_env")) ep.auth_env = val["auth_env"].get<std::string>();
            if (val.contains("timeout_s")) ep.timeout_s = val["timeout_s"].get<double>();
            if (val.contains("max_retries")) ep.max_retries = val["max_retries"].get<std::size_t>();
            if (val.contains("temperature")) ep.temperature = val["temperature"].get<double>();
            if (val.contains("max_tokens")) ep.max_tokens = val["max_tokens"].get<std::size_t>();
        } catch (const json::exception& e) {
            throw ConfigError("endpoint '" + key + "': " + e.what());
        }
        ep.validate();
        out.emplace(ep.role, std::move(ep));
    }
    return out;
}

void ChatRequest::validate() const {
    if (messages.empty()) throw ContractError("chat request has no messages");
    std::size_t audio = 0;
    for (const auto& m : messages) {
        if (m.role != "system" && m.role != "user" && m.role != "assistant") {
            throw ContractError("unknown message role '" + m.role + "'");
        }
        if (m.audio) ++audio;
    }
    if (audio > 1) throw ContractError("at most one audio attachment per request");
}

std::string request_body(const ModelEndpoint& ep, const ChatRequest& req) {
    req.validate();
    json body;
    body["model"] = ep.model;
    body["temperature"] = ep.temperature;
    body["max_tokens"] = ep.max_tokens;
    json msgs = json::array();
    for (const auto& m : req.messages) {
        json jm;
        jm["role"] = m.role;
        if (m.audio) {
            json parts = json::array();
            parts.push_back({{"type", "text"}, {"text", m.text}});
            parts.push_back({{"type", "input_audio"},
                             {"input_audio",
                              {{"data", m.audio->base64_data},
                               {"format", media_format(m.audio->media_type)}}}});
            jm["content"] = std::move(parts);
        } else {
            jm["content"] = m.text;
        }
        msgs.push_back(std::move(jm));
    }
    body["messages"] = std::move(msgs);
    return body.dump();
}

MockTransport::MockTransport(Handler handler) : handler_(std::move(handler)) {
    if (!handler_) throw ContractError("mock transport needs a handler");
}

RawResponse MockTransport::post(const std::string& url, const std::string& body,
                                const std::map<std::string, std::string>& headers,
                                double /*timeout_s*/) {
    std::size_t current = in_flight_.fetch_add(1) + 1;
    std::size_t seen = max_in_flight_.load();
    while (current > seen && !max_in_flight_.compare_exchange_weak(seen, current)) {
    }

    PostRecord rec;
    rec.url = url;
    rec.body = body;
    rec.headers = headers;
    {
        std::lock_guard<std::mutex> lock(mu_);
        rec.index = records_.size();
        records_.push_back(rec);
    }

    if (delay_s_ > 0.0) {
        std::this_thread::sleep_for(std::chrono::duration<double>(delay_s_));
    }
    struct Release {
        std::atomic<std::size_t>* c;
        ~Release() { c->fetch_sub(1); }
    } release{&in_flight_};
    return handler_(rec);
}

std::vector<MockTransport::PostRecord> MockTransport::records() const {
    std::lock_guard<std::mutex> lock(mu_);
    return records_;
}

std::size_t MockTransport::calls() const {
    std::lock_guard<std::mutex> lock(mu_);
    return records_.size();
}

Gateway::Gateway(std::shared_ptr<Transport> transport, GatewayOptions opt)
    : transport_(std::move(transport)), opt_(std::move(opt)) {
    if (!transport_) throw ContractError("gateway needs a transport");
    if (!(opt_.backoff_base_s > 0.0) || !(opt_.backoff_factor >= 1.0) ||
        !(opt_.jitter_frac >= 0.0) || !(opt_.jitter_frac < 1.0)) {
        throw ConfigError("invalid backoff configuration");
    }
    if (!opt_.sleeper) {
        opt_.sleeper = [](double s) {
            std::this_thread::sleep_for(std::chrono::duration<double>(s));
        };
    }
}

namespace {

ChatResponse parse_response(const std::string& body) {
    json j;
    try {
        j = json::parse(body);
    } catch (const json::exception& e) {
        throw MalformedResponseError(std::string("response is not JSON: ") + e.what());
    }
    ChatResponse r;
    try {
        const auto& choice = j.at("choices").at(0);
        r.text = choice.at("message").at("content").get<std::string>();
        if (choice.contains("finish_reason") && choice["finish_reason"].is_string()) {
            r.finish_reason = choice["finish_reason"].get<std::string>();
        }
        if (j.contains("usage") && j["usage"].is_object()) {
            const auto& u = j["usage"];
            if (u.contains("prompt_tokens")) r.prompt_tokens = u["prompt_tokens"].get<std::size_t>();
            if (u.contains("completion_tokens")) {
                r.completion_tokens = u["completion_tokens"].get<std::size_t>();
            }
        }
    } catch (const json::exception& e) {
        throw MalformedResponseError(std::string("unexpected response shape: ") + e.what());
    }
    return r;
}

}  // namespace

ChatResponse Gateway::attempt_loop(const ModelEndpoint& ep, const std::string& body,
                                   std::uint64_t correlation) {
    std::map<std::string, std::string> headers;
    headers["Content-Type"] = "application/json";
    if (!ep.auth_env.empty()) {
        const char* token = std::getenv(ep.auth_env.c_str());
        if (token && *token) headers["Authorization"] = std::string("Bearer ") + token;
    }
    const std::string url = ep.base_url + ep.path;

    auto log = [&](std::size_t attempt, const json& extra) {
        if (!opt_.log_sink) return;
        json line;
        line["corr"] = correlation;
        line["role"] = role_name(ep.role);
        line["model"] = ep.model;
        line["attempt"] = attempt;
        line.update(extra);
        opt_.log_sink(line.dump());
    };

    // Per-request jitter stream: deterministic under the gateway seed and
    // independent of thread interleaving.
    Rng jitter(opt_.seed ^ (correlation * 0x9e3779b97f4a7c15ULL));

    std::string last_error;
    const std::size_t max_attempts = ep.max_retries + 1;
    for (std::size_t attempt = 1; attempt <= max_attempts; ++attempt) {
        if (attempt > 1) {
            double base = opt_.backoff_base_s *
                          std::pow(opt_.backoff_factor, static_cast<double>(attempt - 2));
            double lo = 1.0 - opt_.jitter_frac, hi = 1.0 + opt_.jitter_frac;
            double delay = base * (lo + (hi - lo) * jitter.uniform());
            log(attempt, {{"event", "backoff"}, {"delay_s", delay}});
            opt_.sleeper(delay);
        }
        log(attempt, {{"event", "request"}, {"bytes", body.size()}});

        double t0 = now_s();
        RawResponse raw;
        try {
            raw = transport_->post(url, body, headers, ep.timeout_s);
        } catch (const TransportError& e) {
            last_error = e.what();
            log(attempt, {{"event", "response"}, {"ok", false}, {"error", last_error}});
            continue;  // transient: no HTTP response at all
        }
        double latency = now_s() - t0;

        if (raw.status / 100 == 2) {
            ChatResponse r = parse_response(raw.body);
            r.latency_s = latency;
            r.attempts = attempt;
            log(attempt,
                {{"event", "response"}, {"ok", true}, {"status", raw.status},
                 {"latency_ms", latency * 1e3}});
            return r;
        }
        log(attempt, {{"event", "response"}, {"ok", false}, {"status", raw.status}});
        if (raw.status == 401 || raw.status == 403) {
            throw AuthError("HTTP " + std::to_string(raw.status) + " from " + role_name(ep.role));
        }
        if (!transient_status(raw.status)) {
            throw TransportError("HTTP " + std::to_string(raw.status) + " from " +
                                 role_name(ep.role) + " (not retried)");
        }
        last_error = "HTTP " + std::to_string(raw.status);
    }
    throw TransportError(std::string(role_name(ep.role)) + " failed after " +
                         std::to_string(max_attempts) + " attempts: " + last_error);
}

ChatResponse Gateway::complete(const ModelEndpoint& ep, const ChatRequest& req) {
    ep.validate();
    // Serialized once; retries reuse the identical bytes.
    std::string body = request_body(ep, req);
    std::uint64_t corr = next_correlation_.fetch_add(1);
    return attempt_loop(ep, body, corr);
}

std::vector<Gateway::ItemOutcome> Gateway::complete_many(const ModelEndpoint& ep,
                                                         const std::vector<ChatRequest>& reqs,
                                                         std::size_t parallelism) {
    ep.validate();
    if (parallelism < 1) throw ConfigError("parallelism must be >= 1");

    std::vector<ItemOutcome> out(reqs.size());
    std::atomic<std::size_t> next{0};
    auto worker = [&]() {
        while (true) {
            std::size_t i = next.fetch_add(1);
            if (i >= reqs.size()) return;
            try {
                out[i].response = complete(ep, reqs[i]);
            } catch (const AuthError& e) {
                out[i].error_kind = "auth";
                out[i].error = e.what();
            } catch (const MalformedResponseError& e) {
                out[i].error_kind = "malformed";
                out[i].error = e.what();
            } catch (const TransportError& e) {
                out[i].error_kind = "transport";
                out[i].error = e.what();
            } catch (const Error& e) {
                out[i].error_kind = "request";
                out[i].error = e.what();
            }
        }
    };

    std::size_t n_threads = std::min(parallelism, reqs.size());
    if (n_threads <= 1) {
        worker();
        return out;
    }
    std::vector<std::thread> pool;
    pool.reserve(n_threads);
    for (std::size_t t = 0; t < n_threads; ++t) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
    return out;
}

}  // namespace aukit::gateway
