// Copyright (c) 2026 aukit contributors
// SPDX-License-Identifier: Apache-2.0
//
// Uniform chat-completions client over the external model roles: typed
// endpoints, a pluggable transport (real HTTP or deterministic mock),
// retry with jittered exponential backoff, and order-preserving bounded
// parallel batches.

#pragma once

#include <atomic>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "aukit/common/error.hpp"

namespace aukit::gateway {

enum class Role { Captioner, Generator, AnswererA, AnswererB, Judge, QAReader };
inline constexpr std::size_t kNumRoles = 6;

const char* role_name(Role r);
Role role_from_name(const std::string& name);

struct ModelEndpoint {
    Role role = Role::Generator;
    std::string base_url;                        // e.g. "http://localhost:8080"
    std::string path = "/v1/chat/completions";   // POST target
    std::string model;                           // served model name
    std::string auth_env;                        // env var holding the bearer token ("" = none)
    double timeout_s = 30.0;
    std::size_t max_retries = 3;                 // extra attempts after the first
    double temperature = 0.0;
    std::size_t max_tokens = 1024;

    void validate() const;
};

/// role -> endpoint table from a JSON config file.
std::map<Role, ModelEndpoint> load_endpoints(const std::filesystem::path& path);

struct AudioAttachment {
    std::string media_type;   // e.g. "audio/wav"
    std::string base64_data;  // payload, already encoded
};

struct ChatMessage {
    std::string role;  // "system" | "user" | "assistant"
    std::string text;
    std::optional<AudioAttachment> audio;
};

struct ChatRequest {
    std::vector<ChatMessage> messages;

    /// Non-empty messages; at most one audio attachment per request.
    void validate() const;
};

struct ChatResponse {
    std::string text;
    std::string finish_reason;
    std::size_t prompt_tokens = 0;
    std::size_t completion_tokens = 0;
    double latency_s = 0.0;   // successful attempt only
    std::size_t attempts = 0; // total POSTs issued for this request
};

/// The serialized wire body for (endpoint, request); pinned by golden
/// fixtures. Auth material never appears here.
std::string request_body(const ModelEndpoint& ep, const ChatRequest& req);

/// What a transport returns when the server answered at all.
struct RawResponse {
    int status = 0;
    std::string body;
};

class Transport {
public:
    virtual ~Transport() = default;
    /// POST `body` as application/json. Throws TransportError when no
    /// HTTP response was obtained (connect failure, timeout).
    virtual RawResponse post(const std::string& url, const std::string& body,
                             const std::map<std::string, std::string>& headers,
                             double timeout_s) = 0;
};

/// Real HTTP transport (cpp-httplib).
class HttpTransport : public Transport {
public:
    RawResponse post(const std::string& url, const std::string& body,
                     const std::map<std::string, std::string>& headers,
                     double timeout_s) override;
};

/// Deterministic scriptable transport for tests: hands every POST to a
/// handler, records the traffic, and tracks concurrent calls.
class MockTransport : public Transport {
public:
    struct PostRecord {
        std::size_t index = 0;  // global arrival order
        std::string url;
        std::string body;
        std::map<std::string, std::string> headers;
    };
    using Handler = std::function<RawResponse(const PostRecord&)>;

    explicit MockTransport(Handler handler);

    RawResponse post(const std::string& url, const std::string& body,
                     const std::map<std::string, std::string>& headers,
                     double timeout_s) override;

    /// Hold each call open for `seconds` (wall clock) to exercise the
    /// concurrency bound.
    void set_delay(double seconds) { delay_s_ = seconds; }

    std::vector<PostRecord> records() const;
    std::size_t calls() const;
    std::size_t max_in_flight() const { return max_in_flight_.load(); }

private:
    Handler handler_;
    double delay_s_ = 0.0;
    mutable std::mutex mu_;
    std::vector<PostRecord> records_;
    std::atomic<std::size_t> in_flight_{0};
    std::atomic<std::size_t> max_in_flight_{0};
};

struct GatewayOptions {
    double backoff_base_s = 0.5;
    double backoff_factor = 2.0;
    double jitter_frac = 0.2;     // uniform in [1-f, 1+f]
    std::uint64_t seed = 0x5eed;  // jitter determinism
    /// Injectable so tests observe delays instead of waiting them out.
    std::function<void(double)> sleeper;
    /// Line-delimited JSON log sink; never receives auth material.
    std::function<void(const std::string&)> log_sink;
};

class Gateway {
public:
    explicit Gateway(std::shared_ptr<Transport> transport, GatewayOptions opt = {});

    /// One request with retry. Transient failures (no response, HTTP 5xx,
    /// 429) back off and retry up to max_retries; 401/403 raise AuthError
    /// immediately; other 4xx raise TransportError immediately; an
    /// unparseable success body raises MalformedResponseError.
    ChatResponse complete(const ModelEndpoint& ep, const ChatRequest& req);

    struct ItemOutcome {
        std::optional<ChatResponse> response;
        std::string error_kind;  // "transport" | "auth" | "malformed" | "request"
        std::string error;
        bool ok() const { return response.has_value(); }
    };

    /// Issues the batch with at most `parallelism` requests in flight;
    /// results align with the input order and per-item failures never
    /// abort the batch.
    std::vector<ItemOutcome> complete_many(const ModelEndpoint& ep,
                                           const std::vector<ChatRequest>& reqs,
                                           std::size_t parallelism);

private:
    ChatResponse attempt_loop(const ModelEndpoint& ep, const std::string& body,
                              std::uint64_t correlation);

    std::shared_ptr<Transport> transport_;
    GatewayOptions opt_;
    std::atomic<std::uint64_t> next_correlation_{1};
};

}  // namespace aukit::gateway
