// Copyright (c) 2026 aukit contributors
// SPDX-License-Identifier: Apache-2.0

#include <cmath>

#include <httplib.h>

#include "aukit/gateway/gateway.hpp"

namespace aukit::gateway {

RawResponse HttpTransport::post(const std::string& url, const std::string& body,
                                const std::map<std::string, std::string>& headers,
                                double timeout_s) {
    // Split "<scheme>://host[:port]" and the request path.
    auto scheme_end = url.find("://");
    if (scheme_end == std::string::npos) throw TransportError("bad URL: " + url);
    auto path_start = url.find('/', scheme_end + 3);
    std::string origin = path_start == std::string::npos ? url : url.substr(0, path_start);
    std::string path = path_start == std::string::npos ? "/" : url.substr(path_start);

    httplib::Client cli(origin);
    auto whole = std::max<time_t>(1, static_cast<time_t>(std::ceil(timeout_s)));
    cli.set_connection_timeout(whole, 0);
    cli.set_read_timeout(whole, 0);
    cli.set_write_timeout(whole, 0);

    httplib::Headers h;
    for (const auto& [k, v] : headers) {
        if (k == "Content-Type") continue;  // supplied with the body below
        h.emplace(k, v);
    }

    auto res = cli.Post(path, h, body, "application/json");
    if (!res) {
        throw TransportError("no response from " + origin + ": " + httplib::to_string(res.error()));
    }
    return RawResponse{res->status, res->body};
}

}  // namespace aukit::gateway
