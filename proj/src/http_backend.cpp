// SPDX-License-Identifier: Apache-2.0
#include <cstdlib>

#include <httplib.h>
#include <json.hpp>

#include "signpipe/dialogue.hpp"
#include "signpipe/error.hpp"

namespace signpipe {

namespace {

std::pair<std::string, std::string> split_url(const std::string& url)
{
    const auto scheme_end = url.find("://");
    if (scheme_end == std::string::npos)
        throw BackendError("base URL '" + url + "' has no scheme");
    const auto scheme = url.substr(0, scheme_end);
    if (scheme != "http" && scheme != "https")
        throw BackendError("unsupported URL scheme '" + scheme + "'");
    const auto path_start = url.find('/', scheme_end + 3);
    if (path_start == std::string::npos)
        return {url, ""};
    std::string prefix = url.substr(path_start);
    while (!prefix.empty() && prefix.back() == '/')
        prefix.pop_back();
    return {url.substr(0, path_start), prefix};
}

} // namespace

HttpBackend::HttpBackend(HttpBackendConfig cfg) : cfg_(std::move(cfg))
{
    if (!(cfg_.timeout_s > 0.0))
        throw ArgumentError("HTTP backend timeout must be positive");
    std::tie(origin_, path_prefix_) = split_url(cfg_.base_url);
}

std::string HttpBackend::complete(const std::string& prompt)
{
    const char* key = std::getenv(cfg_.api_key_env.c_str());
    if (!key || !*key)
        throw BackendError("environment variable " + cfg_.api_key_env + " is not set");

    nlohmann::ordered_json body;
    body["model"] = cfg_.model;
    body["messages"] = nlohmann::ordered_json::array({{{"role", "user"}, {"content", prompt}}});

    httplib::Client client(origin_);
    const auto secs = static_cast<time_t>(cfg_.timeout_s);
    const auto usecs = static_cast<time_t>((cfg_.timeout_s - static_cast<double>(secs)) * 1e6);
    client.set_connection_timeout(secs, usecs);
    client.set_read_timeout(secs, usecs);
    client.set_write_timeout(secs, usecs);
    client.set_bearer_token_auth(key);

    const auto res = client.Post(path_prefix_ + "/chat/completions", body.dump(), "application/json");
    if (!res)
        throw BackendError("chat request to " + origin_ + " failed: " + httplib::to_string(res.error()));
    if (res->status != 200)
        throw BackendError("chat endpoint returned HTTP " + std::to_string(res->status));
    try {
        const auto j = nlohmann::json::parse(res->body);
        return j.at("choices").at(0).at("message").at("content").get<std::string>();
    } catch (const nlohmann::json::exception& e) {
        throw BackendError(std::string("unexpected chat response: ") + e.what());
    }
}

} // namespace signpipe
