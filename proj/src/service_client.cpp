#include "clear/service_client.hpp"

#include <chrono>
#include <cstdlib>
#include <thread>

#include <httplib.h>
#include <nlohmann/json.hpp>

namespace clear {

using nlohmann::json;

namespace {

constexpr int kMaxAttempts = 3;
constexpr int kBackoffBaseMs = 200;

std::string api_key() {
    const char* key = std::getenv(kApiKeyEnvVar);
    return key ? key : "";
}

json post_json(const std::string& endpoint, const json& body) {
    HttpEndpoint ep = parse_endpoint(endpoint);
    std::string last_error;
    for (int attempt = 0; attempt < kMaxAttempts; ++attempt) {
        if (attempt > 0)
            std::this_thread::sleep_for(
                std::chrono::milliseconds(kBackoffBaseMs << (attempt - 1)));
        httplib::Client cli(ep.host);
        cli.set_read_timeout(60, 0);
        httplib::Headers headers;
        std::string key = api_key();
        if (!key.empty()) headers.emplace("Authorization", "Bearer " + key);
        auto res = cli.Post(ep.path, headers, body.dump(), "application/json");
        if (!res) {
            last_error = "connection failed: " + httplib::to_string(res.error());
            continue;
        }
        if (res->status >= 500) {
            last_error = "server error " + std::to_string(res->status) + ": " + res->body;
            continue;  // retryable
        }
        if (res->status != 200)
            throw Error(ErrorKind::service, "service returned status " +
                                                std::to_string(res->status) + ": " +
                                                res->body);
        try {
            return json::parse(res->body);
        } catch (const json::exception& e) {
            throw Error(ErrorKind::service, std::string("unparseable service response: ") +
                                                e.what() + "; raw payload: " + res->body);
        }
    }
    throw Error(ErrorKind::service, "service unreachable after " +
                                        std::to_string(kMaxAttempts) +
                                        " attempts: " + last_error);
}

}  // namespace

HttpEndpoint parse_endpoint(const std::string& url) {
    // split scheme://host[:port]/path
    size_t scheme_end = url.find("://");
    if (scheme_end == std::string::npos)
        throw Error(ErrorKind::config, "endpoint must include a scheme: " + url);
    size_t path_start = url.find('/', scheme_end + 3);
    HttpEndpoint ep;
    if (path_start == std::string::npos) {
        ep.host = url;
        ep.path = "/";
    } else {
        ep.host = url.substr(0, path_start);
        ep.path = url.substr(path_start);
    }
    return ep;
}

ChatClient::ChatClient(std::string endpoint, std::string model)
    : endpoint_(std::move(endpoint)), model_(std::move(model)) {
    if (endpoint_.empty())
        throw Error(ErrorKind::config, "chat client requires an endpoint");
}

std::string ChatClient::complete(const std::string& system_msg,
                                 const std::string& user_msg) const {
    json body = {
        {"model", model_},
        {"temperature", 0},
        {"messages",
         {{{"role", "system"}, {"content", system_msg}},
          {{"role", "user"}, {"content", user_msg}}}},
    };
    json reply = post_json(endpoint_, body);
    if (!reply.contains("choices") || !reply["choices"].is_array() ||
        reply["choices"].empty() || !reply["choices"][0].contains("message") ||
        !reply["choices"][0]["message"].contains("content"))
        throw Error(ErrorKind::service,
                    "malformed chat response; raw payload: " + reply.dump());
    return reply["choices"][0]["message"]["content"].get<std::string>();
}

EmbeddingClient::EmbeddingClient(std::string endpoint, std::string model,
                                 size_t expected_dim)
    : endpoint_(std::move(endpoint)), model_(std::move(model)), expected_dim_(expected_dim) {
    if (endpoint_.empty())
        throw Error(ErrorKind::config, "embedding client requires an endpoint");
}

std::vector<std::vector<double>> EmbeddingClient::embed(
    const std::vector<std::string>& texts) const {
    constexpr size_t kBatch = 64;
    std::vector<std::vector<double>> out;
    out.reserve(texts.size());
    for (size_t begin = 0; begin < texts.size(); begin += kBatch) {
        size_t end = std::min(begin + kBatch, texts.size());
        json inputs = json::array();
        for (size_t i = begin; i < end; ++i) inputs.push_back(texts[i]);
        json body = {{"model", model_}, {"input", inputs}};
        json reply = post_json(endpoint_, body);
        if (!reply.contains("data") || !reply["data"].is_array() ||
            reply["data"].size() != end - begin)
            throw Error(ErrorKind::service,
                        "malformed embedding response; raw payload: " + reply.dump());
        for (const auto& row : reply["data"]) {
            if (!row.contains("embedding") || !row["embedding"].is_array())
                throw Error(ErrorKind::service,
                            "embedding entry missing vector; raw payload: " + reply.dump());
            std::vector<double> v = row["embedding"].get<std::vector<double>>();
            if (expected_dim_ != 0 && v.size() != expected_dim_)
                throw Error(ErrorKind::contract,
                            "embedding dim " + std::to_string(v.size()) +
                                " does not match configured dim " +
                                std::to_string(expected_dim_));
            out.push_back(std::move(v));
        }
    }
    return out;
}

}  // namespace clear
