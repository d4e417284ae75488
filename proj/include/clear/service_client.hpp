#pragma once

#include <string>
#include <vector>

#include "clear/error.hpp"

namespace clear {

// Environment variable holding the bearer token for both services.
inline constexpr const char* kApiKeyEnvVar = "CLEAR_API_KEY";

struct HttpEndpoint {
    std::string host;  // scheme://host:port
    std::string path;
};

HttpEndpoint parse_endpoint(const std::string& url);

// Minimal chat-completion client (OpenAI-style schema). Requests are issued
// at temperature 0; transient failures retry up to 3 times with exponential
// backoff. Safe for concurrent use: each call owns its connection.
class ChatClient {
  public:
    ChatClient(std::string endpoint, std::string model);

    std::string complete(const std::string& system_msg, const std::string& user_msg) const;

  private:
    std::string endpoint_;
    std::string model_;
};

// Embedding service client: list of texts in, list of vectors out, batched in
// groups of at most 64.
class EmbeddingClient {
  public:
    EmbeddingClient(std::string endpoint, std::string model, size_t expected_dim);

    std::vector<std::vector<double>> embed(const std::vector<std::string>& texts) const;

  private:
    std::string endpoint_;
    std::string model_;
    size_t expected_dim_;
};

}  // namespace clear
