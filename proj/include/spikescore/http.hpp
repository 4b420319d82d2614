#pragma once

#include <chrono>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "spikescore/chat.hpp"

namespace spikescore {

struct HttpEndpoint {
    std::string url;  ///< e.g. http://127.0.0.1:8080/v1/chat/completions
    std::string bearer_token;
    std::chrono::milliseconds timeout{60000};
};

/// POSTs a JSON body and parses the JSON response. Throws BackendError on
/// transport failure, timeout, status >= 400, or an unparsable body.
nlohmann::json post_json(const HttpEndpoint& endpoint, const nlohmann::json& body);

struct HttpChatConfig {
    HttpEndpoint endpoint;
    std::string model;
};

/// Messages-array chat-completion client:
///   request  {model, messages:[{role, content}], temperature, top_p, max_tokens, logprobs?}
///   response {choices:[{message:{content}, logprobs?:{content:[{logprob}]}}]}
class HttpChatBackend final : public ChatBackend {
public:
    explicit HttpChatBackend(HttpChatConfig config) : config_(std::move(config)) {}

    ChatReply complete(std::span<const ChatMessage> messages, const DecodingConfig& decoding,
                       const ChatSession& session) const override;

    [[nodiscard]] std::string id() const override { return "http:" + config_.model; }

    /// Request body for a call; exposed for tests and logging.
    nlohmann::json build_request(std::span<const ChatMessage> messages,
                                 const DecodingConfig& decoding) const;

    /// Extracts the reply from a response body; throws BackendError on a malformed body.
    static ChatReply parse_response(const nlohmann::json& response);

private:
    HttpChatConfig config_;
};

}  // namespace spikescore
