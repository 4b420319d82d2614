#include "spikescore/http.hpp"

#include <cmath>

#include <httplib.h>
#include <json.hpp>

#include "spikescore/error.hpp"

namespace spikescore {
namespace {

struct SplitUrl {
    std::string origin;  // scheme://host[:port]
    std::string path;
};

SplitUrl split_url(const std::string& url) {
    const auto scheme_end = url.find("://");
    if (scheme_end == std::string::npos) {
        throw BackendError(BackendError::Cause::Transport, "endpoint URL lacks a scheme: " + url);
    }
    const auto path_start = url.find('/', scheme_end + 3);
    if (path_start == std::string::npos) return {url, "/"};
    return {url.substr(0, path_start), url.substr(path_start)};
}

}  // namespace

nlohmann::json post_json(const HttpEndpoint& endpoint, const nlohmann::json& body) {
    const auto [origin, path] = split_url(endpoint.url);
    httplib::Client client(origin);
    const auto seconds = std::chrono::duration_cast<std::chrono::seconds>(endpoint.timeout);
    const auto micros = std::chrono::duration_cast<std::chrono::microseconds>(endpoint.timeout - seconds);
    client.set_connection_timeout(seconds.count(), micros.count());
    client.set_read_timeout(seconds.count(), micros.count());
    client.set_write_timeout(seconds.count(), micros.count());

    httplib::Headers headers;
    if (!endpoint.bearer_token.empty()) {
        headers.emplace("Authorization", "Bearer " + endpoint.bearer_token);
    }
    auto result = client.Post(path, headers, body.dump(), "application/json");
    if (!result) {
        const auto err = result.error();
        const auto cause = (err == httplib::Error::Read || err == httplib::Error::Write ||
                            err == httplib::Error::ConnectionTimeout)
                               ? BackendError::Cause::Timeout
                               : BackendError::Cause::Transport;
        throw BackendError(cause, "request to " + endpoint.url + " failed: " + httplib::to_string(err));
    }
    if (result->status >= 400) {
        throw BackendError(BackendError::Cause::HttpStatus,
                           "HTTP " + std::to_string(result->status) + " from " + endpoint.url,
                           result->status);
    }
    try {
        return nlohmann::json::parse(result->body);
    } catch (const nlohmann::json::parse_error& e) {
        throw BackendError(BackendError::Cause::MalformedResponse,
                           std::string("response is not JSON: ") + e.what(), result->status);
    }
}

nlohmann::json HttpChatBackend::build_request(std::span<const ChatMessage> messages,
                                              const DecodingConfig& decoding) const {
    nlohmann::json msgs = nlohmann::json::array();
    for (const auto& m : messages) {
        msgs.push_back({{"role", role_name(m.role)}, {"content", m.content}});
    }
    nlohmann::json req{{"model", config_.model},
                       {"messages", std::move(msgs)},
                       {"temperature", decoding.temperature},
                       {"top_p", decoding.top_p},
                       {"max_tokens", decoding.max_answer_tokens}};
    if (decoding.request_logprobs) req["logprobs"] = true;
    return req;
}

ChatReply HttpChatBackend::parse_response(const nlohmann::json& response) {
    try {
        const auto& choice = response.at("choices").at(0);
        ChatReply reply;
        reply.text = choice.at("message").at("content").get<std::string>();
        if (auto lp = choice.find("logprobs"); lp != choice.end() && lp->is_object()) {
            std::vector<double> values;
            for (const auto& tok : lp->at("content")) {
                const double v = tok.at("logprob").get<double>();
                if (!std::isfinite(v)) {
                    throw BackendError(BackendError::Cause::MalformedResponse, "non-finite token logprob");
                }
                values.push_back(v);
            }
            reply.token_logprobs = std::move(values);
        }
        if (reply.text.empty()) throw BackendError(BackendError::Cause::EmptyReply, "backend returned an empty reply");
        return reply;
    } catch (const nlohmann::json::exception& e) {
        throw BackendError(BackendError::Cause::MalformedResponse,
                           std::string("malformed chat response: ") + e.what());
    }
}

ChatReply HttpChatBackend::complete(std::span<const ChatMessage> messages,
                                    const DecodingConfig& decoding, const ChatSession& session) const {
    (void)session;
    validate_messages(messages);
    return parse_response(post_json(config_.endpoint, build_request(messages, decoding)));
}

}  // namespace spikescore
