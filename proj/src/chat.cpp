#include "spikescore/chat.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <thread>

#include <json.hpp>

#include "spikescore/error.hpp"

namespace spikescore {

std::string_view role_name(Role role) noexcept {
    switch (role) {
    case Role::System: return "system";
    case Role::User: return "user";
    case Role::Assistant: return "assistant";
    }
    return "user";
}

std::string_view regime_name(Regime regime) noexcept {
    return regime == Regime::Factual ? "factual" : "hallucinated";
}

void DecodingConfig::validate() const {
    if (!(temperature >= 0.0) || !std::isfinite(temperature)) {
        fail(ErrorKind::Config, "temperature must be a finite non-negative number");
    }
    if (!(top_p > 0.0 && top_p <= 1.0)) fail(ErrorKind::Config, "top_p must lie in (0, 1]");
    if (max_answer_tokens < 1) fail(ErrorKind::Config, "max_answer_tokens must be positive");
    if (turn_budget < 1) fail(ErrorKind::Config, "turn_budget must be positive");
}

void to_json(nlohmann::json& j, const DecodingConfig& c) {
    j = nlohmann::json{{"temperature", c.temperature},
                       {"top_p", c.top_p},
                       {"max_answer_tokens", c.max_answer_tokens},
                       {"turn_budget", c.turn_budget},
                       {"request_logprobs", c.request_logprobs}};
}

void from_json(const nlohmann::json& j, DecodingConfig& c) {
    c = DecodingConfig{};
    for (const auto& [key, value] : j.items()) {
        if (key == "temperature") c.temperature = value.get<double>();
        else if (key == "top_p") c.top_p = value.get<double>();
        else if (key == "max_answer_tokens") c.max_answer_tokens = value.get<int>();
        else if (key == "turn_budget") c.turn_budget = value.get<int>();
        else if (key == "request_logprobs") c.request_logprobs = value.get<bool>();
        else fail(ErrorKind::Config, "unknown decoding field '" + key + "'");
    }
}

void validate_messages(std::span<const ChatMessage> messages) {
    if (messages.empty()) fail(ErrorKind::InvalidArgument, "message list is empty");
    std::size_t i = 0;
    if (messages[0].role == Role::System) ++i;
    if (i == messages.size()) fail(ErrorKind::InvalidArgument, "message list holds only a system message");
    for (std::size_t n = 0; i < messages.size(); ++i, ++n) {
        const Role expected = (n % 2 == 0) ? Role::User : Role::Assistant;
        if (messages[i].role != expected) {
            fail(ErrorKind::InvalidArgument, "message " + std::to_string(i) + " has role " +
                                                 std::string(role_name(messages[i].role)) +
                                                 ", expected " + std::string(role_name(expected)));
        }
    }
}

std::vector<std::string_view> split_tokens(std::string_view text) {
    std::vector<std::string_view> out;
    std::size_t i = 0;
    while (i < text.size()) {
        while (i < text.size() && std::isspace(static_cast<unsigned char>(text[i]))) ++i;
        const std::size_t start = i;
        while (i < text.size() && !std::isspace(static_cast<unsigned char>(text[i]))) ++i;
        if (i > start) out.push_back(text.substr(start, i - start));
    }
    return out;
}

std::chrono::milliseconds RetryPolicy::delay_before(int attempt) const {
    if (attempt <= 1) return std::chrono::milliseconds{0};
    const double scale = std::pow(backoff_multiplier, attempt - 2);
    return std::chrono::milliseconds{
        static_cast<std::int64_t>(static_cast<double>(initial_backoff.count()) * scale)};
}

ChatReply complete_with_retry(const ChatBackend& backend, std::span<const ChatMessage> messages,
                              const DecodingConfig& decoding, const ChatSession& session,
                              const RetryPolicy& policy,
                              const std::function<void(std::chrono::milliseconds)>& sleep) {
    const int attempts = std::max(1, policy.max_attempts);
    for (int attempt = 1;; ++attempt) {
        const auto delay = policy.delay_before(attempt);
        if (delay.count() > 0) {
            if (sleep) sleep(delay);
            else std::this_thread::sleep_for(delay);
        }
        try {
            return backend.complete(messages, decoding, session);
        } catch (const BackendError& e) {
            if (e.cause() == BackendError::Cause::EmptyReply || attempt >= attempts) throw;
        }
    }
}

}  // namespace spikescore
