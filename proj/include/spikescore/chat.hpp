#pragma once

#include <chrono>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

namespace spikescore {

enum class Role { System, User, Assistant };

std::string_view role_name(Role role) noexcept;

struct ChatMessage {
    Role role;
    std::string content;

    bool operator==(const ChatMessage&) const = default;
};

/// Sampling parameters for every backend call of a transcript.
struct DecodingConfig {
    double temperature = 0.2;
    double top_p = 0.9;
    int max_answer_tokens = 256;
    int turn_budget = 20;  ///< K, counting the initial answer as turn 1.
    bool request_logprobs = false;

    /// Llama-family defaults (0.2 / 0.9).
    static DecodingConfig instruction_following() { return {}; }
    /// Reasoning-mode defaults (0.6 / 0.95).
    static DecodingConfig reasoning_mode() {
        DecodingConfig c;
        c.temperature = 0.6;
        c.top_p = 0.95;
        return c;
    }

    void validate() const;

    bool operator==(const DecodingConfig&) const = default;
};

void to_json(nlohmann::json& j, const DecodingConfig& c);
void from_json(const nlohmann::json& j, DecodingConfig& c);

enum class Regime { Factual, Hallucinated };

std::string_view regime_name(Regime regime) noexcept;

/// Per-transcript context passed alongside the messages. Network backends
/// ignore everything here except as request metadata; the simulator derives
/// its trajectory from it.
struct ChatSession {
    std::string item_id;
    std::string domain_id;
    std::uint64_t sampling_seed = 0;
    std::optional<Regime> regime;
};

struct ChatReply {
    std::string text;
    std::optional<std::vector<double>> token_logprobs;
    /// Hidden per-turn instability, only emitted by the simulator.
    std::optional<double> latent;
};

/// Chat-completion contract. Implementations must be safe to call
/// concurrently from several workers.
class ChatBackend {
public:
    virtual ~ChatBackend() = default;

    /// messages: optional leading system message, then alternating
    /// user/assistant turns ending with a user turn.
    virtual ChatReply complete(std::span<const ChatMessage> messages,
                               const DecodingConfig& decoding,
                               const ChatSession& session) const = 0;

    /// Scores the final assistant message already present in `messages`
    /// (the initial answer). Backends that cannot do this return nullopt.
    virtual std::optional<ChatReply> annotate_last(std::span<const ChatMessage> messages,
                                                   const DecodingConfig& decoding,
                                                   const ChatSession& session) const {
        (void)messages, (void)decoding, (void)session;
        return std::nullopt;
    }

    [[nodiscard]] virtual std::string id() const = 0;
};

/// Throws InvalidArgument unless roles follow the contract above.
void validate_messages(std::span<const ChatMessage> messages);

/// Whitespace tokenization used for token counts by the simulator and the
/// answer-length cap.
std::vector<std::string_view> split_tokens(std::string_view text);

struct RetryPolicy {
    int max_attempts = 3;
    std::chrono::milliseconds initial_backoff{500};
    double backoff_multiplier = 2.0;

    [[nodiscard]] std::chrono::milliseconds delay_before(int attempt) const;
};

/// Calls backend.complete() up to policy.max_attempts times, sleeping with
/// exponential backoff between attempts. BackendError is retried except for
/// empty replies, which are rethrown at once; the last error is rethrown.
ChatReply complete_with_retry(const ChatBackend& backend, std::span<const ChatMessage> messages,
                              const DecodingConfig& decoding, const ChatSession& session,
                              const RetryPolicy& policy,
                              const std::function<void(std::chrono::milliseconds)>& sleep = {});

}  // namespace spikescore
