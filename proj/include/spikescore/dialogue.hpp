#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "spikescore/chat.hpp"
#include "spikescore/prompts.hpp"

namespace spikescore {

struct TranscriptTurn {
    int turn = 0;  ///< 2..K
    PromptType prompt_type = PromptType::Encouraging;
    int strength = 1;
    std::string prompt;
    std::string answer;
    std::optional<std::vector<double>> token_logprobs;
    std::optional<double> latent;
    bool empty_reply = false;

    bool operator==(const TranscriptTurn&) const = default;
};

/// An initial answer plus K - 1 induced continuation turns.
struct DialogueTranscript {
    std::string item_id;
    std::string domain_id;
    std::string question;  ///< context already concatenated in front of the question
    std::string initial_answer;
    std::optional<int> label;  ///< 1 = hallucinated
    std::optional<std::vector<double>> initial_logprobs;
    std::optional<double> initial_latent;
    std::vector<TranscriptTurn> turns;
    std::uint64_t prompt_seed = 0;
    std::uint64_t sampling_seed = 0;
    std::string backend_id;
    DecodingConfig decoding;
    std::optional<std::string> system_directive;
    bool truncated = false;
    std::optional<std::string> truncation_reason;
    std::vector<std::string> flags;
    std::string config_hash;

    /// Number of scored turns including the initial answer.
    [[nodiscard]] int turn_count() const noexcept { return static_cast<int>(turns.size()) + 1; }

    bool operator==(const DialogueTranscript&) const = default;
};

void to_json(nlohmann::json& j, const DialogueTranscript& t);
void from_json(const nlohmann::json& j, DialogueTranscript& t);

/// The message list sent to the backend for turn `next_turn` (2..K):
/// [directive?] Q, A^1, P^2, A^2, ..., P^{next_turn}.
std::vector<ChatMessage> conversation_for_turn(const DialogueTranscript& transcript, int next_turn);

struct InductionRequest {
    std::string item_id;
    std::string domain_id;
    std::string question;
    std::string initial_answer;
    std::optional<int> label;
    std::optional<std::vector<double>> initial_logprobs;
    /// Only consumed by the simulator backend.
    std::optional<Regime> regime;
};

struct InductionOptions {
    DecodingConfig decoding;
    std::uint64_t prompt_seed = 42;
    std::uint64_t sampling_seed = 0;
    std::optional<std::string> system_directive;
    RetryPolicy retry;
    std::function<void(std::chrono::milliseconds)> sleep;  ///< defaults to a real sleep
};

/// Drives turns 2..K sequentially. A backend that keeps failing after the
/// retry policy ends the transcript early with truncated = true; an empty
/// reply is recorded as an empty answer and flagged.
DialogueTranscript induce_continuation(const InductionRequest& request, const ChatBackend& backend,
                                       const InductionOptions& options);

}  // namespace spikescore
