#include "spikescore/dialogue.hpp"

#include <json.hpp>

#include "spikescore/error.hpp"

namespace spikescore {
namespace {

template <typename T>
void put_optional(nlohmann::json& j, const char* key, const std::optional<T>& value) {
    if (value) j[key] = *value;
}

template <typename T>
void get_optional(const nlohmann::json& j, const char* key, std::optional<T>& value) {
    if (auto it = j.find(key); it != j.end() && !it->is_null()) value = it->get<T>();
    else value.reset();
}

}  // namespace

void to_json(nlohmann::json& j, const DialogueTranscript& t) {
    nlohmann::json turns = nlohmann::json::array();
    for (const auto& turn : t.turns) {
        nlohmann::json tj{{"turn", turn.turn},
                          {"prompt_type", prompt_type_name(turn.prompt_type)},
                          {"strength", turn.strength},
                          {"prompt", turn.prompt},
                          {"answer", turn.answer}};
        put_optional(tj, "logprobs", turn.token_logprobs);
        put_optional(tj, "latent", turn.latent);
        if (turn.empty_reply) tj["empty_reply"] = true;
        turns.push_back(std::move(tj));
    }
    j = nlohmann::json{{"item_id", t.item_id},
                       {"domain_id", t.domain_id},
                       {"question", t.question},
                       {"initial_answer", t.initial_answer},
                       {"turns", std::move(turns)},
                       {"prompt_seed", t.prompt_seed},
                       {"sampling_seed", t.sampling_seed},
                       {"backend_id", t.backend_id},
                       {"decoding", t.decoding},
                       {"truncated", t.truncated},
                       {"flags", t.flags}};
    put_optional(j, "label", t.label);
    put_optional(j, "initial_logprobs", t.initial_logprobs);
    put_optional(j, "initial_latent", t.initial_latent);
    put_optional(j, "system_directive", t.system_directive);
    put_optional(j, "truncation_reason", t.truncation_reason);
    if (!t.config_hash.empty()) j["config_hash"] = t.config_hash;
}

void from_json(const nlohmann::json& j, DialogueTranscript& t) {
    t = DialogueTranscript{};
    j.at("item_id").get_to(t.item_id);
    if (j.contains("domain_id")) j.at("domain_id").get_to(t.domain_id);
    j.at("question").get_to(t.question);
    j.at("initial_answer").get_to(t.initial_answer);
    get_optional(j, "label", t.label);
    get_optional(j, "initial_logprobs", t.initial_logprobs);
    get_optional(j, "initial_latent", t.initial_latent);
    for (const auto& tj : j.at("turns")) {
        TranscriptTurn turn;
        tj.at("turn").get_to(turn.turn);
        const auto type_name = tj.at("prompt_type").get<std::string>();
        const auto type = parse_prompt_type(type_name);
        if (!type) fail(ErrorKind::Schema, "unknown prompt_type '" + type_name + "'");
        turn.prompt_type = *type;
        tj.at("strength").get_to(turn.strength);
        tj.at("prompt").get_to(turn.prompt);
        tj.at("answer").get_to(turn.answer);
        get_optional(tj, "logprobs", turn.token_logprobs);
        get_optional(tj, "latent", turn.latent);
        turn.empty_reply = tj.value("empty_reply", false);
        t.turns.push_back(std::move(turn));
    }
    j.at("prompt_seed").get_to(t.prompt_seed);
    j.at("sampling_seed").get_to(t.sampling_seed);
    j.at("backend_id").get_to(t.backend_id);
    j.at("decoding").get_to(t.decoding);
    get_optional(j, "system_directive", t.system_directive);
    t.truncated = j.value("truncated", false);
    get_optional(j, "truncation_reason", t.truncation_reason);
    if (j.contains("flags")) j.at("flags").get_to(t.flags);
    t.config_hash = j.value("config_hash", std::string{});
}

std::vector<ChatMessage> conversation_for_turn(const DialogueTranscript& transcript, int next_turn) {
    std::vector<ChatMessage> messages;
    messages.reserve(2 * static_cast<std::size_t>(next_turn) + 1);
    if (transcript.system_directive) messages.push_back({Role::System, *transcript.system_directive});
    messages.push_back({Role::User, transcript.question});
    messages.push_back({Role::Assistant, transcript.initial_answer});
    for (const auto& turn : transcript.turns) {
        if (turn.turn >= next_turn) break;
        messages.push_back({Role::User, turn.prompt});
        messages.push_back({Role::Assistant, turn.answer});
    }
    const PromptCard& card = schedule_prompt(next_turn, transcript.decoding.turn_budget, transcript.prompt_seed);
    messages.push_back({Role::User, std::string(card.text)});
    return messages;
}

DialogueTranscript induce_continuation(const InductionRequest& request, const ChatBackend& backend,
                                       const InductionOptions& options) {
    options.decoding.validate();
    const int budget = options.decoding.turn_budget;
    if (budget < 2) fail(ErrorKind::InvalidArgument, "turn budget K must be at least 2 to induce continuations");

    DialogueTranscript t;
    t.item_id = request.item_id;
    t.domain_id = request.domain_id;
    t.question = request.question;
    t.initial_answer = request.initial_answer;
    t.label = request.label;
    t.initial_logprobs = request.initial_logprobs;
    t.prompt_seed = options.prompt_seed;
    t.sampling_seed = options.sampling_seed;
    t.backend_id = backend.id();
    t.decoding = options.decoding;
    t.system_directive = options.system_directive;

    const ChatSession session{request.item_id, request.domain_id, options.sampling_seed, request.regime};

    {
        std::vector<ChatMessage> opening;
        if (t.system_directive) opening.push_back({Role::System, *t.system_directive});
        opening.push_back({Role::User, t.question});
        opening.push_back({Role::Assistant, t.initial_answer});
        if (auto annotated = backend.annotate_last(opening, t.decoding, session)) {
            t.initial_latent = annotated->latent;
            if (!t.initial_logprobs) t.initial_logprobs = annotated->token_logprobs;
        }
    }

    for (int k = 2; k <= budget; ++k) {
        const auto messages = conversation_for_turn(t, k);
        const PromptCard& card = schedule_prompt(k, budget, t.prompt_seed);
        TranscriptTurn turn;
        turn.turn = k;
        turn.prompt_type = card.type;
        turn.strength = card.strength;
        turn.prompt = std::string(card.text);
        try {
            ChatReply reply = complete_with_retry(backend, messages, t.decoding, session, options.retry, options.sleep);
            turn.answer = std::move(reply.text);
            turn.token_logprobs = std::move(reply.token_logprobs);
            turn.latent = reply.latent;
            if (turn.answer.empty()) {
                turn.empty_reply = true;
                t.flags.push_back("empty_reply:turn" + std::to_string(k));
            }
        } catch (const BackendError& e) {
            if (e.cause() == BackendError::Cause::EmptyReply) {
                turn.empty_reply = true;
                t.flags.push_back("empty_reply:turn" + std::to_string(k));
            } else {
                t.truncated = true;
                t.truncation_reason = "turn " + std::to_string(k) + ": " + e.what();
                break;
            }
        }
        t.turns.push_back(std::move(turn));
    }
    return t;
}

}  // namespace spikescore
