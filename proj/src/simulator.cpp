#include "spikescore/simulator.hpp"

#include <algorithm>
#include <array>
#include <cmath>

#include "spikescore/error.hpp"
#include "spikescore/rng.hpp"

namespace spikescore::sim {
namespace {

constexpr std::uint64_t kDomainStream = 1;
constexpr std::uint64_t kItemStream = 2;
constexpr std::uint64_t kNoiseStream = 3;
constexpr std::uint64_t kTextStream = 4;
constexpr std::uint64_t kTokenStream = 5;
constexpr std::uint64_t kFeatureStream = 6;

std::uint64_t item_key(const SimulatorConfig& config, const ChatSession& session) {
    std::uint64_t key = derive_key(config.seed, kItemStream);
    key = derive_key(key, session.domain_id);
    key = derive_key(key, session.item_id);
    return derive_key(key, session.sampling_seed);
}

constexpr std::array<std::string_view, 6> kSteadyOpeners{
    "Building on my earlier answer,",
    "To expand on this,",
    "Continuing the same line of reasoning,",
    "Looking at it once more,",
    "Adding a little more detail,",
    "Staying with the same conclusion,",
};

constexpr std::array<std::string_view, 4> kReversalOpeners{
    "Wait, I think I was wrong before.",
    "On reflection, my previous answer does not hold up.",
    "Actually, I need to correct myself.",
    "Let me reconsider; that earlier claim looks mistaken.",
};

std::string last_user_message(std::span<const ChatMessage> messages) {
    for (auto it = messages.rbegin(); it != messages.rend(); ++it) {
        if (it->role == Role::User) return it->content;
    }
    return {};
}

std::string first_assistant_message(std::span<const ChatMessage> messages) {
    for (const auto& m : messages) {
        if (m.role == Role::Assistant) return m.content;
    }
    return {};
}

std::string cap_tokens(const std::string& text, int max_tokens) {
    const auto tokens = split_tokens(text);
    if (static_cast<int>(tokens.size()) <= max_tokens) return text;
    std::string out;
    for (int i = 0; i < max_tokens; ++i) {
        if (i) out += ' ';
        out += tokens[static_cast<std::size_t>(i)];
    }
    return out;
}

}  // namespace

void SimulatorConfig::validate() const {
    if (!(base_min <= base_max)) fail(ErrorKind::Config, "simulator base_min exceeds base_max");
    if (!(noise_amplitude >= 0.0)) fail(ErrorKind::Config, "simulator noise_amplitude must be >= 0");
    if (!(noise_floor >= 0.0 && noise_floor <= 1.0)) fail(ErrorKind::Config, "simulator noise_floor must lie in [0, 1]");
    if (!(burst_min > 0.0 && burst_min <= burst_max)) fail(ErrorKind::Config, "simulator burst range invalid");
    if (burst_first_turn < 2 || burst_last_turn < burst_first_turn) {
        fail(ErrorKind::Config, "simulator burst turns must satisfy 2 <= first <= last");
    }
    if (!(nll_scale > 0.0)) fail(ErrorKind::Config, "simulator nll_scale must be positive");
}

DomainProfile domain_profile(std::string_view domain_id, const SimulatorConfig& config) {
    CounterRng rng(derive_key(derive_key(config.seed, kDomainStream), domain_id));
    DomainProfile p;
    p.domain_id = std::string(domain_id);
    p.base_center = rng.uniform(config.base_min, config.base_max);
    p.slope_center = rng.uniform(-config.slope_max, config.slope_max);
    return p;
}

LatentTrajectory latent_trajectory(const SimulatorConfig& config, const ChatSession& session,
                                   Regime regime, int turns) {
    if (turns < 1) fail(ErrorKind::InvalidArgument, "latent trajectory needs at least one turn");
    const DomainProfile profile = domain_profile(session.domain_id, config);
    const std::uint64_t key = item_key(config, session);

    CounterRng item(key);
    double base = profile.base_center + item.uniform(-config.base_jitter, config.base_jitter);
    const double slope = profile.slope_center + item.uniform(-config.slope_jitter, config.slope_jitter);
    const int span = config.burst_last_turn - config.burst_first_turn + 1;
    const int burst_turn = config.burst_first_turn + static_cast<int>(item.below(static_cast<std::uint64_t>(span)));
    const double amplitude = item.uniform(config.burst_min, config.burst_max);

    LatentTrajectory out;
    if (regime == Regime::Hallucinated) {
        base += config.hallucinated_offset;
        out.burst = BurstInfo{burst_turn, amplitude};
    }

    out.latents.reserve(static_cast<std::size_t>(turns));
    for (int k = 1; k <= turns; ++k) {
        const double trend = base + slope * static_cast<double>(k - 1);
        // Inside the burst window the burst alone drives the dynamics.
        if (out.burst && std::abs(k - burst_turn) <= 1) {
            out.latents.push_back(k == burst_turn ? trend + amplitude : trend);
            continue;
        }
        CounterRng noise(derive_key(derive_key(key, kNoiseStream), static_cast<std::uint64_t>(k)));
        const double sign = (noise.next_u64() & 1U) ? 1.0 : -1.0;
        const double magnitude = noise.uniform(config.noise_floor, 1.0);
        out.latents.push_back(trend + config.noise_amplitude * sign * magnitude);
    }
    return out;
}

SimulatorBackend::SimulatorBackend(SimulatorConfig config) : config_(std::move(config)) {
    config_.validate();
}

ChatReply SimulatorBackend::reply_for_turn(std::span<const ChatMessage> messages, int turn,
                                           const DecodingConfig& decoding, const ChatSession& session,
                                           std::optional<std::string_view> fixed_text) const {
    if (!session.regime) {
        fail(ErrorKind::InvalidArgument, "simulator backend needs the item regime (item " + session.item_id + ")");
    }
    const LatentTrajectory traj = latent_trajectory(config_, session, *session.regime, turn);
    ChatReply reply;
    reply.latent = traj.latents.back();

    if (fixed_text) {
        reply.text = std::string(*fixed_text);
    } else {
        const std::string initial = first_assistant_message(messages);
        const std::string prompt = last_user_message(messages);
        CounterRng text(derive_key(derive_key(item_key(config_, session), kTextStream),
                                   static_cast<std::uint64_t>(turn)));
        std::string body;
        if (traj.burst && traj.burst->turn == turn) {
            body = std::string(kReversalOpeners[text.below(kReversalOpeners.size())]) +
                   " Perhaps the answer is not " + initial + " after all.";
        } else if (traj.burst && turn == traj.burst->turn + 1) {
            body = "Returning to my original position, I still think the answer is " + initial + ".";
        } else {
            body = std::string(kSteadyOpeners[text.below(kSteadyOpeners.size())]) +
                   " the answer remains " + initial + ".";
        }
        // Echo the first words of the follow-up so turns stay distinguishable.
        const auto prompt_tokens = split_tokens(prompt);
        std::string echo;
        for (std::size_t i = 0; i < std::min<std::size_t>(3, prompt_tokens.size()); ++i) {
            echo += (i ? " " : "") + std::string(prompt_tokens[i]);
        }
        reply.text = cap_tokens("(re: " + echo + ") " + body, decoding.max_answer_tokens);
    }

    if (decoding.request_logprobs) {
        const std::size_t n = split_tokens(reply.text).size();
        CounterRng jitter(derive_key(derive_key(item_key(config_, session), kTokenStream),
                                     static_cast<std::uint64_t>(turn)));
        std::vector<double> u(n);
        double mean_u = 0.0;
        for (auto& x : u) {
            x = jitter.uniform(-1.0, 1.0);
            mean_u += x;
        }
        mean_u /= static_cast<double>(std::max<std::size_t>(n, 1));
        const double nll = config_.nll_scale * std::max(*reply.latent, 0.0);
        std::vector<double> logprobs(n);
        for (std::size_t i = 0; i < n; ++i) logprobs[i] = -nll * (1.0 + 0.5 * (u[i] - mean_u));
        reply.token_logprobs = std::move(logprobs);
    }
    return reply;
}

ChatReply SimulatorBackend::complete(std::span<const ChatMessage> messages,
                                     const DecodingConfig& decoding, const ChatSession& session) const {
    validate_messages(messages);
    const auto assistants = std::count_if(messages.begin(), messages.end(),
                                          [](const ChatMessage& m) { return m.role == Role::Assistant; });
    return reply_for_turn(messages, static_cast<int>(assistants) + 1, decoding, session, std::nullopt);
}

std::optional<ChatReply> SimulatorBackend::annotate_last(std::span<const ChatMessage> messages,
                                                         const DecodingConfig& decoding,
                                                         const ChatSession& session) const {
    if (messages.empty() || messages.back().role != Role::Assistant) return std::nullopt;
    const auto assistants = std::count_if(messages.begin(), messages.end(),
                                          [](const ChatMessage& m) { return m.role == Role::Assistant; });
    return reply_for_turn(messages, static_cast<int>(assistants), decoding, session,
                          std::string_view(messages.back().content));
}

std::vector<double> synthetic_feature(const SimulatorConfig& config, std::string_view domain_id,
                                      std::string_view item_id, int turn, double latent,
                                      std::size_t dim) {
    const std::uint64_t fkey = derive_key(config.seed, kFeatureStream);
    CounterRng direction(derive_key(fkey, "direction"));
    CounterRng offset(derive_key(fkey, domain_id));
    CounterRng noise(derive_key(derive_key(derive_key(fkey, item_id), domain_id),
                                static_cast<std::uint64_t>(turn)));
    std::vector<double> dir(dim);
    double norm = 0.0;
    for (auto& d : dir) {
        d = direction.normal();
        norm += d * d;
    }
    norm = std::sqrt(norm);
    std::vector<double> out(dim);
    for (std::size_t i = 0; i < dim; ++i) {
        out[i] = 8.0 * latent * dir[i] / norm + 0.2 * offset.normal() + 0.05 * noise.normal();
    }
    return out;
}

}  // namespace spikescore::sim
