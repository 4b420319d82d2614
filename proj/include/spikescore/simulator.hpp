#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "spikescore/chat.hpp"

namespace spikescore::sim {

/// Knobs of the synthetic dialogue generator. The defaults are calibrated so
/// that SpikeScore over the latent trajectories shows a hallucinated/factual
/// mean ratio above 2, a standard-deviation ratio in (1, 2.5] and a factual
/// coefficient of variation below 0.2.
struct SimulatorConfig {
    std::uint64_t seed = 20250101;

    // Factual dynamics: baseline + slope * (k - 1) + noise.
    double base_min = 0.25;          ///< range of per-domain baseline centres
    double base_max = 0.45;
    double base_jitter = 0.05;       ///< per-item deviation around the domain centre
    double slope_max = 0.002;        ///< per-domain slope centre drawn from [-max, max]
    double slope_jitter = 0.001;
    double noise_amplitude = 0.02;   ///< noise magnitude lies in [floor, 1] * amplitude
    double noise_floor = 0.5;

    // Hallucinated regime: one rise-then-drop burst.
    double burst_min = 0.075;
    double burst_max = 0.1;
    int burst_first_turn = 3;
    int burst_last_turn = 10;
    double hallucinated_offset = 0.05;  ///< constant lift of the whole trajectory

    /// Scale mapping the latent onto per-token negative log-likelihood.
    double nll_scale = 4.0;

    /// Last turn whose second difference can contain the burst.
    [[nodiscard]] int burst_horizon() const noexcept { return burst_last_turn + 1; }

    void validate() const;
};

struct DomainProfile {
    std::string domain_id;
    double base_center;
    double slope_center;
};

/// Baseline and drift of a domain, derived deterministically from its id.
DomainProfile domain_profile(std::string_view domain_id, const SimulatorConfig& config);

struct BurstInfo {
    int turn;
    double amplitude;
};

/// Latent instability of every turn 1..turns for one transcript.
struct LatentTrajectory {
    std::vector<double> latents;
    std::optional<BurstInfo> burst;
};

/// Deterministic in (config, session.item_id, session.domain_id,
/// session.sampling_seed, regime). The value at turn k never depends on how
/// many turns are requested.
LatentTrajectory latent_trajectory(const SimulatorConfig& config, const ChatSession& session,
                                   Regime regime, int turns);

/// Chat backend that replays the latent generator. Turn k (1-indexed) is the
/// number of assistant messages in the request plus one. Requires
/// session.regime.
class SimulatorBackend final : public ChatBackend {
public:
    explicit SimulatorBackend(SimulatorConfig config = {});

    ChatReply complete(std::span<const ChatMessage> messages, const DecodingConfig& decoding,
                       const ChatSession& session) const override;

    std::optional<ChatReply> annotate_last(std::span<const ChatMessage> messages,
                                           const DecodingConfig& decoding,
                                           const ChatSession& session) const override;

    [[nodiscard]] std::string id() const override { return "sim"; }
    [[nodiscard]] const SimulatorConfig& config() const noexcept { return config_; }

private:
    ChatReply reply_for_turn(std::span<const ChatMessage> messages, int turn,
                             const DecodingConfig& decoding, const ChatSession& session,
                             std::optional<std::string_view> fixed_text) const;

    SimulatorConfig config_;
};

/// Synthetic hidden-state feature for one turn: the latent along a fixed
/// direction, a per-domain offset, and isotropic noise.
std::vector<double> synthetic_feature(const SimulatorConfig& config, std::string_view domain_id,
                                      std::string_view item_id, int turn, double latent,
                                      std::size_t dim);

}  // namespace spikescore::sim
