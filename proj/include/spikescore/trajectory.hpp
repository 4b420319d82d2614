#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

namespace spikescore {

/// Per-turn scores for one item under one backbone. scores[0] is the score
/// of the initial answer; scores[k-1] is the score of turn k.
struct ScoreSequence {
    std::string item_id;
    std::string backbone_id;
    std::vector<double> scores;

    [[nodiscard]] std::size_t length() const noexcept { return scores.size(); }

    /// Throws if scores is empty or holds a non-finite value.
    void validate() const;

    bool operator==(const ScoreSequence&) const = default;
};

/// |s[k+1] - 2 s[k] + s[k-1]| for every interior index, in turn order.
/// Entry i corresponds to turn i + 2 (1-indexed). Requires length >= 3.
std::vector<double> abs_second_differences(std::span<const double> scores);

/// Maximum absolute second-order difference over all interior turns
/// 2..K-1. This is the detection signal; it is unchanged by adding any
/// affine trend a*k + b to the sequence.
double spike_score(std::span<const double> scores);
double spike_score(const ScoreSequence& seq);

/// Interior turn (1-indexed) attaining spike_score; the smallest such turn on ties.
std::size_t peak_turn(std::span<const double> scores);
std::size_t peak_turn(const ScoreSequence& seq);

/// Sample standard deviation (n - 1) over the mean. Ablation baseline only.
double coefficient_of_variation(std::span<const double> scores);
double coefficient_of_variation(const ScoreSequence& seq);

/// First k_prime scores; ids preserved. Requires 1 <= k_prime <= length.
ScoreSequence truncate_sequence(const ScoreSequence& seq, std::size_t k_prime);

}  // namespace spikescore
