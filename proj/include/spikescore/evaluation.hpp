#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "spikescore/trajectory.hpp"

namespace spikescore {

struct LabeledScore {
    std::string item_id;
    std::string domain_id;
    int label = 0;  ///< 1 = hallucinated
    double value = 0.0;

    bool operator==(const LabeledScore&) const = default;
};

/// A score sequence with the item's domain and label.
struct LabeledSequence {
    ScoreSequence sequence;
    std::string domain_id;
    int label = 0;

    bool operator==(const LabeledSequence&) const = default;
};

/// Mann-Whitney AUROC: fraction of (positive, negative) pairs with the
/// positive strictly higher, ties counted one half. O(n log n).
double auroc(std::span<const LabeledScore> scores);
double auroc(std::span<const double> positives, std::span<const double> negatives);

/// P(X > Y) + P(X = Y) / 2 over all pairs of the two samples.
double pairwise_superiority(std::span<const double> x, std::span<const double> y);

/// Equal-weight mixture: every domain is subsampled without replacement to
/// the smallest domain's size (seeded per domain), keeping source order,
/// then domains are concatenated in key order.
std::vector<LabeledScore> mixture_pool(const std::map<std::string, std::vector<LabeledScore>>& per_domain,
                                       std::uint64_t seed);

/// Index form of mixture_pool: for each domain (key order), the kept
/// positions in ascending order.
std::map<std::string, std::vector<std::size_t>> mixture_selection(const std::map<std::string, std::size_t>& domain_sizes,
                                                                  std::uint64_t seed);

struct ObservationChecks {
    bool mean_ratio = false;   ///< delta > 2
    bool std_ratio = false;    ///< 1 < r <= 2.5
    bool factual_cv = false;   ///< c <= 0.2

    [[nodiscard]] bool all() const noexcept { return mean_ratio && std_ratio && factual_cv; }
    bool operator==(const ObservationChecks&) const = default;
};

struct SeparabilityStats {
    std::size_t n_h = 0;
    std::size_t n_t = 0;
    double mean_h = 0.0;
    double mean_t = 0.0;
    double std_h = 0.0;  ///< sample standard deviation (n - 1)
    double std_t = 0.0;
    double delta = 0.0;  ///< mean_h / mean_t
    double r = 0.0;      ///< std_h / std_t
    double c = 0.0;      ///< std_t / mean_t
    double t_level = 0.0;  ///< c / 0.1
    double empirical_p = 0.0;
    std::optional<double> cantelli_lb;  ///< absent when delta <= 1
    ObservationChecks checks;

    bool operator==(const SeparabilityStats&) const = default;
};

void to_json(nlohmann::json& j, const SeparabilityStats& s);
void from_json(const nlohmann::json& j, SeparabilityStats& s);

SeparabilityStats separability_stats(std::span<const double> hallucinated, std::span<const double> factual);

/// (delta - 1)^2 / ((r^2 + 1) c^2 + (delta - 1)^2). Requires delta > 1 and
/// finite r > 0, c >= 0.
double cantelli_bound(double delta, double r, double c);

struct SweepRow {
    std::size_t k = 0;
    double auroc = 0.0;

    bool operator==(const SweepRow&) const = default;
};

/// Truncates every sequence to each K, recomputes SpikeScore and AUROC.
/// Every K must satisfy 3 <= K <= shortest sequence length.
std::vector<SweepRow> step_sweep(std::span<const LabeledSequence> sequences, std::span<const std::size_t> k_values);

struct PeakTurnSummary {
    std::map<std::size_t, std::size_t> histogram;  ///< turn -> item count
    std::optional<std::size_t> dominant;           ///< empty when no valid items
    std::size_t n_valid = 0;
    std::size_t n_skipped = 0;  ///< sequences shorter than 3

    bool operator==(const PeakTurnSummary&) const = default;
};

void to_json(nlohmann::json& j, const PeakTurnSummary& s);
void from_json(const nlohmann::json& j, PeakTurnSummary& s);

PeakTurnSummary aggregate_peak_turn(std::span<const ScoreSequence> sequences);

}  // namespace spikescore
