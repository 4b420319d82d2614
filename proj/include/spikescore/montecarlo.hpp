#pragma once

#include <cstddef>
#include <cstdint>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "spikescore/rng.hpp"

namespace spikescore {

enum class MomentFamily { LogNormal, TruncatedNormal };

std::string_view family_name(MomentFamily f) noexcept;
MomentFamily parse_family(std::string_view name);

/// Nonnegative distribution with a prescribed mean and coefficient of
/// variation. Throws Degenerate when the family cannot reach the target.
class MomentSampler {
public:
    MomentSampler(MomentFamily family, double mean, double cv);

    double sample(CounterRng& rng) const;

    [[nodiscard]] MomentFamily family() const noexcept { return family_; }
    /// Location/scale of the underlying normal (of log X for log-normal).
    [[nodiscard]] double mu() const noexcept { return mu_; }
    [[nodiscard]] double sigma() const noexcept { return sigma_; }
    /// Standardized truncation point (truncated normal only).
    [[nodiscard]] double alpha() const noexcept { return alpha_; }

private:
    MomentFamily family_;
    double mu_ = 0.0;
    double sigma_ = 0.0;
    double alpha_ = 0.0;
};

/// Coefficient of variation of N(-alpha, 1) truncated to [0, inf).
double truncated_normal_cv(double alpha);

struct TheoremCheckConfig {
    MomentFamily family = MomentFamily::LogNormal;
    double delta = 2.5;
    double r = 2.0;
    double c = 0.15;
    std::size_t n_samples = 100000;
    std::uint64_t seed = 0;

    bool operator==(const TheoremCheckConfig&) const = default;
};

struct TheoremCheckResult {
    TheoremCheckConfig config;
    double empirical_p = 0.0;  ///< P(X > Y) + P(X = Y) / 2 over the sampled pairs
    double standard_error = 0.0;
    double bound = 0.0;
    bool holds = false;  ///< empirical_p >= bound - 3 * standard_error
};

void to_json(nlohmann::json& j, const TheoremCheckResult& r);

/// Samples independent factual Y (mean 1, CV c) and hallucinated X (mean
/// delta, standard deviation r * c) and compares the empirical superiority
/// with the Cantelli bound. Requires delta > 2, 1 < r <= 2.5, 0 < c <= 0.2.
TheoremCheckResult monte_carlo_theorem_check(const TheoremCheckConfig& config);

/// Cartesian grid over the regime, both families, with corners included:
/// delta {2.01, 2.5, 3, 4, 6} x r {1.01, 1.5, 2, 2.5} x c {0.05, 0.1, 0.15, 0.2}.
/// Seeds are derived from `seed` and the position in the grid.
std::vector<TheoremCheckConfig> observation_grid(std::size_t n_samples, std::uint64_t seed);

}  // namespace spikescore
