#include "spikescore/montecarlo.hpp"

#include <cmath>
#include <numbers>

#include <json.hpp>

#include "spikescore/error.hpp"
#include "spikescore/evaluation.hpp"

namespace spikescore {
namespace {

constexpr double kAlphaLo = -1e7;
constexpr double kAlphaHi = 25.0;

double phi(double x) { return std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi); }

// Inverse Mills ratio phi(a) / (1 - Phi(a)).
double mills(double a) { return phi(a) / (0.5 * std::erfc(a / std::numbers::sqrt2)); }

}  // namespace

std::string_view family_name(MomentFamily f) noexcept {
    return f == MomentFamily::LogNormal ? "lognormal" : "truncated_normal";
}

MomentFamily parse_family(std::string_view name) {
    if (name == "lognormal") return MomentFamily::LogNormal;
    if (name == "truncated_normal") return MomentFamily::TruncatedNormal;
    fail(ErrorKind::InvalidArgument, "unknown distribution family '" + std::string(name) + "'");
}

double truncated_normal_cv(double alpha) {
    const double lam = mills(alpha);
    const double var = 1.0 + alpha * lam - lam * lam;
    return std::sqrt(std::max(var, 0.0)) / (lam - alpha);
}

MomentSampler::MomentSampler(MomentFamily family, double mean, double cv) : family_(family) {
    if (!(mean > 0.0) || !std::isfinite(mean)) fail(ErrorKind::Degenerate, "target mean must be positive and finite");
    if (!(cv > 0.0) || !std::isfinite(cv)) fail(ErrorKind::Degenerate, "target coefficient of variation must be positive");
    if (family == MomentFamily::LogNormal) {
        const double s2 = std::log1p(cv * cv);
        sigma_ = std::sqrt(s2);
        mu_ = std::log(mean) - 0.5 * s2;
        return;
    }
    // CV is increasing in alpha and tends to 1 in the exponential limit.
    if (cv >= truncated_normal_cv(kAlphaHi) || cv <= truncated_normal_cv(kAlphaLo)) {
        fail(ErrorKind::Degenerate, "truncated normal cannot reach coefficient of variation " + std::to_string(cv));
    }
    double lo = kAlphaLo, hi = kAlphaHi;
    for (int it = 0; it < 200; ++it) {
        const double mid = 0.5 * (lo + hi);
        (truncated_normal_cv(mid) < cv ? lo : hi) = mid;
    }
    alpha_ = 0.5 * (lo + hi);
    sigma_ = mean / (mills(alpha_) - alpha_);
    mu_ = -alpha_ * sigma_;
}

double MomentSampler::sample(CounterRng& rng) const {
    if (family_ == MomentFamily::LogNormal) return std::exp(mu_ + sigma_ * rng.normal());
    if (alpha_ <= 0.0) {
        // Acceptance rate is at least one half.
        for (;;) {
            const double z = rng.normal();
            if (z >= alpha_) return mu_ + sigma_ * z;
        }
    }
    // Tail of the standard normal beyond alpha: translated-exponential proposal.
    const double a = 0.5 * (alpha_ + std::sqrt(alpha_ * alpha_ + 4.0));
    for (;;) {
        const double z = alpha_ - std::log(rng.uniform_open()) / a;
        if (rng.uniform() <= std::exp(-0.5 * (z - a) * (z - a))) return mu_ + sigma_ * z;
    }
}

void to_json(nlohmann::json& j, const TheoremCheckResult& r) {
    j = nlohmann::json{{"family", family_name(r.config.family)},
                       {"delta", r.config.delta},
                       {"r", r.config.r},
                       {"c", r.config.c},
                       {"n_samples", r.config.n_samples},
                       {"seed", r.config.seed},
                       {"empirical_p", r.empirical_p},
                       {"standard_error", r.standard_error},
                       {"bound", r.bound},
                       {"holds", r.holds}};
}

TheoremCheckResult monte_carlo_theorem_check(const TheoremCheckConfig& cfg) {
    if (!(cfg.c > 0.0)) fail(ErrorKind::Degenerate, "c must be positive: a zero-variance family cannot be sampled");
    if (!(cfg.delta > 2.0) || !(cfg.r > 1.0 && cfg.r <= 2.5) || !(cfg.c <= 0.2)) {
        fail(ErrorKind::OutOfRange, "configuration outside the regime delta > 2, 1 < r <= 2.5, c <= 0.2");
    }
    if (cfg.n_samples == 0) fail(ErrorKind::InvalidArgument, "n_samples must be positive");

    const MomentSampler fact(cfg.family, 1.0, cfg.c);
    const MomentSampler hall(cfg.family, cfg.delta, cfg.r * cfg.c / cfg.delta);
    // Separate streams keep X and Y independent.
    CounterRng rx(cfg.seed, 0x78ULL);
    CounterRng ry(cfg.seed, 0x79ULL);
    std::uint64_t twice_wins = 0;
    for (std::size_t i = 0; i < cfg.n_samples; ++i) {
        const double x = hall.sample(rx);
        const double y = fact.sample(ry);
        twice_wins += x > y ? 2 : (x == y ? 1 : 0);
    }
    TheoremCheckResult res;
    res.config = cfg;
    const double n = static_cast<double>(cfg.n_samples);
    res.empirical_p = static_cast<double>(twice_wins) / (2.0 * n);
    res.standard_error = std::sqrt(res.empirical_p * (1.0 - res.empirical_p) / n);
    res.bound = cantelli_bound(cfg.delta, cfg.r, cfg.c);
    res.holds = res.empirical_p >= res.bound - 3.0 * res.standard_error;
    return res;
}

std::vector<TheoremCheckConfig> observation_grid(std::size_t n_samples, std::uint64_t seed) {
    std::vector<TheoremCheckConfig> grid;
    std::uint64_t index = 0;
    for (MomentFamily family : {MomentFamily::LogNormal, MomentFamily::TruncatedNormal}) {
        for (double delta : {2.01, 2.5, 3.0, 4.0, 6.0}) {
            for (double r : {1.01, 1.5, 2.0, 2.5}) {
                for (double c : {0.05, 0.1, 0.15, 0.2}) {
                    grid.push_back({family, delta, r, c, n_samples, derive_key(seed, index++)});
                }
            }
        }
    }
    return grid;
}

}  // namespace spikescore
