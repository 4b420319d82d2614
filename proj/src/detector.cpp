#include "spikescore/detector.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#include <json.hpp>

#include "spikescore/error.hpp"

namespace spikescore {

void to_json(nlohmann::json& j, const Threshold& t) {
    j = nlohmann::json{{"lambda", t.lambda},
                       {"calibration_meta",
                        {{"source_domain", t.calibration_meta.source_domain},
                         {"target_fpr", t.calibration_meta.target_fpr},
                         {"n_calibration", t.calibration_meta.n_calibration}}}};
}

void from_json(const nlohmann::json& j, Threshold& t) {
    j.at("lambda").get_to(t.lambda);
    if (!(t.lambda > 0.0) || !std::isfinite(t.lambda)) fail(ErrorKind::Schema, "threshold lambda must be positive and finite");
    const auto& m = j.at("calibration_meta");
    m.at("source_domain").get_to(t.calibration_meta.source_domain);
    m.at("target_fpr").get_to(t.calibration_meta.target_fpr);
    m.at("n_calibration").get_to(t.calibration_meta.n_calibration);
}

int decide(double spike, const Threshold& threshold) { return spike >= threshold.lambda ? 1 : 0; }

Threshold calibrate_threshold(std::span<const double> factual_spikes, double target_fpr, std::string source_domain) {
    if (factual_spikes.empty()) fail(ErrorKind::InvalidArgument, "no factual spikes to calibrate on");
    if (!(target_fpr > 0.0 && target_fpr < 1.0)) fail(ErrorKind::OutOfRange, "target_fpr must lie in (0, 1)");
    std::vector<double> sorted(factual_spikes.begin(), factual_spikes.end());
    for (double s : sorted) {
        if (!std::isfinite(s)) fail(ErrorKind::InvalidArgument, "non-finite spike in calibration set");
    }
    std::sort(sorted.begin(), sorted.end());
    const double n = static_cast<double>(sorted.size());
    // The epsilon keeps (1 - 0.1) * 10 from rounding up to rank 10.
    auto rank = static_cast<std::size_t>(std::ceil((1.0 - target_fpr) * n - 1e-9));
    rank = std::clamp<std::size_t>(rank, 1, sorted.size());
    const double q = sorted[rank - 1];
    double lambda = std::nextafter(q, std::numeric_limits<double>::infinity());
    if (!(lambda > 0.0)) lambda = std::numeric_limits<double>::denorm_min();
    return {lambda, {std::move(source_domain), target_fpr, sorted.size()}};
}

}  // namespace spikescore
