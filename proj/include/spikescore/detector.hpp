#pragma once

#include <cstddef>
#include <span>
#include <string>

#include <json.hpp>

namespace spikescore {

struct CalibrationMeta {
    std::string source_domain;
    double target_fpr = 0.05;
    std::size_t n_calibration = 0;

    bool operator==(const CalibrationMeta&) const = default;
};

struct Threshold {
    double lambda = 0.0;  ///< positive, finite
    CalibrationMeta calibration_meta;

    bool operator==(const Threshold&) const = default;
};

void to_json(nlohmann::json& j, const Threshold& t);
void from_json(const nlohmann::json& j, Threshold& t);

/// 1 (hallucinated) iff spike >= lambda.
int decide(double spike, const Threshold& threshold);

/// Nearest-rank (1 - target_fpr) quantile q of the factual spikes, moved up
/// by one ulp so that the calibration-set false-positive rate of the
/// ">= lambda" rule stays at or below target_fpr even when spikes tie with q.
Threshold calibrate_threshold(std::span<const double> factual_spikes, double target_fpr,
                              std::string source_domain = {});

}  // namespace spikescore
