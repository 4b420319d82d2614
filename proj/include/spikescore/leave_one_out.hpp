#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "spikescore/detector.hpp"
#include "spikescore/evaluation.hpp"

namespace spikescore {

/// Sequences of every domain as scored by a backbone fitted (if it needs
/// fitting) on `train_domain` only. Fixed backbones ignore the argument.
using DomainSequences = std::map<std::string, std::vector<LabeledSequence>>;
using SequenceProvider = std::function<DomainSequences(const std::string& train_domain)>;

struct LooOptions {
    double target_fpr = 0.05;
    std::uint64_t mixture_seed = 7;
    std::vector<std::size_t> sweep_k;  ///< empty: 3..shortest length
};

struct DetectionRates {
    double tpr = 0.0;
    double fpr = 0.0;

    bool operator==(const DetectionRates&) const = default;
};

struct TrainDomainResult {
    std::string train_domain;
    std::map<std::string, double> auroc;  ///< per test domain, the train domain included
    double mean_heldout_auroc = 0.0;      ///< over test domains other than the train domain
    std::size_t mixture_size = 0;
    double mixture_auroc = 0.0;
    double mixture_cv_auroc = 0.0;
    std::optional<SeparabilityStats> mixture_stats;
    std::optional<std::string> mixture_stats_error;
    Threshold threshold;
    DetectionRates mixture_rates;  ///< decide() with the calibrated threshold on the mixture
};

struct EvalReport {
    std::string backbone_id;
    std::string config_hash;
    std::vector<std::string> domains;
    std::vector<TrainDomainResult> results;  ///< one per train domain, registry order
    std::vector<SweepRow> sweep;             ///< all domains pooled, scored for the first train domain
    PeakTurnSummary peak_turns;              ///< every item
    PeakTurnSummary peak_turns_hallucinated;
    std::map<std::string, std::uint64_t> seeds;
    nlohmann::json config;

    /// AUROC[train][test]; row/column order follows `domains`.
    [[nodiscard]] std::vector<std::vector<double>> matrix() const;
    [[nodiscard]] const TrainDomainResult& result_for(const std::string& train_domain) const;
};

void to_json(nlohmann::json& j, const EvalReport& r);
void from_json(const nlohmann::json& j, EvalReport& r);

/// Runs the leave-one-out protocol over `domains` (at least two). Every
/// sequence must carry a 0/1 label.
EvalReport run_leave_one_out(const std::vector<std::string>& domains, const SequenceProvider& provider,
                             const LooOptions& options);

}  // namespace spikescore
