#include "spikescore/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <json.hpp>

#include "spikescore/error.hpp"
#include "spikescore/rng.hpp"

namespace spikescore {
namespace {

struct Tagged {
    double value;
    bool positive;
};

// Twice the Mann-Whitney U of the positives: every strictly-lower negative
// counts 2, every tied negative counts 1.
std::uint64_t twice_u(std::vector<Tagged>& all) {
    std::sort(all.begin(), all.end(), [](const Tagged& a, const Tagged& b) { return a.value < b.value; });
    std::uint64_t neg_below = 0;
    std::uint64_t u2 = 0;
    std::size_t i = 0;
    while (i < all.size()) {
        std::size_t j = i;
        std::uint64_t p = 0, q = 0;
        for (; j < all.size() && all[j].value == all[i].value; ++j) (all[j].positive ? p : q) += 1;
        u2 += p * (2 * neg_below + q);
        neg_below += q;
        i = j;
    }
    return u2;
}

double auroc_impl(std::vector<Tagged>& all, std::uint64_t n_pos, std::uint64_t n_neg) {
    if (n_pos == 0 || n_neg == 0) fail(ErrorKind::Degenerate, "AUROC undefined: need at least one positive and one negative");
    for (const auto& t : all) {
        if (!std::isfinite(t.value)) fail(ErrorKind::InvalidArgument, "AUROC input contains a non-finite score");
    }
    const std::uint64_t u2 = twice_u(all);
    return static_cast<double>(u2) / (2.0 * static_cast<double>(n_pos) * static_cast<double>(n_neg));
}

double mean_of(std::span<const double> v) {
    return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

double sample_std(std::span<const double> v, double mean) {
    double ss = 0.0;
    for (double x : v) ss += (x - mean) * (x - mean);
    return std::sqrt(ss / static_cast<double>(v.size() - 1));
}

}  // namespace

double auroc(std::span<const LabeledScore> scores) {
    std::vector<Tagged> all;
    all.reserve(scores.size());
    std::uint64_t n_pos = 0, n_neg = 0;
    for (const auto& s : scores) {
        if (s.label != 0 && s.label != 1) fail(ErrorKind::InvalidArgument, "label must be 0 or 1 for item '" + s.item_id + "'");
        all.push_back({s.value, s.label == 1});
        (s.label == 1 ? n_pos : n_neg) += 1;
    }
    return auroc_impl(all, n_pos, n_neg);
}

double auroc(std::span<const double> positives, std::span<const double> negatives) {
    std::vector<Tagged> all;
    all.reserve(positives.size() + negatives.size());
    for (double v : positives) all.push_back({v, true});
    for (double v : negatives) all.push_back({v, false});
    return auroc_impl(all, positives.size(), negatives.size());
}

double pairwise_superiority(std::span<const double> x, std::span<const double> y) { return auroc(x, y); }

std::map<std::string, std::vector<std::size_t>> mixture_selection(const std::map<std::string, std::size_t>& domain_sizes,
                                                                  std::uint64_t seed) {
    if (domain_sizes.empty()) fail(ErrorKind::InvalidArgument, "mixture pool needs at least one domain");
    std::size_t m = SIZE_MAX;
    for (const auto& [name, n] : domain_sizes) {
        if (n == 0) fail(ErrorKind::InvalidArgument, "empty domain '" + name + "' in mixture pool");
        m = std::min(m, n);
    }
    std::map<std::string, std::vector<std::size_t>> out;
    for (const auto& [name, n] : domain_sizes) {
        std::vector<std::size_t> idx(n);
        std::iota(idx.begin(), idx.end(), std::size_t{0});
        CounterRng rng(derive_key(seed, name));
        rng.shuffle(idx);
        idx.resize(m);
        std::sort(idx.begin(), idx.end());
        out.emplace(name, std::move(idx));
    }
    return out;
}

std::vector<LabeledScore> mixture_pool(const std::map<std::string, std::vector<LabeledScore>>& per_domain,
                                       std::uint64_t seed) {
    std::map<std::string, std::size_t> sizes;
    for (const auto& [name, v] : per_domain) sizes.emplace(name, v.size());
    const auto selection = mixture_selection(sizes, seed);
    std::vector<LabeledScore> pool;
    for (const auto& [name, idx] : selection) {
        const auto& src = per_domain.at(name);
        for (std::size_t i : idx) pool.push_back(src[i]);
    }
    return pool;
}

double cantelli_bound(double delta, double r, double c) {
    if (!std::isfinite(delta) || !std::isfinite(r) || !std::isfinite(c)) {
        fail(ErrorKind::InvalidArgument, "cantelli_bound parameters must be finite");
    }
    if (!(delta > 1.0)) fail(ErrorKind::Degenerate, "cantelli bound degenerates for delta <= 1");
    if (r < 0.0 || c < 0.0) fail(ErrorKind::InvalidArgument, "cantelli_bound needs r >= 0 and c >= 0");
    const double d2 = (delta - 1.0) * (delta - 1.0);
    return d2 / ((r * r + 1.0) * c * c + d2);
}

SeparabilityStats separability_stats(std::span<const double> hallucinated, std::span<const double> factual) {
    if (hallucinated.size() < 2 || factual.size() < 2) {
        fail(ErrorKind::Degenerate, "separability statistics need at least two values per class");
    }
    for (auto list : {hallucinated, factual}) {
        for (double v : list) {
            if (!std::isfinite(v)) fail(ErrorKind::InvalidArgument, "separability input contains a non-finite value");
        }
    }
    SeparabilityStats s;
    s.n_h = hallucinated.size();
    s.n_t = factual.size();
    s.mean_h = mean_of(hallucinated);
    s.mean_t = mean_of(factual);
    if (!(s.mean_t > 0.0)) fail(ErrorKind::Degenerate, "factual mean must be positive");
    s.std_h = sample_std(hallucinated, s.mean_h);
    s.std_t = sample_std(factual, s.mean_t);
    if (!(s.std_t > 0.0)) fail(ErrorKind::Degenerate, "factual values are constant: std ratio undefined");
    s.delta = s.mean_h / s.mean_t;
    s.r = s.std_h / s.std_t;
    s.c = s.std_t / s.mean_t;
    s.t_level = s.c / 0.1;
    s.empirical_p = pairwise_superiority(hallucinated, factual);
    if (s.delta > 1.0) s.cantelli_lb = cantelli_bound(s.delta, s.r, s.c);
    s.checks.mean_ratio = s.delta > 2.0;
    s.checks.std_ratio = s.r > 1.0 && s.r <= 2.5;
    s.checks.factual_cv = s.c <= 0.2;
    return s;
}

void to_json(nlohmann::json& j, const SeparabilityStats& s) {
    j = nlohmann::json{{"n_h", s.n_h},
                       {"n_t", s.n_t},
                       {"mean_h", s.mean_h},
                       {"mean_t", s.mean_t},
                       {"std_h", s.std_h},
                       {"std_t", s.std_t},
                       {"delta", s.delta},
                       {"r", s.r},
                       {"c", s.c},
                       {"t_level", s.t_level},
                       {"empirical_p", s.empirical_p},
                       {"cantelli_lb", s.cantelli_lb ? nlohmann::json(*s.cantelli_lb) : nlohmann::json(nullptr)},
                       {"observation_checks",
                        {{"mean_ratio_above_2", s.checks.mean_ratio},
                         {"std_ratio_in_1_to_2_5", s.checks.std_ratio},
                         {"factual_cv_at_most_0_2", s.checks.factual_cv}}}};
}

void from_json(const nlohmann::json& j, SeparabilityStats& s) {
    s = SeparabilityStats{};
    j.at("n_h").get_to(s.n_h);
    j.at("n_t").get_to(s.n_t);
    j.at("mean_h").get_to(s.mean_h);
    j.at("mean_t").get_to(s.mean_t);
    j.at("std_h").get_to(s.std_h);
    j.at("std_t").get_to(s.std_t);
    j.at("delta").get_to(s.delta);
    j.at("r").get_to(s.r);
    j.at("c").get_to(s.c);
    j.at("t_level").get_to(s.t_level);
    j.at("empirical_p").get_to(s.empirical_p);
    if (!j.at("cantelli_lb").is_null()) s.cantelli_lb = j.at("cantelli_lb").get<double>();
    const auto& c = j.at("observation_checks");
    c.at("mean_ratio_above_2").get_to(s.checks.mean_ratio);
    c.at("std_ratio_in_1_to_2_5").get_to(s.checks.std_ratio);
    c.at("factual_cv_at_most_0_2").get_to(s.checks.factual_cv);
}

std::vector<SweepRow> step_sweep(std::span<const LabeledSequence> sequences, std::span<const std::size_t> k_values) {
    if (sequences.empty()) fail(ErrorKind::InvalidArgument, "step sweep needs sequences");
    if (k_values.empty()) fail(ErrorKind::InvalidArgument, "step sweep needs at least one K");
    std::size_t shortest = SIZE_MAX;
    for (const auto& s : sequences) shortest = std::min(shortest, s.sequence.length());
    for (std::size_t k : k_values) {
        if (k < 3 || k > shortest) {
            fail(ErrorKind::OutOfRange, "K = " + std::to_string(k) + " outside [3, " + std::to_string(shortest) + "]");
        }
    }
    std::vector<SweepRow> rows;
    std::vector<double> pos, neg;
    for (std::size_t k : k_values) {
        pos.clear();
        neg.clear();
        for (const auto& s : sequences) {
            const double spike = spike_score(std::span<const double>(s.sequence.scores).first(k));
            (s.label == 1 ? pos : neg).push_back(spike);
        }
        rows.push_back({k, auroc(pos, neg)});
    }
    return rows;
}

PeakTurnSummary aggregate_peak_turn(std::span<const ScoreSequence> sequences) {
    PeakTurnSummary out;
    for (const auto& s : sequences) {
        if (s.length() < 3) {
            ++out.n_skipped;
            continue;
        }
        ++out.histogram[peak_turn(s)];
        ++out.n_valid;
    }
    std::size_t best = 0;
    for (const auto& [turn, count] : out.histogram) {
        if (count > best) {  // map order makes the smallest turn win ties
            best = count;
            out.dominant = turn;
        }
    }
    return out;
}

void to_json(nlohmann::json& j, const PeakTurnSummary& s) {
    nlohmann::json hist = nlohmann::json::array();
    for (const auto& [turn, count] : s.histogram) hist.push_back({{"turn", turn}, {"count", count}});
    j = nlohmann::json{{"histogram", std::move(hist)},
                       {"dominant_turn", s.dominant ? nlohmann::json(*s.dominant) : nlohmann::json(nullptr)},
                       {"n_valid", s.n_valid},
                       {"n_skipped", s.n_skipped}};
    if (!s.dominant) j["status"] = "no valid items";
}

void from_json(const nlohmann::json& j, PeakTurnSummary& s) {
    s = PeakTurnSummary{};
    for (const auto& row : j.at("histogram")) s.histogram[row.at("turn").get<std::size_t>()] = row.at("count").get<std::size_t>();
    if (!j.at("dominant_turn").is_null()) s.dominant = j.at("dominant_turn").get<std::size_t>();
    j.at("n_valid").get_to(s.n_valid);
    j.at("n_skipped").get_to(s.n_skipped);
}

}  // namespace spikescore
