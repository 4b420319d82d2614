#include "spikescore/leave_one_out.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include "spikescore/error.hpp"
#include "spikescore/rng.hpp"

namespace spikescore {
namespace {

struct Split {
    std::vector<double> pos, neg;
};

Split spikes_by_label(const std::vector<LabeledSequence>& seqs) {
    Split s;
    for (const auto& ls : seqs) (ls.label == 1 ? s.pos : s.neg).push_back(spike_score(ls.sequence));
    return s;
}

void check_labels(const DomainSequences& data) {
    for (const auto& [domain, seqs] : data) {
        for (const auto& s : seqs) {
            if (s.label != 0 && s.label != 1) {
                fail(ErrorKind::InvalidArgument, "unlabeled item '" + s.sequence.item_id + "' in domain '" + domain + "'");
            }
        }
    }
}

const std::vector<LabeledSequence>& domain_of(const DomainSequences& data, const std::string& name) {
    auto it = data.find(name);
    if (it == data.end() || it->second.empty()) fail(ErrorKind::InvalidArgument, "no scored items for domain '" + name + "'");
    return it->second;
}

TrainDomainResult evaluate_train_domain(const std::string& train, const std::vector<std::string>& domains,
                                        const DomainSequences& data, const LooOptions& opt) {
    TrainDomainResult res;
    res.train_domain = train;

    const Split train_split = spikes_by_label(domain_of(data, train));
    res.threshold = calibrate_threshold(train_split.neg, opt.target_fpr, train);

    double held_sum = 0.0;
    std::size_t held_n = 0;
    std::map<std::string, std::size_t> held_sizes;
    for (const auto& test : domains) {
        const auto& seqs = domain_of(data, test);
        const Split split = spikes_by_label(seqs);
        const double a = auroc(split.pos, split.neg);
        res.auroc[test] = a;
        if (test != train) {
            held_sum += a;
            ++held_n;
            held_sizes.emplace(test, seqs.size());
        }
    }
    res.mean_heldout_auroc = held_sum / static_cast<double>(held_n);

    // Uniform mixture of the held-out domains.
    const auto selection = mixture_selection(held_sizes, derive_key(opt.mixture_seed, train));
    std::vector<double> pos, neg, cv_pos, cv_neg;
    std::size_t tp = 0, fp = 0;
    for (const auto& [test, idx] : selection) {
        const auto& seqs = data.at(test);
        for (std::size_t i : idx) {
            const auto& ls = seqs[i];
            const double spike = spike_score(ls.sequence);
            const double cv = coefficient_of_variation(ls.sequence);
            const int predicted = decide(spike, res.threshold);
            if (ls.label == 1) {
                pos.push_back(spike);
                cv_pos.push_back(cv);
                tp += static_cast<std::size_t>(predicted);
            } else {
                neg.push_back(spike);
                cv_neg.push_back(cv);
                fp += static_cast<std::size_t>(predicted);
            }
        }
    }
    res.mixture_size = pos.size() + neg.size();
    res.mixture_auroc = auroc(pos, neg);
    res.mixture_cv_auroc = auroc(cv_pos, cv_neg);
    res.mixture_rates = {static_cast<double>(tp) / static_cast<double>(pos.size()),
                         static_cast<double>(fp) / static_cast<double>(neg.size())};
    try {
        res.mixture_stats = separability_stats(pos, neg);
    } catch (const Error& e) {
        res.mixture_stats_error = e.what();
    }
    return res;
}

nlohmann::json result_json(const TrainDomainResult& r) {
    nlohmann::json j{{"train_domain", r.train_domain},
                     {"auroc", r.auroc},
                     {"mean_heldout_auroc", r.mean_heldout_auroc},
                     {"mixture_size", r.mixture_size},
                     {"mixture_auroc", r.mixture_auroc},
                     {"mixture_cv_auroc", r.mixture_cv_auroc},
                     {"threshold", r.threshold},
                     {"mixture_rates", {{"tpr", r.mixture_rates.tpr}, {"fpr", r.mixture_rates.fpr}}}};
    j["mixture_stats"] = r.mixture_stats ? nlohmann::json(*r.mixture_stats) : nlohmann::json(nullptr);
    if (r.mixture_stats_error) j["mixture_stats_error"] = *r.mixture_stats_error;
    return j;
}

}  // namespace

std::vector<std::vector<double>> EvalReport::matrix() const {
    std::vector<std::vector<double>> m;
    for (const auto& train : domains) {
        const auto& res = result_for(train);
        std::vector<double> row;
        for (const auto& test : domains) row.push_back(res.auroc.at(test));
        m.push_back(std::move(row));
    }
    return m;
}

const TrainDomainResult& EvalReport::result_for(const std::string& train_domain) const {
    for (const auto& r : results) {
        if (r.train_domain == train_domain) return r;
    }
    fail(ErrorKind::InvalidArgument, "no result for train domain '" + train_domain + "'");
}

void to_json(nlohmann::json& j, const EvalReport& r) {
    nlohmann::json matrix = nlohmann::json::array();
    for (const auto& train : r.domains) {
        const auto& res = r.result_for(train);
        nlohmann::json row = nlohmann::json::array();
        for (const auto& test : r.domains) {
            row.push_back({{"test_domain", test}, {"auroc", res.auroc.at(test)}, {"in_domain", test == train}});
        }
        matrix.push_back({{"train_domain", train}, {"cells", std::move(row)}, {"mean_heldout_auroc", res.mean_heldout_auroc}});
    }
    nlohmann::json results = nlohmann::json::array();
    for (const auto& res : r.results) results.push_back(result_json(res));
    nlohmann::json sweep = nlohmann::json::array();
    for (const auto& row : r.sweep) sweep.push_back({{"k", row.k}, {"auroc", row.auroc}});
    j = nlohmann::json{{"backbone_id", r.backbone_id},
                       {"config_hash", r.config_hash},
                       {"domains", r.domains},
                       {"auroc_matrix", std::move(matrix)},
                       {"train_domains", std::move(results)},
                       {"step_sweep", std::move(sweep)},
                       {"peak_turns", r.peak_turns},
                       {"peak_turns_hallucinated", r.peak_turns_hallucinated},
                       {"seeds", r.seeds},
                       {"config", r.config}};
}

void from_json(const nlohmann::json& j, EvalReport& r) {
    r = EvalReport{};
    j.at("backbone_id").get_to(r.backbone_id);
    j.at("config_hash").get_to(r.config_hash);
    j.at("domains").get_to(r.domains);
    for (const auto& rj : j.at("train_domains")) {
        TrainDomainResult res;
        rj.at("train_domain").get_to(res.train_domain);
        rj.at("auroc").get_to(res.auroc);
        rj.at("mean_heldout_auroc").get_to(res.mean_heldout_auroc);
        rj.at("mixture_size").get_to(res.mixture_size);
        rj.at("mixture_auroc").get_to(res.mixture_auroc);
        rj.at("mixture_cv_auroc").get_to(res.mixture_cv_auroc);
        rj.at("threshold").get_to(res.threshold);
        rj.at("mixture_rates").at("tpr").get_to(res.mixture_rates.tpr);
        rj.at("mixture_rates").at("fpr").get_to(res.mixture_rates.fpr);
        if (!rj.at("mixture_stats").is_null()) res.mixture_stats = rj.at("mixture_stats").get<SeparabilityStats>();
        if (rj.contains("mixture_stats_error")) res.mixture_stats_error = rj.at("mixture_stats_error").get<std::string>();
        r.results.push_back(std::move(res));
    }
    for (const auto& row : j.at("step_sweep")) r.sweep.push_back({row.at("k").get<std::size_t>(), row.at("auroc").get<double>()});
    j.at("peak_turns").get_to(r.peak_turns);
    j.at("peak_turns_hallucinated").get_to(r.peak_turns_hallucinated);
    j.at("seeds").get_to(r.seeds);
    r.config = j.at("config");
}

EvalReport run_leave_one_out(const std::vector<std::string>& domains, const SequenceProvider& provider,
                             const LooOptions& options) {
    if (domains.size() < 2) fail(ErrorKind::InvalidArgument, "leave-one-out needs at least 2 domains");
    if (std::set<std::string>(domains.begin(), domains.end()).size() != domains.size()) {
        fail(ErrorKind::InvalidArgument, "duplicate domain names");
    }
    EvalReport report;
    report.domains = domains;
    report.seeds["mixture_seed"] = options.mixture_seed;

    for (std::size_t d = 0; d < domains.size(); ++d) {
        const DomainSequences data = provider(domains[d]);
        check_labels(data);
        report.results.push_back(evaluate_train_domain(domains[d], domains, data, options));

        if (d != 0) continue;
        std::vector<LabeledSequence> pooled;
        std::vector<ScoreSequence> all, hall;
        for (const auto& name : domains) {
            for (const auto& ls : domain_of(data, name)) {
                pooled.push_back(ls);
                all.push_back(ls.sequence);
                if (ls.label == 1) hall.push_back(ls.sequence);
            }
        }
        if (!pooled.empty()) report.backbone_id = pooled.front().sequence.backbone_id;
        std::vector<std::size_t> ks = options.sweep_k;
        if (ks.empty()) {
            std::size_t shortest = SIZE_MAX;
            for (const auto& ls : pooled) shortest = std::min(shortest, ls.sequence.length());
            for (std::size_t k = 3; k <= shortest; ++k) ks.push_back(k);
        }
        if (!ks.empty()) report.sweep = step_sweep(pooled, ks);
        report.peak_turns = aggregate_peak_turn(all);
        report.peak_turns_hallucinated = aggregate_peak_turn(hall);
    }
    return report;
}

}  // namespace spikescore
