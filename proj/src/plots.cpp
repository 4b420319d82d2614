#include "spikescore/plots.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>

#include "spikescore/error.hpp"
#include "spikescore/jsonl.hpp"

namespace spikescore {

std::string_view plot_selector_name(PlotSelector s) noexcept {
    switch (s) {
        case PlotSelector::Trajectories: return "trajectories";
        case PlotSelector::SpikeHistograms: return "spike_histograms";
        case PlotSelector::Sweep: return "sweep";
        case PlotSelector::Stats: return "stats";
    }
    return "?";
}

PlotSelector parse_plot_selector(std::string_view name) {
    for (auto s : {PlotSelector::Trajectories, PlotSelector::SpikeHistograms, PlotSelector::Sweep, PlotSelector::Stats}) {
        if (name == plot_selector_name(s)) return s;
    }
    fail(ErrorKind::InvalidArgument, "unknown plot selector '" + std::string(name) + "'");
}

std::string format_double(double v) {
    char buf[32];
    auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
    if (ec != std::errc{}) fail(ErrorKind::Internal, "cannot format double");
    return {buf, end};
}

Histogram fixed_width_histogram(std::span<const double> values, double lo, double hi, std::size_t bins) {
    if (bins == 0) fail(ErrorKind::InvalidArgument, "histogram needs at least one bin");
    Histogram h{lo, hi, std::vector<double>(bins), std::vector<std::size_t>(bins, 0)};
    const double width = hi > lo ? (hi - lo) / static_cast<double>(bins) : 1.0;
    for (std::size_t b = 0; b < bins; ++b) h.centers[b] = lo + (static_cast<double>(b) + 0.5) * width;
    for (double v : values) {
        auto b = static_cast<std::size_t>(std::max(0.0, std::floor((v - lo) / width)));
        h.counts[std::min(b, bins - 1)] += 1;
    }
    return h;
}

std::vector<std::filesystem::path> export_plot_data(const EvalReport& report, std::span<const LabeledSequence> sequences,
                                                    PlotSelector what, const std::filesystem::path& dir,
                                                    const std::optional<std::string>& item_filter) {
    std::vector<std::filesystem::path> written;
    auto emit = [&](const std::string& name, const std::string& body) {
        written.push_back(dir / name);
        write_text_file(written.back(), body);
    };

    switch (what) {
        case PlotSelector::Trajectories: {
            std::string out = "item_id,domain_id,label,turn,score\n";
            for (const auto& ls : sequences) {
                if (item_filter && ls.sequence.item_id != *item_filter) continue;
                for (std::size_t k = 0; k < ls.sequence.scores.size(); ++k) {
                    out += ls.sequence.item_id + "," + ls.domain_id + "," + std::to_string(ls.label) + "," +
                           std::to_string(k + 1) + "," + format_double(ls.sequence.scores[k]) + "\n";
                }
            }
            emit("trajectories.csv", out);
            break;
        }
        case PlotSelector::SpikeHistograms: {
            std::vector<double> pos, neg;
            for (const auto& ls : sequences) (ls.label == 1 ? pos : neg).push_back(spike_score(ls.sequence));
            if (pos.empty() && neg.empty()) fail(ErrorKind::InvalidArgument, "no sequences to histogram");
            double lo = INFINITY, hi = -INFINITY;
            for (auto* v : {&pos, &neg}) {
                for (double x : *v) {
                    lo = std::min(lo, x);
                    hi = std::max(hi, x);
                }
            }
            for (auto [name, values] : {std::pair{"hallucinated", &pos}, std::pair{"factual", &neg}}) {
                const Histogram h = fixed_width_histogram(*values, lo, hi);
                std::string out = "bin_center,count\n";
                for (std::size_t b = 0; b < h.counts.size(); ++b) {
                    out += format_double(h.centers[b]) + "," + std::to_string(h.counts[b]) + "\n";
                }
                emit(std::string("spike_histogram_") + name + ".csv", out);
            }
            break;
        }
        case PlotSelector::Sweep: {
            std::string out = "k,auroc\n";
            for (const auto& row : report.sweep) out += std::to_string(row.k) + "," + format_double(row.auroc) + "\n";
            emit("sweep.csv", out);
            break;
        }
        case PlotSelector::Stats: {
            std::string out =
                "train_domain,mean_heldout_auroc,mixture_auroc,mixture_cv_auroc,mean_h,mean_t,std_h,std_t,delta,r,c,"
                "t_level,empirical_p,cantelli_lb,obs_mean_ratio,obs_std_ratio,obs_factual_cv\n";
            for (const auto& res : report.results) {
                out += res.train_domain + "," + format_double(res.mean_heldout_auroc) + "," +
                       format_double(res.mixture_auroc) + "," + format_double(res.mixture_cv_auroc);
                if (const auto& s = res.mixture_stats) {
                    for (double v : {s->mean_h, s->mean_t, s->std_h, s->std_t, s->delta, s->r, s->c, s->t_level, s->empirical_p}) {
                        out += "," + format_double(v);
                    }
                    out += "," + (s->cantelli_lb ? format_double(*s->cantelli_lb) : std::string());
                    out += std::string(",") + (s->checks.mean_ratio ? "1" : "0") + "," + (s->checks.std_ratio ? "1" : "0") +
                           "," + (s->checks.factual_cv ? "1" : "0");
                } else {
                    out += ",,,,,,,,,,,,,";
                }
                out += "\n";
            }
            emit("stats.csv", out);
            break;
        }
    }
    return written;
}

}  // namespace spikescore
