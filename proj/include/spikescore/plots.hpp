#pragma once

#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "spikescore/leave_one_out.hpp"

namespace spikescore {

enum class PlotSelector { Trajectories, SpikeHistograms, Sweep, Stats };

std::string_view plot_selector_name(PlotSelector s) noexcept;
PlotSelector parse_plot_selector(std::string_view name);

inline constexpr std::size_t kHistogramBins = 50;

/// Fixed-width histogram over [lo, hi]; the top edge falls in the last bin.
struct Histogram {
    double lo = 0.0;
    double hi = 0.0;
    std::vector<double> centers;
    std::vector<std::size_t> counts;
};

Histogram fixed_width_histogram(std::span<const double> values, double lo, double hi, std::size_t bins = kHistogramBins);

/// Writes comma-separated files with one header row into `dir` and returns
/// their paths. Trajectories and histograms read the sequences; sweep and
/// stats read the report. `item_filter` limits trajectories to one item.
std::vector<std::filesystem::path> export_plot_data(const EvalReport& report, std::span<const LabeledSequence> sequences,
                                                    PlotSelector what, const std::filesystem::path& dir,
                                                    const std::optional<std::string>& item_filter = std::nullopt);

/// Shortest round-trip decimal text of a double.
std::string format_double(double v);

}  // namespace spikescore
