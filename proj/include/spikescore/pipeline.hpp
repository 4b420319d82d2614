#pragma once

#include <cstddef>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <string>
#include <string_view>
#include <vector>

#include "spikescore/config.hpp"

namespace spikescore {

inline constexpr int kExitOk = 0;
inline constexpr int kExitSystemic = 1;
inline constexpr int kExitPartial = 2;

/// Subcommand names in help order.
const std::vector<std::string_view>& subcommands();

struct RunOutcome {
    int exit_code = kExitOk;
    std::filesystem::path manifest;
    std::vector<std::string> item_errors;
};

/// Runs one pipeline stage. Per-item problems are collected into the
/// manifest and yield kExitPartial; systemic problems throw spikescore::Error.
RunOutcome run_subcommand(std::string_view name, const RunConfig& config, std::ostream& log);

/// Runs fn(0..n-1) on up to `workers` threads. The first exception thrown
/// by any call is rethrown after all threads finish.
void parallel_for(std::size_t n, std::size_t workers, const std::function<void(std::size_t)>& fn);

}  // namespace spikescore
