#pragma once

#include <cstddef>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

namespace spikescore {

struct JsonLine {
    std::size_t line = 0;  ///< 1-indexed line number in the source
    nlohmann::json value;
};

/// Blank lines are skipped. A malformed line throws a Parse error naming
/// `source` and the line number.
std::vector<JsonLine> parse_jsonl(std::istream& in, std::string_view source);
std::vector<JsonLine> read_jsonl(const std::filesystem::path& path);

/// Like parse_jsonl, but malformed lines are returned as errors instead of thrown.
struct JsonlScan {
    std::vector<JsonLine> rows;
    std::vector<std::pair<std::size_t, std::string>> errors;
};
JsonlScan scan_jsonl(const std::filesystem::path& path);

std::string read_text_file(const std::filesystem::path& path);

/// Writes through a sibling temporary file and a rename, creating parent
/// directories as needed.
void write_text_file(const std::filesystem::path& path, std::string_view content);
void write_jsonl(const std::filesystem::path& path, const std::vector<nlohmann::json>& rows);
void write_json(const std::filesystem::path& path, const nlohmann::json& doc);

/// Reads a finite double, accepting the strings "NaN"/"Infinity" only to
/// reject them with a clear message.
double finite_number(const nlohmann::json& j, std::string_view field);

}  // namespace spikescore
