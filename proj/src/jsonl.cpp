#include "spikescore/jsonl.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

#include "spikescore/error.hpp"

namespace spikescore {

namespace fs = std::filesystem;

std::vector<JsonLine> parse_jsonl(std::istream& in, std::string_view source) {
    std::vector<JsonLine> rows;
    std::string line;
    std::size_t n = 0;
    while (std::getline(in, line)) {
        ++n;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        try {
            rows.push_back({n, nlohmann::json::parse(line)});
        } catch (const nlohmann::json::parse_error& e) {
            fail(ErrorKind::Parse, std::string(source) + ":" + std::to_string(n) + ": malformed JSON (" + e.what() + ")");
        }
    }
    return rows;
}

std::vector<JsonLine> read_jsonl(const fs::path& path) {
    std::ifstream in(path);
    if (!in) fail(ErrorKind::Io, "cannot open " + path.string());
    return parse_jsonl(in, path.string());
}

JsonlScan scan_jsonl(const fs::path& path) {
    std::ifstream in(path);
    if (!in) fail(ErrorKind::Io, "cannot open " + path.string());
    JsonlScan scan;
    std::string line;
    std::size_t n = 0;
    while (std::getline(in, line)) {
        ++n;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        auto parsed = nlohmann::json::parse(line, nullptr, false);
        if (parsed.is_discarded()) scan.errors.emplace_back(n, "malformed JSON");
        else scan.rows.push_back({n, std::move(parsed)});
    }
    return scan;
}

std::string read_text_file(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) fail(ErrorKind::Io, "cannot open " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_text_file(const fs::path& path, std::string_view content) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    fs::path tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) fail(ErrorKind::Io, "cannot write " + tmp.string());
        out.write(content.data(), static_cast<std::streamsize>(content.size()));
        if (!out) fail(ErrorKind::Io, "short write to " + tmp.string());
    }
    std::error_code ec;
    fs::rename(tmp, path, ec);
    if (ec) fail(ErrorKind::Io, "cannot rename " + tmp.string() + ": " + ec.message());
}

void write_jsonl(const fs::path& path, const std::vector<nlohmann::json>& rows) {
    std::string out;
    for (const auto& r : rows) {
        out += r.dump();
        out += '\n';
    }
    write_text_file(path, out);
}

void write_json(const fs::path& path, const nlohmann::json& doc) { write_text_file(path, doc.dump(2) + "\n"); }

double finite_number(const nlohmann::json& j, std::string_view field) {
    if (j.is_string()) {
        const auto& s = j.get_ref<const std::string&>();
        if (s == "NaN" || s == "nan" || s == "Infinity" || s == "-Infinity" || s == "inf" || s == "-inf") {
            fail(ErrorKind::InvalidArgument, std::string(field) + " is non-finite (" + s + ")");
        }
        fail(ErrorKind::Schema, std::string(field) + " must be a number");
    }
    if (!j.is_number()) fail(ErrorKind::Schema, std::string(field) + " must be a number");
    const double v = j.get<double>();
    if (!std::isfinite(v)) fail(ErrorKind::InvalidArgument, std::string(field) + " is non-finite");
    return v;
}

}  // namespace spikescore
