#pragma once

#include <cstddef>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <json.hpp>

#include "spikescore/dialogue.hpp"
#include "spikescore/jsonl.hpp"
#include "spikescore/probe.hpp"
#include "spikescore/trajectory.hpp"

namespace spikescore {

enum class TokenPosition { Last, Penultimate };

std::string_view token_position_name(TokenPosition p) noexcept;
TokenPosition parse_token_position(std::string_view name);

inline constexpr std::string_view kLayerPolicy = "mean of last 5 layers";

struct FeatureMeta {
    std::string layer_policy{kLayerPolicy};
    TokenPosition token_position = TokenPosition::Last;
    std::size_t hidden_dim = 0;

    bool operator==(const FeatureMeta&) const = default;
};

/// Pooled hidden-state vector of one answer turn.
struct FeatureRecord {
    std::string item_id;
    int turn = 0;
    std::vector<double> vector;
    FeatureMeta meta;

    bool operator==(const FeatureRecord&) const = default;
};

void to_json(nlohmann::json& j, const FeatureRecord& r);
/// Strict: requires every field, a finite vector of length meta.hidden_dim, turn >= 1.
void from_json(const nlohmann::json& j, FeatureRecord& r);

/// Features of a dataset, indexed by (item, turn). add() enforces one
/// vector length across the table and unique keys.
class FeatureTable {
public:
    void add(FeatureRecord record);

    [[nodiscard]] const FeatureRecord* find(const std::string& item_id, int turn) const;
    [[nodiscard]] std::size_t dimension() const noexcept { return dim_; }
    [[nodiscard]] std::size_t size() const noexcept { return records_.size(); }
    [[nodiscard]] bool empty() const noexcept { return records_.empty(); }

    /// Items whose turns are not exactly 1..n, with the missing turns.
    [[nodiscard]] std::vector<std::pair<std::string, std::vector<int>>> gaps() const;

    [[nodiscard]] const std::map<std::pair<std::string, int>, FeatureRecord>& records() const noexcept {
        return records_;
    }

private:
    std::map<std::pair<std::string, int>, FeatureRecord> records_;
    std::size_t dim_ = 0;
};

FeatureTable load_features(const std::filesystem::path& path);

struct TurnScore {
    std::string item_id;
    int turn = 0;
    double value = 0.0;
    std::string backbone_id;

    bool operator==(const TurnScore&) const = default;
};

void to_json(nlohmann::json& j, const TurnScore& s);
void from_json(const nlohmann::json& j, TurnScore& s);

/// Mean negative log-probability of the answer tokens.
double perplexity_score(std::span<const double> token_logprobs);

enum class Backbone { Perplexity, Probe, External, Sim };

std::string_view backbone_name(Backbone b) noexcept;
Backbone parse_backbone(std::string_view name);

/// Inputs a backbone may need besides the transcript.
struct ScoringInputs {
    const ProbeModel* probe = nullptr;
    const FeatureTable* features = nullptr;
};

/// One TurnScore per turn 1..K of the transcript. Throws InvalidArgument
/// naming the item and the first turn whose input is missing; the caller
/// flags the item. External scores are ingested, not computed, so
/// Backbone::External is rejected here.
std::vector<TurnScore> score_transcript(const DialogueTranscript& transcript, Backbone backbone,
                                        const ScoringInputs& inputs = {});

enum class Orientation { HigherIsSuspect, LowerIsSuspect };

std::string_view orientation_name(Orientation o) noexcept;
Orientation parse_orientation(std::string_view name);

/// Reads external per-turn scores, one JSON object per line with item_id,
/// turn, value, backbone_id and optionally orientation. Lines without an
/// orientation use `declared`; if neither is present the line is rejected.
/// Lower-is-suspect values are negated so that every returned score has
/// higher = more suspect. Errors name the offending line.
std::vector<TurnScore> ingest_external_scores(const std::vector<JsonLine>& lines,
                                              std::optional<Orientation> declared = std::nullopt,
                                              std::string_view source = "scores");
std::vector<TurnScore> ingest_external_scores(const std::filesystem::path& path,
                                              std::optional<Orientation> declared = std::nullopt);

struct AssemblyIssue {
    std::string item_id;
    std::string backbone_id;
    std::vector<int> missing_turns;
    std::string reason;
};

struct AssemblyResult {
    std::vector<ScoreSequence> sequences;  ///< order of first appearance of (item, backbone)
    std::vector<AssemblyIssue> issues;
};

/// Groups scores by (item, backbone) and sorts by turn. Items with a gap,
/// a duplicate turn or not starting at turn 1 are reported in issues and
/// produce no sequence.
AssemblyResult assemble_sequences(const std::vector<TurnScore>& scores);

}  // namespace spikescore
