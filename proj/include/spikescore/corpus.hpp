#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "spikescore/chat.hpp"

namespace spikescore {

struct QAItem {
    std::string item_id;
    std::string domain_id;
    std::string question;  ///< context already concatenated in front
    std::vector<std::string> reference_answers;
    std::string generated_answer;
    std::optional<int> label;  ///< 1 = hallucinated
    std::optional<std::string> group;     ///< e.g. a passage id shared by several items
    std::optional<std::string> language;

    bool operator==(const QAItem&) const = default;
};

void to_json(nlohmann::json& j, const QAItem& item);
void from_json(const nlohmann::json& j, QAItem& item);

std::vector<QAItem> load_items(const std::filesystem::path& path);

/// Fallback answer normalization: lowercase, punctuation stripped, articles
/// dropped, number words 0-20 and numerals canonicalized, single spaces.
std::string normalize_answer(std::string_view text);

/// Fallback label: 0 iff the normalized answer equals a normalized
/// reference, or contains it as a whole-token run when the reference has at
/// most kContainsMaxTokens tokens.
inline constexpr std::size_t kContainsMaxTokens = 5;
int fallback_label(std::string_view answer, const std::vector<std::string>& references);

/// External verdict source. Returns 1 for hallucinated, 0 otherwise.
class Judge {
public:
    virtual ~Judge() = default;
    virtual int judge(std::string_view question, const std::vector<std::string>& references,
                      std::string_view answer) const = 0;
};

/// Our own judge prompt; placeholders {question}, {references}, {answer}.
inline constexpr std::string_view kDefaultJudgePrompt =
    "You are grading a short answer against reference answers.\n"
    "Question: {question}\n"
    "Reference answers: {references}\n"
    "Candidate answer: {answer}\n"
    "Reply with the single character 1 if the candidate contradicts or is not supported by the references, "
    "or 0 if it agrees with one of them. Output nothing else.";

/// Judge over any chat backend. The reply must be "0" or "1" after
/// trimming whitespace; anything else is a malformed response.
class ChatJudge final : public Judge {
public:
    ChatJudge(const ChatBackend& backend, DecodingConfig decoding = {}, RetryPolicy retry = {},
              std::string prompt_template = std::string(kDefaultJudgePrompt));

    int judge(std::string_view question, const std::vector<std::string>& references,
              std::string_view answer) const override;

    [[nodiscard]] std::string render(std::string_view question, const std::vector<std::string>& references,
                                     std::string_view answer) const;

private:
    const ChatBackend& backend_;
    DecodingConfig decoding_;
    RetryPolicy retry_;
    std::string template_;
};

struct LabelingOptions {
    const Judge* judge = nullptr;
    bool allow_fallback = true;  ///< use string matching when the judge fails
};

int label_answer(const QAItem& item, const LabelingOptions& options = {});

enum class StratumField { None, Label, Language };

std::string_view stratum_field_name(StratumField f) noexcept;
StratumField parse_stratum_field(std::string_view name);

struct SplitOptions {
    std::size_t train_n = 0;
    std::size_t test_n = 0;
    std::uint64_t seed = 0;
    StratumField strata = StratumField::None;
    bool by_group = false;  ///< keep every QAItem::group wholly on one side
};

struct SplitResult {
    std::vector<QAItem> train;
    std::vector<QAItem> test;
};

/// Seeded disjoint samples; each side keeps the input order. Stratified
/// mode allocates per-stratum quotas by largest remainder. Group mode
/// assigns whole groups (items without a group are their own group) in
/// seeded order, and cannot be combined with strata.
SplitResult sample_split(const std::vector<QAItem>& items, const SplitOptions& options);

enum class RecordSchema { QA, Transcript, Feature, Score, Label };

std::string_view record_schema_name(RecordSchema s) noexcept;
RecordSchema parse_record_schema(std::string_view name);

struct ValidationIssue {
    std::size_t line = 0;  ///< 0 for dataset-level findings
    std::string field;
    std::string reason;

    bool operator==(const ValidationIssue&) const = default;
};

struct ValidationReport {
    std::filesystem::path path;
    RecordSchema schema = RecordSchema::QA;
    std::size_t records = 0;
    std::vector<ValidationIssue> issues;

    [[nodiscard]] bool ok() const noexcept { return issues.empty(); }
};

void to_json(nlohmann::json& j, const ValidationReport& r);

ValidationReport validate_records(const std::filesystem::path& path, RecordSchema schema);

/// Synthetic benchmark for the simulator backend.
struct SimCorpusOptions {
    std::size_t domains = 6;
    std::size_t items_per_domain = 500;
    double hallucination_rate = 0.4;
    std::uint64_t seed = 20250101;
};

std::string sim_domain_name(std::size_t index);

/// Exactly round(rate * n) hallucinated items per domain, chosen by a seeded
/// shuffle; generated answers match the reference iff the item is factual.
std::map<std::string, std::vector<QAItem>> simulate_corpus(const SimCorpusOptions& options);

}  // namespace spikescore
