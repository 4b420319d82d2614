#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "spikescore/chat.hpp"
#include "spikescore/simulator.hpp"

namespace spikescore {

struct BackendConfig {
    std::string kind = "sim";  ///< sim | http
    std::string url;
    std::string model;
    std::string credential_env = "SPIKESCORE_API_KEY";  ///< the credential itself never enters the config
    int timeout_ms = 60000;
    int max_attempts = 3;
    int initial_backoff_ms = 500;
    double backoff_multiplier = 2.0;
};

struct ProbeConfig {
    std::string objective = "cross_entropy";  ///< cross_entropy | huber_regression
    std::vector<std::size_t> hidden_dims{256};
    int epochs = 50;
    double learning_rate = 0.05;
    std::size_t batch_size = 32;
    double huber_delta = 1.0;
    std::optional<std::string> train_domain;  ///< train-probe / score; defaults to the first domain
};

struct BackboneConfig {
    std::string kind = "sim";  ///< perplexity | probe | external | sim
    ProbeConfig probe;
    std::string external_orientation = "higher_is_suspect";
};

/// Record files of one domain; empty strings fall back to the output layout.
struct DomainPaths {
    std::string items;
    std::string features;
    std::string external_scores;
    std::string targets;  ///< {item_id, target} lines for huber probes
};

struct SeedConfig {
    std::uint64_t prompt = 42;
    std::uint64_t sampling = 0;
    std::uint64_t split = 0;
    std::uint64_t mixture = 7;
    std::uint64_t probe = 0;
    std::uint64_t theorem = 0;
};

struct SimulateConfig {
    std::size_t domains = 6;
    std::size_t items_per_domain = 500;
    double hallucination_rate = 0.4;
    std::size_t feature_dim = 16;  ///< 0 disables synthetic features
    sim::SimulatorConfig generator;
};

struct EvaluationConfig {
    std::vector<std::size_t> sweep_k;  ///< empty: every K from 3 to the shortest sequence
    double target_fpr = 0.05;
    std::optional<std::string> calibration_domain;
    std::size_t theorem_samples = 100000;
    std::vector<std::string> plots{"trajectories", "spike_histograms", "sweep", "stats"};
};

struct EmbedderConfig {
    std::string kind = "hashing";  ///< hashing | http
    std::size_t dimension = 256;
    std::string url;
    std::string model;
    std::size_t batch_size = 64;
};

struct RagConfig {
    std::string corpus;
    std::size_t top_k = 4;
    std::optional<std::size_t> context_char_cap;
    EmbedderConfig embedder;
};

struct LabelingConfig {
    bool use_judge = false;
    bool allow_fallback = true;
    std::optional<std::string> judge_prompt;
};

struct RunConfig {
    BackendConfig backend;
    DecodingConfig decoding;
    SeedConfig seeds;
    BackboneConfig backbone;
    std::map<std::string, DomainPaths> domains;  ///< empty: the registry written by `simulate`
    SimulateConfig simulate;
    EvaluationConfig evaluation;
    RagConfig rag;
    LabelingConfig labeling;
    std::optional<std::string> system_directive;  ///< "polite_aligned" or literal text
    std::size_t workers = 1;
    std::string output_dir = "out";

    /// Directory against which relative record paths resolve; not serialized.
    std::filesystem::path base_dir;

    void validate() const;
    /// 16 hex digits of FNV-1a over the canonical JSON, output_dir excluded.
    [[nodiscard]] std::string hash() const;
    [[nodiscard]] std::optional<std::string> directive_text() const;
    [[nodiscard]] std::filesystem::path resolve(const std::string& path) const;
};

void to_json(nlohmann::json& j, const RunConfig& c);
/// Overlays `j` on the defaults; unknown fields are a Config error.
void from_json(const nlohmann::json& j, RunConfig& c);

RunConfig load_config(const std::filesystem::path& path);

struct CliOverrides {
    std::optional<std::string> out;
    std::optional<std::uint64_t> seed;
    std::optional<std::string> backend;
    std::optional<int> k;
    std::optional<std::string> backbone;
};

void apply_overrides(RunConfig& config, const CliOverrides& overrides);

}  // namespace spikescore
