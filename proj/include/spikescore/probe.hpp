#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

namespace spikescore {

enum class ProbeObjective {
    CrossEntropy,     ///< logistic output, binary targets (1 = hallucinated)
    HuberRegression,  ///< linear output, real-valued targets
};

std::string_view objective_name(ProbeObjective objective) noexcept;
ProbeObjective parse_objective(std::string_view name);

/// Fully connected layer; weights are out x in, row-major.
struct DenseLayer {
    std::size_t in = 0;
    std::size_t out = 0;
    std::vector<double> weights;
    std::vector<double> bias;

    bool operator==(const DenseLayer&) const = default;
};

struct ProbeTrainingMeta {
    int epochs = 0;
    double learning_rate = 0.0;
    std::size_t batch_size = 0;
    std::uint64_t seed = 0;
    double huber_delta = 1.0;
    double final_loss = 0.0;
    std::vector<double> epoch_losses;

    bool operator==(const ProbeTrainingMeta&) const = default;
};

/// MLP scorer: ReLU hidden layers, one output unit. Immutable once trained.
struct ProbeModel {
    std::size_t input_dim = 0;
    std::vector<std::size_t> hidden_dims;
    std::vector<DenseLayer> layers;
    ProbeObjective objective = ProbeObjective::CrossEntropy;
    ProbeTrainingMeta training;
    std::string backbone_id = "probe";

    /// Output-unit pre-activation.
    [[nodiscard]] double logit(std::span<const double> feature) const;

    bool operator==(const ProbeModel&) const = default;
};

void to_json(nlohmann::json& j, const ProbeModel& m);
void from_json(const nlohmann::json& j, ProbeModel& m);

struct ProbeHyperparameters {
    std::vector<std::size_t> hidden_dims{256};
    int epochs = 50;
    double learning_rate = 0.05;
    std::size_t batch_size = 32;
    std::uint64_t seed = 0;
    double huber_delta = 1.0;
};

/// Random initialisation (He-uniform hidden layers, zero biases).
ProbeModel init_probe(std::size_t input_dim, const std::vector<std::size_t>& hidden_dims,
                      ProbeObjective objective, std::uint64_t seed);

/// A model whose weights and biases are all zero.
ProbeModel zero_probe(std::size_t input_dim, const std::vector<std::size_t>& hidden_dims,
                      ProbeObjective objective);

/// Hallucination score of one feature vector. Cross-entropy models return a
/// probability kept strictly inside (0, 1); Huber models return the raw output.
double probe_score(const ProbeModel& model, std::span<const double> feature);

struct LossAndGradient {
    double loss = 0.0;
    std::vector<DenseLayer> gradient;  ///< same shapes as model.layers
};

/// Mean loss over the rows and its exact gradient w.r.t. every parameter.
LossAndGradient loss_and_gradient(const ProbeModel& model, std::span<const std::vector<double>> rows,
                                  std::span<const double> targets, double huber_delta = 1.0);

/// Mini-batch gradient descent with a fixed learning rate; deterministic in
/// hyper.seed. Throws on dimension mismatch or a single-class
/// cross-entropy training set.
ProbeModel train_probe(std::span<const std::vector<double>> rows, std::span<const double> targets,
                       ProbeObjective objective, const ProbeHyperparameters& hyper);

}  // namespace spikescore
