#include "spikescore/probe.hpp"

#include <algorithm>
#include <cfloat>
#include <cmath>
#include <numeric>

#include <json.hpp>

#include "spikescore/error.hpp"
#include "spikescore/rng.hpp"

namespace spikescore {
namespace {

double sigmoid(double z) {
    if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
    const double e = std::exp(z);
    return e / (1.0 + e);
}

// log(1 + exp(z)) without overflow.
double softplus(double z) { return z > 0.0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z)); }

double huber(double residual, double delta) {
    const double a = std::fabs(residual);
    return a <= delta ? 0.5 * residual * residual : delta * (a - 0.5 * delta);
}

double huber_derivative(double residual, double delta) {
    return std::clamp(residual, -delta, delta);
}

void check_dims(const ProbeModel& model, std::span<const double> feature) {
    if (feature.size() != model.input_dim) {
        fail(ErrorKind::InvalidArgument, "feature dimension " + std::to_string(feature.size()) +
                                             " does not match probe input_dim " +
                                             std::to_string(model.input_dim));
    }
}

// Activations of every layer for one row; acts[0] is the input.
struct ForwardTrace {
    std::vector<std::vector<double>> acts;
    double logit = 0.0;
};

ForwardTrace forward(const ProbeModel& model, std::span<const double> x) {
    ForwardTrace trace;
    trace.acts.reserve(model.layers.size());
    trace.acts.emplace_back(x.begin(), x.end());
    for (std::size_t l = 0; l < model.layers.size(); ++l) {
        const DenseLayer& layer = model.layers[l];
        const auto& in = trace.acts.back();
        std::vector<double> out(layer.out);
        for (std::size_t o = 0; o < layer.out; ++o) {
            const double* w = layer.weights.data() + o * layer.in;
            double z = layer.bias[o];
            for (std::size_t i = 0; i < layer.in; ++i) z += w[i] * in[i];
            out[o] = z;
        }
        if (l + 1 == model.layers.size()) {
            trace.logit = out[0];
        } else {
            for (auto& v : out) v = std::max(v, 0.0);
            trace.acts.push_back(std::move(out));
        }
    }
    return trace;
}

std::vector<DenseLayer> zero_like(const std::vector<DenseLayer>& layers) {
    std::vector<DenseLayer> g;
    g.reserve(layers.size());
    for (const auto& l : layers) {
        g.push_back({l.in, l.out, std::vector<double>(l.weights.size(), 0.0), std::vector<double>(l.bias.size(), 0.0)});
    }
    return g;
}

// Accumulates d(loss_row)/d(params) into grad given dloss/dlogit.
void backward(const ProbeModel& model, const ForwardTrace& trace, double dlogit, std::vector<DenseLayer>& grad) {
    std::vector<double> delta{dlogit};
    for (std::size_t l = model.layers.size(); l-- > 0;) {
        const DenseLayer& layer = model.layers[l];
        DenseLayer& g = grad[l];
        const auto& in = trace.acts[l];
        for (std::size_t o = 0; o < layer.out; ++o) {
            const double d = delta[o];
            if (d == 0.0) continue;
            double* gw = g.weights.data() + o * layer.in;
            for (std::size_t i = 0; i < layer.in; ++i) gw[i] += d * in[i];
            g.bias[o] += d;
        }
        if (l == 0) break;
        std::vector<double> prev(layer.in, 0.0);
        for (std::size_t o = 0; o < layer.out; ++o) {
            const double d = delta[o];
            if (d == 0.0) continue;
            const double* w = layer.weights.data() + o * layer.in;
            for (std::size_t i = 0; i < layer.in; ++i) prev[i] += d * w[i];
        }
        // ReLU derivative of the previous layer's output (stored post-activation).
        for (std::size_t i = 0; i < layer.in; ++i) {
            if (in[i] <= 0.0) prev[i] = 0.0;
        }
        delta = std::move(prev);
    }
}

double row_loss_and_dlogit(ProbeObjective objective, double z, double y, double huber_delta, double& dlogit) {
    if (objective == ProbeObjective::CrossEntropy) {
        dlogit = sigmoid(z) - y;
        return softplus(z) - y * z;
    }
    dlogit = huber_derivative(z - y, huber_delta);
    return huber(z - y, huber_delta);
}

void validate_training_set(std::span<const std::vector<double>> rows, std::span<const double> targets,
                           ProbeObjective objective) {
    if (rows.empty()) fail(ErrorKind::InvalidArgument, "probe training set is empty");
    if (rows.size() != targets.size()) {
        fail(ErrorKind::InvalidArgument, "features and targets are misaligned (" + std::to_string(rows.size()) +
                                             " vs " + std::to_string(targets.size()) + ")");
    }
    const std::size_t dim = rows.front().size();
    if (dim == 0) fail(ErrorKind::InvalidArgument, "feature vectors are empty");
    for (std::size_t r = 0; r < rows.size(); ++r) {
        if (rows[r].size() != dim) {
            fail(ErrorKind::InvalidArgument, "feature row " + std::to_string(r) + " has dimension " +
                                                 std::to_string(rows[r].size()) + ", expected " + std::to_string(dim));
        }
        for (double v : rows[r]) {
            if (!std::isfinite(v)) fail(ErrorKind::InvalidArgument, "non-finite feature in row " + std::to_string(r));
        }
        if (!std::isfinite(targets[r])) fail(ErrorKind::InvalidArgument, "non-finite target in row " + std::to_string(r));
    }
    if (objective == ProbeObjective::CrossEntropy) {
        bool any0 = false, any1 = false;
        for (double y : targets) {
            if (y == 0.0) any0 = true;
            else if (y == 1.0) any1 = true;
            else fail(ErrorKind::InvalidArgument, "cross-entropy targets must be 0 or 1");
        }
        if (!(any0 && any1)) fail(ErrorKind::Degenerate, "degenerate label set: cross-entropy training needs both classes");
    }
}

}  // namespace

std::string_view objective_name(ProbeObjective objective) noexcept {
    return objective == ProbeObjective::CrossEntropy ? "cross_entropy" : "huber_regression";
}

ProbeObjective parse_objective(std::string_view name) {
    if (name == "cross_entropy") return ProbeObjective::CrossEntropy;
    if (name == "huber_regression") return ProbeObjective::HuberRegression;
    fail(ErrorKind::InvalidArgument, "unknown probe objective '" + std::string(name) + "'");
}

double ProbeModel::logit(std::span<const double> feature) const {
    check_dims(*this, feature);
    return forward(*this, feature).logit;
}

ProbeModel zero_probe(std::size_t input_dim, const std::vector<std::size_t>& hidden_dims, ProbeObjective objective) {
    ProbeModel m;
    m.input_dim = input_dim;
    m.hidden_dims = hidden_dims;
    m.objective = objective;
    std::size_t in = input_dim;
    auto add = [&](std::size_t out) {
        m.layers.push_back({in, out, std::vector<double>(in * out, 0.0), std::vector<double>(out, 0.0)});
        in = out;
    };
    for (std::size_t h : hidden_dims) add(h);
    add(1);
    return m;
}

ProbeModel init_probe(std::size_t input_dim, const std::vector<std::size_t>& hidden_dims,
                      ProbeObjective objective, std::uint64_t seed) {
    if (input_dim == 0) fail(ErrorKind::InvalidArgument, "probe input_dim must be positive");
    for (std::size_t h : hidden_dims) {
        if (h == 0) fail(ErrorKind::InvalidArgument, "hidden layer width must be positive");
    }
    ProbeModel m = zero_probe(input_dim, hidden_dims, objective);
    CounterRng rng(seed, 0x696e6974ULL);
    for (std::size_t l = 0; l < m.layers.size(); ++l) {
        DenseLayer& layer = m.layers[l];
        const bool last = l + 1 == m.layers.size();
        const double limit = std::sqrt((last ? 3.0 : 6.0) / static_cast<double>(layer.in));
        for (auto& w : layer.weights) w = rng.uniform(-limit, limit);
    }
    return m;
}

double probe_score(const ProbeModel& model, std::span<const double> feature) {
    const double z = model.logit(feature);
    if (model.objective == ProbeObjective::HuberRegression) return z;
    // sigmoid() rounds to exactly 0 or 1 for |z| beyond ~37 (or ~745); keep the open interval.
    constexpr double lo = DBL_MIN;
    constexpr double hi = 1.0 - DBL_EPSILON / 2.0;
    return std::clamp(sigmoid(z), lo, hi);
}

LossAndGradient loss_and_gradient(const ProbeModel& model, std::span<const std::vector<double>> rows,
                                  std::span<const double> targets, double huber_delta) {
    if (rows.size() != targets.size() || rows.empty()) {
        fail(ErrorKind::InvalidArgument, "loss_and_gradient needs aligned, non-empty rows and targets");
    }
    LossAndGradient out;
    out.gradient = zero_like(model.layers);
    for (std::size_t r = 0; r < rows.size(); ++r) {
        check_dims(model, rows[r]);
        const ForwardTrace trace = forward(model, rows[r]);
        double dlogit = 0.0;
        out.loss += row_loss_and_dlogit(model.objective, trace.logit, targets[r], huber_delta, dlogit);
        backward(model, trace, dlogit, out.gradient);
    }
    const double inv = 1.0 / static_cast<double>(rows.size());
    out.loss *= inv;
    for (auto& g : out.gradient) {
        for (auto& w : g.weights) w *= inv;
        for (auto& b : g.bias) b *= inv;
    }
    return out;
}

ProbeModel train_probe(std::span<const std::vector<double>> rows, std::span<const double> targets,
                       ProbeObjective objective, const ProbeHyperparameters& hyper) {
    validate_training_set(rows, targets, objective);
    if (hyper.epochs < 0) fail(ErrorKind::InvalidArgument, "epochs must be non-negative");
    if (!(hyper.learning_rate > 0.0)) fail(ErrorKind::InvalidArgument, "learning_rate must be positive");
    if (hyper.batch_size == 0) fail(ErrorKind::InvalidArgument, "batch_size must be positive");
    if (!(hyper.huber_delta > 0.0)) fail(ErrorKind::InvalidArgument, "huber_delta must be positive");

    ProbeModel model = init_probe(rows.front().size(), hyper.hidden_dims, objective, hyper.seed);
    model.training = {hyper.epochs, hyper.learning_rate, hyper.batch_size, hyper.seed, hyper.huber_delta, 0.0, {}};

    std::vector<std::size_t> order(rows.size());
    std::vector<std::vector<double>> batch_rows;
    std::vector<double> batch_targets;
    for (int epoch = 0; epoch < hyper.epochs; ++epoch) {
        std::iota(order.begin(), order.end(), std::size_t{0});
        CounterRng shuffle_rng(derive_key(hyper.seed, 0x73687566ULL), static_cast<std::uint64_t>(epoch));
        shuffle_rng.shuffle(order);
        double epoch_loss = 0.0;
        for (std::size_t start = 0; start < order.size(); start += hyper.batch_size) {
            const std::size_t end = std::min(order.size(), start + hyper.batch_size);
            batch_rows.clear();
            batch_targets.clear();
            for (std::size_t i = start; i < end; ++i) {
                batch_rows.push_back(rows[order[i]]);
                batch_targets.push_back(targets[order[i]]);
            }
            const LossAndGradient lg = loss_and_gradient(model, batch_rows, batch_targets, hyper.huber_delta);
            epoch_loss += lg.loss * static_cast<double>(end - start);
            for (std::size_t l = 0; l < model.layers.size(); ++l) {
                auto& layer = model.layers[l];
                const auto& g = lg.gradient[l];
                for (std::size_t i = 0; i < layer.weights.size(); ++i) layer.weights[i] -= hyper.learning_rate * g.weights[i];
                for (std::size_t i = 0; i < layer.bias.size(); ++i) layer.bias[i] -= hyper.learning_rate * g.bias[i];
            }
        }
        model.training.epoch_losses.push_back(epoch_loss / static_cast<double>(rows.size()));
    }
    model.training.final_loss = loss_and_gradient(model, rows, targets, hyper.huber_delta).loss;
    return model;
}

void to_json(nlohmann::json& j, const ProbeModel& m) {
    nlohmann::json layers = nlohmann::json::array();
    for (const auto& l : m.layers) {
        layers.push_back({{"in", l.in}, {"out", l.out}, {"weights", l.weights}, {"bias", l.bias}});
    }
    j = nlohmann::json{{"backbone_id", m.backbone_id},
                       {"input_dim", m.input_dim},
                       {"hidden_dims", m.hidden_dims},
                       {"activation", "relu"},
                       {"output", m.objective == ProbeObjective::CrossEntropy ? "sigmoid" : "linear"},
                       {"objective", objective_name(m.objective)},
                       {"layers", std::move(layers)},
                       {"training_meta",
                        {{"epochs", m.training.epochs},
                         {"learning_rate", m.training.learning_rate},
                         {"batch_size", m.training.batch_size},
                         {"seed", m.training.seed},
                         {"huber_delta", m.training.huber_delta},
                         {"final_loss", m.training.final_loss},
                         {"epoch_losses", m.training.epoch_losses}}}};
}

void from_json(const nlohmann::json& j, ProbeModel& m) {
    m = ProbeModel{};
    m.backbone_id = j.value("backbone_id", std::string("probe"));
    j.at("input_dim").get_to(m.input_dim);
    j.at("hidden_dims").get_to(m.hidden_dims);
    m.objective = parse_objective(j.at("objective").get<std::string>());
    std::size_t expected_in = m.input_dim;
    for (const auto& lj : j.at("layers")) {
        DenseLayer l;
        lj.at("in").get_to(l.in);
        lj.at("out").get_to(l.out);
        lj.at("weights").get_to(l.weights);
        lj.at("bias").get_to(l.bias);
        if (l.in != expected_in || l.weights.size() != l.in * l.out || l.bias.size() != l.out) {
            fail(ErrorKind::Schema, "probe layer shapes are inconsistent");
        }
        for (double w : l.weights) {
            if (!std::isfinite(w)) fail(ErrorKind::Schema, "probe weights must be finite");
        }
        expected_in = l.out;
        m.layers.push_back(std::move(l));
    }
    if (m.layers.size() != m.hidden_dims.size() + 1 || expected_in != 1) {
        fail(ErrorKind::Schema, "probe layers do not match hidden_dims plus one output unit");
    }
    if (auto it = j.find("training_meta"); it != j.end()) {
        const auto& t = *it;
        m.training.epochs = t.value("epochs", 0);
        m.training.learning_rate = t.value("learning_rate", 0.0);
        m.training.batch_size = t.value("batch_size", std::size_t{0});
        m.training.seed = t.value("seed", std::uint64_t{0});
        m.training.huber_delta = t.value("huber_delta", 1.0);
        m.training.final_loss = t.value("final_loss", 0.0);
        if (t.contains("epoch_losses")) t.at("epoch_losses").get_to(m.training.epoch_losses);
    }
}

}  // namespace spikescore
