#include <gtest/gtest.h>

#include <algorithm>
#include <bit>
#include <cmath>
#include <fstream>
#include <random>
#include <sstream>

#include <json.hpp>

#include "oracles.hpp"
#include "spikescore/dialogue.hpp"
#include "spikescore/error.hpp"
#include "spikescore/jsonl.hpp"
#include "spikescore/probe.hpp"
#include "spikescore/scoring.hpp"
#include "spikescore/simulator.hpp"

using namespace spikescore;
using nlohmann::json;

namespace {

struct Dataset {
    std::vector<std::vector<double>> rows;
    std::vector<double> targets;
};

// Two Gaussian blobs separated by a margin along a random direction.
Dataset separable(std::size_t n, std::size_t dim, std::uint64_t seed) {
    std::mt19937_64 gen(seed);
    std::normal_distribution<double> g(0.0, 1.0);
    std::vector<double> w(dim);
    double norm = 0.0;
    for (auto& x : w) norm += (x = g(gen)) * x;
    for (auto& x : w) x /= std::sqrt(norm);
    Dataset d;
    for (std::size_t i = 0; i < n; ++i) {
        std::vector<double> x(dim);
        for (auto& v : x) v = g(gen);
        double proj = 0.0;
        for (std::size_t k = 0; k < dim; ++k) proj += x[k] * w[k];
        const double y = i % 2 == 0 ? 1.0 : 0.0;
        // move the point to distance >= 0.5 on its class side of the hyperplane
        const double target = (y == 1.0 ? 1.0 : -1.0) * (0.5 + std::fabs(g(gen)));
        for (std::size_t k = 0; k < dim; ++k) x[k] += (target - proj) * w[k];
        d.rows.push_back(std::move(x));
        d.targets.push_back(y);
    }
    return d;
}

double training_auroc(const ProbeModel& m, const Dataset& d) {
    std::vector<double> pos, neg;
    for (std::size_t i = 0; i < d.rows.size(); ++i)
        (d.targets[i] == 1.0 ? pos : neg).push_back(probe_score(m, d.rows[i]));
    return oracle::pair_loop_auroc(pos, neg);
}

double max_relative_gradient_error(ProbeModel model, const Dataset& d, double huber_delta) {
    const auto lg = loss_and_gradient(model, d.rows, d.targets, huber_delta);
    const double h = 1e-6;
    double worst = 0.0;
    auto check = [&](double& param, double analytic) {
        const double saved = param;
        param = saved + h;
        const double up = loss_and_gradient(model, d.rows, d.targets, huber_delta).loss;
        param = saved - h;
        const double down = loss_and_gradient(model, d.rows, d.targets, huber_delta).loss;
        param = saved;
        const double numeric = (up - down) / (2 * h);
        const double scale = std::max(std::fabs(numeric), std::fabs(analytic));
        if (scale < 1e-7) return;  // both vanish
        worst = std::max(worst, std::fabs(numeric - analytic) / scale);
    };
    for (std::size_t l = 0; l < model.layers.size(); ++l) {
        for (std::size_t i = 0; i < model.layers[l].weights.size(); ++i)
            check(model.layers[l].weights[i], lg.gradient[l].weights[i]);
        for (std::size_t i = 0; i < model.layers[l].bias.size(); ++i) check(model.layers[l].bias[i], lg.gradient[l].bias[i]);
    }
    return worst;
}

DialogueTranscript sim_transcript(const std::string& id, int K, bool logprobs) {
    sim::SimulatorBackend backend;
    InductionRequest r{id, "sim-00", "Q?", "The value is 3.", 1, std::nullopt, Regime::Hallucinated};
    InductionOptions o;
    o.decoding.turn_budget = K;
    o.decoding.request_logprobs = logprobs;
    return induce_continuation(r, backend, o);
}

std::vector<JsonLine> lines_of(const std::string& text) {
    std::istringstream in(text);
    return parse_jsonl(in, "mem");
}

}  // namespace

// ---- perplexity ----------------------------------------------------------------

TEST(Perplexity, Examples) {
    EXPECT_EQ(perplexity_score(std::vector<double>{-1.0, -2.0, -3.0}), 2.0);
    EXPECT_EQ(perplexity_score(std::vector<double>{0.0, 0.0}), 0.0);
    EXPECT_EQ(perplexity_score(std::vector<double>{-2.0}), 2.0);
    try {
        perplexity_score(std::vector<double>{});
        FAIL();
    } catch (const Error& e) {
        EXPECT_NE(std::string(e.what()).find("no tokens to score"), std::string::npos);
    }
    EXPECT_THROW(perplexity_score(std::vector<double>{-1.0, NAN}), Error);
    EXPECT_THROW(perplexity_score(std::vector<double>{0.5}), Error);
}

TEST(Perplexity, PermutationInvariantAndNegatedMean) {
    std::mt19937_64 gen(3);
    std::uniform_int_distribution<int> q(-64, 0);
    for (int t = 0; t < 200; ++t) {
        // multiples of 1/8 keep every partial sum exact
        std::vector<double> lp(1 + t % 30);
        for (auto& x : lp) x = q(gen) / 8.0;
        const double expected = -oracle::mean(lp);
        EXPECT_EQ(perplexity_score(lp), expected);
        std::shuffle(lp.begin(), lp.end(), gen);
        EXPECT_EQ(perplexity_score(lp), expected);
    }
}

// ---- probe ---------------------------------------------------------------------

TEST(Probe, ZeroModelScoresHalf) {
    const auto m = zero_probe(5, {8}, ProbeObjective::CrossEntropy);
    std::mt19937_64 gen(1);
    std::normal_distribution<double> g(0, 10);
    for (int i = 0; i < 20; ++i) {
        std::vector<double> x(5);
        for (auto& v : x) v = g(gen);
        EXPECT_EQ(probe_score(m, x), 0.5);
    }
}

TEST(Probe, OutputStrictlyInsideUnitInterval) {
    auto m = init_probe(4, {16}, ProbeObjective::CrossEntropy, 9);
    // Blow the weights up so the logits saturate.
    for (auto& l : m.layers)
        for (auto& w : l.weights) w *= 1e3;
    std::mt19937_64 gen(2);
    std::normal_distribution<double> g(0, 100);
    for (int i = 0; i < 1000; ++i) {
        std::vector<double> x(4);
        for (auto& v : x) v = g(gen);
        const double p = probe_score(m, x);
        EXPECT_GT(p, 0.0);
        EXPECT_LT(p, 1.0);
    }
}

TEST(Probe, DimensionMismatch) {
    const auto m = zero_probe(3, {2}, ProbeObjective::CrossEntropy);
    EXPECT_THROW(probe_score(m, std::vector<double>{1, 2}), Error);
    Dataset d = separable(10, 3, 1);
    d.rows[4].push_back(0.0);
    EXPECT_THROW(train_probe(d.rows, d.targets, ProbeObjective::CrossEntropy, {}), Error);
    Dataset e = separable(10, 3, 1);
    e.targets.pop_back();
    EXPECT_THROW(train_probe(e.rows, e.targets, ProbeObjective::CrossEntropy, {}), Error);
}

TEST(Probe, DegenerateLabelSet) {
    Dataset d = separable(20, 3, 2);
    std::fill(d.targets.begin(), d.targets.end(), 0.0);
    try {
        train_probe(d.rows, d.targets, ProbeObjective::CrossEntropy, {});
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::Degenerate);
        EXPECT_NE(std::string(e.what()).find("degenerate label set"), std::string::npos);
    }
    d.targets[0] = 0.5;
    d.targets[1] = 1.0;
    EXPECT_THROW(train_probe(d.rows, d.targets, ProbeObjective::CrossEntropy, {}), Error);
}

TEST(Probe, SeparableTwoDimensional) {
    const Dataset d = separable(200, 2, 5);
    ProbeHyperparameters h;
    h.epochs = 200;
    h.seed = 3;
    const auto m = train_probe(d.rows, d.targets, ProbeObjective::CrossEntropy, h);
    EXPECT_GE(training_auroc(m, d), 0.99);
    EXPECT_EQ(m.training.epoch_losses.size(), 200u);
    EXPECT_TRUE(std::isfinite(m.training.final_loss));

    // class centroids
    std::vector<double> cp(2, 0.0), cn(2, 0.0);
    for (std::size_t i = 0; i < d.rows.size(); ++i)
        for (int k = 0; k < 2; ++k) (d.targets[i] == 1.0 ? cp : cn)[k] += d.rows[i][k] / 100.0;
    EXPECT_GT(probe_score(m, cp), probe_score(m, cn));
}

TEST(Probe, DeterministicInSeed) {
    const Dataset d = separable(100, 4, 6);
    ProbeHyperparameters h;
    h.epochs = 5;
    h.hidden_dims = {12};
    h.seed = 77;
    const auto a = train_probe(d.rows, d.targets, ProbeObjective::CrossEntropy, h);
    const auto b = train_probe(d.rows, d.targets, ProbeObjective::CrossEntropy, h);
    EXPECT_EQ(a, b);
    h.seed = 78;
    const auto c = train_probe(d.rows, d.targets, ProbeObjective::CrossEntropy, h);
    EXPECT_NE(a.layers, c.layers);
}

TEST(Probe, FullBatchLossNonincreasing) {
    const Dataset d = separable(200, 2, 7);
    ProbeHyperparameters h;
    h.epochs = 100;
    h.batch_size = 200;
    h.learning_rate = 0.01;
    h.hidden_dims = {32};
    const auto m = train_probe(d.rows, d.targets, ProbeObjective::CrossEntropy, h);
    const auto& L = m.training.epoch_losses;
    for (std::size_t i = 1; i < L.size(); ++i) EXPECT_LE(L[i], L[i - 1]) << i;
    EXPECT_LE(m.training.final_loss, L.back());
}

TEST(Probe, GradientCheckCrossEntropy) {
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        Dataset d = separable(12, 4, 100 + seed);
        const auto m = init_probe(4, {6, 5}, ProbeObjective::CrossEntropy, seed);
        EXPECT_LT(max_relative_gradient_error(m, d, 1.0), 1e-5) << seed;
    }
}

TEST(Probe, GradientCheckHuber) {
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        Dataset d = separable(12, 4, 200 + seed);
        // targets spread so some residuals sit in each Huber branch
        for (std::size_t i = 0; i < d.targets.size(); ++i) d.targets[i] = (static_cast<double>(i) - 6.0) * 0.7 + 0.13;
        const auto m = init_probe(4, {6}, ProbeObjective::HuberRegression, seed);
        EXPECT_LT(max_relative_gradient_error(m, d, 1.0), 1e-5) << seed;
    }
}

TEST(Probe, HuberRegressionFits) {
    std::mt19937_64 gen(8);
    std::normal_distribution<double> g(0, 1);
    Dataset d;
    for (int i = 0; i < 300; ++i) {
        std::vector<double> x{g(gen), g(gen), g(gen)};
        d.targets.push_back(0.5 * x[0] - 0.25 * x[1] + 0.1);
        d.rows.push_back(std::move(x));
    }
    ProbeHyperparameters h;
    h.epochs = 100;
    h.hidden_dims = {16};
    h.learning_rate = 0.02;
    const auto m = train_probe(d.rows, d.targets, ProbeObjective::HuberRegression, h);
    EXPECT_LT(m.training.final_loss, 0.01);
    EXPECT_LT(m.training.final_loss, m.training.epoch_losses.front());
}

TEST(Probe, JsonRoundTrip) {
    const Dataset d = separable(40, 3, 9);
    ProbeHyperparameters h;
    h.epochs = 3;
    h.hidden_dims = {5};
    const auto m = train_probe(d.rows, d.targets, ProbeObjective::CrossEntropy, h);
    const json j = m;
    EXPECT_EQ(j["output"], "sigmoid");
    EXPECT_EQ(j["objective"], "cross_entropy");
    const auto back = json::parse(j.dump()).get<ProbeModel>();
    EXPECT_EQ(back, m);
    json broken = j;
    broken["layers"][0]["weights"].erase(0);
    EXPECT_THROW(broken.get<ProbeModel>(), Error);
}

// ---- features --------------------------------------------------------------------

TEST(Features, StrictRecords) {
    json ok{{"item_id", "a"}, {"turn", 1}, {"vector", {0.1, 0.2}},
            {"meta", {{"layer_policy", "mean of last 5 layers"}, {"token_position", "penultimate"}, {"hidden_dim", 2}}}};
    const auto r = ok.get<FeatureRecord>();
    EXPECT_EQ(r.meta.token_position, TokenPosition::Penultimate);
    EXPECT_EQ(json(r), ok);
    auto bad = ok;
    bad["meta"]["hidden_dim"] = 3;
    EXPECT_THROW(bad.get<FeatureRecord>(), Error);
    bad = ok;
    bad.erase("turn");
    EXPECT_THROW(bad.get<FeatureRecord>(), Error);
    bad = ok;
    bad["turn"] = 0;
    EXPECT_THROW(bad.get<FeatureRecord>(), Error);
}

TEST(Features, TableDimensionsAndGaps) {
    FeatureTable t;
    t.add({"a", 1, {1, 2}, {std::string(kLayerPolicy), TokenPosition::Last, 2}});
    t.add({"a", 3, {1, 2}, {std::string(kLayerPolicy), TokenPosition::Last, 2}});
    EXPECT_THROW(t.add({"a", 2, {1, 2, 3}, {std::string(kLayerPolicy), TokenPosition::Last, 3}}), Error);
    EXPECT_THROW(t.add({"a", 1, {1, 2}, {std::string(kLayerPolicy), TokenPosition::Last, 2}}), Error);
    const auto gaps = t.gaps();
    ASSERT_EQ(gaps.size(), 1u);
    EXPECT_EQ(gaps[0].second, std::vector<int>{2});
}

// ---- transcripts -> scores ---------------------------------------------------------

TEST(ScoreTranscript, SimulatorPassThrough) {
    const auto t = sim_transcript("s1", 20, false);
    const auto scores = score_transcript(t, Backbone::Sim);
    ASSERT_EQ(scores.size(), 20u);
    EXPECT_EQ(scores[0].value, *t.initial_latent);
    for (std::size_t k = 1; k < 20; ++k) {
        EXPECT_EQ(scores[k].turn, static_cast<int>(k) + 1);
        EXPECT_EQ(scores[k].value, *t.turns[k - 1].latent);
    }
}

TEST(ScoreTranscript, PerplexityNeedsLogprobs) {
    const auto with = sim_transcript("p1", 6, true);
    const auto s = score_transcript(with, Backbone::Perplexity);
    EXPECT_EQ(s.size(), 6u);
    for (const auto& x : s) EXPECT_GE(x.value, 0.0);
    const auto without = sim_transcript("p1", 6, false);
    try {
        score_transcript(without, Backbone::Perplexity);
        FAIL();
    } catch (const Error& e) {
        EXPECT_NE(std::string(e.what()).find("p1"), std::string::npos);
    }
}

TEST(ScoreTranscript, ProbeShapeAndMissingFeature) {
    const auto t = sim_transcript("f1", 20, false);
    FeatureTable table;
    for (int k = 1; k <= 20; ++k) table.add({"f1", k, {0.1 * k, 1.0, -0.5}, {std::string(kLayerPolicy), TokenPosition::Last, 3}});
    const auto model = init_probe(3, {4}, ProbeObjective::CrossEntropy, 1);
    const auto scores = score_transcript(t, Backbone::Probe, {&model, &table});
    ASSERT_EQ(scores.size(), 20u);
    for (const auto& s : scores) {
        EXPECT_GT(s.value, 0.0);
        EXPECT_LT(s.value, 1.0);
    }
    FeatureTable partial;
    for (int k = 1; k <= 20; ++k)
        if (k != 7) partial.add({"f1", k, {0.0, 1.0, 0.0}, {std::string(kLayerPolicy), TokenPosition::Last, 3}});
    try {
        score_transcript(t, Backbone::Probe, {&model, &partial});
        FAIL();
    } catch (const Error& e) {
        EXPECT_NE(std::string(e.what()).find("7"), std::string::npos);
    }
}

TEST(ScoreTranscript, RoundTripThroughRecords) {
    const auto t = sim_transcript("rt", 20, true);
    auto scores = score_transcript(t, Backbone::Perplexity);
    const auto direct = assemble_sequences(scores);
    std::string text;
    for (const auto& s : scores) text += json(s).dump() + "\n";
    std::vector<TurnScore> back;
    for (const auto& line : lines_of(text)) back.push_back(line.value.get<TurnScore>());
    const auto reread = assemble_sequences(back);
    ASSERT_EQ(direct.sequences.size(), 1u);
    ASSERT_EQ(reread.sequences.size(), 1u);
    for (std::size_t i = 0; i < 20; ++i)
        EXPECT_EQ(std::bit_cast<std::uint64_t>(direct.sequences[0].scores[i]),
                  std::bit_cast<std::uint64_t>(reread.sequences[0].scores[i]));
}

// ---- external scores -----------------------------------------------------------------

TEST(External, ValidLines) {
    const auto s = ingest_external_scores(lines_of(R"({"item_id":"a","turn":1,"value":0.5,"backbone_id":"rs"}
{"item_id":"a","turn":2,"value":0.25,"backbone_id":"rs"}
{"item_id":"a","turn":3,"value":1,"backbone_id":"rs"}
)"),
                                          Orientation::HigherIsSuspect);
    ASSERT_EQ(s.size(), 3u);
    EXPECT_EQ(s[2].value, 1.0);
}

TEST(External, DuplicateNamesLine) {
    try {
        ingest_external_scores(lines_of(R"({"item_id":"a","turn":1,"value":0.5,"backbone_id":"rs"}
{"item_id":"a","turn":2,"value":0.5,"backbone_id":"rs"}
{"item_id":"a","turn":1,"value":0.7,"backbone_id":"rs"}
)"),
                               Orientation::HigherIsSuspect, "ext.jsonl");
        FAIL();
    } catch (const Error& e) {
        const std::string msg = e.what();
        EXPECT_NE(msg.find("ext.jsonl:3"), std::string::npos) << msg;
        EXPECT_NE(msg.find("duplicate"), std::string::npos);
    }
}

TEST(External, NonFiniteAndMalformed) {
    try {
        ingest_external_scores(lines_of(R"({"item_id":"a","turn":1,"value":"NaN","backbone_id":"rs"})"),
                               Orientation::HigherIsSuspect);
        FAIL();
    } catch (const Error& e) {
        EXPECT_NE(std::string(e.what()).find("non-finite"), std::string::npos);
    }
    try {
        lines_of("{\"item_id\":\"a\"}\n{oops\n");
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::Parse);
        EXPECT_NE(std::string(e.what()).find("mem:2"), std::string::npos);
    }
}

TEST(External, OrientationRules) {
    const auto lines = lines_of(R"({"item_id":"a","turn":1,"value":0.5,"backbone_id":"rs"}
{"item_id":"a","turn":2,"value":0.25,"backbone_id":"rs","orientation":"higher_is_suspect"}
)");
    EXPECT_THROW(ingest_external_scores(lines), Error);
    const auto flipped = ingest_external_scores(lines, Orientation::LowerIsSuspect);
    EXPECT_EQ(flipped[0].value, -0.5);
    EXPECT_EQ(flipped[1].value, 0.25);
}

// ---- assembly --------------------------------------------------------------------

TEST(Assemble, Cases) {
    std::vector<TurnScore> s;
    for (int k = 20; k >= 1; --k) s.push_back({"full", k, k * 0.1, "sim"});
    auto r = assemble_sequences(s);
    ASSERT_EQ(r.sequences.size(), 1u);
    EXPECT_EQ(r.sequences[0].length(), 20u);
    EXPECT_EQ(r.sequences[0].scores[0], 0.1);

    r = assemble_sequences({{"gap", 1, 0, "b"}, {"gap", 2, 0, "b"}, {"gap", 4, 0, "b"}});
    EXPECT_TRUE(r.sequences.empty());
    ASSERT_EQ(r.issues.size(), 1u);
    EXPECT_EQ(r.issues[0].missing_turns, std::vector<int>{3});
    EXPECT_NE(r.issues[0].reason.find("3"), std::string::npos);

    r = assemble_sequences({{"two", 1, 0, "x"}, {"two", 1, 0, "y"}, {"two", 2, 0, "x"}, {"two", 2, 0, "y"}});
    EXPECT_EQ(r.sequences.size(), 2u);
}
