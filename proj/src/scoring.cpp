#include "spikescore/scoring.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <unordered_map>

#include <json.hpp>

#include "spikescore/error.hpp"

namespace spikescore {
namespace {

std::string item_turn(const std::string& item, int turn) {
    return "item '" + item + "' turn " + std::to_string(turn);
}

}  // namespace

std::string_view token_position_name(TokenPosition p) noexcept {
    return p == TokenPosition::Last ? "last" : "penultimate";
}

TokenPosition parse_token_position(std::string_view name) {
    if (name == "last") return TokenPosition::Last;
    if (name == "penultimate") return TokenPosition::Penultimate;
    fail(ErrorKind::Schema, "unknown token_position '" + std::string(name) + "'");
}

void to_json(nlohmann::json& j, const FeatureRecord& r) {
    j = nlohmann::json{{"item_id", r.item_id},
                       {"turn", r.turn},
                       {"vector", r.vector},
                       {"meta",
                        {{"layer_policy", r.meta.layer_policy},
                         {"token_position", token_position_name(r.meta.token_position)},
                         {"hidden_dim", r.meta.hidden_dim}}}};
}

void from_json(const nlohmann::json& j, FeatureRecord& r) {
    if (!j.is_object()) fail(ErrorKind::Schema, "feature record must be an object");
    for (const char* key : {"item_id", "turn", "vector", "meta"}) {
        if (!j.contains(key)) fail(ErrorKind::Schema, std::string("missing field '") + key + "'");
    }
    r = FeatureRecord{};
    if (!j["item_id"].is_string()) fail(ErrorKind::Schema, "item_id must be a string");
    r.item_id = j["item_id"].get<std::string>();
    if (!j["turn"].is_number_integer()) fail(ErrorKind::Schema, "turn must be an integer");
    r.turn = j["turn"].get<int>();
    if (r.turn < 1) fail(ErrorKind::Schema, "turn must be >= 1");
    const auto& vec = j["vector"];
    if (!vec.is_array() || vec.empty()) fail(ErrorKind::Schema, "vector must be a non-empty array");
    r.vector.reserve(vec.size());
    for (const auto& v : vec) r.vector.push_back(finite_number(v, "vector entry"));
    const auto& meta = j["meta"];
    if (!meta.is_object()) fail(ErrorKind::Schema, "meta must be an object");
    for (const char* key : {"layer_policy", "token_position", "hidden_dim"}) {
        if (!meta.contains(key)) fail(ErrorKind::Schema, std::string("missing field 'meta.") + key + "'");
    }
    r.meta.layer_policy = meta["layer_policy"].get<std::string>();
    r.meta.token_position = parse_token_position(meta["token_position"].get<std::string>());
    if (!meta["hidden_dim"].is_number_integer() || meta["hidden_dim"].get<long long>() <= 0) fail(ErrorKind::Schema, "meta.hidden_dim must be a positive integer");
    r.meta.hidden_dim = meta["hidden_dim"].get<std::size_t>();
    if (r.meta.hidden_dim != r.vector.size()) {
        fail(ErrorKind::Schema, "vector length " + std::to_string(r.vector.size()) + " differs from meta.hidden_dim " +
                                    std::to_string(r.meta.hidden_dim));
    }
}

void FeatureTable::add(FeatureRecord record) {
    if (record.vector.empty()) fail(ErrorKind::InvalidArgument, "empty feature vector for " + item_turn(record.item_id, record.turn));
    if (dim_ == 0) dim_ = record.vector.size();
    if (record.vector.size() != dim_) {
        fail(ErrorKind::InvalidArgument, "feature dimension " + std::to_string(record.vector.size()) + " for " +
                                             item_turn(record.item_id, record.turn) + " differs from dataset dimension " +
                                             std::to_string(dim_));
    }
    auto key = std::make_pair(record.item_id, record.turn);
    if (records_.count(key)) fail(ErrorKind::InvalidArgument, "duplicate feature record for " + item_turn(record.item_id, record.turn));
    records_.emplace(std::move(key), std::move(record));
}

const FeatureRecord* FeatureTable::find(const std::string& item_id, int turn) const {
    auto it = records_.find({item_id, turn});
    return it == records_.end() ? nullptr : &it->second;
}

std::vector<std::pair<std::string, std::vector<int>>> FeatureTable::gaps() const {
    std::vector<std::pair<std::string, std::vector<int>>> out;
    auto it = records_.begin();
    while (it != records_.end()) {
        const std::string& item = it->first.first;
        std::vector<int> turns;
        for (; it != records_.end() && it->first.first == item; ++it) turns.push_back(it->first.second);
        std::vector<int> missing;
        int expect = 1;
        for (int t : turns) {
            for (; expect < t; ++expect) missing.push_back(expect);
            expect = t + 1;
        }
        if (!missing.empty()) out.emplace_back(item, std::move(missing));
    }
    return out;
}

FeatureTable load_features(const std::filesystem::path& path) {
    FeatureTable table;
    for (auto& row : read_jsonl(path)) {
        try {
            table.add(row.value.get<FeatureRecord>());
        } catch (const Error& e) {
            throw Error(e.kind(), path.string() + ":" + std::to_string(row.line) + ": " + e.what());
        } catch (const nlohmann::json::exception& e) {
            fail(ErrorKind::Schema, path.string() + ":" + std::to_string(row.line) + ": " + e.what());
        }
    }
    return table;
}

void to_json(nlohmann::json& j, const TurnScore& s) {
    j = nlohmann::json{{"item_id", s.item_id}, {"turn", s.turn}, {"value", s.value}, {"backbone_id", s.backbone_id}};
}

void from_json(const nlohmann::json& j, TurnScore& s) {
    if (!j.is_object()) fail(ErrorKind::Schema, "score record must be an object");
    for (const char* key : {"item_id", "turn", "value", "backbone_id"}) {
        if (!j.contains(key)) fail(ErrorKind::Schema, std::string("missing field '") + key + "'");
    }
    if (!j["item_id"].is_string()) fail(ErrorKind::Schema, "item_id must be a string");
    if (!j["backbone_id"].is_string()) fail(ErrorKind::Schema, "backbone_id must be a string");
    if (!j["turn"].is_number_integer() || j["turn"].get<long long>() < 1) {
        fail(ErrorKind::Schema, "turn must be an integer >= 1");
    }
    s.item_id = j["item_id"].get<std::string>();
    s.backbone_id = j["backbone_id"].get<std::string>();
    s.turn = j["turn"].get<int>();
    s.value = finite_number(j["value"], "value");
}

double perplexity_score(std::span<const double> token_logprobs) {
    if (token_logprobs.empty()) fail(ErrorKind::InvalidArgument, "no tokens to score");
    double sum = 0.0;
    for (double lp : token_logprobs) {
        if (!std::isfinite(lp)) fail(ErrorKind::InvalidArgument, "non-finite token log-probability");
        if (lp > 0.0) fail(ErrorKind::InvalidArgument, "token log-probability above 0");
        sum += lp;
    }
    return -sum / static_cast<double>(token_logprobs.size());
}

std::string_view backbone_name(Backbone b) noexcept {
    switch (b) {
        case Backbone::Perplexity: return "perplexity";
        case Backbone::Probe: return "probe";
        case Backbone::External: return "external";
        case Backbone::Sim: return "sim";
    }
    return "?";
}

Backbone parse_backbone(std::string_view name) {
    for (Backbone b : {Backbone::Perplexity, Backbone::Probe, Backbone::External, Backbone::Sim}) {
        if (name == backbone_name(b)) return b;
    }
    fail(ErrorKind::InvalidArgument, "unknown backbone '" + std::string(name) + "'");
}

std::vector<TurnScore> score_transcript(const DialogueTranscript& t, Backbone backbone, const ScoringInputs& inputs) {
    const int K = t.turn_count();
    std::vector<TurnScore> out;
    out.reserve(static_cast<std::size_t>(K));

    auto missing = [&](int turn, const std::string& what) {
        fail(ErrorKind::InvalidArgument, item_turn(t.item_id, turn) + ": " + what);
    };

    switch (backbone) {
        case Backbone::Sim: {
            if (!t.initial_latent) missing(1, "no simulator latent recorded");
            out.push_back({t.item_id, 1, *t.initial_latent, "sim"});
            for (const auto& turn : t.turns) {
                if (!turn.latent) missing(turn.turn, "no simulator latent recorded");
                out.push_back({t.item_id, turn.turn, *turn.latent, "sim"});
            }
            break;
        }
        case Backbone::Perplexity: {
            auto score = [&](int turn, const std::optional<std::vector<double>>& lps) {
                if (!lps || lps->empty()) missing(turn, "no token log-probabilities recorded");
                out.push_back({t.item_id, turn, perplexity_score(*lps), "perplexity"});
            };
            score(1, t.initial_logprobs);
            for (const auto& turn : t.turns) score(turn.turn, turn.token_logprobs);
            break;
        }
        case Backbone::Probe: {
            if (!inputs.probe || !inputs.features) fail(ErrorKind::InvalidArgument, "probe backbone needs a model and features");
            const std::string id = inputs.probe->backbone_id;
            for (int k = 1; k <= K; ++k) {
                const FeatureRecord* rec = inputs.features->find(t.item_id, k);
                if (!rec) missing(k, "missing features");
                out.push_back({t.item_id, k, probe_score(*inputs.probe, rec->vector), id});
            }
            break;
        }
        case Backbone::External:
            fail(ErrorKind::InvalidArgument, "external scores are ingested from a file, not computed from transcripts");
    }
    return out;
}

std::string_view orientation_name(Orientation o) noexcept {
    return o == Orientation::HigherIsSuspect ? "higher_is_suspect" : "lower_is_suspect";
}

Orientation parse_orientation(std::string_view name) {
    if (name == "higher_is_suspect") return Orientation::HigherIsSuspect;
    if (name == "lower_is_suspect") return Orientation::LowerIsSuspect;
    fail(ErrorKind::Schema, "unknown orientation '" + std::string(name) + "'");
}

std::vector<TurnScore> ingest_external_scores(const std::vector<JsonLine>& lines, std::optional<Orientation> declared,
                                              std::string_view source) {
    std::vector<TurnScore> out;
    out.reserve(lines.size());
    std::map<std::tuple<std::string, int, std::string>, std::size_t> first_line;
    for (const auto& row : lines) {
        const std::string where = std::string(source) + ":" + std::to_string(row.line) + ": ";
        TurnScore s;
        Orientation orientation{};
        try {
            s = row.value.get<TurnScore>();
            if (auto it = row.value.find("orientation"); it != row.value.end()) {
                orientation = parse_orientation(it->get<std::string>());
            } else if (declared) {
                orientation = *declared;
            } else {
                fail(ErrorKind::Schema, "orientation not declared");
            }
        } catch (const Error& e) {
            throw Error(e.kind(), where + e.what());
        } catch (const nlohmann::json::exception& e) {
            fail(ErrorKind::Schema, where + e.what());
        }
        auto key = std::make_tuple(s.item_id, s.turn, s.backbone_id);
        if (auto [it, inserted] = first_line.emplace(key, row.line); !inserted) {
            fail(ErrorKind::InvalidArgument, where + "duplicate (item, turn, backbone) = (" + s.item_id + ", " +
                                                 std::to_string(s.turn) + ", " + s.backbone_id + "), first seen on line " +
                                                 std::to_string(it->second));
        }
        if (orientation == Orientation::LowerIsSuspect) s.value = -s.value;
        out.push_back(std::move(s));
    }
    return out;
}

std::vector<TurnScore> ingest_external_scores(const std::filesystem::path& path, std::optional<Orientation> declared) {
    return ingest_external_scores(read_jsonl(path), declared, path.string());
}

AssemblyResult assemble_sequences(const std::vector<TurnScore>& scores) {
    std::vector<std::pair<std::string, std::string>> order;
    std::map<std::pair<std::string, std::string>, std::vector<const TurnScore*>> groups;
    for (const auto& s : scores) {
        auto key = std::make_pair(s.item_id, s.backbone_id);
        auto [it, inserted] = groups.try_emplace(key);
        if (inserted) order.push_back(key);
        it->second.push_back(&s);
    }

    AssemblyResult result;
    for (const auto& key : order) {
        auto& group = groups[key];
        std::stable_sort(group.begin(), group.end(), [](const TurnScore* a, const TurnScore* b) { return a->turn < b->turn; });
        std::vector<int> missing;
        std::set<int> duplicates;
        int expect = 1;
        for (const TurnScore* s : group) {
            if (s->turn < expect) {
                duplicates.insert(s->turn);
                continue;
            }
            for (; expect < s->turn; ++expect) missing.push_back(expect);
            expect = s->turn + 1;
        }
        if (!missing.empty() || !duplicates.empty()) {
            AssemblyIssue issue{key.first, key.second, missing, {}};
            if (!missing.empty()) {
                issue.reason = "missing turns";
                for (int m : missing) issue.reason += " " + std::to_string(m);
            }
            if (!duplicates.empty()) {
                if (!issue.reason.empty()) issue.reason += "; ";
                issue.reason += "duplicate turns";
                for (int d : duplicates) issue.reason += " " + std::to_string(d);
            }
            result.issues.push_back(std::move(issue));
            continue;
        }
        ScoreSequence seq{key.first, key.second, {}};
        seq.scores.reserve(group.size());
        for (const TurnScore* s : group) seq.scores.push_back(s->value);
        result.sequences.push_back(std::move(seq));
    }
    return result;
}

}  // namespace spikescore
