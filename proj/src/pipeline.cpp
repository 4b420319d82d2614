#include "spikescore/pipeline.hpp"

#include <algorithm>
#include <atomic>
#include <cstdlib>
#include <exception>
#include <map>
#include <memory>
#include <mutex>
#include <ostream>
#include <set>
#include <thread>

#include <json.hpp>

#include "spikescore/corpus.hpp"
#include "spikescore/detector.hpp"
#include "spikescore/dialogue.hpp"
#include "spikescore/error.hpp"
#include "spikescore/evaluation.hpp"
#include "spikescore/http.hpp"
#include "spikescore/jsonl.hpp"
#include "spikescore/leave_one_out.hpp"
#include "spikescore/montecarlo.hpp"
#include "spikescore/plots.hpp"
#include "spikescore/probe.hpp"
#include "spikescore/rag.hpp"
#include "spikescore/scoring.hpp"
#include "spikescore/simulator.hpp"

#ifndef SPIKESCORE_VERSION
#define SPIKESCORE_VERSION "dev"
#endif

namespace spikescore {

namespace fs = std::filesystem;
using nlohmann::json;

void parallel_for(std::size_t n, std::size_t workers, const std::function<void(std::size_t)>& fn) {
    workers = std::max<std::size_t>(1, std::min(workers, n));
    if (workers == 1) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::exception_ptr first;
    std::mutex mu;
    std::vector<std::jthread> pool;
    pool.reserve(workers);
    for (std::size_t w = 0; w < workers; ++w) {
        pool.emplace_back([&] {
            for (std::size_t i; (i = next.fetch_add(1)) < n;) {
                try {
                    fn(i);
                } catch (...) {
                    std::lock_guard lock(mu);
                    if (!first) first = std::current_exception();
                    next.store(n);
                }
            }
        });
    }
    pool.clear();
    if (first) std::rethrow_exception(first);
}

namespace {

/// Collects everything a subcommand reports in its manifest.
class Stage {
public:
    Stage(std::string name, const RunConfig& config, std::ostream& log)
        : name_(std::move(name)), cfg_(config), log_(log), out_(config.output_dir), hash_(config.hash()) {}

    [[nodiscard]] const RunConfig& cfg() const { return cfg_; }
    [[nodiscard]] const fs::path& out() const { return out_; }
    [[nodiscard]] const std::string& hash() const { return hash_; }

    void input(const fs::path& p) { inputs_.insert(display(p)); }
    void output(const fs::path& p) { outputs_.insert(display(p)); }
    void item_error(const std::string& what) {
        std::lock_guard lock(mu_);
        errors_.push_back(what);
    }
    void count(const std::string& key, std::size_t n) { counts_[key] += n; }
    void note(const std::string& key, json value) { notes_[key] = std::move(value); }
    void log(const std::string& line) { log_ << "[" << name_ << "] " << line << "\n"; }

    RunOutcome finish() {
        std::sort(errors_.begin(), errors_.end());
        const bool partial = !errors_.empty() || partial_flag_;
        json seeds{{"prompt", cfg_.seeds.prompt},
                   {"sampling", cfg_.seeds.sampling},
                   {"split", cfg_.seeds.split},
                   {"mixture", cfg_.seeds.mixture},
                   {"probe", cfg_.seeds.probe},
                   {"theorem", cfg_.seeds.theorem},
                   {"simulator", cfg_.simulate.generator.seed}};
        json manifest{{"subcommand", name_},
                      {"version", SPIKESCORE_VERSION},
                      {"config_hash", hash_},
                      {"seeds", std::move(seeds)},
                      {"inputs", inputs_},
                      {"outputs", outputs_},
                      {"counts", counts_},
                      {"item_errors", errors_},
                      {"status", partial ? "partial" : "ok"}};
        if (!notes_.empty()) manifest["notes"] = notes_;
        RunOutcome outcome;
        outcome.manifest = out_ / ("manifest-" + name_ + ".json");
        write_json(outcome.manifest, manifest);
        outcome.exit_code = partial ? kExitPartial : kExitOk;
        outcome.item_errors = errors_;
        log(std::to_string(outputs_.size()) + " outputs, " + std::to_string(errors_.size()) + " item errors");
        return outcome;
    }

    void mark_partial() { partial_flag_ = true; }

    // Paths under the output directory are recorded relative to it.
    [[nodiscard]] std::string display(const fs::path& p) const {
        const fs::path rel = p.lexically_relative(out_);
        if (!rel.empty() && *rel.begin() != "..") return rel.generic_string();
        return p.generic_string();
    }

private:

    std::string name_;
    const RunConfig& cfg_;
    std::ostream& log_;
    fs::path out_;
    std::string hash_;
    std::set<std::string> inputs_, outputs_;
    std::vector<std::string> errors_;
    std::map<std::string, std::size_t> counts_;
    json notes_ = json::object();
    std::mutex mu_;
    bool partial_flag_ = false;
};

fs::path registry_path(const RunConfig& c) { return fs::path(c.output_dir) / "registry.json"; }
fs::path domain_file(const RunConfig& c, const char* dir, const std::string& domain) {
    return fs::path(c.output_dir) / dir / (domain + ".jsonl");
}

std::vector<std::string> domain_names(const RunConfig& c) {
    std::vector<std::string> names;
    if (!c.domains.empty()) {
        for (const auto& [name, paths] : c.domains) names.push_back(name);
        return names;
    }
    const fs::path reg = registry_path(c);
    if (!fs::exists(reg)) fail(ErrorKind::Config, "no domains configured and no registry at " + reg.string() + " (run simulate first)");
    const json j = json::parse(read_text_file(reg));
    for (const auto& name : j.at("domains")) names.push_back(name.get<std::string>());
    if (names.empty()) fail(ErrorKind::Config, "domain registry is empty");
    return names;
}

const DomainPaths* configured(const RunConfig& c, const std::string& domain) {
    auto it = c.domains.find(domain);
    return it == c.domains.end() ? nullptr : &it->second;
}

fs::path items_path(const RunConfig& c, const std::string& d) {
    const auto* p = configured(c, d);
    return p && !p->items.empty() ? c.resolve(p->items) : domain_file(c, "items", d);
}

fs::path features_path(const RunConfig& c, const std::string& d) {
    const auto* p = configured(c, d);
    return p && !p->features.empty() ? c.resolve(p->features) : domain_file(c, "features", d);
}

std::string train_domain(const RunConfig& c, const std::vector<std::string>& domains) {
    const auto& t = c.backbone.probe.train_domain;
    if (t && std::find(domains.begin(), domains.end(), *t) == domains.end()) {
        fail(ErrorKind::Config, "probe train_domain '" + *t + "' is not a configured domain");
    }
    return t ? *t : domains.front();
}

/// Item labels: the items file, overridden by labels/<d>.jsonl when present.
std::map<std::string, std::optional<int>> load_labels(Stage& st, const std::string& domain) {
    std::map<std::string, std::optional<int>> labels;
    const fs::path ip = items_path(st.cfg(), domain);
    st.input(ip);
    for (const auto& item : load_items(ip)) labels[item.item_id] = item.label;
    const fs::path lp = domain_file(st.cfg(), "labels", domain);
    if (fs::exists(lp)) {
        st.input(lp);
        for (const auto& row : read_jsonl(lp)) labels[row.value.at("item_id").get<std::string>()] = row.value.at("label").get<int>();
    }
    return labels;
}

std::vector<DialogueTranscript> load_transcripts(Stage& st, const std::string& domain) {
    const fs::path p = domain_file(st.cfg(), "transcripts", domain);
    st.input(p);
    std::vector<DialogueTranscript> out;
    for (const auto& row : read_jsonl(p)) {
        try {
            out.push_back(row.value.get<DialogueTranscript>());
        } catch (const std::exception& e) {
            fail(ErrorKind::Schema, p.string() + ":" + std::to_string(row.line) + ": " + e.what());
        }
    }
    return out;
}

std::unique_ptr<ChatBackend> make_backend(const RunConfig& c) {
    if (c.backend.kind == "sim") return std::make_unique<sim::SimulatorBackend>(c.simulate.generator);
    HttpChatConfig hc;
    hc.endpoint.url = c.backend.url;
    if (const char* token = std::getenv(c.backend.credential_env.c_str())) hc.endpoint.bearer_token = token;
    hc.endpoint.timeout = std::chrono::milliseconds(c.backend.timeout_ms);
    hc.model = c.backend.model;
    return std::make_unique<HttpChatBackend>(std::move(hc));
}

RetryPolicy retry_policy(const RunConfig& c) {
    return {c.backend.max_attempts, std::chrono::milliseconds(c.backend.initial_backoff_ms), c.backend.backoff_multiplier};
}

std::unique_ptr<rag::Embedder> make_embedder(const RunConfig& c) {
    const auto& e = c.rag.embedder;
    if (e.kind == "hashing") return std::make_unique<rag::HashingEmbedder>(e.dimension, 0);
    HttpEndpoint ep{e.url, {}, std::chrono::milliseconds(c.backend.timeout_ms)};
    if (const char* token = std::getenv(c.backend.credential_env.c_str())) ep.bearer_token = token;
    return std::make_unique<rag::HttpEmbedder>(std::move(ep), e.batch_size, e.model.empty() ? "remote" : e.model);
}

json with_hash(json row, const std::string& hash) {
    row["config_hash"] = hash;
    return row;
}

// ---------------------------------------------------------------- simulate

void run_simulate(Stage& st) {
    const auto& c = st.cfg();
    SimCorpusOptions opt{c.simulate.domains, c.simulate.items_per_domain, c.simulate.hallucination_rate,
                         c.simulate.generator.seed};
    const auto corpus = simulate_corpus(opt);
    json names = json::array();
    for (const auto& [domain, items] : corpus) {
        std::vector<json> rows;
        for (const auto& item : items) rows.push_back(with_hash(item, st.hash()));
        const fs::path p = domain_file(c, "items", domain);
        write_jsonl(p, rows);
        st.output(p);
        st.count("items", items.size());
        names.push_back(domain);
    }
    write_json(registry_path(c), {{"domains", names}, {"config_hash", st.hash()}});
    st.output(registry_path(c));
}

// ---------------------------------------------------------------- label

void run_label(Stage& st) {
    const auto& c = st.cfg();
    std::unique_ptr<ChatBackend> backend;
    std::unique_ptr<ChatJudge> judge;
    if (c.labeling.use_judge) {
        if (c.backend.kind != "http") fail(ErrorKind::Config, "labeling.use_judge needs the http backend");
        backend = make_backend(c);
        DecodingConfig dec = c.decoding;
        dec.max_answer_tokens = 4;
        judge = std::make_unique<ChatJudge>(*backend, dec, retry_policy(c),
                                            c.labeling.judge_prompt.value_or(std::string(kDefaultJudgePrompt)));
    }
    const LabelingOptions opt{judge.get(), c.labeling.allow_fallback};
    for (const auto& domain : domain_names(c)) {
        const fs::path ip = items_path(c, domain);
        st.input(ip);
        const auto items = load_items(ip);
        std::vector<json> rows(items.size());
        std::vector<char> ok(items.size(), 0);
        parallel_for(items.size(), c.workers, [&](std::size_t i) {
            try {
                rows[i] = {{"item_id", items[i].item_id}, {"label", label_answer(items[i], opt)}, {"config_hash", st.hash()}};
                ok[i] = 1;
            } catch (const Error& e) {
                st.item_error(domain + "/" + items[i].item_id + ": " + e.what());
            }
        });
        std::vector<json> kept;
        for (std::size_t i = 0; i < rows.size(); ++i) {
            if (ok[i]) kept.push_back(std::move(rows[i]));
        }
        const fs::path p = domain_file(c, "labels", domain);
        write_jsonl(p, kept);
        st.output(p);
        st.count("labeled", kept.size());
    }
}

// ---------------------------------------------------------------- induce

void run_induce(Stage& st) {
    const auto& c = st.cfg();
    const auto backend = make_backend(c);
    const bool simulated = c.backend.kind == "sim";
    InductionOptions opt;
    opt.decoding = c.decoding;
    opt.prompt_seed = c.seeds.prompt;
    opt.sampling_seed = c.seeds.sampling;
    opt.system_directive = c.directive_text();
    opt.retry = retry_policy(c);

    for (const auto& domain : domain_names(c)) {
        const fs::path ip = items_path(c, domain);
        st.input(ip);
        const auto items = load_items(ip);
        const auto labels = load_labels(st, domain);
        std::vector<std::optional<DialogueTranscript>> done(items.size());
        parallel_for(items.size(), c.workers, [&](std::size_t i) {
            const QAItem& item = items[i];
            InductionRequest req{item.item_id, item.domain_id.empty() ? domain : item.domain_id, item.question,
                                 item.generated_answer, labels.at(item.item_id), std::nullopt, std::nullopt};
            if (simulated) {
                if (!req.label) {
                    st.item_error(domain + "/" + item.item_id + ": simulator backend needs a label to pick the regime");
                    return;
                }
                req.regime = *req.label == 1 ? Regime::Hallucinated : Regime::Factual;
            }
            try {
                DialogueTranscript t = induce_continuation(req, *backend, opt);
                t.config_hash = st.hash();
                if (t.truncated) st.item_error(domain + "/" + item.item_id + ": truncated: " + t.truncation_reason.value_or("?"));
                done[i] = std::move(t);
            } catch (const BackendError& e) {
                st.item_error(domain + "/" + item.item_id + ": " + e.what());
            }
        });

        std::vector<json> rows;
        std::vector<json> features;
        for (auto& t : done) {
            if (!t) continue;
            rows.push_back(*t);
            if (simulated && c.simulate.feature_dim > 0) {
                auto emit = [&](int turn, const std::optional<double>& latent) {
                    if (!latent) return;
                    FeatureRecord rec{t->item_id, turn,
                                      sim::synthetic_feature(c.simulate.generator, t->domain_id, t->item_id, turn, *latent,
                                                             c.simulate.feature_dim),
                                      FeatureMeta{std::string(kLayerPolicy), TokenPosition::Last, c.simulate.feature_dim}};
                    features.push_back(rec);
                };
                emit(1, t->initial_latent);
                for (const auto& turn : t->turns) emit(turn.turn, turn.latent);
            }
        }
        const fs::path p = domain_file(c, "transcripts", domain);
        write_jsonl(p, rows);
        st.output(p);
        st.count("transcripts", rows.size());
        if (!features.empty()) {
            const fs::path fp = domain_file(c, "features", domain);
            write_jsonl(fp, features);
            st.output(fp);
            st.count("feature_records", features.size());
        }
        st.log(domain + ": " + std::to_string(rows.size()) + " transcripts");
    }
}

// ---------------------------------------------------------------- probes

const FeatureTable& features_for(Stage& st, const std::string& domain, std::map<std::string, FeatureTable>& cache) {
    auto it = cache.find(domain);
    if (it != cache.end()) return it->second;
    const fs::path p = features_path(st.cfg(), domain);
    st.input(p);
    FeatureTable table = load_features(p);
    for (const auto& [item, missing] : table.gaps()) {
        std::string m;
        for (int t : missing) m += " " + std::to_string(t);
        st.item_error(domain + "/" + item + ": features missing turns" + m);
    }
    return cache.emplace(domain, std::move(table)).first->second;
}

ProbeModel fit_probe(Stage& st, const std::string& domain, std::map<std::string, FeatureTable>& cache) {
    const auto& c = st.cfg();
    const auto& table = features_for(st, domain, cache);
    const ProbeObjective objective = parse_objective(c.backbone.probe.objective);
    std::map<std::string, double> targets;
    if (objective == ProbeObjective::CrossEntropy) {
        for (const auto& [item, label] : load_labels(st, domain)) {
            if (label) targets[item] = *label;
        }
    } else {
        const auto* paths = configured(c, domain);
        if (!paths || paths->targets.empty()) fail(ErrorKind::Config, "huber probe needs domains." + domain + ".targets");
        const fs::path tp = c.resolve(paths->targets);
        st.input(tp);
        for (const auto& row : read_jsonl(tp)) {
            targets[row.value.at("item_id").get<std::string>()] = finite_number(row.value.at("target"), "target");
        }
    }
    // The probe sees the initial answer of each item (turn 1) with the item's target.
    std::vector<std::vector<double>> rows;
    std::vector<double> ys;
    for (const auto& [item, y] : targets) {
        if (const FeatureRecord* rec = table.find(item, 1)) {
            rows.push_back(rec->vector);
            ys.push_back(y);
        }
    }
    ProbeHyperparameters hyper;
    hyper.hidden_dims = c.backbone.probe.hidden_dims;
    hyper.epochs = c.backbone.probe.epochs;
    hyper.learning_rate = c.backbone.probe.learning_rate;
    hyper.batch_size = c.backbone.probe.batch_size;
    hyper.huber_delta = c.backbone.probe.huber_delta;
    hyper.seed = c.seeds.probe;
    ProbeModel model = train_probe(rows, ys, objective, hyper);
    model.backbone_id = "probe";
    return model;
}

void run_train_probe(Stage& st) {
    const auto& c = st.cfg();
    const auto domains = domain_names(c);
    const std::string train = train_domain(c, domains);
    std::map<std::string, FeatureTable> cache;
    const ProbeModel model = fit_probe(st, train, cache);
    const fs::path p = fs::path(c.output_dir) / "probe" / (train + ".json");
    json j = model;
    j["config_hash"] = st.hash();
    j["train_domain"] = train;
    write_json(p, j);
    st.output(p);
    st.note("final_loss", model.training.final_loss);
}

// ---------------------------------------------------------------- score

std::vector<TurnScore> score_domain(Stage& st, const std::string& domain, Backbone backbone, const ScoringInputs& inputs) {
    const auto transcripts = load_transcripts(st, domain);
    std::vector<std::vector<TurnScore>> per(transcripts.size());
    parallel_for(transcripts.size(), st.cfg().workers, [&](std::size_t i) {
        try {
            per[i] = score_transcript(transcripts[i], backbone, inputs);
        } catch (const Error& e) {
            st.item_error(domain + "/" + transcripts[i].item_id + ": " + e.what());
        }
    });
    std::vector<TurnScore> out;
    for (auto& v : per) out.insert(out.end(), v.begin(), v.end());
    return out;
}

void run_score(Stage& st) {
    const auto& c = st.cfg();
    const auto domains = domain_names(c);
    const Backbone backbone = parse_backbone(c.backbone.kind);
    std::optional<ProbeModel> model;
    std::map<std::string, FeatureTable> cache;
    if (backbone == Backbone::Probe) {
        const std::string train = train_domain(c, domains);
        const fs::path mp = fs::path(c.output_dir) / "probe" / (train + ".json");
        if (!fs::exists(mp)) fail(ErrorKind::Config, "no trained probe at " + mp.string() + " (run train-probe first)");
        st.input(mp);
        model = json::parse(read_text_file(mp)).get<ProbeModel>();
    }
    for (const auto& domain : domains) {
        std::vector<TurnScore> scores;
        if (backbone == Backbone::External) {
            const auto* paths = configured(c, domain);
            if (!paths || paths->external_scores.empty()) {
                fail(ErrorKind::Config, "external backbone needs domains." + domain + ".external_scores");
            }
            const fs::path ep = c.resolve(paths->external_scores);
            st.input(ep);
            scores = ingest_external_scores(ep, parse_orientation(c.backbone.external_orientation));
        } else {
            ScoringInputs inputs;
            if (model) {
                inputs.probe = &*model;
                inputs.features = &features_for(st, domain, cache);
            }
            scores = score_domain(st, domain, backbone, inputs);
        }
        std::vector<json> rows;
        rows.reserve(scores.size());
        for (const auto& s : scores) rows.push_back(with_hash(s, st.hash()));
        const fs::path p = domain_file(c, "scores", domain);
        write_jsonl(p, rows);
        st.output(p);
        st.count("turn_scores", rows.size());
    }
}

// ---------------------------------------------------------------- sequences

/// Labeled sequences from scores/<d>.jsonl. Mixed config hashes are refused.
DomainSequences sequences_from_scores(Stage& st, const std::vector<std::string>& domains, std::set<std::string>& hashes,
                                      bool require_labels) {
    DomainSequences out;
    for (const auto& domain : domains) {
        const fs::path p = domain_file(st.cfg(), "scores", domain);
        if (!fs::exists(p)) fail(ErrorKind::Io, "missing " + p.string() + " (run score first)");
        st.input(p);
        std::vector<TurnScore> scores;
        for (const auto& row : read_jsonl(p)) {
            scores.push_back(row.value.get<TurnScore>());
            hashes.insert(row.value.value("config_hash", std::string("unknown")));
        }
        const auto labels = load_labels(st, domain);
        const auto assembled = assemble_sequences(scores);
        for (const auto& issue : assembled.issues) st.item_error(domain + "/" + issue.item_id + ": " + issue.reason);
        auto& seqs = out[domain];
        for (const auto& seq : assembled.sequences) {
            auto it = labels.find(seq.item_id);
            if (it == labels.end() || !it->second) {
                if (require_labels) fail(ErrorKind::InvalidArgument, "unlabeled item '" + seq.item_id + "' in domain '" + domain + "'");
                continue;
            }
            if (seq.length() < 3) {
                st.item_error(domain + "/" + seq.item_id + ": sequence of length " + std::to_string(seq.length()) +
                              " is too short for second differences");
                continue;
            }
            seqs.push_back({seq, domain, *it->second});
        }
    }
    if (hashes.size() > 1) {
        std::string list;
        for (const auto& h : hashes) list += " " + h;
        fail(ErrorKind::InvalidArgument, "refusing inputs produced under different config hashes:" + list);
    }
    return out;
}

/// Probe-backed sequences for every domain, with the probe fitted on `train`.
DomainSequences sequences_from_probe(Stage& st, const std::vector<std::string>& domains, const std::string& train,
                                     std::map<std::string, FeatureTable>& cache) {
    const ProbeModel model = fit_probe(st, train, cache);
    DomainSequences out;
    for (const auto& domain : domains) {
        const auto labels = load_labels(st, domain);
        ScoringInputs inputs{&model, &features_for(st, domain, cache)};
        const auto scores = score_domain(st, domain, Backbone::Probe, inputs);
        const auto assembled = assemble_sequences(scores);
        for (const auto& seq : assembled.sequences) {
            const auto& label = labels.at(seq.item_id);
            if (!label) fail(ErrorKind::InvalidArgument, "unlabeled item '" + seq.item_id + "' in domain '" + domain + "'");
            if (seq.length() < 3) continue;
            out[domain].push_back({seq, domain, *label});
        }
    }
    return out;
}

json config_snapshot(const RunConfig& c) {
    json j = c;
    j.erase("output_dir");
    return j;
}

// ---------------------------------------------------------------- spike

void run_spike(Stage& st) {
    const auto& c = st.cfg();
    for (const auto& domain : domain_names(c)) {
        const fs::path p = domain_file(c, "scores", domain);
        st.input(p);
        std::vector<TurnScore> scores;
        for (const auto& row : read_jsonl(p)) scores.push_back(row.value.get<TurnScore>());
        const auto labels = load_labels(st, domain);
        const auto assembled = assemble_sequences(scores);
        for (const auto& issue : assembled.issues) st.item_error(domain + "/" + issue.item_id + ": " + issue.reason);
        std::vector<json> rows;
        for (const auto& seq : assembled.sequences) {
            try {
                json row{{"item_id", seq.item_id},
                         {"domain_id", domain},
                         {"backbone_id", seq.backbone_id},
                         {"spike", spike_score(seq)},
                         {"peak_turn", peak_turn(seq)},
                         {"length", seq.length()},
                         {"config_hash", st.hash()}};
                try {
                    row["cv"] = coefficient_of_variation(seq);
                } catch (const Error&) {
                    row["cv"] = nullptr;
                }
                auto it = labels.find(seq.item_id);
                row["label"] = it != labels.end() && it->second ? json(*it->second) : json(nullptr);
                rows.push_back(std::move(row));
            } catch (const Error& e) {
                st.item_error(domain + "/" + seq.item_id + ": " + e.what());
            }
        }
        const fs::path sp = domain_file(c, "spikes", domain);
        write_jsonl(sp, rows);
        st.output(sp);
        st.count("spikes", rows.size());
    }
}

std::vector<json> load_spikes(Stage& st, const std::string& domain) {
    const fs::path p = domain_file(st.cfg(), "spikes", domain);
    if (!fs::exists(p)) fail(ErrorKind::Io, "missing " + p.string() + " (run spike first)");
    st.input(p);
    std::vector<json> out;
    for (auto& row : read_jsonl(p)) out.push_back(std::move(row.value));
    return out;
}

// ---------------------------------------------------------------- calibrate / detect

void run_calibrate(Stage& st) {
    const auto& c = st.cfg();
    const auto domains = domain_names(c);
    const std::string domain = c.evaluation.calibration_domain.value_or(domains.front());
    std::vector<double> factual;
    for (const auto& row : load_spikes(st, domain)) {
        if (row.at("label").is_number_integer() && row.at("label").get<int>() == 0) factual.push_back(row.at("spike").get<double>());
    }
    const Threshold t = calibrate_threshold(factual, c.evaluation.target_fpr, domain);
    const fs::path p = fs::path(c.output_dir) / "threshold.json";
    write_json(p, {{"threshold", t}, {"config_hash", st.hash()}});
    st.output(p);
    st.note("lambda", t.lambda);
}

void run_detect(Stage& st) {
    const auto& c = st.cfg();
    const fs::path tp = fs::path(c.output_dir) / "threshold.json";
    if (!fs::exists(tp)) fail(ErrorKind::Io, "missing " + tp.string() + " (run calibrate first)");
    st.input(tp);
    const Threshold t = json::parse(read_text_file(tp)).at("threshold").get<Threshold>();
    for (const auto& domain : domain_names(c)) {
        std::vector<json> rows;
        std::size_t flagged = 0;
        for (const auto& row : load_spikes(st, domain)) {
            const int d = decide(row.at("spike").get<double>(), t);
            flagged += static_cast<std::size_t>(d);
            rows.push_back({{"item_id", row.at("item_id")},
                            {"spike", row.at("spike")},
                            {"lambda", t.lambda},
                            {"decision", d},
                            {"config_hash", st.hash()}});
        }
        const fs::path p = domain_file(c, "detections", domain);
        write_jsonl(p, rows);
        st.output(p);
        st.count("flagged_hallucinated", flagged);
    }
}

// ---------------------------------------------------------------- evaluate / sweep

std::vector<std::size_t> sweep_ks(const RunConfig& c, const DomainSequences& data) {
    if (!c.evaluation.sweep_k.empty()) return c.evaluation.sweep_k;
    std::size_t shortest = SIZE_MAX;
    for (const auto& [d, seqs] : data) {
        for (const auto& s : seqs) shortest = std::min(shortest, s.sequence.length());
    }
    std::vector<std::size_t> ks;
    for (std::size_t k = 3; shortest != SIZE_MAX && k <= shortest; ++k) ks.push_back(k);
    return ks;
}

EvalReport evaluate_report(Stage& st) {
    const auto& c = st.cfg();
    const auto domains = domain_names(c);
    LooOptions opt;
    opt.target_fpr = c.evaluation.target_fpr;
    opt.mixture_seed = c.seeds.mixture;
    std::set<std::string> hashes;
    SequenceProvider provider;
    std::map<std::string, FeatureTable> cache;
    if (parse_backbone(c.backbone.kind) == Backbone::Probe) {
        provider = [&](const std::string& train) { return sequences_from_probe(st, domains, train, cache); };
        opt.sweep_k = c.evaluation.sweep_k;
    } else {
        auto data = std::make_shared<DomainSequences>(sequences_from_scores(st, domains, hashes, true));
        opt.sweep_k = sweep_ks(c, *data);
        provider = [data](const std::string&) { return *data; };
    }
    EvalReport report = run_leave_one_out(domains, provider, opt);
    report.config_hash = st.hash();
    report.config = {{"snapshot", config_snapshot(c)},
                     {"input_config_hash", hashes.empty() ? json(st.hash()) : json(*hashes.begin())}};
    report.seeds["probe_seed"] = c.seeds.probe;
    return report;
}

void run_evaluate(Stage& st) {
    const EvalReport report = evaluate_report(st);
    const fs::path p = fs::path(st.cfg().output_dir) / "report.json";
    write_json(p, report);
    st.output(p);
    for (const auto& r : report.results) {
        st.log(r.train_domain + ": mean held-out AUROC " + format_double(r.mean_heldout_auroc) + ", mixture AUROC " +
               format_double(r.mixture_auroc) + " (CV " + format_double(r.mixture_cv_auroc) + ")");
    }
}

void run_sweep(Stage& st) {
    const auto& c = st.cfg();
    const auto domains = domain_names(c);
    DomainSequences data;
    std::set<std::string> hashes;
    if (parse_backbone(c.backbone.kind) == Backbone::Probe) {
        std::map<std::string, FeatureTable> cache;
        data = sequences_from_probe(st, domains, train_domain(c, domains), cache);
    } else {
        data = sequences_from_scores(st, domains, hashes, true);
    }
    std::vector<LabeledSequence> pooled;
    for (const auto& d : domains) pooled.insert(pooled.end(), data[d].begin(), data[d].end());
    const auto ks = sweep_ks(c, data);
    const auto rows = step_sweep(pooled, ks);
    json table = json::array();
    std::string csv = "k,auroc\n";
    for (const auto& r : rows) {
        table.push_back({{"k", r.k}, {"auroc", r.auroc}});
        csv += std::to_string(r.k) + "," + format_double(r.auroc) + "\n";
    }
    const fs::path jp = fs::path(c.output_dir) / "sweep.json";
    const fs::path cp = fs::path(c.output_dir) / "sweep.csv";
    write_json(jp, {{"config_hash", st.hash()}, {"rows", table}, {"n_items", pooled.size()}});
    write_text_file(cp, csv);
    st.output(jp);
    st.output(cp);
}

// ---------------------------------------------------------------- theorem-check

void run_theorem_check(Stage& st) {
    const auto& c = st.cfg();
    const auto grid = observation_grid(c.evaluation.theorem_samples, c.seeds.theorem);
    std::vector<TheoremCheckResult> results(grid.size());
    parallel_for(grid.size(), c.workers, [&](std::size_t i) { results[i] = monte_carlo_theorem_check(grid[i]); });
    std::size_t violations = 0;
    json rows = json::array();
    for (const auto& r : results) {
        violations += r.holds ? 0 : 1;
        rows.push_back(r);
    }
    const fs::path p = fs::path(c.output_dir) / "theorem_check.json";
    write_json(p, {{"config_hash", st.hash()},
                   {"n_configs", results.size()},
                   {"violations", violations},
                   {"all_hold", violations == 0},
                   {"results", rows}});
    st.output(p);
    st.count("configs", results.size());
    st.count("violations", violations);
    if (violations) st.mark_partial();
}

// ---------------------------------------------------------------- rag

fs::path index_path(const RunConfig& c) { return fs::path(c.output_dir) / "rag" / "index.json"; }

void run_rag_build(Stage& st) {
    const auto& c = st.cfg();
    if (c.rag.corpus.empty()) fail(ErrorKind::Config, "rag.corpus is not set");
    const fs::path cp = c.resolve(c.rag.corpus);
    st.input(cp);
    const auto embedder = make_embedder(c);
    const auto index = rag::build_index(rag::load_corpus(cp), *embedder);
    json j = index;
    j["config_hash"] = st.hash();
    write_json(index_path(c), j);
    st.output(index_path(c));
    st.count("documents", index.size());
}

void run_rag_query(Stage& st) {
    const auto& c = st.cfg();
    const fs::path ip = index_path(c);
    if (!fs::exists(ip)) fail(ErrorKind::Io, "missing " + ip.string() + " (run rag-build first)");
    st.input(ip);
    const auto index = json::parse(read_text_file(ip)).get<rag::RetrievalIndex>();
    const auto embedder = make_embedder(c);
    const std::size_t k = std::min(c.rag.top_k, index.size());
    for (const auto& domain : domain_names(c)) {
        const fs::path items_p = items_path(c, domain);
        st.input(items_p);
        auto items = load_items(items_p);
        std::vector<json> hits_rows(items.size());
        parallel_for(items.size(), c.workers, [&](std::size_t i) {
            const auto hits = rag::retrieve_top_k(index, items[i].question, *embedder, k);
            std::vector<std::string> contexts;
            json hj = json::array();
            for (const auto& h : hits) {
                contexts.push_back(index.find(h.doc_id)->text);
                hj.push_back({{"doc_id", h.doc_id}, {"score", h.score}});
            }
            hits_rows[i] = {{"item_id", items[i].item_id}, {"hits", hj}, {"config_hash", st.hash()}};
            items[i].question = rag::assemble_rag_prompt(items[i].question, contexts, c.rag.context_char_cap);
        });
        std::vector<json> item_rows;
        for (const auto& item : items) item_rows.push_back(with_hash(item, st.hash()));
        const fs::path op = fs::path(c.output_dir) / "rag" / "items" / (domain + ".jsonl");
        const fs::path hp = fs::path(c.output_dir) / "rag" / "retrievals" / (domain + ".jsonl");
        write_jsonl(op, item_rows);
        write_jsonl(hp, hits_rows);
        st.output(op);
        st.output(hp);
        st.count("queries", items.size());
    }
}

// ---------------------------------------------------------------- export-plots

void run_export_plots(Stage& st) {
    const auto& c = st.cfg();
    const fs::path rp = fs::path(c.output_dir) / "report.json";
    if (!fs::exists(rp)) fail(ErrorKind::Io, "missing " + rp.string() + " (run evaluate first)");
    st.input(rp);
    const EvalReport report = json::parse(read_text_file(rp)).get<EvalReport>();
    std::vector<LabeledSequence> pooled;
    const auto domains = domain_names(c);
    const bool need_sequences = std::any_of(c.evaluation.plots.begin(), c.evaluation.plots.end(), [](const std::string& s) {
        return s == "trajectories" || s == "spike_histograms";
    });
    if (need_sequences && parse_backbone(c.backbone.kind) != Backbone::Probe) {
        std::set<std::string> hashes;
        auto data = sequences_from_scores(st, domains, hashes, false);
        for (const auto& d : domains) pooled.insert(pooled.end(), data[d].begin(), data[d].end());
    }
    for (const auto& name : c.evaluation.plots) {
        const PlotSelector sel = parse_plot_selector(name);
        if ((sel == PlotSelector::Trajectories || sel == PlotSelector::SpikeHistograms) && pooled.empty()) {
            st.item_error("plots/" + name + ": no stored score sequences to plot");
            continue;
        }
        for (const auto& p : export_plot_data(report, pooled, sel, fs::path(c.output_dir) / "plots")) st.output(p);
    }
}

// ---------------------------------------------------------------- validate

void run_validate(Stage& st) {
    const auto& c = st.cfg();
    json reports = json::array();
    std::size_t issues = 0;
    auto check = [&](const fs::path& p, RecordSchema schema) {
        if (!fs::exists(p)) return;
        st.input(p);
        const auto r = validate_records(p, schema);
        issues += r.issues.size();
        for (const auto& i : r.issues) {
            st.item_error(p.generic_string() + ":" + std::to_string(i.line) + ": " + i.reason);
        }
        json j = r;
        j["path"] = st.display(p);
        reports.push_back(std::move(j));
    };
    for (const auto& domain : domain_names(c)) {
        check(items_path(c, domain), RecordSchema::QA);
        check(domain_file(c, "labels", domain), RecordSchema::Label);
        check(domain_file(c, "transcripts", domain), RecordSchema::Transcript);
        check(features_path(c, domain), RecordSchema::Feature);
        check(domain_file(c, "scores", domain), RecordSchema::Score);
        if (const auto* paths = configured(c, domain); paths && !paths->external_scores.empty()) {
            check(c.resolve(paths->external_scores), RecordSchema::Score);
        }
    }
    const fs::path p = fs::path(c.output_dir) / "validation.json";
    write_json(p, {{"config_hash", st.hash()}, {"files", reports}, {"issues", issues}});
    st.output(p);
}

using Handler = void (*)(Stage&);

const std::vector<std::pair<std::string_view, Handler>>& handlers() {
    static const std::vector<std::pair<std::string_view, Handler>> table{
        {"simulate", run_simulate},       {"label", run_label},
        {"induce", run_induce},           {"train-probe", run_train_probe},
        {"score", run_score},             {"spike", run_spike},
        {"calibrate", run_calibrate},     {"detect", run_detect},
        {"evaluate", run_evaluate},       {"sweep", run_sweep},
        {"theorem-check", run_theorem_check}, {"rag-build", run_rag_build},
        {"rag-query", run_rag_query},     {"export-plots", run_export_plots},
        {"validate", run_validate},
    };
    return table;
}

}  // namespace

const std::vector<std::string_view>& subcommands() {
    static const std::vector<std::string_view> names = [] {
        std::vector<std::string_view> v;
        for (const auto& [name, fn] : handlers()) v.push_back(name);
        return v;
    }();
    return names;
}

RunOutcome run_subcommand(std::string_view name, const RunConfig& config, std::ostream& log) {
    config.validate();
    for (const auto& [n, fn] : handlers()) {
        if (n == name) {
            Stage st(std::string(name), config, log);
            fn(st);
            return st.finish();
        }
    }
    fail(ErrorKind::InvalidArgument, "unknown subcommand '" + std::string(name) + "'");
}

}  // namespace spikescore
