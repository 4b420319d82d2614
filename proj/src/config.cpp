#include "spikescore/config.hpp"

#include <cstdio>

#include <json.hpp>

#include "spikescore/error.hpp"
#include "spikescore/jsonl.hpp"
#include "spikescore/prompts.hpp"
#include "spikescore/rng.hpp"

namespace spikescore {
namespace {

using nlohmann::json;

template <typename T>
json opt(const std::optional<T>& v) {
    return v ? json(*v) : json(nullptr);
}

template <typename T>
void get_opt(const json& j, const char* key, std::optional<T>& out) {
    if (auto it = j.find(key); it != j.end() && !it->is_null()) out = it->get<T>();
    else out.reset();
}

json generator_json(const sim::SimulatorConfig& g) {
    return {{"seed", g.seed},
            {"base_min", g.base_min},
            {"base_max", g.base_max},
            {"base_jitter", g.base_jitter},
            {"slope_max", g.slope_max},
            {"slope_jitter", g.slope_jitter},
            {"noise_amplitude", g.noise_amplitude},
            {"noise_floor", g.noise_floor},
            {"burst_min", g.burst_min},
            {"burst_max", g.burst_max},
            {"burst_first_turn", g.burst_first_turn},
            {"burst_last_turn", g.burst_last_turn},
            {"hallucinated_offset", g.hallucinated_offset},
            {"nll_scale", g.nll_scale}};
}

sim::SimulatorConfig generator_from(const json& j) {
    sim::SimulatorConfig g;
    j.at("seed").get_to(g.seed);
    j.at("base_min").get_to(g.base_min);
    j.at("base_max").get_to(g.base_max);
    j.at("base_jitter").get_to(g.base_jitter);
    j.at("slope_max").get_to(g.slope_max);
    j.at("slope_jitter").get_to(g.slope_jitter);
    j.at("noise_amplitude").get_to(g.noise_amplitude);
    j.at("noise_floor").get_to(g.noise_floor);
    j.at("burst_min").get_to(g.burst_min);
    j.at("burst_max").get_to(g.burst_max);
    j.at("burst_first_turn").get_to(g.burst_first_turn);
    j.at("burst_last_turn").get_to(g.burst_last_turn);
    j.at("hallucinated_offset").get_to(g.hallucinated_offset);
    j.at("nll_scale").get_to(g.nll_scale);
    return g;
}

json domain_json(const DomainPaths& d) {
    return {{"items", d.items}, {"features", d.features}, {"external_scores", d.external_scores}, {"targets", d.targets}};
}

// Every key of `user` must exist in `skeleton`; objects recurse. Values of
// "domains" are checked against the DomainPaths skeleton.
void reject_unknown(const json& user, const json& skeleton, const std::string& path) {
    if (!user.is_object()) return;
    if (!skeleton.is_object()) fail(ErrorKind::Config, "config field '" + path + "' must not be an object");
    for (const auto& [key, value] : user.items()) {
        const std::string here = path.empty() ? key : path + "." + key;
        if (path == "domains") {
            if (!value.is_object()) fail(ErrorKind::Config, "config field '" + here + "' must be an object");
            reject_unknown(value, domain_json({}), here);
            continue;
        }
        auto it = skeleton.find(key);
        if (it == skeleton.end()) fail(ErrorKind::Config, "unknown config field '" + here + "'");
        if (here == "domains") {
            if (!value.is_object()) fail(ErrorKind::Config, "config field 'domains' must be an object");
            reject_unknown(value, json::object(), "domains");
            continue;
        }
        if (value.is_object() && it->is_object()) reject_unknown(value, *it, here);
    }
}

}  // namespace

void to_json(json& j, const RunConfig& c) {
    json domains = json::object();
    for (const auto& [name, d] : c.domains) domains[name] = domain_json(d);
    j = json{{"backend",
              {{"kind", c.backend.kind},
               {"url", c.backend.url},
               {"model", c.backend.model},
               {"credential_env", c.backend.credential_env},
               {"timeout_ms", c.backend.timeout_ms},
               {"max_attempts", c.backend.max_attempts},
               {"initial_backoff_ms", c.backend.initial_backoff_ms},
               {"backoff_multiplier", c.backend.backoff_multiplier}}},
             {"decoding", c.decoding},
             {"seeds",
              {{"prompt", c.seeds.prompt},
               {"sampling", c.seeds.sampling},
               {"split", c.seeds.split},
               {"mixture", c.seeds.mixture},
               {"probe", c.seeds.probe},
               {"theorem", c.seeds.theorem}}},
             {"backbone",
              {{"kind", c.backbone.kind},
               {"external_orientation", c.backbone.external_orientation},
               {"probe",
                {{"objective", c.backbone.probe.objective},
                 {"hidden_dims", c.backbone.probe.hidden_dims},
                 {"epochs", c.backbone.probe.epochs},
                 {"learning_rate", c.backbone.probe.learning_rate},
                 {"batch_size", c.backbone.probe.batch_size},
                 {"huber_delta", c.backbone.probe.huber_delta},
                 {"train_domain", opt(c.backbone.probe.train_domain)}}}}},
             {"domains", std::move(domains)},
             {"simulate",
              {{"domains", c.simulate.domains},
               {"items_per_domain", c.simulate.items_per_domain},
               {"hallucination_rate", c.simulate.hallucination_rate},
               {"feature_dim", c.simulate.feature_dim},
               {"generator", generator_json(c.simulate.generator)}}},
             {"evaluation",
              {{"sweep_k", c.evaluation.sweep_k},
               {"target_fpr", c.evaluation.target_fpr},
               {"calibration_domain", opt(c.evaluation.calibration_domain)},
               {"theorem_samples", c.evaluation.theorem_samples},
               {"plots", c.evaluation.plots}}},
             {"rag",
              {{"corpus", c.rag.corpus},
               {"top_k", c.rag.top_k},
               {"context_char_cap", opt(c.rag.context_char_cap)},
               {"embedder",
                {{"kind", c.rag.embedder.kind},
                 {"dimension", c.rag.embedder.dimension},
                 {"url", c.rag.embedder.url},
                 {"model", c.rag.embedder.model},
                 {"batch_size", c.rag.embedder.batch_size}}}}},
             {"labeling",
              {{"use_judge", c.labeling.use_judge},
               {"allow_fallback", c.labeling.allow_fallback},
               {"judge_prompt", opt(c.labeling.judge_prompt)}}},
             {"system_directive", opt(c.system_directive)},
             {"workers", c.workers},
             {"output_dir", c.output_dir}};
}

void from_json(const json& user, RunConfig& c) {
    if (!user.is_object()) fail(ErrorKind::Config, "config must be a JSON object");
    const json defaults = RunConfig{};
    reject_unknown(user, defaults, "");
    json j = defaults;
    j.merge_patch(user);
    c = RunConfig{};
    try {
        const auto& b = j.at("backend");
        b.at("kind").get_to(c.backend.kind);
        b.at("url").get_to(c.backend.url);
        b.at("model").get_to(c.backend.model);
        b.at("credential_env").get_to(c.backend.credential_env);
        b.at("timeout_ms").get_to(c.backend.timeout_ms);
        b.at("max_attempts").get_to(c.backend.max_attempts);
        b.at("initial_backoff_ms").get_to(c.backend.initial_backoff_ms);
        b.at("backoff_multiplier").get_to(c.backend.backoff_multiplier);

        j.at("decoding").get_to(c.decoding);

        const auto& s = j.at("seeds");
        s.at("prompt").get_to(c.seeds.prompt);
        s.at("sampling").get_to(c.seeds.sampling);
        s.at("split").get_to(c.seeds.split);
        s.at("mixture").get_to(c.seeds.mixture);
        s.at("probe").get_to(c.seeds.probe);
        s.at("theorem").get_to(c.seeds.theorem);

        const auto& bb = j.at("backbone");
        bb.at("kind").get_to(c.backbone.kind);
        bb.at("external_orientation").get_to(c.backbone.external_orientation);
        const auto& p = bb.at("probe");
        p.at("objective").get_to(c.backbone.probe.objective);
        p.at("hidden_dims").get_to(c.backbone.probe.hidden_dims);
        p.at("epochs").get_to(c.backbone.probe.epochs);
        p.at("learning_rate").get_to(c.backbone.probe.learning_rate);
        p.at("batch_size").get_to(c.backbone.probe.batch_size);
        p.at("huber_delta").get_to(c.backbone.probe.huber_delta);
        get_opt(p, "train_domain", c.backbone.probe.train_domain);

        for (const auto& [name, d] : j.at("domains").items()) {
            DomainPaths paths;
            if (d.contains("items")) d.at("items").get_to(paths.items);
            if (d.contains("features")) d.at("features").get_to(paths.features);
            if (d.contains("external_scores")) d.at("external_scores").get_to(paths.external_scores);
            if (d.contains("targets")) d.at("targets").get_to(paths.targets);
            c.domains.emplace(name, std::move(paths));
        }

        const auto& sm = j.at("simulate");
        sm.at("domains").get_to(c.simulate.domains);
        sm.at("items_per_domain").get_to(c.simulate.items_per_domain);
        sm.at("hallucination_rate").get_to(c.simulate.hallucination_rate);
        sm.at("feature_dim").get_to(c.simulate.feature_dim);
        c.simulate.generator = generator_from(sm.at("generator"));

        const auto& e = j.at("evaluation");
        e.at("sweep_k").get_to(c.evaluation.sweep_k);
        e.at("target_fpr").get_to(c.evaluation.target_fpr);
        get_opt(e, "calibration_domain", c.evaluation.calibration_domain);
        e.at("theorem_samples").get_to(c.evaluation.theorem_samples);
        e.at("plots").get_to(c.evaluation.plots);

        const auto& r = j.at("rag");
        r.at("corpus").get_to(c.rag.corpus);
        r.at("top_k").get_to(c.rag.top_k);
        get_opt(r, "context_char_cap", c.rag.context_char_cap);
        const auto& em = r.at("embedder");
        em.at("kind").get_to(c.rag.embedder.kind);
        em.at("dimension").get_to(c.rag.embedder.dimension);
        em.at("url").get_to(c.rag.embedder.url);
        em.at("model").get_to(c.rag.embedder.model);
        em.at("batch_size").get_to(c.rag.embedder.batch_size);

        const auto& l = j.at("labeling");
        l.at("use_judge").get_to(c.labeling.use_judge);
        l.at("allow_fallback").get_to(c.labeling.allow_fallback);
        get_opt(l, "judge_prompt", c.labeling.judge_prompt);

        get_opt(j, "system_directive", c.system_directive);
        j.at("workers").get_to(c.workers);
        j.at("output_dir").get_to(c.output_dir);
    } catch (const json::exception& e) {
        fail(ErrorKind::Config, std::string("invalid config: ") + e.what());
    }
}

void RunConfig::validate() const {
    auto bad = [](const std::string& what) { fail(ErrorKind::Config, what); };
    if (backend.kind != "sim" && backend.kind != "http") bad("backend.kind must be sim or http");
    if (backend.kind == "http" && (backend.url.empty() || backend.model.empty())) bad("http backend needs backend.url and backend.model");
    if (backend.timeout_ms <= 0) bad("backend.timeout_ms must be positive");
    if (backend.max_attempts < 1) bad("backend.max_attempts must be >= 1");
    if (backend.initial_backoff_ms < 0 || backend.backoff_multiplier < 1.0) bad("backend backoff settings invalid");
    try {
        decoding.validate();
        simulate.generator.validate();
    } catch (const Error& e) {
        bad(e.what());
    }
    if (backbone.kind != "perplexity" && backbone.kind != "probe" && backbone.kind != "external" && backbone.kind != "sim") {
        bad("backbone.kind must be one of perplexity, probe, external, sim");
    }
    if (backbone.external_orientation != "higher_is_suspect" && backbone.external_orientation != "lower_is_suspect") {
        bad("backbone.external_orientation must be higher_is_suspect or lower_is_suspect");
    }
    const auto& p = backbone.probe;
    if (p.objective != "cross_entropy" && p.objective != "huber_regression") bad("backbone.probe.objective invalid");
    if (p.epochs < 0 || !(p.learning_rate > 0.0) || p.batch_size == 0 || !(p.huber_delta > 0.0)) bad("probe hyperparameters invalid");
    for (auto h : p.hidden_dims) {
        if (h == 0) bad("probe hidden layer widths must be positive");
    }
    if (simulate.domains == 0 || simulate.items_per_domain == 0) bad("simulate needs at least one domain and item");
    if (!(simulate.hallucination_rate >= 0.0 && simulate.hallucination_rate <= 1.0)) bad("simulate.hallucination_rate must lie in [0, 1]");
    for (auto k : evaluation.sweep_k) {
        if (k < 3) bad("evaluation.sweep_k entries must be >= 3");
    }
    if (!(evaluation.target_fpr > 0.0 && evaluation.target_fpr < 1.0)) bad("evaluation.target_fpr must lie in (0, 1)");
    if (evaluation.theorem_samples == 0) bad("evaluation.theorem_samples must be positive");
    if (rag.top_k == 0) bad("rag.top_k must be positive");
    if (rag.embedder.kind != "hashing" && rag.embedder.kind != "http") bad("rag.embedder.kind must be hashing or http");
    if (rag.embedder.kind == "http" && rag.embedder.url.empty()) bad("http embedder needs rag.embedder.url");
    if (workers == 0) bad("workers must be >= 1");
    if (output_dir.empty()) bad("output_dir must not be empty");
}

std::string RunConfig::hash() const {
    json j = *this;
    j.erase("output_dir");
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a64(j.dump())));
    return buf;
}

std::optional<std::string> RunConfig::directive_text() const {
    if (!system_directive) return std::nullopt;
    if (*system_directive == "polite_aligned") return std::string(kPoliteAlignedDirective);
    return system_directive;
}

std::filesystem::path RunConfig::resolve(const std::string& path) const {
    std::filesystem::path p(path);
    return p.is_absolute() || base_dir.empty() ? p : base_dir / p;
}

RunConfig load_config(const std::filesystem::path& path) {
    json j;
    try {
        j = json::parse(read_text_file(path));
    } catch (const json::parse_error& e) {
        fail(ErrorKind::Config, path.string() + ": " + e.what());
    }
    RunConfig c = j.get<RunConfig>();
    c.base_dir = path.parent_path();
    return c;
}

void apply_overrides(RunConfig& c, const CliOverrides& o) {
    if (o.out) c.output_dir = *o.out;
    if (o.backend) c.backend.kind = *o.backend;
    if (o.k) c.decoding.turn_budget = *o.k;
    if (o.backbone) c.backbone.kind = *o.backbone;
    if (o.seed) {
        const std::uint64_t s = *o.seed;
        c.seeds = {s, s, s, s, s, s};
        c.simulate.generator.seed = s;
    }
}

}  // namespace spikescore
