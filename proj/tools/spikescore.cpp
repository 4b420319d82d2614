// Command-line front end: one subcommand per pipeline stage.
#include <algorithm>
#include <cstdlib>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "spikescore/config.hpp"
#include "spikescore/error.hpp"
#include "spikescore/pipeline.hpp"

namespace {

// simulate -> induce -> score -> spike -> evaluate in one call.
const std::vector<std::string> kEndToEnd{"simulate", "induce", "score", "spike", "evaluate"};

}  // namespace

int main(int argc, char** argv) {
    using namespace spikescore;

    CLI::App app{"Multi-turn hallucination detection pipeline"};
    app.set_version_flag("--version", std::string(SPIKESCORE_VERSION));

    std::string subcommand;
    std::string config_path;
    CliOverrides ov;
    std::optional<std::size_t> workers;

    std::string names = "end-to-end";
    for (auto n : subcommands()) names += ", " + std::string(n);
    app.add_option("subcommand", subcommand, "Stage to run: " + names)->required();
    app.add_option("--config", config_path, "JSON run configuration (defaults apply when omitted)");
    app.add_option("--out", ov.out, "Output directory");
    app.add_option("--seed-override", ov.seed, "Replace every seed in the configuration");
    app.add_option("--backend", ov.backend, "Chat backend")->check(CLI::IsMember({"sim", "http"}));
    app.add_option("--k", ov.k, "Turn budget K, counting the initial answer")->check(CLI::PositiveNumber);
    app.add_option("--backbone", ov.backbone, "Turn scoring backbone")
        ->check(CLI::IsMember({"perplexity", "probe", "external", "sim"}));
    app.add_option("--workers", workers, "Worker threads for induction and scoring")->check(CLI::PositiveNumber);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e);
    }

    try {
        RunConfig config = config_path.empty() ? RunConfig{} : load_config(config_path);
        apply_overrides(config, ov);
        if (workers) config.workers = *workers;

        std::vector<std::string> stages{subcommand};
        if (subcommand == "end-to-end") stages = kEndToEnd;

        int status = kExitOk;
        for (const auto& stage : stages) {
            const RunOutcome outcome = run_subcommand(stage, config, std::cerr);
            const std::size_t shown = std::min<std::size_t>(outcome.item_errors.size(), 20);
            for (std::size_t i = 0; i < shown; ++i) std::cerr << "item: " << outcome.item_errors[i] << "\n";
            if (shown < outcome.item_errors.size()) {
                std::cerr << "item: ... " << outcome.item_errors.size() - shown << " more in " << outcome.manifest.string() << "\n";
            }
            status = std::max(status, outcome.exit_code);
        }
        return status;
    } catch (const Error& e) {
        std::cerr << "error: " << error_kind_name(e.kind()) << ": " << e.what() << "\n";
    } catch (const std::exception& e) {
        std::cerr << "error: internal: " << e.what() << "\n";
    }
    return kExitSystemic;
}
