#include <cstdio>
#include <string>

#include <CLI11.hpp>

#include "mtlmm/commands.hpp"

namespace {

struct VerbSpec {
    const char* name;
    const char* description;
    int (*run)(const mtlmm::RunConfig&, const mtlmm::CommandOptions&);
};

constexpr VerbSpec kVerbs[] = {
    {"simulate", "Generate a synthetic grouped dataset with known parameters",
     mtlmm::cmd_simulate},
    {"fit", "Fit a penalized multitask (mixed) model to a dataset", mtlmm::cmd_fit},
    {"cv", "Select the penalty strength by cross validation, then refit", mtlmm::cmd_cv},
    {"predict", "Predict responses for new rows from a saved fit", mtlmm::cmd_predict},
    {"evaluate", "Compute error and support-recovery metrics for a saved fit",
     mtlmm::cmd_evaluate},
    {"replicate", "Run seeded Monte Carlo repetitions across the six model configurations",
     mtlmm::cmd_replicate},
};

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Penalized multitask linear mixed-effects models"};
    app.require_subcommand(1);

    std::string config_path;
    mtlmm::CommandOptions opts;

    for (const auto& verb : kVerbs) {
        CLI::App* sub = app.add_subcommand(verb.name, verb.description);
        sub->add_option("--config", config_path, "Path to the JSON run configuration")
            ->required();
        sub->add_option("--out", opts.out_dir, "Output directory (overrides output.dir)");
        sub->add_option("--seed", opts.seed, "Seed override");
        sub->add_option("--threads", opts.threads, "Thread count override");
        sub->add_flag("--quiet", opts.quiet, "Suppress progress messages");
        sub->callback([&, runner = verb.run]() {
            const mtlmm::RunConfig config = mtlmm::RunConfig::load(config_path);
            const int code = runner(config, opts);
            if (code != mtlmm::kExitOk) throw CLI::RuntimeError(code);
        });
    }

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e);
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return mtlmm::exit_code_for_current_exception();
    }
    return mtlmm::kExitOk;
}
