#pragma once

#include <string>

#include "mtlmm/io.hpp"

namespace mtlmm {

/// Stable CLI exit codes.
enum ExitCode : int {
    kExitOk = 0,
    kExitValidation = 1,
    kExitNonConvergence = 2,
    kExitIo = 3,
};

/// Options shared by every command; flags override config keys.
struct CommandOptions {
    std::string out_dir;        // empty: use config output.dir (default "out")
    long long seed = -1;        // >= 0 overrides config seed
    int threads = 0;            // > 0 overrides config threads
    bool quiet = false;
};

int cmd_simulate(const RunConfig& config, const CommandOptions& opts);
int cmd_fit(const RunConfig& config, const CommandOptions& opts);
int cmd_cv(const RunConfig& config, const CommandOptions& opts);
int cmd_predict(const RunConfig& config, const CommandOptions& opts);
int cmd_evaluate(const RunConfig& config, const CommandOptions& opts);
int cmd_replicate(const RunConfig& config, const CommandOptions& opts);

/// Maps a thrown library error to the exit-code contract.
int exit_code_for_current_exception();

}  // namespace mtlmm
