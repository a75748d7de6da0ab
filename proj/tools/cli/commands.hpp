#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>

#include "cli/config.hpp"
#include "cli/manifest.hpp"

namespace volterra::cli {

enum ExitStatus : int { kPass = 0, kFail = 1, kConfigError = 2, kNumericalError = 3 };

struct RunOptions {
    std::string config_path;
    std::filesystem::path out_dir;
    unsigned threads = 0;
    double tolerance_scale = 1.0;
};

struct RunResult {
    int exit_status = kPass;
    std::string outcome;
    std::string message;
};

/// Runs one subcommand on a parsed configuration, writing its artifacts into
/// `out`. Returns whether the subcommand's check passed.
bool execute(const ExperimentConfig& config, OutputDirectory& out, std::ostream& log);

/// Loads the configuration, runs the subcommand and writes the manifest.
/// Errors are mapped to exit statuses: configuration and precondition errors
/// give 2, numerical failures 3.
RunResult run_subcommand(Subcommand command, const RunOptions& options, std::ostream& log);

} // namespace volterra::cli
