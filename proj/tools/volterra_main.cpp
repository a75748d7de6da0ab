#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "cli/commands.hpp"
#include "volterra/parallel.hpp"

int main(int argc, char** argv) {
    using namespace volterra::cli;
    CLI::App app{"Volterra-noise neutral delay equations: experiment runner"};
    app.set_version_flag("--version", VOLTERRA_VERSION);
    app.require_subcommand(1);
    app.fallthrough();

    RunOptions options;
    std::string out = "volterra_out";
    app.add_option("--config", options.config_path, "YAML experiment configuration")->required();
    app.add_option("--out", out, "output directory (created if missing)");
    app.add_option("--threads", options.threads, "worker threads, 0 = one per hardware thread")->check(CLI::NonNegativeNumber);
    app.add_option("--tolerance-scale", options.tolerance_scale, "multiplies every quadrature tolerance")
        ->check(CLI::PositiveNumber);

    for (const auto& name : subcommand_names()) app.add_subcommand(name);

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForVersion& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kConfigError;
    }

    const auto* sub = app.get_subcommands().front();
    const auto command = parse_subcommand(sub->get_name());
    options.out_dir = out;
    volterra::set_default_threads(options.threads);
    const RunResult r = run_subcommand(*command, options, std::cerr);
    return r.exit_status;
}
