#include <CLI11.hpp>

#include <filesystem>
#include <iostream>

#include "mfgstop/errors.hpp"
#include "mfgstop/runner.hpp"

namespace {

int report(const mfgstop::RunOutcome& out) {
    if (!out.report.is_null()) std::cout << out.report.dump(2) << '\n';
    if (!out.output_dir.empty()) std::cerr << "artifacts: " << out.output_dir << '\n';
    std::cerr << out.message << '\n';
    return out.exit_code;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Mean-field games of optimal stopping: solvers and residual verification"};
    app.require_subcommand(1);
    int parallel_starts = 1;
    app.add_option("--parallel-starts", parallel_starts, "Threads for independent multi-start solves")
        ->check(CLI::PositiveNumber);

    std::string config_path;
    auto* run = app.add_subcommand("run", "Solve the configured problem and write artifacts");
    run->add_option("--config", config_path, "JSON run configuration")->required();

    std::string u_path, m_path, verify_config;
    auto* verify = app.add_subcommand("verify", "Re-verify u and m fields against a configuration");
    verify->add_option("--u", u_path, "value field (CSV, or trajectory manifest)")->required();
    verify->add_option("--m", m_path, "density field (CSV, or trajectory manifest)")->required();
    verify->add_option("--config", verify_config, "JSON run configuration")->required();

    std::string scenario_name, scenario_out;
    auto* scenario = app.add_subcommand("scenario", "Run the evidence procedure of a named scenario");
    scenario->add_option("name", scenario_name, "scenario name")->required();
    scenario->add_option("--out", scenario_out, "output root (default $MFGSTOP_OUT or ./mfgstop_out)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : mfgstop::exit_invalid;
    }

    try {
        if (*run) {
            const auto config = mfgstop::load_run_config(config_path);
            return report(mfgstop::run(config, mfgstop::output_root("."), parallel_starts));
        }
        if (*verify) {
            const auto config = mfgstop::load_run_config(verify_config);
            return report(mfgstop::verify(u_path, m_path, config));
        }
        const std::string root = scenario_out.empty() ? mfgstop::output_root("mfgstop_out") : scenario_out;
        return report(mfgstop::run_scenario(scenario_name, root, parallel_starts));
    } catch (const mfgstop::ConvergenceError& e) {
        std::cerr << "not converged: " << e.what() << '\n';
        return mfgstop::exit_not_converged;
    } catch (const std::invalid_argument& e) {
        std::cerr << "error: " << e.what() << '\n';
        return mfgstop::exit_invalid;
    } catch (const std::exception& e) {
        std::cerr << "failed: " << e.what() << '\n';
        return mfgstop::exit_not_converged;
    }
}
