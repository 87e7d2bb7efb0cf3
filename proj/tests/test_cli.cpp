#include <doctest.h>

#include <sys/wait.h>
#include <unistd.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "mfgstop/runner.hpp"

using namespace mfgstop;
namespace fs = std::filesystem;

namespace {

const char* const monotone_config = R"({
  "problem": "sosmfg",
  "method": "continuation",
  "scenario": "monotone_1d",
  "epsilon_schedule": {"eps0": 0.1, "ratio": 0.25, "stages": 8},
  "solver": {"tol": 1e-10, "max_iter": 300},
  "acceptance": {"max_residual": 1e-6},
  "output": "mono",
  "seed": 7
})";

struct Sandbox {
    fs::path dir;

    Sandbox() {
        dir = fs::temp_directory_path() / ("mfgstop_cli_" + std::to_string(::getpid()));
        fs::remove_all(dir);
        fs::create_directories(dir);
    }
    ~Sandbox() { fs::remove_all(dir); }

    fs::path write(const std::string& name, const std::string& text) const {
        const fs::path p = dir / name;
        std::ofstream(p) << text;
        return p;
    }

    // Runs the CLI with MFGSTOP_OUT pointing into the sandbox; returns the exit status.
    int cli(const std::string& args) const {
        const std::string cmd = "MFGSTOP_OUT='" + (dir / "out").string() + "' '" + MFGSTOP_CLI_PATH + "' " + args +
                                " >'" + (dir / "stdout.txt").string() + "' 2>'" + (dir / "stderr.txt").string() + "'";
        const int status = std::system(cmd.c_str());
        REQUIRE(WIFEXITED(status));
        return WEXITSTATUS(status);
    }

    std::string read(const fs::path& p) const {
        std::ifstream in(p);
        std::stringstream ss;
        ss << in.rdbuf();
        return ss.str();
    }
};

std::string replace(std::string text, const std::string& from, const std::string& to) {
    const auto pos = text.find(from);
    REQUIRE(pos != std::string::npos);
    return text.replace(pos, from.size(), to);
}

std::string config_error(const std::string& text) {
    try {
        parse_run_config(text);
    } catch (const ConfigError& e) {
        return e.what();
    }
    return "";
}

}  // namespace

TEST_SUITE("cli") {

TEST_CASE("config parsing") {
    const RunConfig c = parse_run_config(monotone_config);
    CHECK(c.problem == ProblemKind::sosmfg);
    CHECK(c.method == RunMethod::continuation);
    REQUIRE(c.instance.has_value());
    CHECK(c.instance->name == "monotone_1d");
    CHECK(c.schedule.size() == 8);
    CHECK(c.schedule[1] == doctest::Approx(0.025));
    CHECK(c.seed == 7);
    CHECK(c.starts == 1);
    CHECK(parse_run_config(monotone_config).canonical == c.canonical);
}

TEST_CASE("config errors name their line") {
    CHECK(config_error(replace(monotone_config, "\"seed\": 7", "\"seed\": -3")).rfind("config:9:", 0) == 0);
    CHECK(config_error(replace(monotone_config, "\"sosmfg\"", "\"mfg\"")).rfind("config:2:", 0) == 0);
    CHECK(config_error(replace(monotone_config, "\"monotone_1d\"", "\"bogus\"")).rfind("config:4:", 0) == 0);
    CHECK(config_error(replace(monotone_config, "1e-6}", "")).rfind("config:", 0) == 0);
    const std::string missing = config_error(replace(monotone_config, "\"output\": \"mono\",", ""));
    CHECK(missing.find("output") != std::string::npos);
    const std::string variational = config_error(
        replace(replace(monotone_config, "\"sosmfg\"", "\"osmfg\""), "\"continuation\"", "\"variational\""));
    CHECK_FALSE(variational.empty());
    CHECK_THROWS_AS(load_run_config("/nonexistent/config.json"), ConfigError);
}

TEST_CASE("manifest hash and output root") {
    CHECK(fnv1a("") == 0xcbf29ce484222325ULL);
    CHECK(fnv1a("a") == 0xaf63dc4c8601ec8cULL);
    ::setenv("MFGSTOP_OUT", "", 1);
    CHECK(output_root("fallback") == "fallback");
    ::setenv("MFGSTOP_OUT", "/tmp/x", 1);
    CHECK(output_root("fallback") == "/tmp/x");
    ::unsetenv("MFGSTOP_OUT");
}

TEST_CASE("run, verify and exit codes") {
    const Sandbox box;
    const fs::path cfg = box.write("mono.json", monotone_config);
    REQUIRE(box.cli("run --config '" + cfg.string() + "'") == exit_ok);
    const fs::path out = box.dir / "out" / "mono";
    for (const char* f : {"u.csv", "m.csv", "alpha.csv", "convergence.csv", "report.json", "report.txt",
                          "manifest.json"}) {
        CHECK(fs::exists(out / f));
    }
    const auto report = nlohmann::json::parse(box.read(out / "report.json"));
    CHECK(report["status"] == "pass");
    CHECK(report["max_residual"].get<double>() <= 1e-6);

    // Identical configs give identical artifacts.
    const std::string manifest = box.read(out / "manifest.json");
    const std::string u = box.read(out / "u.csv");
    REQUIRE(box.cli("run --config '" + cfg.string() + "'") == exit_ok);
    CHECK(box.read(out / "manifest.json") == manifest);
    CHECK(box.read(out / "u.csv") == u);

    const std::string uf = "'" + (out / "u.csv").string() + "'";
    CHECK(box.cli("verify --u " + uf + " --m '" + (out / "m.csv").string() + "' --config '" + cfg.string() + "'") ==
          exit_ok);
    const auto verified = nlohmann::json::parse(box.read(box.dir / "stdout.txt"));
    CHECK(verified["max_residual"].get<double>() == doctest::Approx(report["max_residual"].get<double>()));

    // One corrupted density node breaks the residual gate.
    std::string m = box.read(out / "m.csv");
    const auto line2 = m.find('\n', m.find('\n') + 1) + 1;
    const auto comma = m.find(',', line2);
    m.replace(comma + 1, m.find('\n', comma) - comma - 1, "1");
    const fs::path bad = box.write("bad_m.csv", m);
    CHECK(box.cli("verify --u " + uf + " --m '" + bad.string() + "' --config '" + cfg.string() + "'") ==
          exit_residual);

    const fs::path empty = box.write("empty.csv", "");
    CHECK(box.cli("verify --u " + uf + " --m '" + empty.string() + "' --config '" + cfg.string() + "'") ==
          exit_invalid);
}

TEST_CASE("invalid input exits with code 2") {
    const Sandbox box;
    CHECK(box.cli("run --config '" + (box.dir / "missing.json").string() + "'") == exit_invalid);
    const fs::path variational = box.write(
        "var.json", replace(replace(monotone_config, "\"sosmfg\"", "\"osmfg\""), "\"continuation\"", "\"variational\""));
    CHECK(box.cli("run --config '" + variational.string() + "'") == exit_invalid);
    CHECK(box.read(box.dir / "stderr.txt").find("config:") != std::string::npos);
    CHECK(box.cli("scenario bogus") == exit_invalid);
    CHECK(box.cli("frobnicate") == exit_invalid);
    CHECK(box.cli("run") == exit_invalid);
}

TEST_CASE("stopped solver exits with code 3 and keeps partial artifacts") {
    const Sandbox box;
    const std::string text = R"({
  "problem": "sosmfg",
  "method": "continuation",
  "grid": {"n": [63], "lo": 0, "hi": 1},
  "cost": {"kind": "local_power", "a": 1, "p": 1, "f0": {"cosine": [0.2, 0.3]}},
  "rho": {"kind": "raised_cosine", "scale": 4},
  "epsilon_schedule": [1e-1, 1e-2],
  "solver": {"tol": 1e-10, "max_iter": 1},
  "acceptance": {"max_residual": 1e-6},
  "output": "stopped",
  "seed": 1
})";
    CHECK(box.cli("run --config '" + box.write("stop.json", text).string() + "'") == exit_not_converged);
    CHECK(fs::exists(box.dir / "out" / "stopped" / "convergence.csv"));
    CHECK(fs::exists(box.dir / "out" / "stopped" / "report.json"));
}

TEST_CASE("scenario subcommand writes an evidence bundle") {
    const Sandbox box;
    CHECK(box.cli("scenario nonuniqueness --out '" + (box.dir / "ev").string() + "'") == exit_ok);
    CHECK(fs::exists(box.dir / "ev" / "nonuniqueness" / "solution_a"));
    CHECK(fs::exists(box.dir / "ev" / "nonuniqueness" / "solution_b"));
    const auto names = evidence_scenario_names();
    CHECK(std::find(names.begin(), names.end(), "nonexistence") != names.end());
}

}  // TEST_SUITE
