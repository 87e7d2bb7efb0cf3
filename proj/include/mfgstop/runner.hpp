#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "mfgstop/scenarios.hpp"

namespace mfgstop {

/// Exit codes of the batch front-end.
enum ExitCode : int {
    exit_ok = 0,
    exit_residual = 1,      ///< solver finished but a residual exceeds its threshold
    exit_invalid = 2,       ///< bad config, missing or malformed input, unknown scenario
    exit_not_converged = 3  ///< solver stopped early; partial artifacts written
};

/// Invalid run configuration. The message starts with "config:<line>:".
class ConfigError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

enum class RunMethod { continuation, monotone_iteration, variational };

const char* to_string(RunMethod method);

/// Parsed run configuration. Keys (all required unless marked optional):
///
///   problem          "sosmfg" | "osmfg" | "cosmfg"
///   method           "continuation" | "monotone_iteration" | "variational"
///   scenario         registry name; replaces the explicit instance keys below
///   grid             {"n": [n0] | [n0, n1], "lo": x, "hi": x}
///   timegrid         {"horizon": T, "steps": N}                 (osmfg, cosmfg)
///   cost             {"kind": "local_power", "a", "p", "f0"}
///                  | {"kind": "nonlocal_affine", "c0", "c1", "weight": "one" | "distance_to_center"}
///                    c0 and f0 are numbers or {"cosine": [mean, amplitude]}
///   rho              {"kind": "raised_cosine", "scale": s}     (sosmfg)
///   m0               {"kind": "gaussian", "variance": v}       (osmfg, cosmfg)
///   obstacle         {"kind": "zero"} | {"kind": "heat_from_g", "g": cost}   (osmfg)
///   hamiltonian      {"kind": "smoothed_norm", "beta": b}
///                  | {"kind": "quadratic", "allow_outside_assumptions": true}  (cosmfg)
///   epsilon_schedule [eps...] or {"eps0", "ratio", "stages"}  (continuation)
///   solver           {"tol", "max_iter"}
///   acceptance       {"max_residual"}
///   output           directory, relative to the output root
///   seed             unsigned integer
///   starts           optional multi-start count for the uniqueness probe (default 1)
struct RunConfig {
    ProblemKind problem = ProblemKind::sosmfg;
    RunMethod method = RunMethod::continuation;
    std::optional<Scenario> instance;  ///< always set after parsing
    std::vector<double> schedule;
    double tol = 0.0;
    int max_iter = 0;
    double max_residual = 0.0;
    std::string output;
    std::uint64_t seed = 0;
    int starts = 1;
    /// Canonical dump of the parsed document, hashed into the manifest.
    std::string canonical;
};

RunConfig parse_run_config(std::string_view text);
/// Reads and parses a config file; a missing file is a ConfigError.
RunConfig load_run_config(const std::string& path);

struct RunOutcome {
    int exit_code = exit_ok;
    std::string message;
    std::string output_dir;
    nlohmann::json report;
};

/// Output root: $MFGSTOP_OUT when set and non-empty, otherwise `fallback`.
std::string output_root(const std::string& fallback = ".");

/// 64-bit FNV-1a hash.
std::uint64_t fnv1a(std::string_view bytes);

/// Solves the configured problem and writes fields, report.json, report.txt,
/// convergence.csv and manifest.json under output_root/config.output.
RunOutcome run(const RunConfig& config, const std::string& root, int parallel_starts = 1);

/// Re-verifies externally produced fields. Stationary problems take CSV
/// fields; time-dependent problems take the trajectory manifests written by run.
RunOutcome verify(const std::string& u_path, const std::string& m_path, const RunConfig& config);

/// Names accepted by run_scenario: the registry plus the counterexamples.
std::vector<std::string> evidence_scenario_names();

/// Runs the evidence procedure of a named scenario and writes its bundle
/// under `directory`. Exit 0 iff the expected outcome is confirmed.
RunOutcome run_scenario(const std::string& name, const std::string& directory, int parallel_starts = 1);

}  // namespace mfgstop
