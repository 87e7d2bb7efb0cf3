#include "mfgstop/runner.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <sstream>

#include <Eigen/Core>

#include "mfgstop/errors.hpp"

namespace mfgstop {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr const char* tool_version = "1.0.0";

const char* const problem_names[] = {"sosmfg", "osmfg", "cosmfg"};
const char* const method_names[] = {"continuation", "monotone_iteration", "variational"};

// 1-based line of the first occurrence of "key" in the document, 1 if absent.
int line_of(std::string_view text, std::string_view key) {
    const std::string quoted = "\"" + std::string(key) + "\"";
    const auto pos = text.find(quoted);
    if (pos == std::string_view::npos) return 1;
    return 1 + static_cast<int>(std::count(text.begin(), text.begin() + static_cast<std::ptrdiff_t>(pos), '\n'));
}

class Parser {
public:
    explicit Parser(std::string_view text) : text_(text) {}

    [[noreturn]] void fail(std::string_view key, const std::string& what) const {
        throw ConfigError("config:" + std::to_string(line_of(text_, key)) + ": " + what);
    }

    const json& need(const json& obj, const char* key) const {
        if (!obj.is_object() || !obj.contains(key)) fail(key, std::string("missing required key '") + key + "'");
        return obj.at(key);
    }

    double number(const json& obj, const char* key) const {
        const json& v = need(obj, key);
        if (!v.is_number()) fail(key, std::string("'") + key + "' must be a number");
        return v.get<double>();
    }

    double positive(const json& obj, const char* key) const {
        const double v = number(obj, key);
        if (!(v > 0.0) || !std::isfinite(v)) fail(key, std::string("'") + key + "' must be positive");
        return v;
    }

    int count(const json& obj, const char* key) const {
        const json& v = need(obj, key);
        if (!v.is_number_integer() || v.get<long long>() < 1) {
            fail(key, std::string("'") + key + "' must be a positive integer");
        }
        return v.get<int>();
    }

    std::string string(const json& obj, const char* key) const {
        const json& v = need(obj, key);
        if (!v.is_string()) fail(key, std::string("'") + key + "' must be a string");
        return v.get<std::string>();
    }

    template <std::size_t N>
    int choice(const json& obj, const char* key, const char* const (&names)[N]) const {
        const std::string s = string(obj, key);
        for (std::size_t i = 0; i < N; ++i) {
            if (s == names[i]) return static_cast<int>(i);
        }
        fail(key, "unknown " + std::string(key) + " '" + s + "'");
    }

    Grid grid(const json& obj) const {
        const json& n = need(obj, "n");
        if (!n.is_array() || n.empty() || n.size() > 2) fail("n", "'n' must list one or two interior counts");
        std::vector<int> counts;
        for (const auto& c : n) {
            if (!c.is_number_integer() || c.get<long long>() < 1) fail("n", "'n' entries must be positive integers");
            counts.push_back(c.get<int>());
        }
        const double lo = number(obj, "lo");
        const double hi = number(obj, "hi");
        if (!(hi > lo)) fail("hi", "'hi' must exceed 'lo'");
        return counts.size() == 1 ? Grid::line(lo, hi, counts[0]) : Grid::square(lo, hi, counts[0], counts[1]);
    }

    // A number, or {"cosine": [mean, amplitude]} giving mean + amplitude cos(2 pi x).
    ScalarField profile(const json& obj, const char* key, const Grid& g) const {
        const json& v = need(obj, key);
        if (v.is_number()) return ScalarField(g, v.get<double>());
        if (v.is_object() && v.contains("cosine") && v["cosine"].is_array() && v["cosine"].size() == 2 &&
            v["cosine"][0].is_number() && v["cosine"][1].is_number()) {
            const double mean = v["cosine"][0].get<double>();
            const double amp = v["cosine"][1].get<double>();
            const auto& b = g.bounds(0);
            return ScalarField::from_function(g, [&](double x, double) {
                return mean + amp * std::cos(2.0 * std::numbers::pi * (x - b.lo) / (b.hi - b.lo));
            });
        }
        fail(key, std::string("'") + key + "' must be a number or {\"cosine\": [mean, amplitude]}");
    }

    CostOperator cost(const json& obj, const Grid& g) const {
        const std::string kind = string(obj, "kind");
        if (kind == "local_power") {
            return CostOperator::local_power(positive(obj, "a"), positive(obj, "p"), profile(obj, "f0", g));
        }
        if (kind == "nonlocal_affine") {
            const std::string w = string(obj, "weight");
            ScalarField weight(g, 1.0);
            if (w == "distance_to_center") {
                weight = ScalarField::from_function(g, [&](double x, double y) {
                    double r2 = 0.0;
                    const double c[2] = {x, y};
                    for (int a = 0; a < g.dim(); ++a) {
                        const double d = c[a] - 0.5 * (g.bounds(a).lo + g.bounds(a).hi);
                        r2 += d * d;
                    }
                    return std::sqrt(r2);
                });
            } else if (w != "one") {
                fail("weight", "unknown weight '" + w + "'");
            }
            return CostOperator::nonlocal_affine(profile(obj, "c0", g), number(obj, "c1"), weight);
        }
        fail("kind", "unknown cost kind '" + kind + "'");
    }

    std::vector<double> schedule(const json& v) const {
        std::vector<double> out;
        if (v.is_array()) {
            for (const auto& e : v) {
                if (!e.is_number() || !(e.get<double>() > 0.0)) {
                    fail("epsilon_schedule", "epsilon_schedule entries must be positive numbers");
                }
                out.push_back(e.get<double>());
            }
        } else if (v.is_object()) {
            const double ratio = positive(v, "ratio");
            if (!(ratio < 1.0)) fail("ratio", "'ratio' must be below 1");
            out = geometric_schedule(positive(v, "eps0"), ratio, count(v, "stages"));
        } else {
            fail("epsilon_schedule", "epsilon_schedule must be a list or {eps0, ratio, stages}");
        }
        if (out.empty()) fail("epsilon_schedule", "epsilon_schedule is empty");
        for (std::size_t i = 1; i < out.size(); ++i) {
            if (!(out[i] < out[i - 1])) fail("epsilon_schedule", "epsilon_schedule must decrease strictly");
        }
        return out;
    }

    Scenario instance(const json& doc, ProblemKind problem) const {
        const Grid g = grid(need(doc, "grid"));
        Scenario s{"custom", problem, g, std::nullopt, cost(need(doc, "cost"), g), std::nullopt, std::nullopt,
                   std::nullopt, std::nullopt, ExpectedOutcome::unique_mixed};
        if (problem == ProblemKind::sosmfg) {
            const json& rho = need(doc, "rho");
            if (string(rho, "kind") != "raised_cosine") fail("kind", "unknown rho kind");
            ScalarField r = raised_cosine_bump(g);
            r *= positive(rho, "scale");
            s.rho = std::move(r);
            return s;
        }
        const json& tg = need(doc, "timegrid");
        s.timegrid = TimeGrid(positive(tg, "horizon"), count(tg, "steps"));
        const json& m0 = need(doc, "m0");
        if (string(m0, "kind") != "gaussian") fail("kind", "unknown m0 kind");
        s.m0 = gaussian_density(g, positive(m0, "variance"));
        if (problem == ProblemKind::osmfg) {
            const json& ob = need(doc, "obstacle");
            const std::string kind = string(ob, "kind");
            if (kind == "zero") {
                s.obstacle = ObstacleOperator::zero(*s.timegrid, g);
            } else if (kind == "heat_from_g") {
                s.obstacle = ObstacleOperator::heat_from_g(cost(need(ob, "g"), g));
            } else {
                fail("kind", "unknown obstacle kind '" + kind + "'");
            }
        } else {
            const json& h = need(doc, "hamiltonian");
            const std::string kind = string(h, "kind");
            if (kind == "smoothed_norm") {
                const double beta = number(h, "beta");
                if (!(beta >= 0.0)) fail("beta", "'beta' must be nonnegative");
                s.hamiltonian = Hamiltonian::smoothed_norm(ScalarField(g, beta));
            } else if (kind == "quadratic") {
                const json& allow = need(h, "allow_outside_assumptions");
                if (!allow.is_boolean() || !allow.get<bool>()) {
                    fail("allow_outside_assumptions",
                         "the quadratic Hamiltonian is not globally Lipschitz; set allow_outside_assumptions to true");
                }
                s.hamiltonian = Hamiltonian::quadratic(g, true);
            } else {
                fail("kind", "unknown hamiltonian kind '" + kind + "'");
            }
        }
        return s;
    }

private:
    std::string_view text_;
};

std::string format_number(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

std::string hex64(std::uint64_t v) {
    char buf[20];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("cannot open " + path.string() + " for writing");
    os << text;
}

void write_json(const fs::path& path, const json& doc) { write_text(path, doc.dump(2) + "\n"); }

void flatten(const json& v, const std::string& prefix, std::ostringstream& os) {
    if (v.is_object()) {
        for (const auto& [k, item] : v.items()) flatten(item, prefix.empty() ? k : prefix + "." + k, os);
    } else if (v.is_array()) {
        os << prefix << " = ";
        for (std::size_t i = 0; i < v.size(); ++i) os << (i ? "," : "") << v[i].dump();
        os << '\n';
    } else if (v.is_number_float()) {
        os << prefix << " = " << format_number(v.get<double>()) << '\n';
    } else if (v.is_string()) {
        os << prefix << " = " << v.get<std::string>() << '\n';
    } else {
        os << prefix << " = " << v.dump() << '\n';
    }
}

// report.json plus the same content as key = value lines.
void write_report(const fs::path& dir, const json& doc) {
    write_json(dir / "report.json", doc);
    std::ostringstream os;
    flatten(doc, "", os);
    write_text(dir / "report.txt", os.str());
}

std::vector<std::string> report_columns(const json& report) {
    std::vector<std::string> cols;
    for (const auto& [k, v] : report.items()) {
        if (k.rfind("r_", 0) == 0 || k == "classical_residual") cols.push_back(k);
    }
    return cols;
}

// One row per continuation stage, then the limit solve (epsilon 0) when present.
struct ConvergenceTable {
    std::vector<std::string> columns;
    std::vector<std::string> rows;

    void add(const std::string& stage, double eps, int iterations, double max_res, const json& report) {
        if (columns.empty()) columns = report_columns(report);
        std::string row = stage + "," + format_number(eps) + "," + std::to_string(iterations) + "," +
                          format_number(max_res);
        for (const auto& c : columns) row += "," + format_number(report.at(c).get<double>());
        rows.push_back(row);
    }

    std::string str() const {
        std::string out = "stage,epsilon,iterations,max_residual";
        for (const auto& c : columns) out += "," + c;
        out += '\n';
        for (const auto& r : rows) out += r + '\n';
        return out;
    }
};

std::string history_csv(const std::vector<double>& history) {
    std::string out = "iteration,residual\n";
    for (std::size_t i = 0; i < history.size(); ++i) out += std::to_string(i + 1) + "," + format_number(history[i]) + "\n";
    return out;
}

void write_manifest(const fs::path& dir, const RunConfig& config, double delta_c, const std::vector<std::string>& files) {
    json m;
    m["config_hash"] = hex64(fnv1a(config.canonical));
    m["delta_c"] = delta_c;
    m["files"] = files;
    m["seed"] = config.seed;
    m["versions"] = {{"mfgstop", tool_version},
                     {"eigen", std::to_string(EIGEN_WORLD_VERSION) + "." + std::to_string(EIGEN_MAJOR_VERSION) + "." +
                                   std::to_string(EIGEN_MINOR_VERSION)}};
    write_json(dir / "manifest.json", m);
}

template <class Report>
json report_document(const RunConfig& config, const Report& report, bool limit_solved) {
    json doc;
    doc["problem"] = to_string(config.problem);
    doc["method"] = to_string(config.method);
    doc["scenario"] = config.instance->name;
    doc["report"] = report.to_json();
    doc["max_residual"] = report.max_residual();
    doc["threshold"] = config.max_residual;
    doc["limit_solved"] = limit_solved;
    return doc;
}

int gate(json& doc, double max_res, double threshold) {
    const bool pass = max_res <= threshold;
    doc["status"] = pass ? "pass" : "residual_above_threshold";
    return pass ? exit_ok : exit_residual;
}

StationarySolveConfig stationary_config(const RunConfig& c) {
    StationarySolveConfig s;
    s.tol = c.tol;
    s.max_iter = c.max_iter;
    return s;
}

EvolutiveSolveConfig evolutive_config(const RunConfig& c) {
    EvolutiveSolveConfig s;
    s.tol = c.tol;
    s.max_iter = c.max_iter;
    return s;
}

ControlSolveConfig control_config(const RunConfig& c) {
    ControlSolveConfig s;
    s.tol = c.tol;
    s.max_iter = c.max_iter;
    return s;
}

RunOutcome run_sosmfg(const RunConfig& config, const fs::path& dir, int threads) {
    const Scenario& s = *config.instance;
    const ScalarField& rho = *s.rho;
    RunOutcome out;
    ScalarField u(s.grid), m(s.grid), alpha(s.grid);
    MixedSolutionReport report;
    json extra = json::object();
    std::string convergence;
    bool limit_solved = false;
    switch (config.method) {
        case RunMethod::continuation: {
            const auto res = continuation_solve(s.cost, rho, config.schedule, stationary_config(config));
            ConvergenceTable table;
            for (std::size_t j = 0; j < res.stages.size(); ++j) {
                const auto& st = res.stages[j];
                table.add(std::to_string(j), st.epsilon, st.iterations, st.report.max_residual(), st.report.to_json());
            }
            if (res.limit_solved) table.add("limit", 0.0, 0, res.report.max_residual(), res.report.to_json());
            convergence = table.str();
            u = res.u;
            m = res.m;
            alpha = res.alpha;
            report = res.report;
            limit_solved = res.limit_solved;
            if (config.starts > 1) {
                extra["probe_gap"] = uniqueness_probe(s.cost, rho, consecutive_seeds(config.seed, config.starts),
                                                      stationary_config(config), threads);
            }
            break;
        }
        case RunMethod::monotone_iteration: {
            MonotoneIterationConfig mc;
            mc.tol = config.tol;
            mc.max_iter = config.max_iter;
            const auto res = monotone_iteration_solve(s.cost, rho, mc);
            std::string csv = "iteration,m_step\n";
            for (std::size_t i = 0; i < res.m_steps.size(); ++i) {
                csv += std::to_string(i + 1) + "," + format_number(res.m_steps[i]) + "\n";
            }
            convergence = csv;
            u = res.u;
            m = res.m;
            report = verify_mixed(u, m, s.cost, rho);
            extra["iterations"] = res.iterations;
            extra["max_m_decrease"] = res.max_m_decrease;
            extra["max_u_increase"] = res.max_u_increase;
            break;
        }
        case RunMethod::variational: {
            const PotentialOperator potential = PotentialOperator::from_cost(s.cost);
            VariationalConfig vc;
            vc.feas_tol = config.tol;
            vc.grad_tol = config.tol;
            vc.max_outer = config.max_iter;
            vc.seed = config.seed;
            const auto res = variational_minimize(potential, rho, vc);
            convergence = "outer_iterations,feasibility,stationarity\n" + std::to_string(res.outer_iterations) + "," +
                          format_number(res.feasibility) + "," + format_number(res.stationarity) + "\n";
            u = res.u;
            m = res.m;
            report = verify_mixed(u, m, s.cost, rho);
            extra["objective"] = res.objective;
            extra["euler_lagrange_min"] = res.euler_lagrange_min;
            extra["battery_size"] = res.battery_size;
            break;
        }
    }
    write_csv((dir / "u.csv").string(), u);
    write_csv((dir / "m.csv").string(), m);
    std::vector<std::string> files = {"u.csv", "m.csv"};
    if (config.method == RunMethod::continuation) {
        write_csv((dir / "alpha.csv").string(), alpha);
        files.push_back("alpha.csv");
    }
    write_text(dir / "convergence.csv", convergence);
    out.report = report_document(config, report, limit_solved);
    for (const auto& [k, v] : extra.items()) out.report[k] = v;
    out.exit_code = gate(out.report, report.max_residual(), config.max_residual);
    write_report(dir, out.report);
    files.insert(files.end(), {"convergence.csv", "report.json", "report.txt"});
    write_manifest(dir, config, report.delta_c, files);
    return out;
}

template <class Result>
ConvergenceTable stage_table(const Result& res) {
    ConvergenceTable table;
    for (std::size_t j = 0; j < res.stages.size(); ++j) {
        const auto& st = res.stages[j];
        table.add(std::to_string(j), st.epsilon, st.iterations, st.report.max_residual(), st.report.to_json());
    }
    if (res.limit_solved) table.add("limit", 0.0, res.solution.iterations, res.report.max_residual(), res.report.to_json());
    return table;
}

RunOutcome run_time_dependent(const RunConfig& config, const fs::path& dir, int threads) {
    const Scenario& s = *config.instance;
    const TimeGrid& tg = *s.timegrid;
    const ScalarField& m0 = *s.m0;
    RunOutcome out;
    std::vector<std::string> files;
    double delta_c = 0.0;
    double max_res = 0.0;
    auto dump = [&](const std::string& stem, const FieldTrajectory& traj) {
        write_trajectory(dir.string(), stem, traj);
        files.push_back(stem + ".json");
    };
    if (config.problem == ProblemKind::osmfg) {
        const auto res = osmfg_continuation(s.cost, *s.obstacle, m0, tg, config.schedule, evolutive_config(config));
        dump("u", res.solution.u);
        dump("m", res.solution.m);
        dump("alpha", res.solution.alpha);
        dump("psi", res.solution.psi);
        write_text(dir / "convergence.csv", stage_table(res).str());
        out.report = report_document(config, res.report, res.limit_solved);
        if (config.starts > 1) {
            out.report["probe_gap"] =
                evolutive_uniqueness_probe(s.cost, *s.obstacle, m0, tg, consecutive_seeds(config.seed, config.starts), evolutive_config(config), threads);
        }
        delta_c = res.report.delta_c;
        max_res = res.report.max_residual();
    } else {
        const auto res = cosmfg_coupled_solve(s.cost, *s.hamiltonian, m0, tg, config.schedule, control_config(config));
        dump("u", res.solution.u);
        dump("m", res.solution.m);
        dump("alpha", res.solution.alpha);
        dump("killing_rate", res.solution.killing_rate);
        write_text(dir / "convergence.csv", stage_table(res).str());
        out.report = report_document(config, res.report, res.limit_solved);
        out.report["hamiltonian"] = to_string(s.hamiltonian->kind());
        out.report["outside_assumptions"] = s.hamiltonian->outside_assumptions();
        if (config.starts > 1) {
            out.report["probe_gap"] =
                control_uniqueness_probe(s.cost, *s.hamiltonian, m0, tg, consecutive_seeds(config.seed, config.starts), control_config(config), threads);
        }
        delta_c = res.report.delta_c;
        max_res = res.report.max_residual();
    }
    out.exit_code = gate(out.report, max_res, config.max_residual);
    write_report(dir, out.report);
    files.insert(files.end(), {"convergence.csv", "report.json", "report.txt"});
    write_manifest(dir, config, delta_c, files);
    return out;
}

template <class Report>
bool passes(const Report& r, double threshold) {
    return r.max_residual() <= threshold;
}

void write_bundle(const fs::path& dir, const ScalarField& u, const ScalarField& m, const MixedSolutionReport& report,
                  double threshold) {
    fs::create_directories(dir);
    write_csv((dir / "u.csv").string(), u);
    write_csv((dir / "m.csv").string(), m);
    json doc = report.to_json();
    doc["max_residual"] = report.max_residual();
    doc["threshold"] = threshold;
    doc["pass"] = passes(report, threshold);
    write_report(dir, doc);
}

RunOutcome finish_scenario(const fs::path& dir, const std::string& name, ExpectedOutcome expected, bool confirmed,
                           json details) {
    RunOutcome out;
    out.output_dir = dir.string();
    out.report = {{"scenario", name},
                  {"expected_outcome", to_string(expected)},
                  {"confirmed", confirmed},
                  {"details", std::move(details)}};
    write_json(dir / "evidence.json", out.report);
    out.exit_code = confirmed ? exit_ok : exit_residual;
    out.message = std::string(confirmed ? "confirmed " : "not confirmed ") + to_string(expected);
    return out;
}

constexpr double stationary_threshold = 1e-6;
constexpr double evolutive_threshold = 1e-5;
constexpr double stationary_probe_threshold = 1e-5;
constexpr double evolutive_probe_threshold = 1e-4;
constexpr int probe_starts = 5;
constexpr std::uint64_t probe_seed = 1;

RunOutcome standard_scenario(const std::string& name, const fs::path& dir, int threads) {
    const Scenario s = scenario_standard(name);
    RunConfig c;
    c.problem = s.problem;
    c.instance = s;
    c.schedule = geometric_schedule();
    c.tol = 1e-10;
    c.max_iter = 300;
    c.output = name;
    c.seed = probe_seed;
    c.starts = s.grid.dim() == 1 ? probe_starts : 1;
    c.max_residual = s.problem == ProblemKind::sosmfg ? stationary_threshold : evolutive_threshold;
    c.canonical = "scenario:" + name;

    if (s.expected == ExpectedOutcome::multiple_classical) {
        // Order-reversing cost: the ordered iteration gives the smallest classical
        // solution, which must lie below the continuation solution.
        MonotoneIterationConfig mc;
        const auto mono = monotone_iteration_solve(s.cost, *s.rho, mc);
        const auto cont = continuation_solve(s.cost, *s.rho, c.schedule, stationary_config(c));
        const auto rep_mono = verify_mixed(mono.u, mono.m, s.cost, *s.rho);
        write_bundle(dir / "monotone_iteration", mono.u, mono.m, rep_mono, stationary_threshold);
        write_bundle(dir / "continuation", cont.u, cont.m, cont.report, stationary_threshold);
        double excess = 0.0;
        for (std::size_t i = 0; i < mono.m.size(); ++i) excess = std::max(excess, mono.m[i] - cont.m[i]);
        const bool ok = passes(rep_mono, stationary_threshold) && passes(cont.report, stationary_threshold) &&
                        rep_mono.classical_residual <= stationary_threshold && mono.max_m_decrease <= mc.order_tol &&
                        mono.max_u_increase <= mc.order_tol && excess <= stationary_threshold;
        return finish_scenario(dir, name, s.expected, ok,
                               {{"monotone_iterations", mono.iterations},
                                {"max_m_decrease", mono.max_m_decrease},
                                {"max_u_increase", mono.max_u_increase},
                                {"smallest_classical_excess", excess},
                                {"classical_residual", rep_mono.classical_residual}});
    }

    const RunOutcome res = run(c, dir.parent_path().string(), threads);
    const double probe = res.report.value("probe_gap", 0.0);
    const double probe_tol = s.problem == ProblemKind::sosmfg ? stationary_probe_threshold : evolutive_probe_threshold;
    const bool ok = res.exit_code == exit_ok && probe <= probe_tol;
    return finish_scenario(dir, name, s.expected, ok,
                           {{"max_residual", res.report.at("max_residual")},
                            {"threshold", c.max_residual},
                            {"probe_starts", c.starts},
                            {"probe_gap", probe}});
}

RunOutcome nonuniqueness_scenario(const fs::path& dir) {
    const auto ev = scenario_nonuniqueness();
    const Grid& g = ev.scenario.grid;
    write_bundle(dir / "solution_a", ScalarField(g), ScalarField(g), ev.report_zero, stationary_threshold);
    write_bundle(dir / "solution_b", ev.u_star, ev.m_star, ev.report_star, stationary_threshold);
    const bool ok = passes(ev.report_zero, stationary_threshold) && passes(ev.report_star, stationary_threshold) &&
                    ev.separation >= 0.5 * ev.m_star.max_abs();
    return finish_scenario(dir, ev.scenario.name, ev.scenario.expected, ok,
                           {{"separation", ev.separation},
                            {"m_star_sup", ev.m_star.max_abs()},
                            {"f_at_zero_error", ev.f_at_zero_error},
                            {"f_at_m_star_error", ev.f_at_m_star_error}});
}

RunOutcome nonexistence_scenario(const fs::path& dir, bool ball) {
    const auto ev = scenario_nonexistence(ball);
    write_bundle(dir / "limit", ev.run.u, ev.run.m, ev.run.report, evolutive_threshold);
    std::string table = "epsilon,classical_residual,r_contact,max_residual\n";
    bool ok = ev.run.limit_solved && !ev.stages.empty();
    for (const auto& st : ev.stages) {
        table += format_number(st.epsilon) + "," + format_number(st.classical_residual) + "," +
                 format_number(st.r_contact) + "," + format_number(st.max_residual) + "\n";
        ok = ok && st.max_residual <= evolutive_threshold && st.classical_residual >= 10.0 * st.r_contact &&
             st.classical_residual > 0.0;
    }
    write_text(dir / "residual_floor.csv", table);
    return finish_scenario(dir, ev.scenario.name, ev.scenario.expected, ok,
                           {{"stages", ev.stages.size()}, {"base_error", ev.base_error}, {"ball", ball}});
}

RunOutcome obstacle_nonuniqueness_scenario(const fs::path& dir) {
    const Scenario base = scenario_standard("monotone_1d");
    const auto ev = scenario_obstacle_nonuniqueness(base.cost, *base.rho);
    const Grid& g = base.grid;
    write_bundle(dir / "solution_star", ev.u_star, ev.m_star, ev.report_star, stationary_threshold);
    write_bundle(dir / "solution_zero", ev.u_lower, ScalarField(g), ev.report_zero, stationary_threshold);
    const bool ok = passes(ev.report_star, stationary_threshold) && passes(ev.report_zero, stationary_threshold) &&
                    ev.m_star.max_abs() > 0.0;
    return finish_scenario(dir, ev.scenario.name, ev.scenario.expected, ok,
                           {{"separation", ev.m_star.max_abs()},
                            {"ratio_floor", ev.ratio_floor},
                            {"floored_nodes", ev.floored_nodes}});
}

}  // namespace

const char* to_string(RunMethod method) { return method_names[static_cast<int>(method)]; }

std::uint64_t fnv1a(std::string_view bytes) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (const unsigned char c : bytes) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

std::string output_root(const std::string& fallback) {
    const char* env = std::getenv("MFGSTOP_OUT");
    return env && *env ? std::string(env) : fallback;
}

RunConfig parse_run_config(std::string_view text) {
    json doc;
    try {
        doc = json::parse(text);
    } catch (const json::parse_error& e) {
        const auto upto = std::min<std::size_t>(e.byte, text.size());
        const int line = 1 + static_cast<int>(std::count(text.begin(), text.begin() + static_cast<std::ptrdiff_t>(upto), '\n'));
        throw ConfigError("config:" + std::to_string(line) + ": malformed JSON (" + e.what() + ")");
    }
    const Parser p(text);
    if (!doc.is_object()) p.fail("", "config must be a JSON object");

    RunConfig c;
    c.problem = static_cast<ProblemKind>(p.choice(doc, "problem", problem_names));
    c.method = static_cast<RunMethod>(p.choice(doc, "method", method_names));
    if (c.method != RunMethod::continuation && c.problem != ProblemKind::sosmfg) {
        p.fail("method", std::string("method '") + to_string(c.method) + "' only applies to problem 'sosmfg'");
    }
    if (doc.contains("scenario")) {
        for (const char* key : {"grid", "timegrid", "cost", "rho", "m0", "obstacle", "hamiltonian"}) {
            if (doc.contains(key)) p.fail(key, std::string("'") + key + "' conflicts with 'scenario'");
        }
        const std::string name = p.string(doc, "scenario");
        try {
            c.instance = scenario_standard(name);
        } catch (const std::invalid_argument& e) {
            p.fail("scenario", e.what());
        }
        if (c.instance->problem != c.problem) {
            p.fail("problem", "scenario '" + name + "' is a " + to_string(c.instance->problem) + " instance");
        }
    } else {
        try {
            c.instance = p.instance(doc, c.problem);
        } catch (const ConfigError&) {
            throw;
        } catch (const std::invalid_argument& e) {
            p.fail("cost", e.what());
        }
    }
    if (c.method == RunMethod::continuation) c.schedule = p.schedule(p.need(doc, "epsilon_schedule"));
    const json& solver = p.need(doc, "solver");
    c.tol = p.positive(solver, "tol");
    c.max_iter = p.count(solver, "max_iter");
    c.max_residual = p.positive(p.need(doc, "acceptance"), "max_residual");
    c.output = p.string(doc, "output");
    if (c.output.empty()) p.fail("output", "'output' must not be empty");
    const json& seed = p.need(doc, "seed");
    if (!seed.is_number_unsigned()) p.fail("seed", "'seed' must be a nonnegative integer");
    c.seed = seed.get<std::uint64_t>();
    if (doc.contains("starts")) c.starts = p.count(doc, "starts");
    c.canonical = doc.dump();
    return c;
}

RunConfig load_run_config(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw ConfigError("config:0: cannot read '" + path + "'");
    std::ostringstream ss;
    ss << is.rdbuf();
    return parse_run_config(ss.str());
}

RunOutcome run(const RunConfig& config, const std::string& root, int parallel_starts) {
    const fs::path dir = fs::path(root) / config.output;
    fs::create_directories(dir);
    try {
        RunOutcome out = config.problem == ProblemKind::sosmfg ? run_sosmfg(config, dir, parallel_starts)
                                                               : run_time_dependent(config, dir, parallel_starts);
        out.output_dir = dir.string();
        out.message = out.exit_code == exit_ok ? "converged; residuals within threshold"
                                               : "residual above threshold";
        return out;
    } catch (const ConvergenceError& e) {
        RunOutcome out;
        out.exit_code = exit_not_converged;
        out.output_dir = dir.string();
        out.message = e.what();
        out.report = {{"problem", to_string(config.problem)},
                      {"method", to_string(config.method)},
                      {"scenario", config.instance->name},
                      {"status", "not_converged"},
                      {"error", e.what()},
                      {"last_residual", e.last_residual()}};
        write_text(dir / "convergence.csv", history_csv(e.history()));
        write_report(dir, out.report);
        write_manifest(dir, config, 0.0, {"convergence.csv", "report.json", "report.txt"});
        return out;
    }
}

RunOutcome verify(const std::string& u_path, const std::string& m_path, const RunConfig& config) {
    const Scenario& s = *config.instance;
    RunOutcome out;
    double max_res = 0.0;
    if (config.problem == ProblemKind::sosmfg) {
        const auto report = verify_mixed(read_csv(u_path, s.grid), read_csv(m_path, s.grid), s.cost, *s.rho);
        out.report = report_document(config, report, false);
        max_res = report.max_residual();
    } else {
        const TimeGrid& tg = *s.timegrid;
        const FieldTrajectory u = read_trajectory(u_path, s.grid, tg);
        const FieldTrajectory m = read_trajectory(m_path, s.grid, tg);
        if (config.problem == ProblemKind::osmfg) {
            const auto report = verify_mixed_evolutive(u, m, s.cost, *s.obstacle, *s.m0);
            out.report = report_document(config, report, false);
            max_res = report.max_residual();
        } else {
            const auto report = verify_cosmfg(u, m, s.cost, *s.hamiltonian, *s.m0);
            out.report = report_document(config, report, false);
            max_res = report.max_residual();
        }
    }
    out.report.erase("limit_solved");
    out.exit_code = gate(out.report, max_res, config.max_residual);
    out.message = out.exit_code == exit_ok ? "residuals within threshold" : "residual above threshold";
    return out;
}

std::vector<std::string> evidence_scenario_names() {
    auto names = scenario_names();
    names.insert(names.end(), {"nonuniqueness", "nonexistence", "nonexistence_ball", "obstacle_nonuniqueness"});
    return names;
}

RunOutcome run_scenario(const std::string& name, const std::string& directory, int parallel_starts) {
    const auto names = evidence_scenario_names();
    if (std::find(names.begin(), names.end(), name) == names.end()) {
        throw std::invalid_argument("unknown scenario '" + name + "'");
    }
    const fs::path dir = fs::path(directory) / name;
    fs::create_directories(dir);
    if (name == "nonuniqueness") return nonuniqueness_scenario(dir);
    if (name == "nonexistence") return nonexistence_scenario(dir, false);
    if (name == "nonexistence_ball") return nonexistence_scenario(dir, true);
    if (name == "obstacle_nonuniqueness") return obstacle_nonuniqueness_scenario(dir);
    return standard_scenario(name, dir, parallel_starts);
}

}  // namespace mfgstop
