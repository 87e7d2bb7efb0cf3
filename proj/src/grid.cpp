#include "mfgstop/grid.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <sstream>

#include <json.hpp>

namespace mfgstop {

Grid Grid::make(int dim, std::span<const Interval> bounds, std::span<const int> n_interior) {
    if (dim != 1 && dim != 2) {
        throw std::invalid_argument("grid dimension must be 1 or 2, got " + std::to_string(dim));
    }
    if (bounds.size() != static_cast<std::size_t>(dim) || n_interior.size() != static_cast<std::size_t>(dim)) {
        throw std::invalid_argument("grid needs one interval and one node count per axis");
    }
    Grid g;
    g.dim_ = dim;
    g.size_ = 1;
    for (int a = 0; a < dim; ++a) {
        if (n_interior[a] < 3) {
            throw std::invalid_argument("grid needs at least 3 interior nodes per axis, got " +
                                        std::to_string(n_interior[a]));
        }
        if (!(bounds[a].hi > bounds[a].lo)) {
            throw std::invalid_argument("degenerate grid interval on axis " + std::to_string(a));
        }
        g.bounds_[a] = bounds[a];
        g.n_[a] = n_interior[a];
        g.h_[a] = (bounds[a].hi - bounds[a].lo) / (n_interior[a] + 1);
        g.size_ *= static_cast<std::size_t>(n_interior[a]);
    }
    return g;
}

Grid Grid::line(double lo, double hi, int n) {
    const Interval b[1] = {{lo, hi}};
    const int nn[1] = {n};
    return make(1, b, nn);
}

Grid Grid::square(double lo, double hi, int n0, int n1) {
    const Interval b[2] = {{lo, hi}, {lo, hi}};
    const int nn[2] = {n0, n1};
    return make(2, b, nn);
}

double Grid::cell_volume() const {
    double v = 1.0;
    for (int a = 0; a < dim_; ++a) v *= h_[a];
    return v;
}

std::array<int, 2> Grid::multi_index(std::size_t node) const {
    if (dim_ == 1) return {static_cast<int>(node), 0};
    return {static_cast<int>(node % n_[0]), static_cast<int>(node / n_[0])};
}

std::size_t Grid::flat_index(int i0, int i1) const {
    return static_cast<std::size_t>(i0) + static_cast<std::size_t>(n_[0]) * static_cast<std::size_t>(i1);
}

double Grid::coord(std::size_t node, int axis) const {
    const auto idx = multi_index(node);
    return bounds_[axis].lo + (idx[axis] + 1) * h_[axis];
}

TimeGrid::TimeGrid(double horizon, int n_steps) : horizon_(horizon), n_steps_(n_steps) {
    if (!(horizon > 0.0) || n_steps < 1) {
        throw std::invalid_argument("time grid needs T > 0 and at least one step");
    }
}

void require_same_grid(const Grid& a, const Grid& b, const char* what) {
    if (!(a == b)) throw ShapeError(std::string(what) + ": fields live on different grids");
}

// ScalarField ---------------------------------------------------------------

ScalarField::ScalarField(const Grid& grid, double value) : grid_(grid), values_(grid.size(), value) {}

ScalarField::ScalarField(const Grid& grid, std::vector<double> values) : grid_(grid), values_(std::move(values)) {
    if (values_.size() != grid_.size()) {
        throw ShapeError("field has " + std::to_string(values_.size()) + " values, grid has " +
                         std::to_string(grid_.size()) + " interior nodes");
    }
}

double ScalarField::max_abs() const {
    double m = 0.0;
    for (double v : values_) m = std::max(m, std::abs(v));
    return m;
}

double ScalarField::min() const { return *std::min_element(values_.begin(), values_.end()); }
double ScalarField::max() const { return *std::max_element(values_.begin(), values_.end()); }

ScalarField& ScalarField::operator+=(const ScalarField& other) {
    require_same_grid(grid_, other.grid_, "field addition");
    for (std::size_t i = 0; i < values_.size(); ++i) values_[i] += other.values_[i];
    return *this;
}

ScalarField& ScalarField::operator-=(const ScalarField& other) {
    require_same_grid(grid_, other.grid_, "field subtraction");
    for (std::size_t i = 0; i < values_.size(); ++i) values_[i] -= other.values_[i];
    return *this;
}

ScalarField& ScalarField::operator*=(double s) {
    for (double& v : values_) v *= s;
    return *this;
}

ScalarField operator+(ScalarField a, const ScalarField& b) { return a += b; }
ScalarField operator-(ScalarField a, const ScalarField& b) { return a -= b; }
ScalarField operator*(double s, ScalarField a) { return a *= s; }

// FieldTrajectory -----------------------------------------------------------

FieldTrajectory::FieldTrajectory(const TimeGrid& timegrid, const Grid& grid, double value)
    : timegrid_(timegrid), slices_(timegrid.n_steps() + 1, ScalarField(grid, value)) {}

FieldTrajectory::FieldTrajectory(const TimeGrid& timegrid, std::vector<ScalarField> slices)
    : timegrid_(timegrid), slices_(std::move(slices)) {
    if (slices_.size() != static_cast<std::size_t>(timegrid_.n_steps() + 1)) {
        throw ShapeError("trajectory needs n_steps + 1 slices");
    }
    for (const auto& s : slices_) require_same_grid(slices_.front().grid(), s.grid(), "trajectory");
}

double FieldTrajectory::max_abs() const {
    double m = 0.0;
    for (const auto& s : slices_) m = std::max(m, s.max_abs());
    return m;
}

FieldTrajectory operator-(const FieldTrajectory& a, const FieldTrajectory& b) {
    if (!(a.timegrid() == b.timegrid())) throw ShapeError("trajectory difference: time grids differ");
    std::vector<ScalarField> out;
    out.reserve(a.n_slices());
    for (std::size_t k = 0; k < a.n_slices(); ++k) out.push_back(a[k] - b[k]);
    return FieldTrajectory(a.timegrid(), std::move(out));
}

// NodeMask ------------------------------------------------------------------

NodeMask::NodeMask(const Grid& grid, bool value) : grid_(grid), flags_(grid.size(), value) {}

NodeMask::NodeMask(const Grid& grid, std::vector<bool> flags) : grid_(grid), flags_(std::move(flags)) {
    if (flags_.size() != grid_.size()) throw ShapeError("mask length does not match grid");
}

std::size_t NodeMask::count() const { return static_cast<std::size_t>(std::count(flags_.begin(), flags_.end(), true)); }

NodeMask NodeMask::complement() const {
    NodeMask out(grid_);
    for (std::size_t i = 0; i < flags_.size(); ++i) out.flags_[i] = !flags_[i];
    return out;
}

// Operators -----------------------------------------------------------------

ScalarField apply_elliptic(const ScalarField& m, bool zero_order) {
    const Grid& g = m.grid();
    ScalarField out(g);
    const double c0 = zero_order ? 1.0 : 0.0;
    for (std::size_t node = 0; node < g.size(); ++node) {
        const auto idx = g.multi_index(node);
        double acc = c0 * m[node];
        for (int a = 0; a < g.dim(); ++a) {
            const double inv_h2 = 1.0 / (g.h(a) * g.h(a));
            const std::size_t stride = a == 0 ? 1 : static_cast<std::size_t>(g.n(0));
            const double left = idx[a] > 0 ? m[node - stride] : 0.0;
            const double right = idx[a] + 1 < g.n(a) ? m[node + stride] : 0.0;
            acc += (2.0 * m[node] - left - right) * inv_h2;
        }
        out[node] = acc;
    }
    return out;
}

double inner(const ScalarField& f, const ScalarField& g) {
    require_same_grid(f.grid(), g.grid(), "inner");
    double acc = 0.0;
    for (std::size_t i = 0; i < f.size(); ++i) acc += f[i] * g[i];
    return acc * f.grid().cell_volume();
}

double sup_distance(const ScalarField& a, const ScalarField& b) {
    require_same_grid(a.grid(), b.grid(), "sup_distance");
    double d = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) d = std::max(d, std::abs(a[i] - b[i]));
    return d;
}

double sup_distance(const FieldTrajectory& a, const FieldTrajectory& b) {
    if (a.n_slices() != b.n_slices()) throw ShapeError("sup_distance: slice counts differ");
    double d = 0.0;
    for (std::size_t k = 0; k < a.n_slices(); ++k) d = std::max(d, sup_distance(a[k], b[k]));
    return d;
}

NodeClassification classify_nodes(const ScalarField& u, const ScalarField& psi, double delta_c) {
    require_same_grid(u.grid(), psi.grid(), "classify_nodes");
    if (delta_c < 0.0) throw std::invalid_argument("contact threshold must be nonnegative");
    NodeMask cont(u.grid());
    for (std::size_t i = 0; i < u.size(); ++i) cont.set(i, u[i] < psi[i] - delta_c);
    return {cont, cont.complement()};
}

double default_contact_threshold(const ScalarField& u, const ScalarField& psi) {
    return std::max(1e-8 * sup_distance(u, psi), 1e-12);
}

// CSV -----------------------------------------------------------------------

namespace {

std::string format_double(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

std::vector<double> parse_row(const std::string& line) {
    std::vector<double> out;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) {
        std::size_t pos = 0;
        try {
            out.push_back(std::stod(cell, &pos));
        } catch (const std::exception&) {
            throw std::invalid_argument("malformed CSV cell '" + cell + "'");
        }
    }
    return out;
}

}  // namespace

void write_csv(std::ostream& os, const ScalarField& field) {
    const Grid& g = field.grid();
    os << (g.dim() == 1 ? "x,value\n" : "x,y,value\n");
    for (std::size_t i = 0; i < field.size(); ++i) {
        os << format_double(g.coord(i, 0)) << ',';
        if (g.dim() == 2) os << format_double(g.coord(i, 1)) << ',';
        os << format_double(field[i]) << '\n';
    }
}

void write_csv(const std::string& path, const ScalarField& field) {
    std::ofstream os(path);
    if (!os) throw std::runtime_error("cannot open " + path + " for writing");
    write_csv(os, field);
}

ScalarField read_csv(std::istream& is, const Grid& grid) {
    std::string header;
    if (!std::getline(is, header) || header.empty()) throw ShapeError("empty field file");
    const std::string expected = grid.dim() == 1 ? "x,value" : "x,y,value";
    if (header != expected) throw ShapeError("field header '" + header + "' does not match grid dimension");
    std::vector<double> values;
    std::string line;
    std::size_t row = 0;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        const auto cells = parse_row(line);
        if (cells.size() != static_cast<std::size_t>(grid.dim() + 1)) {
            throw ShapeError("field row " + std::to_string(row + 2) + " has wrong column count");
        }
        if (row >= grid.size()) throw ShapeError("field has more rows than grid nodes");
        for (int a = 0; a < grid.dim(); ++a) {
            if (std::abs(cells[a] - grid.coord(row, a)) > 1e-9 * (1.0 + std::abs(cells[a]))) {
                throw ShapeError("field row " + std::to_string(row + 2) + " coordinates do not match grid");
            }
        }
        values.push_back(cells.back());
        ++row;
    }
    if (values.size() != grid.size()) {
        throw ShapeError("field has " + std::to_string(values.size()) + " rows, grid has " +
                         std::to_string(grid.size()) + " nodes");
    }
    return ScalarField(grid, std::move(values));
}

ScalarField read_csv(const std::string& path, const Grid& grid) {
    std::ifstream is(path);
    if (!is) throw ShapeError("cannot open field file " + path);
    return read_csv(is, grid);
}

void write_trajectory(const std::string& directory, const std::string& stem, const FieldTrajectory& traj) {
    namespace fs = std::filesystem;
    fs::create_directories(directory);
    nlohmann::json manifest;
    manifest["horizon"] = traj.timegrid().horizon();
    manifest["n_steps"] = traj.timegrid().n_steps();
    manifest["slices"] = nlohmann::json::array();
    for (std::size_t k = 0; k < traj.n_slices(); ++k) {
        const std::string name = stem + "_" + std::to_string(k) + ".csv";
        write_csv((fs::path(directory) / name).string(), traj[k]);
        manifest["slices"].push_back({{"index", k}, {"t", traj.timegrid().time(static_cast<int>(k))}, {"file", name}});
    }
    std::ofstream os(fs::path(directory) / (stem + ".json"));
    os << manifest.dump(2) << '\n';
}

FieldTrajectory read_trajectory(const std::string& manifest_path, const Grid& grid, const TimeGrid& timegrid) {
    namespace fs = std::filesystem;
    std::ifstream is(manifest_path);
    if (!is) throw ShapeError("cannot open trajectory manifest " + manifest_path);
    nlohmann::json manifest;
    try {
        is >> manifest;
    } catch (const nlohmann::json::exception& e) {
        throw ShapeError(std::string("malformed trajectory manifest: ") + e.what());
    }
    if (manifest.value("n_steps", -1) != timegrid.n_steps()) throw ShapeError("trajectory step count mismatch");
    const fs::path base = fs::path(manifest_path).parent_path();
    std::vector<ScalarField> slices;
    for (const auto& entry : manifest.at("slices")) {
        slices.push_back(read_csv((base / entry.at("file").get<std::string>()).string(), grid));
    }
    return FieldTrajectory(timegrid, std::move(slices));
}

}  // namespace mfgstop
