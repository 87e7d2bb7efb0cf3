#pragma once

#include <array>
#include <cstddef>
#include <iosfwd>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace mfgstop {

/// Raised when two fields, masks or trajectories live on different grids.
class ShapeError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// Uniform tensor grid on a rectangle with homogeneous Dirichlet boundary.
///
/// Only interior nodes are unknowns. Nodes are ordered lexicographically with
/// axis 0 running fastest, so node (i, j) has flat index i + n0 * j.
class Grid {
public:
    struct Interval {
        double lo = 0.0;
        double hi = 1.0;
        bool operator==(const Interval&) const = default;
    };

    static Grid make(int dim, std::span<const Interval> bounds, std::span<const int> n_interior);
    static Grid line(double lo, double hi, int n);
    static Grid square(double lo, double hi, int n0, int n1);

    int dim() const { return dim_; }
    const Interval& bounds(int axis) const { return bounds_[axis]; }
    int n(int axis) const { return n_[axis]; }
    double h(int axis) const { return h_[axis]; }
    std::size_t size() const { return size_; }

    /// Quadrature weight of one node: product of spacings.
    double cell_volume() const;

    double coord(std::size_t node, int axis) const;
    std::array<int, 2> multi_index(std::size_t node) const;
    std::size_t flat_index(int i0, int i1 = 0) const;

    bool operator==(const Grid&) const = default;

private:
    Grid() = default;

    int dim_ = 1;
    std::array<Interval, 2> bounds_{};
    std::array<int, 2> n_{1, 1};
    std::array<double, 2> h_{1.0, 1.0};
    std::size_t size_ = 0;
};

/// Uniform partition of [0, T]; slice k sits at t = k * dt.
class TimeGrid {
public:
    TimeGrid(double horizon, int n_steps);

    double horizon() const { return horizon_; }
    int n_steps() const { return n_steps_; }
    double dt() const { return horizon_ / n_steps_; }
    double time(int k) const { return k * dt(); }

    bool operator==(const TimeGrid&) const = default;

private:
    double horizon_;
    int n_steps_;
};

/// Nodal values on the interior nodes of a grid.
class ScalarField {
public:
    explicit ScalarField(const Grid& grid, double value = 0.0);
    ScalarField(const Grid& grid, std::vector<double> values);

    template <typename Fn>
    static ScalarField from_function(const Grid& grid, Fn&& fn) {
        ScalarField out(grid);
        for (std::size_t i = 0; i < grid.size(); ++i) {
            out[i] = grid.dim() == 1 ? fn(grid.coord(i, 0), 0.0)
                                     : fn(grid.coord(i, 0), grid.coord(i, 1));
        }
        return out;
    }

    const Grid& grid() const { return grid_; }
    std::size_t size() const { return values_.size(); }
    double& operator[](std::size_t i) { return values_[i]; }
    double operator[](std::size_t i) const { return values_[i]; }
    std::span<double> values() { return values_; }
    std::span<const double> values() const { return values_; }
    std::vector<double>& data() { return values_; }
    const std::vector<double>& data() const { return values_; }

    double max_abs() const;
    double min() const;
    double max() const;

    ScalarField& operator+=(const ScalarField& other);
    ScalarField& operator-=(const ScalarField& other);
    ScalarField& operator*=(double s);

    bool operator==(const ScalarField&) const = default;

private:
    Grid grid_;
    std::vector<double> values_;
};

ScalarField operator+(ScalarField a, const ScalarField& b);
ScalarField operator-(ScalarField a, const ScalarField& b);
ScalarField operator*(double s, ScalarField a);

/// One ScalarField per time slice 0..n_steps, all on the same grid.
class FieldTrajectory {
public:
    FieldTrajectory(const TimeGrid& timegrid, const Grid& grid, double value = 0.0);
    FieldTrajectory(const TimeGrid& timegrid, std::vector<ScalarField> slices);

    const TimeGrid& timegrid() const { return timegrid_; }
    const Grid& grid() const { return slices_.front().grid(); }
    std::size_t n_slices() const { return slices_.size(); }
    ScalarField& operator[](std::size_t k) { return slices_[k]; }
    const ScalarField& operator[](std::size_t k) const { return slices_[k]; }
    const std::vector<ScalarField>& slices() const { return slices_; }

    double max_abs() const;

    bool operator==(const FieldTrajectory&) const = default;

private:
    TimeGrid timegrid_;
    std::vector<ScalarField> slices_;
};

FieldTrajectory operator-(const FieldTrajectory& a, const FieldTrajectory& b);

/// Boolean flag per interior node.
class NodeMask {
public:
    explicit NodeMask(const Grid& grid, bool value = false);
    NodeMask(const Grid& grid, std::vector<bool> flags);

    const Grid& grid() const { return grid_; }
    std::size_t size() const { return flags_.size(); }
    bool operator[](std::size_t i) const { return flags_[i]; }
    void set(std::size_t i, bool v) { flags_[i] = v; }
    std::size_t count() const;
    NodeMask complement() const;

    bool operator==(const NodeMask&) const = default;

private:
    Grid grid_;
    std::vector<bool> flags_;
};

/// Continuation / contact partition of the interior nodes.
struct NodeClassification {
    NodeMask continuation;
    NodeMask contact;
};

void require_same_grid(const Grid& a, const Grid& b, const char* what);

/// (A m)_i = c0 m_i + sum over axes of (2 m_i - m_{i-} - m_{i+}) / h^2, with
/// missing neighbours read as zero. c0 = 1 when `zero_order` is set, else 0.
ScalarField apply_elliptic(const ScalarField& m, bool zero_order = true);

/// Discrete L2 pairing: sum f_i g_i times the cell volume.
double inner(const ScalarField& f, const ScalarField& g);

double sup_distance(const ScalarField& a, const ScalarField& b);
double sup_distance(const FieldTrajectory& a, const FieldTrajectory& b);

/// Continuation set {u < psi - delta_c} and its complement.
NodeClassification classify_nodes(const ScalarField& u, const ScalarField& psi, double delta_c);

/// Default contact threshold: 1e-8 * ||psi - u||_inf, never below 1e-12.
double default_contact_threshold(const ScalarField& u, const ScalarField& psi);

/// CSV with header `x[,y],value`, one row per interior node.
void write_csv(std::ostream& os, const ScalarField& field);
void write_csv(const std::string& path, const ScalarField& field);
/// Reads a field written by write_csv and checks it against `grid`.
ScalarField read_csv(std::istream& is, const Grid& grid);
ScalarField read_csv(const std::string& path, const Grid& grid);

/// Writes slice_<k>.csv files plus an index manifest `trajectory.json`.
void write_trajectory(const std::string& directory, const std::string& stem, const FieldTrajectory& traj);
FieldTrajectory read_trajectory(const std::string& manifest_path, const Grid& grid, const TimeGrid& timegrid);

}  // namespace mfgstop
