#pragma once

#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace mfgstop {

/// An iterative solver stopped before meeting its tolerance. Carries the
/// residual history so callers can report partial progress.
class ConvergenceError : public std::runtime_error {
public:
    ConvergenceError(const std::string& what, std::vector<double> history)
        : std::runtime_error(what), history_(std::move(history)) {}

    const std::vector<double>& history() const { return history_; }
    double last_residual() const { return history_.empty() ? -1.0 : history_.back(); }

private:
    std::vector<double> history_;
};

}  // namespace mfgstop
