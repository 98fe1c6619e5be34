#pragma once

#include <Eigen/Dense>
#include <stdexcept>
#include <string>

namespace fracdiff {

using Eigen::ArrayXd;
using Eigen::ArrayXXd;
using Eigen::MatrixXd;
using Eigen::VectorXd;

// Row n holds the spatial field at time node n.

// Thrown on malformed input; maps to exit code 2 in the command-line driver.
struct ValidationError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

// Thrown when an iteration fails to converge; exit code 3.
struct SolverError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Thrown when a reconstruction degenerates; exit code 4.
struct IllPosedError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct TimeGrid {
  double T = 1.0;
  int n_steps = 1;

  double tau() const { return T / n_steps; }
  int n_nodes() const { return n_steps + 1; }
  double node(int n) const { return tau() * n; }
  double midpoint(int j) const { return tau() * (j + 0.5); }

  ArrayXd nodes() const {
    ArrayXd t(n_nodes());
    for (int n = 0; n < n_nodes(); ++n) t[n] = node(n);
    return t;
  }

  ArrayXd midpoints() const {
    ArrayXd m(n_steps);
    for (int j = 0; j < n_steps; ++j) m[j] = midpoint(j);
    return m;
  }
};

inline void validate_time_grid(const TimeGrid& g) {
  if (!(g.T > 0.0)) throw ValidationError("time grid: T must be positive");
  if (g.n_steps < 1) throw ValidationError("time grid: need at least one step");
}

}  // namespace fracdiff
