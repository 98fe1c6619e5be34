#pragma once

#include <string>
#include <utility>
#include <vector>

#include "fracdiff/domain.hpp"
#include "fracdiff/reactions.hpp"
#include "fracdiff/types.hpp"

namespace fracdiff {

struct Trajectory {
  TimeGrid time_grid;
  SpaceGrid space_grid;
  // rows = time nodes, cols = space nodes; row 0 equals u0
  MatrixXd values;
  SpatialField u0;
};

void validate_trajectory(const Trajectory& traj);

struct SolveReport {
  std::vector<int> newton_iterations;
  std::vector<double> residuals;
  double wall_seconds = 0.0;
  double positivity_min = 0.0;
  std::vector<std::string> flags;
  // Picard extras: the measured composite contraction bound (the gate), the
  // looser closed-form product bound, the composite-map norm and shift
  double contraction = 0.0;
  double contraction_closed = 0.0;
  double resolvent_norm = 0.0;
  double shift = 0.0;
  int picard_iterations = 0;
};

// Implicit L1 stepping for D^beta[u - u0] = A u + f(u,t,x) with B u = g:
// backward treatment of A and f, damped Newton per step, direct banded solve
// in 1D and least-squares CG in 2D.
std::pair<Trajectory, SolveReport> solve_l1(const EllipticOperator& op,
                                            const BoundaryCondition& bc,
                                            const Reaction& r, const SpatialField& u0,
                                            double beta, const TimeGrid& tg, double tol);

// Whole-trajectory fixed-point iteration anchored at the time-constant lift
// u0; refuses when the contraction estimate reaches 1, reporting the largest
// admissible horizon. Requires time-constant boundary data.
std::pair<Trajectory, SolveReport> solve_picard(const EllipticOperator& op,
                                                const BoundaryCondition& bc,
                                                const Reaction& r, const SpatialField& u0,
                                                double beta, const TimeGrid& tg,
                                                double rho, int max_iters,
                                                double tol = 1e-12);

// central difference quotients in t (one-sided at the ends)
Trajectory time_derivative(const Trajectory& traj);

// the explicit L1 history term at step n, rebuilt from stored values; used
// internally by solve_l1 and exposed so its bookkeeping can be audited
ArrayXd l1_history_term(const Trajectory& traj, double beta, int n);

}  // namespace fracdiff
