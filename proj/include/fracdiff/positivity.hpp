#pragma once

#include <string>
#include <vector>

#include "fracdiff/forward.hpp"
#include "fracdiff/fracops.hpp"
#include "fracdiff/reactions.hpp"

namespace fracdiff {

// one audited hypothesis; witness describes the fitted constants on success or
// the offending sample on failure
struct HypothesisCheck {
  std::string name;
  bool passed = false;
  std::string witness;
};

// a node where the state is at zero while an earlier value at the same
// location was not: the memory term forbids returning to zero from a
// positive past
struct ZeroHistoryViolation {
  int step = 0;
  int node = 0;
  double u_here = 0.0;
  int earlier_step = 0;
  double u_earlier = 0.0;
};

struct PositivityReport {
  std::vector<HypothesisCheck> hypotheses;
  // all hypotheses passed, so the sign conclusions below are in scope
  bool covered = false;
  std::string scope_note;

  // minimum of the state over every node with its location
  double min_value = 0.0;
  int min_step = 0;
  int min_node = 0;
  bool nonnegative = false;

  std::vector<ZeroHistoryViolation> zero_history_violations;

  // at the global minimum: either the value is no worse than min{0, min u0}
  // or the spatial gradient there is nonzero
  double min_gradient = 0.0;
  bool minimum_principle_ok = false;

  // thresholds actually used: tol for the sign check, the scaled trigger for
  // "state is at zero", and the history budget (10x trigger) for earlier values
  double tol = 0.0;
  double zero_trigger = 0.0;
  double history_budget = 0.0;
  std::vector<std::string> caveats;
};

// Lattice audit of the sign-preservation principle for a solved trajectory:
// checks the kernel monotonicity, the one-sided reaction bound near zero
// state, and the signs of the initial and boundary data, then verifies that
// the state stays nonnegative and that zero states have no positive history.
// Always returns a report; failed hypotheses downgrade sign failures to
// out-of-scope instead of raising.
PositivityReport audit_positivity(const Trajectory& traj, const Reaction& r,
                                  const Kernel& kernel, const BoundaryCondition& bc,
                                  double tol = 1e-8);

// Interior nodes with an active source at zero state: f(0,t,x) > tol forces
// the state strictly positive there.  Returns the nodes where the solved
// trajectory fails that, allowing roundoff (tol, scaled) plus a mesh slack.
struct StrictPositivityRecord {
  int step = 0;
  int node = 0;
  double f_at_zero = 0.0;
  double u_value = 0.0;
};
std::vector<StrictPositivityRecord> strict_positivity_probe(const Trajectory& traj,
                                                            const Reaction& r,
                                                            double tol = 1e-8);

// Exponentially damped problem: u~ = e^{-sigma t} u solves the same equation
// with the shifted kernel, g~ = e^{-sigma t} g, and the reaction
//   f~(w,t,x) = e^{-sigma t} f^(e^{sigma t} w, t, x)
//             - sigma w int_0^T e^{-sigma s} k ds
//             + sigma u0(x) int_t^T e^{-sigma s} k ds,
// where f^ freezes f below the trajectory bound -Q.  f_min records the
// minimum of f~ over the sampled lattice w in [-Q, 0), all time nodes and all
// space nodes; nonnegativity there is the hypothesis the damping buys.
struct ShiftedProblem {
  ShiftedKernel kernel;
  Trajectory u;
  MatrixXd g;
  PointFn f;
  double u_bound = 0.0;
  double f_min = 0.0;
  bool f_nonnegative = false;
  std::string witness;
};
ShiftedProblem shift_transform(const Trajectory& traj, const Reaction& r,
                               const Kernel& kernel, const BoundaryCondition& bc,
                               double sigma);

// Smallest damping rate sigma whose kernel mass sigma int_0^T e^{-sigma s} k
// dominates the extended one-sided bound M^ = M + D_Q / eta, with D_Q the
// sampled maximum of |f| over [-Q, 0].
struct SigmaSearch {
  double sigma = 0.0;
  double margin = 0.0;
  double m_hat = 0.0;
  double d_q = 0.0;
};
SigmaSearch find_sigma(const Reaction& r, const Kernel& kernel, const TimeGrid& tg,
                       double u_bound, double eta, double M);

}  // namespace fracdiff
