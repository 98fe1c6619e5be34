#pragma once

#include <string>
#include <utility>
#include <vector>

#include "fracdiff/forward.hpp"

namespace fracdiff {

// Observation functional nu against the trajectory in time: a point value at
// t_star, a Lebesgue density varkappa(t) dt, or point atoms plus a density.
// Reconstruction supports the two pure variants; the combined one is for
// forward evaluation and uniqueness probing only.
struct MeasureSpec {
  enum class Variant { DiracAt, Weighted, Mixed };
  Variant variant = Variant::DiracAt;
  // DiracAt: observation time in (0, T]; evaluation snaps it to the nearest
  // grid node and the snap distance is reported
  double t_star = 0.0;
  // Weighted and Mixed: density values at the time nodes, >= 0, not all zero
  ArrayXd varkappa;
  // Mixed only: (location, mass) atoms with locations in (0, T], masses >= 0
  std::vector<std::pair<double, double>> atoms;
};

MeasureSpec dirac_measure(double t_star);
MeasureSpec weighted_measure(const ArrayXd& varkappa);
void validate_measure(const MeasureSpec& m, const TimeGrid& tg);

// integral of the trajectory against the measure, node-wise in space
SpatialField apply_measure(const Trajectory& traj, const MeasureSpec& m);

// The dual weight kappa(t) = [ (T-t)^{-beta} vk(T)
//   - int_t^T (s-t)^{-beta} vk'(s) ds ] / Gamma(1-beta) at the time nodes.
// vk' is taken by central differences (one-sided at the ends) and the tail
// integral by the same exact product rule as the fractional integral, run on
// the time-reversed axis. The formula is singular at t = T, so the last node
// is assigned by linear extrapolation from its two neighbours; constant vk
// reproduces (T-t)^{-beta}/Gamma(1-beta) exactly at all earlier nodes.
ArrayXd kappa_weight(const ArrayXd& varkappa, double beta, const TimeGrid& tg);

struct InverseProblemSpec {
  EllipticOperator op;
  BoundaryCondition bc;
  // reaction family with the factor z unknown; reaction.z is ignored by the
  // reconstructions (z_init seeds the iteration instead)
  Reaction reaction;
  SpatialField u0;
  double beta = 0.5;
  TimeGrid time_grid;
  MeasureSpec measure;
  SpatialField d;
  double tol = 1e-8;
  int max_iters = 40;
  // empty values => start from zero
  SpatialField z_init;
  double newton_tol = 1e-10;
  // blend z_{k+1} <- (1-rho) z_{k+1} + rho z_k; 0 disables
  double damping = 0.0;
  // denominator floor; negative selects the default 1e-10 (1 + ||d||_inf)
  double floor = -1.0;
};

struct ReconstructionReport {
  SpatialField z;
  Trajectory trajectory;  // forward solve at the returned z
  int iterations = 0;
  std::vector<double> data_residuals;  // per iterate, before its update
  std::vector<double> update_norms;
  std::vector<int> floor_activations;  // interior nodes at the denominator floor
  double snap_distance = 0.0;          // DiracAt only
  double contraction = 0.0;            // last ratio of successive update norms
  std::vector<std::string> flags;
};

// Fixed-point reconstruction of z from weighted time-average data: each pass
// solves forward at z_k and divides the density-weighted residual of the
// discrete equation by the density-weighted average of a. Interior nodes come
// from the equations; boundary nodes are extrapolated from the interior and
// flagged, since the boundary rows carry no reaction term.
std::pair<SpatialField, ReconstructionReport> reconstruct_weighted(
    const InverseProblemSpec& spec);

// Fixed-point reconstruction from final-time (or any single-time) data: the
// discrete equation at the observation step with its newest slice pinned to
// the data d, solved for z. Exact at the fixed point by construction.
std::pair<SpatialField, ReconstructionReport> reconstruct_final_time(
    const InverseProblemSpec& spec);

// z = z_plus - z_minus with both parts nonnegative
std::pair<SpatialField, SpatialField> split_positive_negative(const SpatialField& z);

struct UniquenessReport {
  double z_gap = 0.0;     // max-norm distance of the two factors
  double data_gap = 0.0;  // max-norm distance of the two observations
  bool theorem_applicable = false;
  std::vector<std::string> annotations;
};

// Injectivity probe: solve forward for both factors, compare the observations,
// and audit the uniqueness hypotheses in both orderings of the pair. Under the
// hypotheses distinct factors must produce distinct data; without them the
// report only records the gaps.
UniquenessReport uniqueness_experiment(const InverseProblemSpec& spec,
                                       const SpatialField& z_a,
                                       const SpatialField& z_b);

}  // namespace fracdiff
