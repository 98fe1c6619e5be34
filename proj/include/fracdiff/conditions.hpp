#pragma once

#include <string>
#include <vector>

#include "fracdiff/inverse.hpp"

namespace fracdiff {

// One audited hypothesis: a behavioural id, a signed margin (distance to the
// constraint boundary, negative when violated; equality checks carry the
// negated violation size), and the worst lattice point as witness.
struct HypothesisEntry {
  std::string id;
  bool applicable = true;  // conditional hypotheses can be n/a for a run
  bool passed = false;
  double margin = 0.0;
  std::string witness;
};

struct ConditionReport {
  // admissible damping bound: inf over lattice nodes with a above the floor
  // of the discrete fractional derivative of a over a; -inf when undefined
  double theta = 0.0;
  // dual-weight bound: inf of kappa/varkappa where varkappa > 0 (weighted
  // audits only, NaN otherwise)
  double theta_hat = 0.0;
  // solution range over the run(s) backing the sampling lattice
  double m_hat = 0.0;
  double m_tilde = 0.0;
  std::vector<HypothesisEntry> entries;
  bool covered = false;  // every applicable hypothesis entry passed
  std::vector<std::string> annotations;
  double tol = 0.0;
};

// Discrete admissible damping bound for a state weight given as a trajectory
// of a-values: inf over nodes with a > floor of caputo_l1(a)/a, with a
// required to vanish at the initial time. Returns -inf when no node clears
// the floor; a negative fractional derivative where a sits at the floor caps
// the bound at zero. floor < 0 selects 1e-12 * max|a|.
double compute_theta(const Trajectory& a_traj, double beta, double floor = -1.0);

// inf over nodes with varkappa > 0 of kappa_weight(varkappa)/varkappa;
// constant varkappa gives T^{-beta}/Gamma(1-beta)
double compute_theta_hat(const ArrayXd& varkappa, double beta, const TimeGrid& tg);

// Audit of the pointwise uniqueness hypotheses for a general observation
// functional: curvature sign conditions on the reaction cone, monotone state
// where the curvature is present, the state weight vanishing initially,
// nonnegative and early-positive along the run, and the state slope within
// the admissible damping bound. The candidate factor z enters the cone and
// slope entries; the run (and an optional second run, for a pair experiment)
// fixes the sampling range [m_hat, m_tilde].
ConditionReport audit_uniqueness_conditions(const Trajectory& run, const Reaction& r,
                                            const SpatialField& z_candidate, double beta,
                                            const Trajectory* second = nullptr,
                                            double tol = 1e-8);

// Same audit specialised to weighted time-average data: the curvature and
// monotone-state entries are not required, and the slope entry compares
// against the dual-weight bound theta_hat instead (strictly below it).
ConditionReport audit_weighted_uniqueness(const Trajectory& run, const Reaction& r,
                                          const SpatialField& z_candidate, double beta,
                                          const ArrayXd& varkappa,
                                          const Trajectory* second = nullptr,
                                          double tol = 1e-8);

// Audit of the monotone-growth conditions: nonnegative time rate of the
// source side, nonnegative boundary rate, the state weight vanishing
// initially, and a stationary initial state. The two conclusions (a
// nonnegative state rate and the damping bound reaching the horizon value
// T^{-beta}/Gamma(1-beta)) are evaluated alongside and annotated as outside
// coverage when a hypothesis fails.
ConditionReport audit_monotone_growth(const Trajectory& run, const Reaction& r,
                                      const SpatialField& z, double beta,
                                      const EllipticOperator& op,
                                      const BoundaryCondition& bc,
                                      double tol = 1e-8);

struct ClosedFormCheck {
  bool pass = false;
  double z_margin = 0.0;  // bound minus max z
  double u_margin = 0.0;  // state headroom; +inf when no state bound applies
};

// Closed-form sufficient bounds for the named reaction families under a
// constant density (weighted_measure == true) or a general observation
// functional: the factor bound theta_star = T^{-beta}/Gamma(1-beta) scaled
// per family, plus a state ceiling for the nonlinear families. Passing here
// implies the corresponding sampled audit passes on a compliant run.
ClosedFormCheck closed_form_bounds(Reaction::Variant family, double beta, double T,
                                   double W, const SpatialField& z, double u_bound,
                                   bool weighted_measure);

}  // namespace fracdiff
