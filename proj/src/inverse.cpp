#include "fracdiff/inverse.hpp"

#include <Eigen/Sparse>
#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

#include "fracdiff/conditions.hpp"
#include "fracdiff/fracops.hpp"

namespace fracdiff {

namespace {

int snap_to_node(double t_star, const TimeGrid& tg) {
  int n = (int)std::llround(t_star / tg.tau());
  return std::clamp(n, 1, tg.n_steps);
}

ArrayXd trapezoid_weights(const TimeGrid& tg) {
  ArrayXd wt = ArrayXd::Constant(tg.n_nodes(), tg.tau());
  wt[0] *= 0.5;
  wt[tg.n_steps] *= 0.5;
  return wt;
}

// interior equation rows of the discrete operator, matching the forward
// assembly; a zero operator contributes nothing and makes every node an
// equation row
Eigen::SparseMatrix<double> interior_operator(const EllipticOperator& op) {
  int n = op.grid.n_nodes();
  Eigen::SparseMatrix<double> A(n, n);
  if (!is_zero_operator(op)) {
    auto trips = operator_triplets(op);
    A.setFromTriplets(trips.begin(), trips.end());
  }
  return A;
}

std::vector<char> equation_mask(const EllipticOperator& op) {
  int n = op.grid.n_nodes();
  std::vector<char> mask(n, 1);
  if (!is_zero_operator(op))
    for (int idx : op.grid.boundary_indices()) mask[idx] = 0;
  return mask;
}

// Boundary rows of the forward problem carry no reaction term, so the factor
// there is not determined by the equations; extend it by linear extrapolation
// along the inward direction (diagonal at corners, so only equation nodes are
// referenced).
void extrapolate_boundary(const SpaceGrid& g, ArrayXd& z) {
  for (int idx : g.boundary_indices()) {
    int i = g.ix(idx), j = g.iy(idx);
    int di = (i == 0) ? 1 : (i == g.axis_nodes(0) - 1 ? -1 : 0);
    int dj = 0;
    if (g.dim == 2) dj = (j == 0) ? 1 : (j == g.axis_nodes(1) - 1 ? -1 : 0);
    z[idx] = 2.0 * z[g.index(i + di, j + dj)] - z[g.index(i + 2 * di, j + 2 * dj)];
  }
}

void common_checks(const char* who, const InverseProblemSpec& spec) {
  std::string w(who);
  validate_space_grid(spec.op.grid);
  validate_time_grid(spec.time_grid);
  if (!(spec.beta > 0.0 && spec.beta < 1.0))
    throw ValidationError(w + ": order must lie in (0,1)");
  validate_field(spec.u0);
  validate_field(spec.d);
  int n = spec.op.grid.n_nodes();
  if (spec.u0.values.size() != n)
    throw ValidationError(w + ": initial data do not match the operator grid");
  if (spec.d.values.size() != n)
    throw ValidationError(w + ": data field does not match the operator grid");
  if (spec.z_init.values.size() != 0 && spec.z_init.values.size() != n)
    throw ValidationError(w + ": initial factor guess does not match the operator grid");
  if (!(spec.tol > 0.0)) throw ValidationError(w + ": tolerance must be positive");
  if (!(spec.newton_tol > 0.0))
    throw ValidationError(w + ": forward-solver tolerance must be positive");
  if (spec.max_iters < 1) throw ValidationError(w + ": need at least one iteration");
  if (!(spec.damping >= 0.0 && spec.damping < 1.0))
    throw ValidationError(w + ": damping factor must lie in [0,1)");
  if (!is_zero_operator(spec.op))
    for (int axis = 0; axis < spec.op.grid.dim; ++axis)
      if (spec.op.grid.axis_nodes(axis) < 4)
        throw ValidationError(w +
                              ": need at least four nodes per axis to extend the factor "
                              "to the boundary");
}

// Escalation of denominator-floor activity: nearly everything at the floor on
// the first pass means the data cannot see the factor at all; a smaller but
// persistent share degenerates the iteration and is refused after three
// consecutive passes.
struct FloorWatch {
  int consecutive = 0;

  void update(const char* who, int iter, int floored, int n_eq) {
    double share = n_eq > 0 ? (double)floored / n_eq : 0.0;
    if (iter == 0 && share >= 0.95) {
      std::ostringstream os;
      os << who << ": the state-weight denominator sits at the floor on "
         << (int)std::lround(100.0 * share)
         << "% of the equation nodes; the factor is not identifiable from this data";
      throw IllPosedError(os.str());
    }
    if (share > 0.05) {
      if (++consecutive >= 3)
        throw IllPosedError(std::string(who) +
                            ": the state-weight denominator stayed at the floor on more "
                            "than 5% of the equation nodes for three consecutive passes");
    } else {
      consecutive = 0;
    }
  }
};

void finish_report(const InverseProblemSpec& spec, const ArrayXd& z,
                   ReconstructionReport& rep) {
  const auto& un = rep.update_norms;
  if (un.size() >= 2 && un[un.size() - 2] > 0.0)
    rep.contraction = un.back() / un[un.size() - 2];
  Reaction rk = spec.reaction;
  rk.z = SpatialField{spec.op.grid, z};
  rep.trajectory = solve_l1(spec.op, spec.bc, rk, spec.u0, spec.beta, spec.time_grid,
                            spec.newton_tol)
                       .first;
  rep.z = SpatialField{spec.op.grid, z};
}

}  // namespace

MeasureSpec dirac_measure(double t_star) {
  MeasureSpec m;
  m.variant = MeasureSpec::Variant::DiracAt;
  m.t_star = t_star;
  return m;
}

MeasureSpec weighted_measure(const ArrayXd& varkappa) {
  MeasureSpec m;
  m.variant = MeasureSpec::Variant::Weighted;
  m.varkappa = varkappa;
  return m;
}

void validate_measure(const MeasureSpec& m, const TimeGrid& tg) {
  validate_time_grid(tg);
  auto check_density = [&](bool need_mass) {
    if (m.varkappa.size() != tg.n_nodes())
      throw ValidationError("measure: density size does not match the time grid");
    if (!m.varkappa.isFinite().all())
      throw ValidationError("measure: non-finite density value");
    if ((m.varkappa < 0.0).any())
      throw ValidationError("measure: negative density node");
    if (need_mass && !(m.varkappa.maxCoeff() > 0.0))
      throw ValidationError("measure: density vanishes identically");
  };
  switch (m.variant) {
    case MeasureSpec::Variant::DiracAt:
      if (!(m.t_star > 0.0 && m.t_star <= tg.T))
        throw ValidationError("measure: observation time must lie in (0, T]");
      break;
    case MeasureSpec::Variant::Weighted:
      if (!m.atoms.empty())
        throw ValidationError("measure: a pure density carries no atoms");
      check_density(true);
      break;
    case MeasureSpec::Variant::Mixed: {
      double atom_mass = 0.0;
      for (const auto& [loc, mass] : m.atoms) {
        if (!(loc > 0.0 && loc <= tg.T))
          throw ValidationError("measure: atom location must lie in (0, T]");
        if (!std::isfinite(mass) || !(mass >= 0.0))
          throw ValidationError("measure: atom mass must be nonnegative");
        atom_mass += mass;
      }
      double density_peak = 0.0;
      if (m.varkappa.size() != 0) {
        check_density(false);
        density_peak = m.varkappa.maxCoeff();
      }
      if (!(atom_mass > 0.0) && !(density_peak > 0.0))
        throw ValidationError("measure: the combined measure has no mass");
      break;
    }
  }
}

SpatialField apply_measure(const Trajectory& traj, const MeasureSpec& m) {
  validate_trajectory(traj);
  const TimeGrid& tg = traj.time_grid;
  validate_measure(m, tg);
  ArrayXd out = ArrayXd::Zero(traj.space_grid.n_nodes());
  switch (m.variant) {
    case MeasureSpec::Variant::DiracAt:
      out = traj.values.row(snap_to_node(m.t_star, tg)).transpose().array();
      break;
    case MeasureSpec::Variant::Weighted: {
      ArrayXd wt = trapezoid_weights(tg);
      for (int n = 0; n < tg.n_nodes(); ++n)
        out += wt[n] * m.varkappa[n] * traj.values.row(n).transpose().array();
      break;
    }
    case MeasureSpec::Variant::Mixed: {
      if (m.varkappa.size() != 0) {
        ArrayXd wt = trapezoid_weights(tg);
        for (int n = 0; n < tg.n_nodes(); ++n)
          out += wt[n] * m.varkappa[n] * traj.values.row(n).transpose().array();
      }
      for (const auto& [loc, mass] : m.atoms)
        out += mass * traj.values.row(snap_to_node(loc, tg)).transpose().array();
      break;
    }
  }
  return {traj.space_grid, out};
}

ArrayXd kappa_weight(const ArrayXd& varkappa, double beta, const TimeGrid& tg) {
  if (!(beta > 0.0 && beta < 1.0))
    throw ValidationError("kappa_weight: order must lie in (0,1)");
  validate_time_grid(tg);
  if (tg.n_steps < 2)
    throw ValidationError("kappa_weight: need at least two time steps");
  if (varkappa.size() != tg.n_nodes())
    throw ValidationError("kappa_weight: density size does not match the time grid");
  if (!varkappa.isFinite().all())
    throw ValidationError("kappa_weight: non-finite density value");
  if ((varkappa < 0.0).any())
    throw ValidationError("kappa_weight: negative density node");

  int N = tg.n_steps;
  double tau = tg.tau();
  ArrayXd dvk(N + 1);
  dvk[0] = (varkappa[1] - varkappa[0]) / tau;
  dvk[N] = (varkappa[N] - varkappa[N - 1]) / tau;
  for (int n = 1; n < N; ++n) dvk[n] = (varkappa[n + 1] - varkappa[n - 1]) / (2.0 * tau);

  // The tail integral int_t^T (s-t)^{-beta} vk'(s) ds turns, under s -> T-s,
  // into the fractional integral of the reversed derivative, so the exact
  // product rule applies unchanged.
  ArrayXd reversed(N + 1);
  for (int n = 0; n <= N; ++n) reversed[n] = dvk[N - n];
  ArrayXd tail = frac_integral(reversed, 1.0 - beta, tg);

  double gm = gamma_fn(1.0 - beta);
  ArrayXd kp(N + 1);
  for (int n = 0; n < N; ++n)
    kp[n] = std::pow(tg.T - tg.node(n), -beta) * varkappa[N] / gm - tail[N - n];
  kp[N] = 2.0 * kp[N - 1] - kp[N - 2];
  return kp;
}

std::pair<SpatialField, ReconstructionReport> reconstruct_weighted(
    const InverseProblemSpec& spec) {
  const char* who = "reconstruct_weighted";
  common_checks(who, spec);
  if (spec.measure.variant == MeasureSpec::Variant::DiracAt)
    throw ValidationError(
        "reconstruct_weighted: point observations go through reconstruct_final_time");
  if (spec.measure.variant == MeasureSpec::Variant::Mixed)
    throw ValidationError(
        "reconstruct_weighted: combined measures support forward evaluation and "
        "uniqueness probing only");
  validate_measure(spec.measure, spec.time_grid);

  const SpaceGrid& g = spec.op.grid;
  const TimeGrid& tg = spec.time_grid;
  int n = g.n_nodes();
  int N = tg.n_steps;
  ArrayXd wt = trapezoid_weights(tg);
  const ArrayXd& vk = spec.measure.varkappa;
  Eigen::SparseMatrix<double> A = interior_operator(spec.op);
  std::vector<char> mask = equation_mask(spec.op);
  int n_eq = 0;
  for (char c : mask) n_eq += c;
  ArrayXd Ad = (A * spec.d.values.matrix()).array();
  // the evolution equation holds for t > 0 only, so the initial trapezoid
  // sliver of A(x)d(x) is transferred back onto the known initial state
  ArrayXd Au0 = wt[0] * vk[0] * (A * spec.u0.values.matrix()).array();
  double dmax = spec.d.values.abs().maxCoeff();
  double floor = spec.floor >= 0.0 ? spec.floor : 1e-10 * (1.0 + dmax);

  ReconstructionReport rep;
  if (n_eq < n)
    rep.flags.push_back(
        "boundary factor extrapolated from the interior (boundary rows carry no "
        "reaction term)");

  ArrayXd z = spec.z_init.values.size() != 0 ? spec.z_init.values : ArrayXd::Zero(n);
  FloorWatch watch;
  bool converged = false;
  bool negativity_flagged = false;
  for (int k = 0; k < spec.max_iters && !converged; ++k) {
    Reaction rk = spec.reaction;
    rk.z = SpatialField{g, z};
    Trajectory traj =
        solve_l1(spec.op, spec.bc, rk, spec.u0, spec.beta, tg, spec.newton_tol).first;
    double dres =
        (apply_measure(traj, spec.measure).values - spec.d.values).abs().maxCoeff();

    MatrixXd db = caputo_l1_columns(traj.values, spec.beta, tg);
    ArrayXd znew = z;
    int floored = 0;
    double a_min = std::numeric_limits<double>::infinity();
    double a_scale = 0.0;
    for (int idx = 0; idx < n; ++idx) {
      if (!mask[idx]) continue;
      double s_db = 0.0, s_a = 0.0, s_b = 0.0;
      for (int m = 1; m <= N; ++m) {
        double wgt = wt[m] * vk[m];
        if (wgt == 0.0) continue;
        Partials p = eval_partials(rk, traj.values(m, idx), tg.node(m), idx);
        a_min = std::min(a_min, p.a);
        a_scale = std::max(a_scale, std::abs(p.a));
        s_db += wgt * db(m, idx);
        s_a += wgt * p.a;
        s_b += wgt * p.b;
      }
      double denom = s_a;
      if (!(denom > floor)) {
        denom = floor;
        ++floored;
      }
      znew[idx] = (s_db - Ad[idx] + Au0[idx] - s_b) / denom;
    }

    // hypothesis check: the averaged-denominator identity needs a >= 0 along
    // the solution; a clearly negative first iterate refuses, later ones flag
    if (a_min < -1e-8 * (1.0 + a_scale)) {
      if (k == 0)
        throw ValidationError(std::string(who) +
                              ": the state weight is negative along the first iterate");
      if (!negativity_flagged) {
        rep.flags.push_back("state weight went negative along an iterate");
        negativity_flagged = true;
      }
    }

    if (n_eq < n) extrapolate_boundary(g, znew);
    if (spec.damping > 0.0) znew = (1.0 - spec.damping) * znew + spec.damping * z;

    double upd = (znew - z).abs().maxCoeff();
    rep.data_residuals.push_back(dres);
    rep.update_norms.push_back(upd);
    rep.floor_activations.push_back(floored);
    watch.update(who, k, floored, n_eq);
    z = znew;
    rep.iterations = k + 1;
    converged = upd <= spec.tol && dres <= spec.tol * (1.0 + dmax);
  }
  if (!converged)
    rep.flags.push_back("stopped at the iteration cap without meeting the tolerance");

  finish_report(spec, z, rep);
  return {rep.z, rep};
}

std::pair<SpatialField, ReconstructionReport> reconstruct_final_time(
    const InverseProblemSpec& spec) {
  const char* who = "reconstruct_final_time";
  common_checks(who, spec);
  if (spec.measure.variant != MeasureSpec::Variant::DiracAt)
    throw ValidationError(
        "reconstruct_final_time: needs a point observation in time");
  validate_measure(spec.measure, spec.time_grid);

  const SpaceGrid& g = spec.op.grid;
  const TimeGrid& tg = spec.time_grid;
  int n = g.n_nodes();
  int n_star = snap_to_node(spec.measure.t_star, tg);
  double t_star = tg.node(n_star);
  double lead = std::pow(tg.tau(), -spec.beta) / gamma_fn(2.0 - spec.beta);
  Eigen::SparseMatrix<double> A = interior_operator(spec.op);
  std::vector<char> mask = equation_mask(spec.op);
  int n_eq = 0;
  for (char c : mask) n_eq += c;
  ArrayXd Ad = (A * spec.d.values.matrix()).array();
  double dmax = spec.d.values.abs().maxCoeff();
  double floor = spec.floor >= 0.0 ? spec.floor : 1e-10 * (1.0 + dmax);

  ReconstructionReport rep;
  rep.snap_distance = std::abs(spec.measure.t_star - t_star);
  if (rep.snap_distance > 1e-12 * tg.T)
    rep.flags.push_back("observation time snapped to the nearest grid node");
  if (n_eq < n)
    rep.flags.push_back(
        "boundary factor extrapolated from the interior (boundary rows carry no "
        "reaction term)");

  // with the newest slice pinned to the data, the reaction terms and the
  // denominator are fixed once and for all
  ArrayXd a_d(n), b_d(n);
  {
    Reaction r0 = spec.reaction;
    r0.z = SpatialField{g, ArrayXd::Zero(n)};
    for (int idx = 0; idx < n; ++idx) {
      Partials p = eval_partials(r0, spec.d.values[idx], t_star, idx);
      a_d[idx] = p.a;
      b_d[idx] = p.b;
    }
  }

  ArrayXd z = spec.z_init.values.size() != 0 ? spec.z_init.values : ArrayXd::Zero(n);
  FloorWatch watch;
  bool converged = false;
  for (int k = 0; k < spec.max_iters && !converged; ++k) {
    Reaction rk = spec.reaction;
    rk.z = SpatialField{g, z};
    Trajectory traj =
        solve_l1(spec.op, spec.bc, rk, spec.u0, spec.beta, tg, spec.newton_tol).first;
    double dres =
        (apply_measure(traj, spec.measure).values - spec.d.values).abs().maxCoeff();

    ArrayXd hist = l1_history_term(traj, spec.beta, n_star);
    ArrayXd znew = z;
    int floored = 0;
    for (int idx = 0; idx < n; ++idx) {
      if (!mask[idx]) continue;
      double numer =
          lead * (spec.d.values[idx] - spec.u0.values[idx]) - hist[idx] - Ad[idx] -
          b_d[idx];
      double denom = a_d[idx];
      if (!(denom > floor)) {
        denom = floor;
        ++floored;
      }
      znew[idx] = numer / denom;
    }

    if (n_eq < n) extrapolate_boundary(g, znew);
    if (spec.damping > 0.0) znew = (1.0 - spec.damping) * znew + spec.damping * z;

    double upd = (znew - z).abs().maxCoeff();
    rep.data_residuals.push_back(dres);
    rep.update_norms.push_back(upd);
    rep.floor_activations.push_back(floored);
    watch.update(who, k, floored, n_eq);
    z = znew;
    rep.iterations = k + 1;
    converged = upd <= spec.tol && dres <= spec.tol * (1.0 + dmax);
  }
  if (!converged)
    rep.flags.push_back("stopped at the iteration cap without meeting the tolerance");
  for (size_t k = 3; k < rep.data_residuals.size(); ++k)
    if (rep.data_residuals[k] > rep.data_residuals[k - 1] * (1.0 + 1e-12)) {
      rep.flags.push_back("data residual not monotone beyond the third pass");
      break;
    }

  finish_report(spec, z, rep);
  return {rep.z, rep};
}

std::pair<SpatialField, SpatialField> split_positive_negative(const SpatialField& z) {
  validate_field(z);
  ArrayXd mag = z.values.abs();
  return {SpatialField{z.grid, (mag + z.values) * 0.5},
          SpatialField{z.grid, (mag - z.values) * 0.5}};
}

UniquenessReport uniqueness_experiment(const InverseProblemSpec& spec,
                                       const SpatialField& z_a,
                                       const SpatialField& z_b) {
  const char* who = "uniqueness_experiment";
  common_checks(who, spec);
  validate_measure(spec.measure, spec.time_grid);
  int n = spec.op.grid.n_nodes();
  if (z_a.values.size() != n || z_b.values.size() != n)
    throw ValidationError(std::string(who) +
                          ": factor candidates do not match the operator grid");

  auto solve_at = [&](const SpatialField& z) {
    Reaction rk = spec.reaction;
    rk.z = SpatialField{spec.op.grid, z.values};
    return solve_l1(spec.op, spec.bc, rk, spec.u0, spec.beta, spec.time_grid,
                    spec.newton_tol)
        .first;
  };
  Trajectory run_a = solve_at(z_a);
  Trajectory run_b = solve_at(z_b);

  UniquenessReport out;
  out.z_gap = (z_a.values - z_b.values).abs().maxCoeff();
  out.data_gap = (apply_measure(run_a, spec.measure).values -
                  apply_measure(run_b, spec.measure).values)
                     .abs()
                     .maxCoeff();

  auto audit_one = [&](const Trajectory& run, const SpatialField& candidate,
                       const Trajectory& other, const char* label) {
    Reaction ra = spec.reaction;
    ra.z = SpatialField{spec.op.grid, candidate.values};
    ConditionReport cr =
        spec.measure.variant == MeasureSpec::Variant::Weighted
            ? audit_weighted_uniqueness(run, ra, candidate, spec.beta,
                                        spec.measure.varkappa, &other)
            : audit_uniqueness_conditions(run, ra, candidate, spec.beta, &other);
    if (cr.covered) {
      out.annotations.push_back(std::string(label) + ": hypotheses hold");
    } else {
      std::string why = "no entry";
      for (const auto& e : cr.entries)
        if (e.applicable && !e.passed) {
          why = e.id;
          break;
        }
      out.annotations.push_back(std::string(label) +
                                ": uniqueness theorem not applicable (failed: " + why +
                                ")");
    }
    return cr.covered;
  };
  bool forward_order = audit_one(run_a, z_b, run_b, "ordering (first, second)");
  bool reverse_order = audit_one(run_b, z_a, run_a, "ordering (second, first)");
  out.theorem_applicable = forward_order || reverse_order;
  return out;
}

}  // namespace fracdiff
