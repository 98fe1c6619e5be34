#include "fracdiff/conditions.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

#include "fracdiff/fracops.hpp"

namespace fracdiff {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

std::string point_label(const SpaceGrid& g, double w, double t, int idx) {
  std::ostringstream os;
  os << "w=" << w << ", t=" << t << ", x=" << g.x(idx);
  if (g.dim == 2) os << ", y=" << g.y(idx);
  os << " (node " << idx << ")";
  return os.str();
}

std::string slice_label(const SpaceGrid& g, double t, int idx) {
  std::ostringstream os;
  os << "t=" << t << ", x=" << g.x(idx);
  if (g.dim == 2) os << ", y=" << g.y(idx);
  os << " (node " << idx << ")";
  return os.str();
}

// inf of the discrete fractional derivative of a over a, restricted to nodes
// where a clears the floor; a negative derivative where a sits at the floor
// caps the admissible value at zero, and an empty ratio set leaves the bound
// undefined (-inf)
double theta_ratio_inf(const MatrixXd& a_values, double beta, const TimeGrid& tg,
                       double floor_eff) {
  MatrixXd d = caputo_l1_columns(a_values, beta, tg);
  double d_scale = d.cwiseAbs().maxCoeff();
  double bound = kInf;
  bool any_ratio = false, negative_at_floor = false;
  for (int nt = 0; nt < a_values.rows(); ++nt)
    for (int idx = 0; idx < a_values.cols(); ++idx) {
      double a = a_values(nt, idx);
      if (a > floor_eff) {
        any_ratio = true;
        bound = std::min(bound, d(nt, idx) / a);
      } else if (d(nt, idx) < -1e-12 * (1.0 + d_scale)) {
        negative_at_floor = true;
      }
    }
  if (!any_ratio) return -kInf;
  if (negative_at_floor) bound = std::min(bound, 0.0);
  return bound;
}

void check_audit_inputs(const char* who, const Trajectory& run, const Reaction& r,
                        const SpatialField& z_candidate, double beta,
                        const Trajectory* second, double tol) {
  validate_trajectory(run);
  std::string w(who);
  if (!(beta > 0.0 && beta < 1.0)) throw ValidationError(w + ": order must lie in (0,1)");
  if (!(tol > 0.0)) throw ValidationError(w + ": tolerance must be positive");
  if (r.z.values.size() != run.space_grid.n_nodes())
    throw ValidationError(w + ": reaction field does not match the run grid");
  if (z_candidate.values.size() != run.space_grid.n_nodes())
    throw ValidationError(w + ": factor candidate does not match the run grid");
  if (second) {
    validate_trajectory(*second);
    if (second->values.rows() != run.values.rows() ||
        second->values.cols() != run.values.cols())
      throw ValidationError(w + ": the two runs do not share a lattice");
  }
}

// sampling range [m_hat, m_tilde] over the backing run(s)
std::pair<double, double> state_range(const Trajectory& run, const Trajectory* second) {
  double lo = run.values.minCoeff(), hi = run.values.maxCoeff();
  if (second) {
    lo = std::min(lo, second->values.minCoeff());
    hi = std::max(hi, second->values.maxCoeff());
  }
  return {lo, hi};
}

// worst values of the w-dependent cone quantities over the sampling lattice:
// 201 state samples times every grid node
struct ConeSweep {
  double curvature_min = kInf;
  std::string curvature_witness;
  double slope_max = -kInf;
  std::string slope_witness;
  double curvature_scale = 0.0;  // max |a_ww|, |b_ww| seen: gates the u_t entry
};

ConeSweep sweep_cone(const Trajectory& run, const Reaction& r,
                     const SpatialField& z_candidate, double m_hat, double m_tilde,
                     bool track_curvature) {
  const TimeGrid& tg = run.time_grid;
  const SpaceGrid& g = run.space_grid;
  ConeSweep out;
  for (int iw = 0; iw <= 200; ++iw) {
    double w = m_hat + (m_tilde - m_hat) * iw / 200.0;
    for (int nt = 0; nt <= tg.n_steps; ++nt) {
      double t = tg.node(nt);
      for (int idx = 0; idx < g.n_nodes(); ++idx) {
        Partials p = eval_partials(r, w, t, idx);
        double zc = z_candidate.values[idx];
        double slope = p.a_w * zc + p.b_w;
        if (slope > out.slope_max) {
          out.slope_max = slope;
          out.slope_witness = point_label(g, w, t, idx);
        }
        if (!track_curvature) continue;
        double curv = std::min(p.a_ww * zc + p.b_ww, p.a_wt * zc + p.b_wt);
        out.curvature_scale =
            std::max({out.curvature_scale, std::abs(p.a_ww), std::abs(p.b_ww)});
        if (curv < out.curvature_min) {
          out.curvature_min = curv;
          out.curvature_witness = point_label(g, w, t, idx);
        }
      }
    }
  }
  return out;
}

// a(u(t,x),t,x) along the run
MatrixXd weight_along_run(const Trajectory& run, const Reaction& r) {
  const TimeGrid& tg = run.time_grid;
  int n = run.space_grid.n_nodes();
  MatrixXd av(tg.n_nodes(), n);
  for (int nt = 0; nt <= tg.n_steps; ++nt) {
    double t = tg.node(nt);
    for (int idx = 0; idx < n; ++idx)
      av(nt, idx) = eval_partials(r, run.values(nt, idx), t, idx).a;
  }
  return av;
}

void push_entry(ConditionReport& rep, std::string id, bool applicable, bool passed,
                double margin, std::string witness) {
  rep.entries.push_back({std::move(id), applicable, passed, margin, std::move(witness)});
}

// the three entries shared by both uniqueness audits, built from the weight
// values along the first run
void weight_entries(ConditionReport& rep, const Trajectory& run, const MatrixXd& av,
                    double tol) {
  const TimeGrid& tg = run.time_grid;
  const SpaceGrid& g = run.space_grid;
  double a_scale = av.cwiseAbs().maxCoeff();

  double a0_max = 0.0;
  int a0_arg = 0;
  for (int idx = 0; idx < av.cols(); ++idx)
    if (std::abs(av(0, idx)) > a0_max) {
      a0_max = std::abs(av(0, idx));
      a0_arg = idx;
    }
  push_entry(rep, "weight-vanishes-initially", true, a0_max <= tol * (1.0 + a_scale),
             -a0_max,
             "largest initial weight " + std::to_string(a0_max) + " at " +
                 slice_label(g, 0.0, a0_arg));

  double a_min = kInf;
  std::string a_min_wit;
  for (int nt = 0; nt < av.rows(); ++nt)
    for (int idx = 0; idx < av.cols(); ++idx)
      if (av(nt, idx) < a_min) {
        a_min = av(nt, idx);
        a_min_wit = slice_label(g, tg.node(nt), idx);
      }
  push_entry(rep, "weight-nonnegative", true, a_min >= -tol * (1.0 + a_scale), a_min,
             "smallest weight along the run at " + a_min_wit);

  // early positivity: per interior node, the largest time prefix on which the
  // weight stays strictly positive; the hypothesis needs a nonempty window
  // everywhere inside the domain
  std::vector<int> interior = g.interior_indices();
  if (interior.empty()) {
    push_entry(rep, "weight-early-positive", false, true, 0.0,
               "no interior nodes on this grid");
    return;
  }
  double eps_min = kInf;
  int eps_arg = interior.front();
  for (int idx : interior) {
    int m = 0;
    while (m < tg.n_steps && av(m + 1, idx) > 0.0) ++m;
    double eps = tg.node(m);
    if (eps < eps_min) {
      eps_min = eps;
      eps_arg = idx;
    }
  }
  std::ostringstream os;
  os << "smallest positivity window (0, " << eps_min << ") at "
     << slice_label(g, 0.0, eps_arg);
  push_entry(rep, "weight-early-positive", true, eps_min > 0.0, eps_min, os.str());
}

void annotate_coverage(ConditionReport& rep) {
  rep.covered = true;
  for (const auto& e : rep.entries)
    if (e.applicable && !e.passed) {
      rep.covered = false;
      rep.annotations.push_back("first failed hypothesis: " + e.id);
      break;
    }
}

}  // namespace

double compute_theta(const Trajectory& a_traj, double beta, double floor) {
  validate_time_grid(a_traj.time_grid);
  validate_space_grid(a_traj.space_grid);
  if (!(beta > 0.0 && beta < 1.0))
    throw ValidationError("compute_theta: order must lie in (0,1)");
  if (a_traj.values.rows() != a_traj.time_grid.n_nodes() ||
      a_traj.values.cols() != a_traj.space_grid.n_nodes())
    throw ValidationError("compute_theta: value shape must be time nodes x space nodes");
  if (!a_traj.values.allFinite())
    throw ValidationError("compute_theta: non-finite values");
  double a_scale = a_traj.values.cwiseAbs().maxCoeff();
  if (a_traj.values.row(0).cwiseAbs().maxCoeff() > 1e-8 * std::max(1.0, a_scale))
    throw ValidationError(
        "compute_theta: the state weight must vanish at the initial time");
  double floor_eff = floor < 0.0 ? 1e-12 * a_scale : floor;
  return theta_ratio_inf(a_traj.values, beta, a_traj.time_grid, floor_eff);
}

double compute_theta_hat(const ArrayXd& varkappa, double beta, const TimeGrid& tg) {
  validate_measure(weighted_measure(varkappa), tg);
  ArrayXd kp = kappa_weight(varkappa, beta, tg);
  double bound = kInf;
  for (int n = 0; n <= tg.n_steps; ++n)
    if (varkappa[n] > 0.0) bound = std::min(bound, kp[n] / varkappa[n]);
  return bound;
}

ConditionReport audit_uniqueness_conditions(const Trajectory& run, const Reaction& r,
                                            const SpatialField& z_candidate, double beta,
                                            const Trajectory* second, double tol) {
  check_audit_inputs("audit_uniqueness_conditions", run, r, z_candidate, beta, second,
                     tol);
  ConditionReport rep;
  rep.tol = tol;
  rep.theta_hat = std::numeric_limits<double>::quiet_NaN();
  std::tie(rep.m_hat, rep.m_tilde) = state_range(run, second);

  ConeSweep sweep = sweep_cone(run, r, z_candidate, rep.m_hat, rep.m_tilde, true);
  double z_abs = z_candidate.values.abs().maxCoeff();
  double curv_tol = tol * (1.0 + sweep.curvature_scale * (1.0 + z_abs));
  push_entry(rep, "curvature-signs", true, sweep.curvature_min >= -curv_tol,
             sweep.curvature_min, "worst cone curvature at " + sweep.curvature_witness);

  // monotone state matters only when the cone actually curves
  bool curvature_present = sweep.curvature_scale > 1e-14;
  Trajectory ut = time_derivative(run);
  Eigen::Index ut_step = 0, ut_node = 0;
  double ut_min = ut.values.minCoeff(&ut_step, &ut_node);
  push_entry(rep, "state-rate-nonnegative", curvature_present,
             ut_min >= -tol * (1.0 + run.values.cwiseAbs().maxCoeff()), ut_min,
             "smallest state rate at " +
                 slice_label(run.space_grid, run.time_grid.node((int)ut_step),
                             (int)ut_node) +
                 (curvature_present ? "" : "; not required: the cone has no curvature"));

  MatrixXd av = weight_along_run(run, r);
  weight_entries(rep, run, av, tol);

  rep.theta = theta_ratio_inf(av, beta, run.time_grid, 1e-12 * av.cwiseAbs().maxCoeff());
  if (std::isinf(rep.theta) && rep.theta < 0.0) {
    rep.annotations.push_back(
        "the admissible damping bound is undefined on this run (the state weight "
        "never clears the floor)");
    push_entry(rep, "slope-within-theta", true, false, -kInf,
               "no admissible damping bound to compare against");
  } else {
    double margin = rep.theta - sweep.slope_max;
    push_entry(rep, "slope-within-theta", true,
               margin >= -tol * (1.0 + std::abs(rep.theta)), margin,
               "largest state slope at " + sweep.slope_witness);
  }
  annotate_coverage(rep);
  return rep;
}

ConditionReport audit_weighted_uniqueness(const Trajectory& run, const Reaction& r,
                                          const SpatialField& z_candidate, double beta,
                                          const ArrayXd& varkappa,
                                          const Trajectory* second, double tol) {
  check_audit_inputs("audit_weighted_uniqueness", run, r, z_candidate, beta, second,
                     tol);
  ConditionReport rep;
  rep.tol = tol;
  std::tie(rep.m_hat, rep.m_tilde) = state_range(run, second);

  ConeSweep sweep = sweep_cone(run, r, z_candidate, rep.m_hat, rep.m_tilde, false);
  MatrixXd av = weight_along_run(run, r);
  weight_entries(rep, run, av, tol);

  rep.theta = theta_ratio_inf(av, beta, run.time_grid, 1e-12 * av.cwiseAbs().maxCoeff());
  rep.theta_hat = compute_theta_hat(varkappa, beta, run.time_grid);

  // the slope must admit a damping value strictly below the dual bound, which
  // is the same as staying strictly below the bound itself
  double margin = rep.theta_hat - sweep.slope_max;
  push_entry(rep, "slope-below-dual-bound", true, margin > 0.0, margin,
             "largest state slope at " + sweep.slope_witness);
  annotate_coverage(rep);
  return rep;
}

ConditionReport audit_monotone_growth(const Trajectory& run, const Reaction& r,
                                      const SpatialField& z, double beta,
                                      const EllipticOperator& op,
                                      const BoundaryCondition& bc, double tol) {
  check_audit_inputs("audit_monotone_growth", run, r, z, beta, nullptr, tol);
  if (op.grid.n_nodes() != run.space_grid.n_nodes())
    throw ValidationError("audit_monotone_growth: operator does not match the run grid");
  if (bc.g.rows() != run.time_grid.n_nodes())
    throw ValidationError(
        "audit_monotone_growth: boundary data do not match the run's time grid");

  ConditionReport rep;
  rep.tol = tol;
  rep.theta_hat = std::numeric_limits<double>::quiet_NaN();
  std::tie(rep.m_hat, rep.m_tilde) = state_range(run, nullptr);
  const TimeGrid& tg = run.time_grid;
  const SpaceGrid& g = run.space_grid;
  int n = g.n_nodes();

  // time rate of the source side along the run
  double rate_min = kInf, rate_scale = 0.0;
  std::string rate_wit;
  for (int nt = 0; nt <= tg.n_steps; ++nt) {
    double t = tg.node(nt);
    for (int idx = 0; idx < n; ++idx) {
      Partials p = eval_partials(r, run.values(nt, idx), t, idx);
      double rate = p.a_t * z.values[idx] + p.b_t;
      rate_scale = std::max({rate_scale, std::abs(p.a_t), std::abs(p.b_t)});
      if (rate < rate_min) {
        rate_min = rate;
        rate_wit = slice_label(g, t, idx);
      }
    }
  }
  push_entry(rep, "rate-source-nonnegative", true,
             rate_min >= -tol * (1.0 + rate_scale * (1.0 + z.values.abs().maxCoeff())),
             rate_min, "smallest source rate at " + rate_wit);

  // boundary data must not decrease in time
  if (bc.g.cols() == 0) {
    push_entry(rep, "boundary-rate-nonnegative", false, true, 0.0,
               "no boundary rows on this problem");
  } else {
    double g_rate_min = kInf;
    std::string g_wit;
    double g_scale = bc.g.cwiseAbs().maxCoeff();
    for (int nt = 0; nt < tg.n_steps; ++nt)
      for (int c = 0; c < bc.g.cols(); ++c) {
        double rate = (bc.g(nt + 1, c) - bc.g(nt, c)) / tg.tau();
        if (rate < g_rate_min) {
          g_rate_min = rate;
          std::ostringstream os;
          os << "t=" << tg.node(nt) << ", boundary column " << c;
          g_wit = os.str();
        }
      }
    push_entry(rep, "boundary-rate-nonnegative", true,
               g_rate_min >= -tol * (1.0 + g_scale), g_rate_min,
               "smallest boundary rate at " + g_wit);
  }

  MatrixXd av = weight_along_run(run, r);
  double a_scale = av.cwiseAbs().maxCoeff();
  double a0_max = 0.0;
  int a0_arg = 0;
  for (int idx = 0; idx < n; ++idx)
    if (std::abs(av(0, idx)) > a0_max) {
      a0_max = std::abs(av(0, idx));
      a0_arg = idx;
    }
  push_entry(rep, "weight-vanishes-initially", true, a0_max <= tol * (1.0 + a_scale),
             -a0_max,
             "largest initial weight " + std::to_string(a0_max) + " at " +
                 slice_label(g, 0.0, a0_arg));

  // a stationary start: the spatial term and the source balance at t = 0
  {
    SpatialField au0 = is_zero_operator(op)
                           ? SpatialField{g, ArrayXd::Zero(n)}
                           : apply_operator(op, SpatialField{g, run.u0.values});
    double res_max = 0.0;
    int res_arg = 0;
    std::vector<int> inner = g.interior_indices();
    if (inner.empty())
      for (int idx = 0; idx < n; ++idx) inner.push_back(idx);
    for (int idx : inner) {
      Partials p = eval_partials(r, run.u0.values[idx], 0.0, idx);
      double res = std::abs(au0.values[idx] + p.b);
      if (res > res_max) {
        res_max = res;
        res_arg = idx;
      }
    }
    push_entry(rep, "initially-stationary", true,
               res_max <= tol * (1.0 + run.u0.values.abs().maxCoeff()), -res_max,
               "largest initial imbalance " + std::to_string(res_max) + " at " +
                   slice_label(g, 0.0, res_arg));
  }

  annotate_coverage(rep);

  // conclusions, evaluated regardless and flagged as outside coverage when a
  // hypothesis above failed
  Trajectory ut = time_derivative(run);
  Eigen::Index ut_step = 0, ut_node = 0;
  double ut_min = ut.values.minCoeff(&ut_step, &ut_node);
  push_entry(rep, "conclusion-state-rate-nonnegative", true,
             ut_min >= -tol * (1.0 + run.values.cwiseAbs().maxCoeff()), ut_min,
             "smallest state rate at " +
                 slice_label(g, tg.node((int)ut_step), (int)ut_node));

  rep.theta = theta_ratio_inf(av, beta, tg, 1e-12 * a_scale);
  double horizon = std::pow(tg.T, -beta) / gamma_fn(1.0 - beta);
  push_entry(rep, "conclusion-damping-bound-at-horizon", true,
             rep.theta >= horizon - tol * (1.0 + horizon), rep.theta - horizon,
             "admissible damping bound " + std::to_string(rep.theta) +
                 " against the horizon value " + std::to_string(horizon));
  if (!rep.covered)
    rep.annotations.push_back("the growth conclusions are outside coverage");
  return rep;
}

ClosedFormCheck closed_form_bounds(Reaction::Variant family, double beta, double T,
                                   double W, const SpatialField& z, double u_bound,
                                   bool weighted_measure) {
  if (!(beta > 0.0 && beta < 1.0))
    throw ValidationError("closed_form_bounds: order must lie in (0,1)");
  if (!(T > 0.0)) throw ValidationError("closed_form_bounds: horizon must be positive");
  validate_field(z);
  double theta_star = std::pow(T, -beta) / gamma_fn(1.0 - beta);
  double z_max = z.values.maxCoeff();
  ClosedFormCheck out;
  out.u_margin = kInf;
  switch (family) {
    case Reaction::Variant::LinearPotential:
      out.z_margin = theta_star - z_max;
      break;
    case Reaction::Variant::Fisher:
      if (!(W > 0.0))
        throw ValidationError("closed_form_bounds: the carrying capacity must be positive");
      // under a general observation functional the concave family admits no
      // positive factor at all
      out.z_margin = (weighted_measure ? theta_star : 0.0) - z_max;
      out.u_margin = W / 2.0 - u_bound;
      break;
    case Reaction::Variant::Zeldovich:
      if (!(W > 0.0))
        throw ValidationError("closed_form_bounds: the carrying capacity must be positive");
      out.z_margin = 3.0 * theta_star / W - z_max;
      out.u_margin = (weighted_measure ? 2.0 * W / 3.0 : W / 3.0) - u_bound;
      break;
    case Reaction::Variant::Custom:
      throw ValidationError(
          "closed_form_bounds: closed forms exist for the named reaction families only");
  }
  out.pass = out.z_margin >= 0.0 && out.u_margin >= 0.0;
  return out;
}

}  // namespace fracdiff
