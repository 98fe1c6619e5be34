#include "fracdiff/reactions.hpp"

#include <cmath>
#include <sstream>

namespace fracdiff {

namespace {

// step for the fallback central difference in t
constexpr double kTimeStep = 1e-6;

double checked(double v, const char* what, double w, double t, int node) {
  if (!std::isfinite(v)) {
    std::ostringstream os;
    os << "reaction evaluator " << what << " returned a non-finite value at w=" << w
       << ", t=" << t << ", node " << node;
    throw ValidationError(os.str());
  }
  return v;
}

}  // namespace

Reaction linear_potential(SpatialField z) {
  validate_field(z);
  Reaction r;
  r.variant = Reaction::Variant::LinearPotential;
  r.z = std::move(z);
  return r;
}

Reaction fisher_reaction(double W, SpatialField z) {
  if (!(W > 0.0)) throw ValidationError("Fisher reaction: W must be positive");
  validate_field(z);
  Reaction r;
  r.variant = Reaction::Variant::Fisher;
  r.W = W;
  r.z = std::move(z);
  return r;
}

Reaction zeldovich_reaction(double W, SpatialField z) {
  if (!(W > 0.0)) throw ValidationError("Zeldovich reaction: W must be positive");
  validate_field(z);
  Reaction r;
  r.variant = Reaction::Variant::Zeldovich;
  r.W = W;
  r.z = std::move(z);
  return r;
}

Reaction custom_reaction(SpatialField z, CustomEvaluators ev) {
  validate_field(z);
  const PointFn* fns[] = {&ev.a, &ev.a_w, &ev.a_t, &ev.a_ww, &ev.a_wt,
                          &ev.b, &ev.b_w, &ev.b_t, &ev.b_ww, &ev.b_wt};
  for (const PointFn* f : fns)
    if (!*f) throw ValidationError("custom reaction: all ten evaluators are required");
  Reaction r;
  r.variant = Reaction::Variant::Custom;
  r.z = std::move(z);
  r.custom = std::move(ev);
  return r;
}

void set_source(Reaction& r, std::function<double(double, double, double)> b,
                std::function<double(double, double, double)> b_t) {
  if (r.variant == Reaction::Variant::Custom)
    throw ValidationError("custom reactions carry their own b evaluators");
  r.source = std::move(b);
  r.source_t = std::move(b_t);
}

std::function<double(double, double, double)> table_source(MatrixXd table,
                                                           const TimeGrid& tg,
                                                           const SpaceGrid& grid) {
  validate_time_grid(tg);
  if (table.rows() != tg.n_nodes() || table.cols() != grid.n_nodes())
    throw ValidationError("source table: shape must be time nodes x space nodes");
  if (!table.allFinite()) throw ValidationError("source table: non-finite entries");
  return [table = std::move(table), tg, grid](double t, double x, double y) {
    int node = grid.dim == 1 ? (int)std::lround(x / grid.h(0))
                             : grid.index((int)std::lround(x / grid.h(0)),
                                          (int)std::lround(y / grid.h(1)));
    if (node < 0 || node >= grid.n_nodes())
      throw ValidationError("source table: point is outside the grid");
    double s = std::clamp(t / tg.tau(), 0.0, (double)tg.n_steps);
    int n = std::min((int)s, tg.n_steps - 1);
    double frac = s - n;
    return (1.0 - frac) * table(n, node) + frac * table(n + 1, node);
  };
}

double eval_f(const Reaction& r, double w, double t, int node) {
  Partials p = eval_partials(r, w, t, node);
  return p.a * r.z.values[node] + p.b;
}

Partials eval_partials(const Reaction& r, double w, double t, int node) {
  if (node < 0 || node >= r.z.values.size())
    throw ValidationError("eval: node index outside the factor grid");
  double x = r.z.grid.x(node), y = r.z.grid.y(node);
  Partials p;

  switch (r.variant) {
    case Reaction::Variant::LinearPotential:
      p.a = w;
      p.a_w = 1.0;
      break;
    case Reaction::Variant::Fisher:
      p.a = w * (1.0 - w / r.W);
      p.a_w = 1.0 - 2.0 * w / r.W;
      p.a_ww = -2.0 / r.W;
      break;
    case Reaction::Variant::Zeldovich:
      p.a = w * w * (1.0 - w / r.W);
      p.a_w = 2.0 * w - 3.0 * w * w / r.W;
      p.a_ww = 2.0 - 6.0 * w / r.W;
      break;
    case Reaction::Variant::Custom: {
      const CustomEvaluators& ev = *r.custom;
      p.a = checked(ev.a(w, t, x, y), "a", w, t, node);
      p.a_w = checked(ev.a_w(w, t, x, y), "a_w", w, t, node);
      p.a_t = checked(ev.a_t(w, t, x, y), "a_t", w, t, node);
      p.a_ww = checked(ev.a_ww(w, t, x, y), "a_ww", w, t, node);
      p.a_wt = checked(ev.a_wt(w, t, x, y), "a_wt", w, t, node);
      p.b = checked(ev.b(w, t, x, y), "b", w, t, node);
      p.b_w = checked(ev.b_w(w, t, x, y), "b_w", w, t, node);
      p.b_t = checked(ev.b_t(w, t, x, y), "b_t", w, t, node);
      p.b_ww = checked(ev.b_ww(w, t, x, y), "b_ww", w, t, node);
      p.b_wt = checked(ev.b_wt(w, t, x, y), "b_wt", w, t, node);
      return p;
    }
  }

  if (r.source) {
    p.b = checked(r.source(t, x, y), "b", w, t, node);
    if (r.source_t)
      p.b_t = checked(r.source_t(t, x, y), "b_t", w, t, node);
    else
      p.b_t = (r.source(t + kTimeStep, x, y) - r.source(std::max(t - kTimeStep, 0.0), x, y)) /
              (t < kTimeStep ? t + kTimeStep : 2.0 * kTimeStep);
  }
  return p;
}

double lipschitz_bound(const Reaction& r, double w_min, double w_max, double rho,
                       double T) {
  if (!(rho >= 0.0)) throw ValidationError("lipschitz_bound: rho must be nonnegative");
  if (w_min > w_max) std::swap(w_min, w_max);
  double lo = w_min - rho, hi = w_max + rho;
  const int kSamples = 201;
  double best = 0.0;
  for (int node = 0; node < r.z.values.size(); ++node)
    for (int it = 0; it < kSamples; ++it) {
      double t = T * it / (kSamples - 1);
      for (int iw = 0; iw < kSamples; ++iw) {
        double w = lo + (hi - lo) * iw / (kSamples - 1);
        Partials p = eval_partials(r, w, t, node);
        best = std::max(best, std::abs(p.a_w * r.z.values[node] + p.b_w));
      }
    }
  return best;
}

NegativityBound negativity_bound(const Reaction& r, double eta, double T) {
  if (!(eta > 0.0)) throw ValidationError("negativity_bound: eta must be positive");
  const int kSamples = 201;
  double M = 0.0;
  for (int node = 0; node < r.z.values.size(); ++node)
    for (int it = 0; it < kSamples; ++it) {
      double t = T * it / (kSamples - 1);
      for (int iw = 1; iw < kSamples; ++iw) {
        double w = -eta * iw / (kSamples - 1);
        double f = eval_f(r, w, t, node);
        M = std::max(M, -f / std::abs(w));
      }
    }
  return {M, eta};
}

}  // namespace fracdiff
