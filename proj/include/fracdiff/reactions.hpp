#pragma once

#include <functional>
#include <optional>

#include "fracdiff/domain.hpp"
#include "fracdiff/types.hpp"

namespace fracdiff {

// partials of the split f(w,t,x) = a(w,t,x) z(x) + b(w,t,x) at one point
struct Partials {
  double a = 0.0, a_w = 0.0, a_t = 0.0, a_ww = 0.0, a_wt = 0.0;
  double b = 0.0, b_w = 0.0, b_t = 0.0, b_ww = 0.0, b_wt = 0.0;
};

// evaluators for a user-defined reaction; all take (w, t, x, y)
using PointFn = std::function<double(double, double, double, double)>;

struct CustomEvaluators {
  PointFn a, a_w, a_t, a_ww, a_wt;
  PointFn b, b_w, b_t, b_ww, b_wt;
};

// f = a(w)·z(x) + b(t,x) for the named variants:
//   LinearPotential  a(w) = w
//   Fisher           a(w) = w (1 - w/W)
//   Zeldovich        a(w) = w^2 (1 - w/W)
// Custom supplies every evaluator itself (b may then depend on w too).
struct Reaction {
  enum class Variant { LinearPotential, Fisher, Zeldovich, Custom };
  Variant variant = Variant::LinearPotential;
  double W = 1.0;
  SpatialField z;
  // source b(t,x) for the named variants; zero when absent. If b_t is not
  // supplied it is approximated by a central difference in t.
  std::function<double(double, double, double)> source;
  std::function<double(double, double, double)> source_t;
  std::optional<CustomEvaluators> custom;
};

Reaction linear_potential(SpatialField z);
Reaction fisher_reaction(double W, SpatialField z);
Reaction zeldovich_reaction(double W, SpatialField z);
Reaction custom_reaction(SpatialField z, CustomEvaluators ev);

void set_source(Reaction& r, std::function<double(double, double, double)> b,
                std::function<double(double, double, double)> b_t = {});

// linear-in-t interpolation of a lattice table (rows = time nodes, cols =
// space nodes); exact at the nodes of both grids
std::function<double(double, double, double)> table_source(MatrixXd table,
                                                           const TimeGrid& tg,
                                                           const SpaceGrid& grid);

double eval_f(const Reaction& r, double w, double t, int node);
Partials eval_partials(const Reaction& r, double w, double t, int node);

// sup of |f_w| over [w_min - rho, w_max + rho] x [0,T] x nodes on a sampling
// lattice (201 points per axis)
double lipschitz_bound(const Reaction& r, double w_min, double w_max, double rho,
                       double T);

// smallest M with f(w,t,x) >= -M |w| for w in (-eta, 0), fitted on the same
// kind of sampling lattice
struct NegativityBound {
  double M = 0.0;
  double eta = 0.0;
};

NegativityBound negativity_bound(const Reaction& r, double eta, double T);

}  // namespace fracdiff
