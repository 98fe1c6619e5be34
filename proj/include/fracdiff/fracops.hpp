#pragma once

#include <cmath>
#include <limits>

#include "fracdiff/types.hpp"

namespace fracdiff {

// Lanczos approximation (g = 7, 9 coefficients), reflection for negative arguments.
// Relative error below 1e-13 away from the poles.
template <class Scalar>
Scalar gamma_fn(Scalar x) {
  static const double lanczos[9] = {
      0.99999999999980993,     676.5203681218851,     -1259.1392167224028,
      771.32342877765313,      -176.61502916214059,   12.507343278686905,
      -0.13857109526572012,    9.9843695780195716e-6, 1.5056327351493116e-7};
  const Scalar pi = Scalar(3.14159265358979323846);
  if (x < Scalar(0.5)) {
    if (x == std::floor(x)) throw ValidationError("gamma_fn: pole at nonpositive integer");
    return pi / (std::sin(pi * x) * gamma_fn(Scalar(1) - x));
  }
  x -= Scalar(1);
  Scalar a = Scalar(lanczos[0]);
  Scalar t = x + Scalar(7.5);
  for (int i = 1; i < 9; ++i) a += Scalar(lanczos[i]) / (x + Scalar(i));
  const Scalar sqrt2pi = Scalar(2.5066282746310002);
  return sqrt2pi * std::pow(t, x + Scalar(0.5)) * std::exp(-t) * a;
}

// E_alpha(z) for alpha in (0,1], z <= 40.  Series where it is stable, the
// global integral representation (with the exponential term for z > 0) elsewhere.
double mittag_leffler(double alpha, double z);

// Memory kernel of the time derivative: either the fractional power
// t^{-beta}/Gamma(1-beta) or values tabulated at the subinterval midpoints of
// a time grid.  The kernel is never evaluated at t = 0.
struct Kernel {
  enum class Variant { FractionalPower, Tabulated };
  Variant variant = Variant::FractionalPower;
  double beta = 0.5;           // FractionalPower only
  ArrayXd midpoint_values;     // Tabulated only, size n_steps
  bool declared_decreasing = true;

  double value(double t) const;
  ArrayXd tabulate(const TimeGrid& g) const;
};

Kernel fractional_kernel(double beta);
Kernel tabulated_kernel(ArrayXd midpoint_values, bool declared_decreasing = true);

// Grid checks of the kernel hypotheses: positivity and monotone decay on the
// midpoint lattice, plus a finite-sample proxy for the blow-up at t = 0+
// (first midpoint value at least 5x the last).
struct KernelCheck {
  bool positive = false;
  bool decreasing = false;
  bool singular_at_zero = false;
  double first_over_last = 0.0;
};
KernelCheck check_kernel(const Kernel& k, const TimeGrid& g);

// Piecewise-linear (L1) discretization of the Caputo derivative of order
// beta in (0,1) applied to w - w(0); output at node 0 is zero.
ArrayXd caputo_l1(const Eigen::Ref<const ArrayXd>& w, double beta, const TimeGrid& g);

// Columnwise L1 derivative of a trajectory (rows = time nodes).
MatrixXd caputo_l1_columns(const MatrixXd& u, double beta, const TimeGrid& g);

// Riemann-Liouville integral of order gamma_ord in (0,1]: the singular factor
// is integrated exactly against the piecewise-linear interpolant of w.
ArrayXd frac_integral(const Eigen::Ref<const ArrayXd>& w, double gamma_ord, const TimeGrid& g);

// d/dt of the convolution k * (w - w(0)) by midpoint product quadrature.
// A FractionalPower kernel dispatches to caputo_l1 so the two code paths
// agree exactly on that case.
ArrayXd generalized_derivative(const Eigen::Ref<const ArrayXd>& w, const Kernel& k,
                               const TimeGrid& g);

// int_0^T e^{-sigma s} k(s) ds; adaptive on the smooth substitution for the
// fractional power, midpoint sum for tabulated kernels.
double kernel_exp_moment(const Kernel& k, double sigma, const TimeGrid& g);

// Exponentially shifted kernel
//   k~(t) = e^{-sigma t} k(t) - sigma int_t^T e^{-sigma s} k(s) ds,
// tabulated at the midpoints of g.  total_weight = int_0^T e^{-sigma s} k ds
// and tail[n] = int_{t_n}^T e^{-sigma s} k ds at the time nodes.
struct ShiftedKernel {
  Kernel kernel;
  double sigma = 0.0;
  double total_weight = 0.0;
  ArrayXd tail;
  bool nonnegative = false;
  bool decreasing = false;
};
ShiftedKernel kernel_shift(const Kernel& k, double sigma, const TimeGrid& g);

}  // namespace fracdiff
