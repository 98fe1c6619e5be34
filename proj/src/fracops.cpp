#include "fracdiff/fracops.hpp"

#include <algorithm>
#include <cmath>

namespace fracdiff {

namespace {

constexpr double kPi = 3.14159265358979323846;

// Series sum of E_alpha(z); caller guarantees the sum is stable in double.
double ml_series(double alpha, double z) {
  const int max_terms = 10000;
  const double lx = std::log(std::abs(z));
  double s = 1.0;  // m = 0 term
  for (int m = 1; m <= max_terms; ++m) {
    double mag = std::exp(m * lx - std::lgamma(alpha * m + 1.0));
    double term = (z < 0.0 && (m & 1)) ? -mag : mag;
    s += term;
    if (m > 4 && mag < 1e-17 * std::max(std::abs(s), 1.0)) return s;
  }
  return std::numeric_limits<double>::quiet_NaN();  // cap hit, caller falls back
}

// Decimal digits lost to cancellation when summing the series at z < 0:
// log10 of the peak term magnitude.
double ml_series_cancellation_digits(double alpha, double x) {
  if (x <= 1.0) return 0.0;
  double m_peak = std::pow(x, 1.0 / alpha) / alpha;
  if (m_peak > 1e6) return 1e6;
  double lt = m_peak * std::log(x) - std::lgamma(alpha * m_peak + 1.0);
  return std::max(0.0, lt / std::log(10.0));
}

// Global integral representation evaluated on the half line.  After the
// substitution y = r^{1/alpha} the integrand carries the weight
// y^{alpha-1} e^{-y}; a double-exponential map y = exp(t - e^{-t}) with
// trapezoid steps handles both the endpoint and the decay, and step halving
// resolves the sharp spectral peak that appears as alpha -> 1.
double ml_integral(double alpha, double z) {
  const double ca = std::cos(kPi * alpha);
  const double sa = std::sin(kPi * alpha);
  const double tlo = -6.8, thi = 6.8;
  auto sweep = [&](double h) {
    const long n = (long)((thi - tlo) / h) + 1;
    double acc = 0.0;
    for (long i = 0; i < n; ++i) {
      double t = tlo + i * h;
      double u = t - std::exp(-t);  // y = e^u
      double y = std::exp(u);
      double au = alpha * u - y;  // log of y^alpha e^{-y}
      if (au < -745.0) continue;
      double ya = std::exp(alpha * u);
      double denom = ya * ya - 2.0 * ya * z * ca + z * z;
      acc += (1.0 + std::exp(-t)) * std::exp(au) / denom;
    }
    return h * acc * (-z) * sa / kPi;
  };
  double h = 0.5;
  double prev = sweep(h);
  for (int k = 0; k < 9; ++k) {
    h *= 0.5;
    double cur = sweep(h);
    if (std::abs(cur - prev) <= 5e-15 * std::max(std::abs(cur), 1e-300)) {
      prev = cur;
      break;
    }
    prev = cur;
  }
  if (z > 0.0) {
    double e = std::pow(z, 1.0 / alpha);
    prev += (e > 709.0) ? std::numeric_limits<double>::infinity() : std::exp(e) / alpha;
  }
  return prev;
}

}  // namespace

double mittag_leffler(double alpha, double z) {
  if (!(alpha > 0.0) || alpha > 1.0)
    throw ValidationError("mittag_leffler: alpha must lie in (0,1]");
  if (z > 40.0) throw ValidationError("mittag_leffler: argument above 40 not supported");
  if (z == 0.0) return 1.0;
  if (alpha == 1.0) return std::exp(z);

  // The series is exact arithmetic-wise but cancels catastrophically for
  // negative arguments once the peak term dwarfs the sum; the integral
  // representation takes over there and beyond |z| = 5.
  bool series_ok;
  if (z > 0.0)
    series_ok = z <= 5.0 && std::pow(z, 1.0 / alpha) / alpha < 9000.0;
  else
    series_ok = z >= -5.0 && ml_series_cancellation_digits(alpha, -z) <= 2.0;
  if (series_ok) {
    double s = ml_series(alpha, z);
    if (std::isfinite(s)) return s;
  }
  return ml_integral(alpha, z);
}

double Kernel::value(double t) const {
  if (!(t > 0.0)) throw ValidationError("kernel: evaluation requires t > 0");
  if (variant == Variant::FractionalPower)
    return std::pow(t, -beta) / gamma_fn(1.0 - beta);
  throw ValidationError("kernel: tabulated variant has no off-lattice values");
}

ArrayXd Kernel::tabulate(const TimeGrid& g) const {
  validate_time_grid(g);
  if (variant == Variant::FractionalPower) {
    ArrayXd v(g.n_steps);
    for (int j = 0; j < g.n_steps; ++j) v[j] = value(g.midpoint(j));
    return v;
  }
  if (midpoint_values.size() != g.n_steps)
    throw ValidationError("kernel: tabulated size does not match the time grid");
  return midpoint_values;
}

Kernel fractional_kernel(double beta) {
  if (!(beta > 0.0) || !(beta < 1.0))
    throw ValidationError("fractional_kernel: beta must lie in (0,1)");
  Kernel k;
  k.variant = Kernel::Variant::FractionalPower;
  k.beta = beta;
  return k;
}

Kernel tabulated_kernel(ArrayXd midpoint_values, bool declared_decreasing) {
  if (midpoint_values.size() == 0)
    throw ValidationError("tabulated_kernel: empty value table");
  Kernel k;
  k.variant = Kernel::Variant::Tabulated;
  k.midpoint_values = std::move(midpoint_values);
  k.declared_decreasing = declared_decreasing;
  return k;
}

KernelCheck check_kernel(const Kernel& k, const TimeGrid& g) {
  ArrayXd v = k.tabulate(g);
  KernelCheck c;
  c.positive = (v > 0.0).all();
  c.decreasing = true;
  const double slack = 1e-12 * v.abs().maxCoeff();
  for (int j = 0; j + 1 < v.size(); ++j)
    if (v[j + 1] > v[j] + slack) c.decreasing = false;
  c.first_over_last = v[v.size() - 1] != 0.0 ? v[0] / v[v.size() - 1] : 0.0;
  c.singular_at_zero = c.first_over_last >= 5.0;
  return c;
}

ArrayXd caputo_l1(const Eigen::Ref<const ArrayXd>& w, double beta, const TimeGrid& g) {
  validate_time_grid(g);
  if (!(beta > 0.0) || !(beta < 1.0)) throw ValidationError("caputo_l1: beta must lie in (0,1)");
  if (w.size() != g.n_nodes()) throw ValidationError("caputo_l1: series size does not match grid");
  const int N = g.n_steps;
  const double d = std::pow(g.tau(), -beta) / gamma_fn(2.0 - beta);
  ArrayXd c(N);
  for (int j = 0; j < N; ++j)
    c[j] = std::pow(j + 1.0, 1.0 - beta) - std::pow((double)j, 1.0 - beta);
  ArrayXd out = ArrayXd::Zero(N + 1);
  for (int n = 1; n <= N; ++n) {
    double acc = 0.0;
    for (int j = 0; j < n; ++j) acc += c[j] * (w[n - j] - w[n - j - 1]);
    out[n] = d * acc;
  }
  return out;
}

MatrixXd caputo_l1_columns(const MatrixXd& u, double beta, const TimeGrid& g) {
  validate_time_grid(g);
  if (u.rows() != g.n_nodes())
    throw ValidationError("caputo_l1_columns: trajectory rows do not match grid");
  const int N = g.n_steps;
  const double d = std::pow(g.tau(), -beta) / gamma_fn(2.0 - beta);
  ArrayXd c(N);
  for (int j = 0; j < N; ++j)
    c[j] = std::pow(j + 1.0, 1.0 - beta) - std::pow((double)j, 1.0 - beta);
  MatrixXd out = MatrixXd::Zero(u.rows(), u.cols());
  for (int n = 1; n <= N; ++n) {
    Eigen::RowVectorXd acc = Eigen::RowVectorXd::Zero(u.cols());
    for (int j = 0; j < n; ++j) acc += c[j] * (u.row(n - j) - u.row(n - j - 1));
    out.row(n) = d * acc;
  }
  return out;
}

ArrayXd frac_integral(const Eigen::Ref<const ArrayXd>& w, double gamma_ord, const TimeGrid& g) {
  validate_time_grid(g);
  if (!(gamma_ord > 0.0) || gamma_ord > 1.0)
    throw ValidationError("frac_integral: order must lie in (0,1]");
  if (w.size() != g.n_nodes())
    throw ValidationError("frac_integral: series size does not match grid");
  const int N = g.n_steps;
  const double tau = g.tau();
  const double gb = gamma_fn(gamma_ord);
  // r^b and r^{b+1} at the node offsets, r = distance to the evaluation node
  ArrayXd rb(N + 1), rb1(N + 1);
  for (int k = 0; k <= N; ++k) {
    rb[k] = std::pow(k * tau, gamma_ord);
    rb1[k] = std::pow(k * tau, gamma_ord + 1.0);
  }
  ArrayXd out = ArrayXd::Zero(N + 1);
  for (int n = 1; n <= N; ++n) {
    double acc = 0.0;
    for (int j = 0; j < n; ++j) {
      // exact integral of r^{b-1} (w_j + ((n-j) - r/tau) dw) over [r1, r2]
      double i0 = (rb[n - j] - rb[n - j - 1]) / gamma_ord;
      double i1 = (rb1[n - j] - rb1[n - j - 1]) / (gamma_ord + 1.0);
      double dw = w[j + 1] - w[j];
      acc += w[j] * i0 + dw * ((n - j) * i0 - i1 / tau);
    }
    out[n] = acc / gb;
  }
  return out;
}

ArrayXd generalized_derivative(const Eigen::Ref<const ArrayXd>& w, const Kernel& k,
                               const TimeGrid& g) {
  if (k.variant == Kernel::Variant::FractionalPower) return caputo_l1(w, k.beta, g);
  validate_time_grid(g);
  if (w.size() != g.n_nodes())
    throw ValidationError("generalized_derivative: series size does not match grid");
  ArrayXd kv = k.tabulate(g);
  const int N = g.n_steps;
  const double tau = g.tau();
  // K_n = (k * (w - w0))(t_n) by the midpoint rule in the kernel argument,
  // then a backward difference of K.
  ArrayXd K = ArrayXd::Zero(N + 1);
  for (int n = 1; n <= N; ++n) {
    double acc = 0.0;
    for (int j = 0; j < n; ++j) {
      double vmid = 0.5 * ((w[j] - w[0]) + (w[j + 1] - w[0]));
      acc += kv[n - 1 - j] * vmid;
    }
    K[n] = tau * acc;
  }
  ArrayXd out = ArrayXd::Zero(N + 1);
  for (int n = 1; n <= N; ++n) out[n] = (K[n] - K[n - 1]) / tau;
  return out;
}

namespace {

// Adaptive Simpson on [a,b] with classic error halving.
template <class F>
double adaptive_simpson(F f, double a, double b, double fa, double fm, double fb, double whole,
                        double tol, int depth) {
  double m = 0.5 * (a + b);
  double lm = 0.5 * (a + m), rm = 0.5 * (m + b);
  double flm = f(lm), frm = f(rm);
  double left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
  double right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
  if (depth <= 0 || std::abs(left + right - whole) <= 15.0 * tol)
    return left + right + (left + right - whole) / 15.0;
  return adaptive_simpson(f, a, m, fa, flm, fm, left, tol * 0.5, depth - 1) +
         adaptive_simpson(f, m, b, fm, frm, fb, right, tol * 0.5, depth - 1);
}

template <class F>
double integrate(F f, double a, double b, double tol) {
  double m = 0.5 * (a + b);
  double fa = f(a), fm = f(m), fb = f(b);
  double whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
  return adaptive_simpson(f, a, b, fa, fm, fb, whole, tol, 48);
}

}  // namespace

double kernel_exp_moment(const Kernel& k, double sigma, const TimeGrid& g) {
  validate_time_grid(g);
  if (sigma < 0.0) throw ValidationError("kernel_exp_moment: sigma must be nonnegative");
  if (k.variant == Kernel::Variant::FractionalPower) {
    // substitute s = x^{1/(1-beta)}: the singular factor integrates away and
    // the integrand becomes smooth
    const double b = k.beta;
    const double p = 1.0 / (1.0 - b);
    auto f = [&](double x) {
      return std::exp(-sigma * std::pow(x, p)) / ((1.0 - b) * gamma_fn(1.0 - b));
    };
    return integrate(f, 0.0, std::pow(g.T, 1.0 - b), 1e-14);
  }
  ArrayXd kv = k.tabulate(g);
  double acc = 0.0;
  for (int j = 0; j < g.n_steps; ++j) acc += std::exp(-sigma * g.midpoint(j)) * kv[j];
  return acc * g.tau();
}

ShiftedKernel kernel_shift(const Kernel& k, double sigma, const TimeGrid& g) {
  validate_time_grid(g);
  if (sigma < 0.0) throw ValidationError("kernel_shift: sigma must be nonnegative");
  ArrayXd kv = k.tabulate(g);
  const int N = g.n_steps;
  const double tau = g.tau();

  // cell masses e^{-sigma m_j} k(m_j) tau and their suffix sums give the tail
  // integrals at nodes; the midpoint itself adds half a cell
  ArrayXd cell(N);
  for (int j = 0; j < N; ++j) cell[j] = std::exp(-sigma * g.midpoint(j)) * kv[j] * tau;
  ArrayXd tail_nodes = ArrayXd::Zero(N + 1);  // int_{t_n}^T
  for (int n = N - 1; n >= 0; --n) tail_nodes[n] = tail_nodes[n + 1] + cell[n];

  ArrayXd shifted(N);
  for (int j = 0; j < N; ++j) {
    double tail_mid = tail_nodes[j + 1] + 0.5 * cell[j];
    shifted[j] = std::exp(-sigma * g.midpoint(j)) * kv[j] - sigma * tail_mid;
  }

  ShiftedKernel out;
  out.kernel = tabulated_kernel(shifted, false);
  out.sigma = sigma;
  out.total_weight = tail_nodes[0];
  out.tail = tail_nodes;
  const double scale = std::max(shifted.abs().maxCoeff(), 1e-300);
  out.nonnegative = (shifted >= -1e-14 * scale).all();
  out.decreasing = true;
  for (int j = 0; j + 1 < N; ++j)
    if (shifted[j + 1] > shifted[j] + 1e-12 * scale) out.decreasing = false;
  return out;
}

}  // namespace fracdiff
