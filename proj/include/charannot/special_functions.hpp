#pragma once

// Regularized incomplete beta and gamma functions and the distribution
// functions built on them.

#include <cmath>
#include <limits>

#include "charannot/errors.hpp"

namespace charannot::special {

namespace detail {

inline constexpr int kMaxIterations = 500;
inline constexpr double kEps = 1e-15;
inline constexpr double kTiny = 1e-300;

// Continued fraction for I_x(a, b), modified Lentz.
inline double beta_cf(double a, double b, double x) {
  const double qab = a + b;
  const double qap = a + 1.0;
  const double qam = a - 1.0;
  double c = 1.0;
  double d = 1.0 - qab * x / qap;
  if (std::fabs(d) < kTiny) d = kTiny;
  d = 1.0 / d;
  double h = d;
  for (int m = 1; m <= kMaxIterations; ++m) {
    const double m2 = 2.0 * m;
    double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
    d = 1.0 + aa * d;
    if (std::fabs(d) < kTiny) d = kTiny;
    c = 1.0 + aa / c;
    if (std::fabs(c) < kTiny) c = kTiny;
    d = 1.0 / d;
    h *= d * c;
    aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
    d = 1.0 + aa * d;
    if (std::fabs(d) < kTiny) d = kTiny;
    c = 1.0 + aa / c;
    if (std::fabs(c) < kTiny) c = kTiny;
    d = 1.0 / d;
    const double del = d * c;
    h *= del;
    if (std::fabs(del - 1.0) < kEps) break;
  }
  return h;
}

}  // namespace detail

// I_x(a, b) for a, b > 0 and x in [0, 1].
inline double incomplete_beta(double a, double b, double x) {
  if (!(a > 0.0) || !(b > 0.0)) throw InvalidArgument("incomplete_beta: a and b must be positive");
  if (!(x >= 0.0 && x <= 1.0)) throw InvalidArgument("incomplete_beta: x must lie in [0, 1]");
  if (x == 0.0) return 0.0;
  if (x == 1.0) return 1.0;
  const double log_front = std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) + a * std::log(x) + b * std::log1p(-x);
  const double front = std::exp(log_front);
  if (x < (a + 1.0) / (a + b + 2.0)) return front * detail::beta_cf(a, b, x) / a;
  return 1.0 - front * detail::beta_cf(b, a, 1.0 - x) / b;
}

// Inverse of I_x(a, b) in x, by bisection to machine precision.
inline double beta_quantile(double p, double a, double b) {
  if (!(p >= 0.0 && p <= 1.0)) throw InvalidArgument("beta_quantile: p must lie in [0, 1]");
  if (p == 0.0) return 0.0;
  if (p == 1.0) return 1.0;
  double lo = 0.0;
  double hi = 1.0;
  for (int i = 0; i < 200 && hi - lo > 1e-15; ++i) {
    const double mid = 0.5 * (lo + hi);
    if (incomplete_beta(a, b, mid) < p) {
      lo = mid;
    } else {
      hi = mid;
    }
  }
  return 0.5 * (lo + hi);
}

// P(a, x), the regularized lower incomplete gamma function.
inline double lower_incomplete_gamma(double a, double x);

// Q(a, x) = 1 - P(a, x).
inline double upper_incomplete_gamma(double a, double x) {
  if (!(a > 0.0)) throw InvalidArgument("incomplete_gamma: a must be positive");
  if (!(x >= 0.0)) throw InvalidArgument("incomplete_gamma: x must be non-negative");
  if (x == 0.0) return 1.0;
  if (std::isinf(x)) return 0.0;
  const double log_front = -x + a * std::log(x) - std::lgamma(a);
  if (x < a + 1.0) {
    // Series for P.
    double ap = a;
    double sum = 1.0 / a;
    double del = sum;
    for (int n = 0; n < detail::kMaxIterations; ++n) {
      ap += 1.0;
      del *= x / ap;
      sum += del;
      if (std::fabs(del) < std::fabs(sum) * detail::kEps) break;
    }
    return 1.0 - sum * std::exp(log_front);
  }
  // Continued fraction for Q, modified Lentz.
  double b = x + 1.0 - a;
  double c = 1.0 / detail::kTiny;
  double d = 1.0 / b;
  double h = d;
  for (int i = 1; i <= detail::kMaxIterations; ++i) {
    const double an = -i * (i - a);
    b += 2.0;
    d = an * d + b;
    if (std::fabs(d) < detail::kTiny) d = detail::kTiny;
    c = b + an / c;
    if (std::fabs(c) < detail::kTiny) c = detail::kTiny;
    d = 1.0 / d;
    const double del = d * c;
    h *= del;
    if (std::fabs(del - 1.0) < detail::kEps) break;
  }
  return std::exp(log_front) * h;
}

inline double lower_incomplete_gamma(double a, double x) { return 1.0 - upper_incomplete_gamma(a, x); }

// P(|T| >= |t|) for Student's t with `df` degrees of freedom.
inline double student_t_two_tailed(double t, double df) {
  if (!(df > 0.0)) throw InvalidArgument("student_t: df must be positive");
  if (std::isinf(t)) return 0.0;
  return incomplete_beta(df / 2.0, 0.5, df / (df + t * t));
}

// P(X >= x) for a chi-square variable with `df` degrees of freedom.
inline double chi_square_sf(double x, double df) {
  if (!(df > 0.0)) throw InvalidArgument("chi_square: df must be positive");
  if (x <= 0.0) return 1.0;
  return upper_incomplete_gamma(df / 2.0, x / 2.0);
}

}  // namespace charannot::special
