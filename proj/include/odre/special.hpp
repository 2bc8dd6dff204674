#pragma once

// Scalar distribution functions shared by kernels, covariates and verifiers.

#include <boost/math/distributions/students_t.hpp>
#include <boost/math/quadrature/gauss_kronrod.hpp>
#include <boost/math/special_functions/erf.hpp>

#include <algorithm>
#include <cmath>
#include <numbers>

namespace odre::special {

inline constexpr double kInvSqrt2 = 0.70710678118654752440;
inline constexpr double kInvSqrt2Pi = 0.39894228040143267794;

inline double normal_pdf(double z) { return kInvSqrt2Pi * std::exp(-0.5 * z * z); }
inline double normal_cdf(double z) { return 0.5 * std::erfc(-z * kInvSqrt2); }
inline double normal_sf(double z) { return 0.5 * std::erfc(z * kInvSqrt2); }

/// log(1 - Phi(z)), accurate far into the upper tail.
inline double log_normal_sf(double z) {
  if (z < 35.0) return std::log(normal_sf(z));
  const double r = 1.0 / (z * z);
  const double series = 1.0 - r * (1.0 - 3.0 * r * (1.0 - 5.0 * r * (1.0 - 7.0 * r)));
  return -0.5 * z * z - std::log(z) - 0.5 * std::log(2.0 * std::numbers::pi) + std::log(series);
}

inline double normal_quantile(double p) { return -std::numbers::sqrt2 * boost::math::erfc_inv(2.0 * p); }

inline double logistic_cdf(double s) {
  if (s >= 0.0) return 1.0 / (1.0 + std::exp(-s));
  const double e = std::exp(s);
  return e / (1.0 + e);
}

inline double laplace_pdf(double y, double b) { return std::exp(-std::abs(y) / b) / (2.0 * b); }
inline double laplace_cdf(double y, double b) {
  return y < 0.0 ? 0.5 * std::exp(y / b) : 1.0 - 0.5 * std::exp(-y / b);
}
inline double laplace_quantile(double p, double b) {
  return p < 0.5 ? b * std::log(2.0 * p) : -b * std::log(2.0 * (1.0 - p));
}

inline double student_pdf(double y, double nu) {
  const double log_norm = std::lgamma(0.5 * (nu + 1.0)) - std::lgamma(0.5 * nu) - 0.5 * std::log(nu * std::numbers::pi);
  return std::exp(log_norm - 0.5 * (nu + 1.0) * std::log1p(y * y / nu));
}
inline double student_cdf(double y, double nu) {
  return boost::math::cdf(boost::math::students_t_distribution<double>(nu), y);
}
inline double student_sf(double y, double nu) {
  return boost::math::cdf(boost::math::complement(boost::math::students_t_distribution<double>(nu), y));
}
inline double student_quantile(double p, double nu) {
  return boost::math::quantile(boost::math::students_t_distribution<double>(nu), p);
}

/// Adaptive Gauss-Kronrod on [a, b] (either bound may be infinite).
/// Returns false when the error estimate stays above `abs_tol`. The stopping
/// rule is relative to the L1 norm of f, which is at most 1 for the densities
/// integrated here, so the relative target is a tenth of `abs_tol`.
template <class F>
bool integrate(F&& f, double a, double b, double abs_tol, double& value, double& error) {
  const double rel = std::max(0.1 * abs_tol, 1e-15);
  value = boost::math::quadrature::gauss_kronrod<double, 31>::integrate(f, a, b, 30, rel, &error);
  return error < abs_tol;
}

}  // namespace odre::special
