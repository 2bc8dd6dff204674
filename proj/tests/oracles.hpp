#pragma once

// Independent reference computations and shared model fixtures for tests.
// Nothing here calls into the code paths it is used to check.

#include "odre/odre.hpp"

#include <boost/math/special_functions/gamma.hpp>
#include <boost/multiprecision/cpp_bin_float.hpp>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <functional>
#include <numeric>
#include <vector>

namespace oracle {

// ---------------------------------------------------------------------------
// Goodness of fit

/// Asymptotic Kolmogorov tail with the small-sample correction
/// lambda = (sqrt(n) + 0.12 + 0.11 / sqrt(n)) D.
inline double ks_pvalue(double d, std::size_t n) {
  const double sn = std::sqrt(static_cast<double>(n));
  const double lambda = (sn + 0.12 + 0.11 / sn) * d;
  if (lambda < 1e-3) return 1.0;
  double sum = 0.0;
  double sign = 1.0;
  for (int j = 1; j <= 200; ++j) {
    const double term = sign * std::exp(-2.0 * j * j * lambda * lambda);
    sum += term;
    if (std::abs(term) < 1e-16) break;
    sign = -sign;
  }
  return std::clamp(2.0 * sum, 0.0, 1.0);
}

/// One-sample Kolmogorov-Smirnov statistic against a continuous CDF.
inline double ks_statistic(std::vector<double> xs, const std::function<double(double)>& cdf) {
  std::sort(xs.begin(), xs.end());
  const double n = static_cast<double>(xs.size());
  double d = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    const double f = cdf(xs[i]);
    d = std::max({d, (static_cast<double>(i) + 1.0) / n - f, f - static_cast<double>(i) / n});
  }
  return d;
}

inline double ks_test(const std::vector<double>& xs, const std::function<double(double)>& cdf) {
  return ks_pvalue(ks_statistic(xs, cdf), xs.size());
}

/// Two-sample KS p-value.
inline double ks_two_sample(std::vector<double> a, std::vector<double> b) {
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  std::size_t i = 0, j = 0;
  double d = 0.0;
  while (i < a.size() && j < b.size()) {
    const double x = std::min(a[i], b[j]);
    while (i < a.size() && a[i] <= x) ++i;
    while (j < b.size() && b[j] <= x) ++j;
    d = std::max(d, std::abs(static_cast<double>(i) / a.size() - static_cast<double>(j) / b.size()));
  }
  const double ne = static_cast<double>(a.size()) * b.size() / (a.size() + b.size());
  return ks_pvalue(d, static_cast<std::size_t>(ne));
}

/// Pearson chi-square p-value of observed counts against probabilities;
/// cells with expected count below 5 are pooled.
inline double chi2_test(const std::vector<double>& counts, const std::vector<double>& probs) {
  const double n = std::accumulate(counts.begin(), counts.end(), 0.0);
  double stat = 0.0;
  int cells = 0;
  double pool_obs = 0.0, pool_exp = 0.0;
  for (std::size_t i = 0; i < counts.size(); ++i) {
    const double e = n * probs[i];
    if (e < 5.0) {
      pool_obs += counts[i];
      pool_exp += e;
      continue;
    }
    stat += (counts[i] - e) * (counts[i] - e) / e;
    ++cells;
  }
  if (pool_exp > 0.0) {
    stat += (pool_obs - pool_exp) * (pool_obs - pool_exp) / std::max(pool_exp, 1e-300);
    ++cells;
  }
  if (cells < 2) return 1.0;
  return boost::math::gamma_q(0.5 * (cells - 1), 0.5 * stat);
}

// ---------------------------------------------------------------------------
// Distributions

inline double poisson_pmf(double lambda, long k) {
  if (lambda == 0.0) return k == 0 ? 1.0 : 0.0;
  return std::exp(k * std::log(lambda) - lambda - std::lgamma(k + 1.0));
}

/// NB with mean m and shape r: C(k+r-1, k) (r/(r+m))^r (m/(r+m))^k.
inline double negbin_pmf(int r, double m, long k) {
  if (m == 0.0) return k == 0 ? 1.0 : 0.0;
  return std::exp(std::lgamma(k + r) - std::lgamma(k + 1.0) - std::lgamma(static_cast<double>(r)) +
                  r * std::log(r / (r + m)) + k * std::log(m / (r + m)));
}

/// Direct half-L1 sum over 0..kmax.
template <class Pmf>
double discrete_tv(Pmf p, Pmf q, long kmax) {
  double total = 0.0;
  for (long k = 0; k <= kmax; ++k) total += std::abs(p(k) - q(k));
  return 0.5 * total;
}

/// Composite Simpson rule on [a, b] with n (even) panels.
inline double simpson(const std::function<double(double)>& f, double a, double b, int n) {
  const double h = (b - a) / n;
  double s = f(a) + f(b);
  for (int i = 1; i < n; ++i) s += f(a + i * h) * (i % 2 ? 4.0 : 2.0);
  return s * h / 3.0;
}

// ---------------------------------------------------------------------------
// Wasserstein by enumeration

/// Minimum over all permutations of the exact mean truncated distance,
/// rounded once to the nearest double. Candidates are screened in double
/// precision and the near-optimal ones re-evaluated in 1024-bit arithmetic,
/// which is exact for differences of doubles in a moderate exponent range.
inline double permutation_w1(const std::vector<double>& a, const std::vector<double>& b) {
  namespace mp = boost::multiprecision;
  using Big = mp::number<mp::cpp_bin_float<1024, mp::digit_base_2>>;
  const std::size_t n = a.size();
  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), 0);
  std::vector<std::vector<std::size_t>> candidates;
  double best = HUGE_VAL;
  do {
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) s += std::min(std::abs(a[i] - b[perm[i]]), 1.0);
    if (s < best - 1e-9) candidates.clear();
    if (s <= best + 1e-9) candidates.push_back(perm);
    best = std::min(best, s);
  } while (std::next_permutation(perm.begin(), perm.end()));
  Big exact_best = 1e300;
  for (const auto& c : candidates) {
    Big s = 0;
    for (std::size_t i = 0; i < n; ++i) {
      const Big d = mp::abs(Big(a[i]) - Big(b[c[i]]));
      s += d < 1 ? d : Big(1);
    }
    if (s < exact_best) exact_best = s;
  }
  const Big mean = exact_best / static_cast<unsigned>(n);
  // Round to nearest, ties to even, checked against both neighbours.
  double r = static_cast<double>(mean);
  for (double nb : {std::nextafter(r, -HUGE_VAL), std::nextafter(r, HUGE_VAL)}) {
    const Big dr = mp::abs(mean - Big(r)), dn = mp::abs(mean - Big(nb));
    if (dn < dr) r = nb;
    else if (dn == dr) {
      std::int64_t bits_r, bits_n;
      std::memcpy(&bits_r, &r, 8);
      std::memcpy(&bits_n, &nb, 8);
      if (bits_n % 2 == 0) r = nb;
    }
  }
  return r;
}

// ---------------------------------------------------------------------------
// Statistics

struct MeanSe {
  double mean = 0.0;
  double se = 0.0;
};

inline MeanSe mean_se(const std::vector<double>& xs) {
  const double n = static_cast<double>(xs.size());
  const double m = std::accumulate(xs.begin(), xs.end(), 0.0) / n;
  double ss = 0.0;
  for (double x : xs) ss += (x - m) * (x - m);
  return {m, std::sqrt(ss / (n - 1.0) / n)};
}

/// Least-squares slope of y on x with its standard error.
struct Fit {
  double slope = 0.0;
  double se = 0.0;
};

inline Fit least_squares(const std::vector<double>& x, const std::vector<double>& y) {
  const double n = static_cast<double>(x.size());
  const double mx = std::accumulate(x.begin(), x.end(), 0.0) / n;
  const double my = std::accumulate(y.begin(), y.end(), 0.0) / n;
  double sxx = 0.0, sxy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxx += (x[i] - mx) * (x[i] - mx);
    sxy += (x[i] - mx) * (y[i] - my);
  }
  const double slope = sxy / sxx;
  double rss = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double r = y[i] - my - slope * (x[i] - mx);
    rss += r * r;
  }
  return {slope, std::sqrt(rss / (n - 2.0) / sxx)};
}

/// Upper 97.5% Student-t quantile for small degrees of freedom.
inline double t975(int dof) {
  static const double table[] = {0, 12.706, 4.303, 3.182, 2.776, 2.571, 2.447, 2.365, 2.306, 2.262, 2.228};
  return dof >= 1 && dof <= 10 ? table[dof] : 1.96;
}

}  // namespace oracle

namespace odre {

// Readable gtest output for states.
inline void PrintTo(const State& s, std::ostream* os) {
  *os << "(";
  for (std::size_t i = 0; i < s.size(); ++i) *os << (i ? ", " : "") << s[i];
  *os << ")";
}

}  // namespace odre

namespace fixture {

using namespace odre;

/// Poisson INGARCH-X benchmark: lambda' = 0.4 lambda + 0.3 X y + 1, X ~ U(0,1) i.i.d.
inline ModelSpec benchmark() {
  ModelSpec m;
  m.kernel = kernel::Poisson{};
  link::Linear l;
  l.kappa = constant_map(0.4);
  l.kappa_tilde = CoefficientMap(coef::AffineAbs{0.0, 0.3}, true);
  l.delta_tilde = constant_map(1.0);
  m.link.variant = l;
  m.covariates.variant = covariate::IID{Uniform{0.0, 1.0}, 1};
  return m;
}

inline ModelSpec linear_poisson(double kappa, double kappa_tilde, double delta_tilde,
                                CovariateProcessSpec cov = {covariate::Constant{{1.0}}}) {
  ModelSpec m;
  m.kernel = kernel::Poisson{};
  link::Linear l;
  l.kappa = constant_map(kappa);
  l.kappa_tilde = constant_map(kappa_tilde);
  l.delta_tilde = constant_map(delta_tilde);
  m.link.variant = l;
  m.covariates = std::move(cov);
  return m;
}

/// Logistic autoregression with covariate interaction, X ~ N(0,1).
inline ModelSpec logit_benchmark() {
  ModelSpec m;
  m.kernel = kernel::BernoulliLogit{};
  link::Linear l;
  l.kappa = constant_map(0.5);
  l.kappa_tilde = CoefficientMap(coef::Affine{0.0, {0.5}});
  l.delta_tilde = CoefficientMap(coef::Affine{-0.2, {0.3}});
  m.link.variant = l;
  m.covariates.variant = covariate::IID{Gaussian{0.0, 1.0}, 1};
  return m;
}

inline std::vector<ObservationKernel> all_families() {
  return {kernel::Poisson{},
          kernel::NegBinomial{3},
          kernel::BernoulliLogit{},
          kernel::BernoulliProbit{},
          kernel::Multinomial{3},
          kernel::GarchGaussian{1.0},
          kernel::Location{kernel::Density::Gaussian, 1.0, 3.0},
          kernel::Location{kernel::Density::Laplace, 1.0, 3.0},
          kernel::Location{kernel::Density::StudentT, 1.0, 3.0}};
}

/// A model around a kernel, for the kernel-level checks.
inline ModelSpec model_for(const ObservationKernel& k) {
  ModelSpec m;
  m.kernel = k;
  if (std::holds_alternative<kernel::Multinomial>(k)) {
    const auto N = static_cast<std::size_t>(std::get<kernel::Multinomial>(k).N);
    link::Categorical c;
    c.kappa = constant_map(0.5);
    c.kappa_tilde = constant_map(1.0);
    c.delta_tilde = constant_map(1.0);
    c.table.assign(N - 1, std::vector<double>(N, 0.0));
    for (std::size_t j = 0; j + 1 < N; ++j) c.table[j][j + 1] = 1.0;
    c.intercept.assign(N - 1, -0.5);
    m.link.variant = c;
  } else {
    link::Linear l;
    l.kappa = constant_map(0.5);
    l.kappa_tilde = constant_map(0.2);
    l.delta_tilde = constant_map(1.0);
    l.order = supported_order(k);
    m.link.variant = l;
    if (std::holds_alternative<kernel::GarchGaussian>(k)) m.link.floor = std::get<kernel::GarchGaussian>(k).c_minus;
  }
  m.covariates.variant = covariate::Constant{{1.0}};
  return m;
}

}  // namespace fixture
