#pragma once

// Observation kernels p(.|s): sampling, A3 bounds, a brute-force TV oracle,
// maximal coupling and conditional moments.

#include "odre/error.hpp"
#include "odre/rng.hpp"
#include "odre/special.hpp"

#include <boost/math/special_functions/beta.hpp>
#include <boost/math/special_functions/gamma.hpp>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <numeric>
#include <span>
#include <string>
#include <variant>
#include <vector>

namespace odre {

// ---------------------------------------------------------------------------
// Latent state

inline constexpr std::size_t kMaxStateDim = 15;

/// Fixed-capacity latent state. Scalar for every family except Multinomial.
class State {
 public:
  State() = default;
  State(double x) : n_(1) { v_[0] = x; }  // NOLINT: scalar states convert implicitly
  explicit State(std::span<const double> xs) : n_(static_cast<std::uint8_t>(xs.size())) {
    require(xs.size() >= 1 && xs.size() <= kMaxStateDim, ErrorCode::InvalidSpec, "state dimension out of range");
    std::copy(xs.begin(), xs.end(), v_.begin());
  }
  static State zeros(std::size_t n) {
    State s;
    require(n >= 1 && n <= kMaxStateDim, ErrorCode::InvalidSpec, "state dimension out of range");
    s.n_ = static_cast<std::uint8_t>(n);
    return s;
  }

  std::size_t size() const { return n_; }
  double scalar() const { return v_[0]; }
  double& operator[](std::size_t i) { return v_[i]; }
  double operator[](std::size_t i) const { return v_[i]; }
  const double* begin() const { return v_.data(); }
  const double* end() const { return v_.data() + n_; }
  std::span<const double> span() const { return {v_.data(), n_}; }

  bool finite() const {
    return std::all_of(begin(), end(), [](double x) { return std::isfinite(x); });
  }

  bool operator==(const State& o) const { return n_ == o.n_ && std::equal(begin(), end(), o.begin()); }

 private:
  std::array<double, kMaxStateDim> v_{};
  std::uint8_t n_ = 1;
};

/// Sup-norm distance; the absolute value for scalar states.
inline double distance(const State& a, const State& b) {
  double d = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) d = std::max(d, std::abs(a[i] - b[i]));
  return d;
}

inline double norm(const State& a) {
  double d = 0.0;
  for (double x : a) d = std::max(d, std::abs(x));
  return d;
}

// ---------------------------------------------------------------------------
// Families

namespace kernel {

struct Poisson {
  bool operator==(const Poisson&) const = default;
};
struct NegBinomial {
  int r = 1;
  bool operator==(const NegBinomial&) const = default;
};
struct BernoulliLogit {
  bool operator==(const BernoulliLogit&) const = default;
};
struct BernoulliProbit {
  bool operator==(const BernoulliProbit&) const = default;
};
struct Multinomial {
  int N = 2;
  bool operator==(const Multinomial&) const = default;
};
/// y | s ~ sqrt(s) * eps, eps standard normal; state space [c_minus, inf).
struct GarchGaussian {
  double c_minus = 1.0;
  bool operator==(const GarchGaussian&) const = default;
};

enum class Density { Gaussian, Laplace, StudentT };

/// y | s ~ s + eps with eps symmetric unimodal.
struct Location {
  Density density = Density::Gaussian;
  double scale = 1.0;  ///< sigma (Gaussian) or b (Laplace); unused for StudentT
  double nu = 3.0;     ///< StudentT degrees of freedom
  bool operator==(const Location&) const = default;
};

}  // namespace kernel

using ObservationKernel = std::variant<kernel::Poisson, kernel::NegBinomial, kernel::BernoulliLogit,
                                       kernel::BernoulliProbit, kernel::Multinomial, kernel::GarchGaussian,
                                       kernel::Location>;

template <class... Ts>
struct overloaded : Ts... {
  using Ts::operator()...;
};
template <class... Ts>
overloaded(Ts...) -> overloaded<Ts...>;

inline std::string family_name(const ObservationKernel& k) {
  return std::visit(overloaded{
                        [](const kernel::Poisson&) -> std::string { return "Poisson"; },
                        [](const kernel::NegBinomial&) -> std::string { return "NegBinomial"; },
                        [](const kernel::BernoulliLogit&) -> std::string { return "BernoulliLogit"; },
                        [](const kernel::BernoulliProbit&) -> std::string { return "BernoulliProbit"; },
                        [](const kernel::Multinomial&) -> std::string { return "Multinomial"; },
                        [](const kernel::GarchGaussian&) -> std::string { return "GarchGaussian"; },
                        [](const kernel::Location& l) -> std::string {
                          switch (l.density) {
                            case kernel::Density::Gaussian: return "LocationGaussian";
                            case kernel::Density::Laplace: return "LocationLaplace";
                            case kernel::Density::StudentT: return "LocationStudentT";
                          }
                          return "Location";
                        },
                    },
                    k);
}

inline void validate(const ObservationKernel& k) {
  std::visit(overloaded{
                 [](const kernel::NegBinomial& nb) {
                   require(nb.r >= 1, ErrorCode::InvalidSpec, "negative binomial needs integer r >= 1");
                 },
                 [](const kernel::Multinomial& m) {
                   require(m.N >= 2 && static_cast<std::size_t>(m.N - 1) <= kMaxStateDim, ErrorCode::InvalidSpec,
                           "multinomial needs 2 <= N <= 16");
                 },
                 [](const kernel::GarchGaussian& g) {
                   require(g.c_minus > 0.0 && std::isfinite(g.c_minus), ErrorCode::InvalidSpec,
                           "GARCH kernel needs c_minus > 0");
                 },
                 [](const kernel::Location& l) {
                   if (l.density == kernel::Density::StudentT)
                     require(l.nu >= 2.0 && std::isfinite(l.nu), ErrorCode::InvalidSpec, "StudentT needs nu >= 2");
                   else
                     require(l.scale > 0.0 && std::isfinite(l.scale), ErrorCode::InvalidSpec,
                             "location scale must be positive");
                 },
                 [](const auto&) {},
             },
             k);
}

inline std::size_t state_dim(const ObservationKernel& k) {
  if (const auto* m = std::get_if<kernel::Multinomial>(&k)) return static_cast<std::size_t>(m->N - 1);
  return 1;
}

/// Lower end of the scalar state space (-inf when unbounded).
inline double domain_lower(const ObservationKernel& k) {
  return std::visit(overloaded{
                        [](const kernel::Poisson&) { return 0.0; },
                        [](const kernel::NegBinomial&) { return 0.0; },
                        [](const kernel::GarchGaussian& g) { return g.c_minus; },
                        [](const auto&) { return -std::numeric_limits<double>::infinity(); },
                    },
                    k);
}

inline bool is_discrete(const ObservationKernel& k) {
  return !std::holds_alternative<kernel::GarchGaussian>(k) && !std::holds_alternative<kernel::Location>(k);
}

/// Number of observation categories for finite-support families, else 0.
inline std::size_t category_count(const ObservationKernel& k) {
  if (const auto* m = std::get_if<kernel::Multinomial>(&k)) return static_cast<std::size_t>(m->N);
  if (std::holds_alternative<kernel::BernoulliLogit>(k) || std::holds_alternative<kernel::BernoulliProbit>(k))
    return 2;
  return 0;
}

inline void check_state(const ObservationKernel& k, const State& s) {
  require(s.size() == state_dim(k), ErrorCode::StateOutOfDomain, "state has wrong dimension");
  for (double x : s) require(!std::isnan(x), ErrorCode::StateOutOfDomain, "state is NaN");
  const double lo = domain_lower(k);
  require(s.scalar() >= lo, ErrorCode::StateOutOfDomain,
          "state " + std::to_string(s.scalar()) + " below domain bound " + std::to_string(lo));
}

// ---------------------------------------------------------------------------
// Probabilities

namespace detail {

inline double poisson_log_pmf(double lambda, double k) {
  if (lambda == 0.0) return k == 0.0 ? 0.0 : -std::numeric_limits<double>::infinity();
  return k * std::log(lambda) - lambda - std::lgamma(k + 1.0);
}

inline double nb_log_pmf(int r, double mean, double k) {
  if (mean == 0.0) return k == 0.0 ? 0.0 : -std::numeric_limits<double>::infinity();
  const double rr = r;
  return std::lgamma(k + rr) - std::lgamma(rr) - std::lgamma(k + 1.0) + rr * std::log(rr / (rr + mean)) +
         k * std::log(mean / (rr + mean));
}

/// Softmax with the baseline category 0 at s_0 = 0.
inline void multinomial_probs(const State& s, std::span<double> out) {
  double top = 0.0;
  for (double x : s) top = std::max(top, x);
  out[0] = std::exp(-top);
  for (std::size_t i = 0; i < s.size(); ++i) out[i + 1] = std::exp(s[i] - top);
  const double total = std::accumulate(out.begin(), out.end(), 0.0);
  for (auto& p : out) p /= total;
}

inline double location_pdf(const kernel::Location& l, double e) {
  switch (l.density) {
    case kernel::Density::Gaussian: return special::normal_pdf(e / l.scale) / l.scale;
    case kernel::Density::Laplace: return special::laplace_pdf(e, l.scale);
    case kernel::Density::StudentT: return special::student_pdf(e, l.nu);
  }
  return 0.0;
}

inline double location_cdf(const kernel::Location& l, double e) {
  switch (l.density) {
    case kernel::Density::Gaussian: return special::normal_cdf(e / l.scale);
    case kernel::Density::Laplace: return special::laplace_cdf(e, l.scale);
    case kernel::Density::StudentT: return special::student_cdf(e, l.nu);
  }
  return 0.0;
}

/// P(eps > e) without cancellation for large e.
inline double location_sf(const kernel::Location& l, double e) {
  switch (l.density) {
    case kernel::Density::Gaussian: return special::normal_sf(e / l.scale);
    case kernel::Density::Laplace: return special::laplace_cdf(-e, l.scale);
    case kernel::Density::StudentT: return special::student_sf(e, l.nu);
  }
  return 0.0;
}

inline double location_quantile(const kernel::Location& l, double u) {
  switch (l.density) {
    case kernel::Density::Gaussian: return l.scale * special::normal_quantile(u);
    case kernel::Density::Laplace: return special::laplace_quantile(u, l.scale);
    case kernel::Density::StudentT: return special::student_quantile(u, l.nu);
  }
  return 0.0;
}

inline double garch_pdf(double s, double y) {
  const double sd = std::sqrt(s);
  return special::normal_pdf(y / sd) / sd;
}

/// Positive crossing point of the N(0,s) and N(0,s') densities.
inline double garch_crossing(double s, double sp) {
  return std::sqrt(s * sp * std::log(sp / s) / (sp - s));
}

/// Contiguous pmf table [first, first + probs.size()) whose omitted mass is
/// at most `eps` on each side. Built by walking out from the mode: beyond it
/// the successive pmf ratios decrease, so once a ratio rho < 1 is reached the
/// remaining tail is at most p_k * rho / (1 - rho).
struct CountWindow {
  long long first = 0;
  std::vector<double> probs;
  double omitted = 0.0;  ///< bound on the mass outside the window
};

template <class LogPmf, class Ratio>
CountWindow count_window(double mode, LogPmf log_pmf, Ratio ratio_up, double eps, std::size_t max_len) {
  CountWindow w;
  const auto m = static_cast<long long>(std::floor(mode));
  std::vector<double> up;
  std::vector<double> down;
  double p = std::exp(log_pmf(static_cast<double>(m)));
  up.push_back(p);
  double tail_up = 0.0;
  for (long long k = m;; ++k) {
    const double rho = ratio_up(static_cast<double>(k));
    if (rho < 1.0) {
      const double bound = p * rho / (1.0 - rho);
      if (bound < eps) {
        tail_up = bound;
        break;
      }
    }
    p *= rho;
    if (p == 0.0) {
      tail_up = 0.0;
      break;
    }
    up.push_back(p);
    if (up.size() + down.size() > max_len) fail(ErrorCode::ToleranceUnreachable, "count support too wide");
  }
  double tail_down = 0.0;
  p = up.front();
  for (long long k = m; k > 0; --k) {
    // p(k-1) / p(k) = 1 / ratio_up(k-1), decreasing as k falls.
    const double rho = 1.0 / ratio_up(static_cast<double>(k - 1));
    if (rho < 1.0) {
      const double bound = p * rho / (1.0 - rho);
      if (bound < eps) {
        tail_down = bound;
        break;
      }
    }
    p *= rho;
    down.push_back(p);
    if (up.size() + down.size() > max_len) fail(ErrorCode::ToleranceUnreachable, "count support too wide");
  }
  w.probs.assign(down.rbegin(), down.rend());
  w.probs.insert(w.probs.end(), up.begin(), up.end());
  w.first = m - static_cast<long long>(down.size());
  w.omitted = tail_up + tail_down;
  return w;
}

inline CountWindow poisson_window(double lambda, double eps, std::size_t max_len = 50'000'000) {
  if (lambda == 0.0) return {0, {1.0}, 0.0};
  return count_window(
      lambda, [&](double k) { return poisson_log_pmf(lambda, k); }, [&](double k) { return lambda / (k + 1.0); },
      eps, max_len);
}

inline CountWindow nb_window(int r, double mean, double eps, std::size_t max_len = 50'000'000) {
  if (mean == 0.0) return {0, {1.0}, 0.0};
  const double q = mean / (mean + r);
  const double mode = r > 1 ? std::floor((r - 1.0) * q / (1.0 - q)) : 0.0;
  return count_window(
      mode, [&](double k) { return nb_log_pmf(r, mean, k); },
      [&](double k) { return (k + r) / (k + 1.0) * q; }, eps, max_len);
}

/// Smallest k with CDF(k) > u: gallop from a guess, then bisect.
template <class Cdf>
double discrete_inverse(double guess, double u, Cdf cdf) {
  double k = std::max(0.0, std::floor(guess));
  double lo = 0.0;
  double hi = 0.0;
  if (cdf(k) <= u) {
    // Answer lies above k.
    double step = 1.0;
    lo = k;
    hi = k + step;
    while (cdf(hi) <= u) {
      lo = hi;
      step *= 2.0;
      hi = k + step;
    }
  } else {
    if (k == 0.0) return 0.0;
    double step = 1.0;
    hi = k;
    lo = std::max(0.0, k - step);
    while (cdf(lo) > u) {
      hi = lo;
      if (lo == 0.0) return 0.0;
      step *= 2.0;
      lo = std::max(0.0, k - step);
    }
  }
  // Invariant: cdf(lo) <= u < cdf(hi).
  while (hi - lo > 1.0) {
    const double mid = std::floor(0.5 * (lo + hi));
    if (cdf(mid) <= u) lo = mid;
    else hi = mid;
  }
  return hi;
}

using CountPolicy = boost::math::policies::policy<boost::math::policies::promote_double<false>>;

/// Above this mean the count samplers switch to continuous quantile
/// approximations: the exact incomplete gamma/beta evaluations grow too
/// slow (and stop converging near 1e11).
inline constexpr double kCountApproxThreshold = 1e7;

/// Skew-corrected normal quantile: mean + sd (z + skew (z^2 - 1) / 6).
inline double cornish_fisher(double mean, double sd, double skew, double u) {
  const double z = special::normal_quantile(std::clamp(u, 1e-300, 1.0 - 1e-16));
  return mean + sd * (z + skew * (z * z - 1.0) / 6.0);
}

inline double sample_poisson(double lambda, double u) {
  if (!std::isfinite(lambda)) return lambda;
  if (lambda == 0.0) return 0.0;
  const double sd = std::sqrt(lambda);
  if (lambda > kCountApproxThreshold) return std::max(0.0, std::floor(cornish_fisher(lambda, sd, 1.0 / sd, u) + 0.5));
  if (lambda <= 30.0) {
    double p = std::exp(-lambda);
    double cumulative = p;
    double k = 0.0;
    while (u >= cumulative) {
      k += 1.0;
      p *= lambda / k;
      if (p == 0.0 && k > lambda) break;
      cumulative += p;
    }
    return k;
  }
  return discrete_inverse(cornish_fisher(lambda, sd, 1.0 / sd, u), u,
                          [&](double k) { return boost::math::gamma_q(k + 1.0, lambda, CountPolicy()); });
}

inline double sample_negbin(int r, double mean, double u) {
  if (!std::isfinite(mean)) return mean;
  if (mean == 0.0) return 0.0;
  const double q = mean / (mean + r);
  if (mean > kCountApproxThreshold) {
    // Gamma(r, mean / r) mixing law dominates the Poisson noise.
    const double g = boost::math::gamma_p_inv(static_cast<double>(r), std::clamp(u, 1e-300, 1.0 - 1e-16), CountPolicy());
    return std::floor(g * mean / r);
  }
  const double p0 = std::pow(1.0 - q, r);
  if (mean <= 30.0 && p0 > 1e-200) {
    double p = p0;
    double cumulative = p;
    double k = 0.0;
    while (u >= cumulative) {
      p *= (k + r) / (k + 1.0) * q;
      k += 1.0;
      if (p == 0.0 && k > mean) break;
      cumulative += p;
    }
    return k;
  }
  const double var = mean + mean * mean / r;
  const double skew = (1.0 + q) / std::sqrt(q * r);
  // P(Y <= k) = I_{1-q}(r, k + 1).
  return discrete_inverse(cornish_fisher(mean, std::sqrt(var), skew, u), u, [&](double k) {
    return boost::math::ibeta(static_cast<double>(r), k + 1.0, 1.0 - q, CountPolicy());
  });
}

}  // namespace detail

/// Success probability F(s) of the binary families.
inline double bernoulli_p1(const ObservationKernel& k, double s) {
  if (std::holds_alternative<kernel::BernoulliLogit>(k)) return special::logistic_cdf(s);
  return special::normal_cdf(s);
}

/// Probability mass (discrete families) or density (continuous) at y.
inline double probability(const ObservationKernel& k, const State& s, double y) {
  return std::visit(
      overloaded{
          [&](const kernel::Poisson&) {
            if (y < 0.0 || y != std::floor(y)) return 0.0;
            return std::exp(detail::poisson_log_pmf(s.scalar(), y));
          },
          [&](const kernel::NegBinomial& nb) {
            if (y < 0.0 || y != std::floor(y)) return 0.0;
            return std::exp(detail::nb_log_pmf(nb.r, s.scalar(), y));
          },
          [&](const kernel::BernoulliLogit&) {
            return y == 1.0 ? special::logistic_cdf(s.scalar()) : y == 0.0 ? special::logistic_cdf(-s.scalar()) : 0.0;
          },
          [&](const kernel::BernoulliProbit&) {
            return y == 1.0 ? special::normal_cdf(s.scalar()) : y == 0.0 ? special::normal_sf(s.scalar()) : 0.0;
          },
          [&](const kernel::Multinomial& m) {
            std::array<double, kMaxStateDim + 1> p{};
            detail::multinomial_probs(s, std::span<double>(p.data(), static_cast<std::size_t>(m.N)));
            const auto i = static_cast<long long>(y);
            if (y != static_cast<double>(i) || i < 0 || i >= m.N) return 0.0;
            return p[static_cast<std::size_t>(i)];
          },
          [&](const kernel::GarchGaussian&) { return detail::garch_pdf(s.scalar(), y); },
          [&](const kernel::Location& l) { return detail::location_pdf(l, y - s.scalar()); },
      },
      k);
}

/// Category probabilities for finite-support families.
inline std::vector<double> category_probs(const ObservationKernel& k, const State& s) {
  const std::size_t n = category_count(k);
  require(n > 0, ErrorCode::UnsupportedCombination, "family has no finite category set");
  std::vector<double> p(n);
  if (n == 2 && !std::holds_alternative<kernel::Multinomial>(k)) {
    p[1] = bernoulli_p1(k, s.scalar());
    p[0] = std::holds_alternative<kernel::BernoulliLogit>(k) ? special::logistic_cdf(-s.scalar())
                                                              : special::normal_sf(s.scalar());
  } else {
    detail::multinomial_probs(s, p);
  }
  return p;
}

/// Inverse-CDF draw from one uniform u in (0, 1). Monotone in u, so feeding
/// common uniforms gives the synchronous (common random numbers) coupling.
inline double sample_from_uniform(const ObservationKernel& k, const State& s, double u) {
  return std::visit(overloaded{
                        [&](const kernel::Poisson&) { return detail::sample_poisson(s.scalar(), u); },
                        [&](const kernel::NegBinomial& nb) { return detail::sample_negbin(nb.r, s.scalar(), u); },
                        [&](const kernel::BernoulliLogit&) { return u < special::logistic_cdf(s.scalar()) ? 1.0 : 0.0; },
                        [&](const kernel::BernoulliProbit&) { return u < special::normal_cdf(s.scalar()) ? 1.0 : 0.0; },
                        [&](const kernel::Multinomial& m) {
                          std::array<double, kMaxStateDim + 1> p{};
                          std::span<double> probs(p.data(), static_cast<std::size_t>(m.N));
                          detail::multinomial_probs(s, probs);
                          double cumulative = 0.0;
                          for (std::size_t i = 0; i < probs.size(); ++i) {
                            cumulative += probs[i];
                            if (u < cumulative) return static_cast<double>(i);
                          }
                          return static_cast<double>(probs.size() - 1);
                        },
                        [&](const kernel::GarchGaussian&) {
                          return std::sqrt(s.scalar()) * special::normal_quantile(u);
                        },
                        [&](const kernel::Location& l) { return s.scalar() + detail::location_quantile(l, u); },
                    },
                    k);
}

/// One draw from p(.|s).
inline double sample(const ObservationKernel& k, const State& s, Stream& rng) {
  check_state(k, s);
  return sample_from_uniform(k, s, rng.uniform_open());
}

// ---------------------------------------------------------------------------
// A3: phi and the TV bound

/// phi(h) = sum_j coefficients[j-1] * h^j.
struct PhiSpec {
  std::vector<double> coefficients;

  double operator()(double h) const {
    double value = 0.0;
    double power = h;
    for (double c : coefficients) {
      value += c * power;
      power *= h;
    }
    return value;
  }
  std::size_t degree() const { return coefficients.size(); }
  PhiSpec scaled(double factor) const {
    PhiSpec out = *this;
    for (auto& c : out.coefficients) c *= factor;
    return out;
  }
  bool operator==(const PhiSpec&) const = default;
};

inline void validate(const PhiSpec& phi) {
  require(!phi.coefficients.empty(), ErrorCode::InvalidSpec, "phi needs at least one coefficient");
  bool any_positive = false;
  for (double c : phi.coefficients) {
    require(c >= 0.0 && std::isfinite(c), ErrorCode::InvalidSpec, "phi coefficients must be nonnegative");
    any_positive = any_positive || c > 0.0;
  }
  require(any_positive, ErrorCode::InvalidSpec, "phi must have a positive coefficient");
}

namespace detail {

/// Safety factor applied to numerically certified constants.
inline constexpr double kPhiMargin = 1.05;

/// 1.05 * sup over a log grid on [1e-4, 1e2] of -log I(h) / psi(h).
template <class LogOverlap, class Basis>
double certify_constant(LogOverlap log_overlap, Basis basis) {
  constexpr int kPoints = 2001;
  double worst = 0.0;
  for (int i = 0; i < kPoints; ++i) {
    const double h = std::pow(10.0, -4.0 + 6.0 * i / (kPoints - 1));
    worst = std::max(worst, -log_overlap(h) / basis(h));
  }
  return kPhiMargin * worst;
}

/// log I(h) = log(2 P(eps > h/2)) for a symmetric unimodal noise.
inline double location_log_overlap(const kernel::Location& l, double h) {
  if (l.density == kernel::Density::Gaussian) return std::log(2.0) + special::log_normal_sf(0.5 * h / l.scale);
  return std::log(2.0 * detail::location_sf(l, 0.5 * h));
}

}  // namespace detail

/// Certified probit constant d with 2(1 - Phi(h/2)) >= exp(-d (h + h^2)).
inline double probit_phi_constant() {
  static const double d = detail::certify_constant(
      [](double h) { return std::log(2.0) + special::log_normal_sf(0.5 * h); }, [](double h) { return h + h * h; });
  return d;
}

/// Certified constant D for the location family with the basis of `phi`.
inline double location_phi_constant(const kernel::Location& l) {
  switch (l.density) {
    case kernel::Density::Gaussian:
      return detail::certify_constant([&](double h) { return detail::location_log_overlap(l, h); },
                                      [](double h) { return h + h * h; });
    case kernel::Density::Laplace:
      return detail::certify_constant([&](double h) { return detail::location_log_overlap(l, h); },
                                      [](double h) { return 2.0 * h; });
    case kernel::Density::StudentT:
      return detail::certify_constant([&](double h) { return detail::location_log_overlap(l, h); },
                                      [](double h) { return h; });
  }
  return 0.0;
}

/// The family's phi for A3.
inline PhiSpec phi(const ObservationKernel& k) {
  return std::visit(overloaded{
                        [](const kernel::BernoulliProbit&) {
                          const double d = probit_phi_constant();
                          return PhiSpec{{d, d}};
                        },
                        [](const kernel::GarchGaussian& g) {
                          // The c^{3/2} scaling alone is too small once c > 1.
                          const double c = g.c_minus;
                          return PhiSpec{{1.0 / (2.0 * std::min(c, std::pow(c, 1.5)))}};
                        },
                        [](const kernel::Location& l) {
                          const double d = location_phi_constant(l);
                          switch (l.density) {
                            case kernel::Density::Gaussian: return PhiSpec{{d, d}};
                            case kernel::Density::Laplace: return PhiSpec{{2.0 * d}};
                            case kernel::Density::StudentT: return PhiSpec{{d}};
                          }
                          return PhiSpec{{d}};
                        },
                        [](const auto&) { return PhiSpec{{1.0}}; },
                    },
                    k);
}

/// 1 - exp(-phi(|s - s'|)) with the family norm.
inline double tv_bound(const ObservationKernel& k, const State& s, const State& sp, const PhiSpec& phi_spec) {
  check_state(k, s);
  check_state(k, sp);
  return -std::expm1(-phi_spec(distance(s, sp)));
}

inline double tv_bound(const ObservationKernel& k, const State& s, const State& sp) {
  return tv_bound(k, s, sp, phi(k));
}

/// Sharper negative-binomial bound 1 - (1 + h/r)^{-r}.
inline double tv_bound_negbin_sharp(const kernel::NegBinomial& nb, double s, double sp) {
  const double h = std::abs(s - sp);
  return 1.0 - std::pow(1.0 + h / nb.r, -static_cast<double>(nb.r));
}

// ---------------------------------------------------------------------------
// Exact total variation

/// Closed-form TV for the continuous families (overlap of two densities
/// crossing at known points).
inline double tv_closed_form(const ObservationKernel& k, const State& s, const State& sp) {
  return std::visit(
      overloaded{
          [&](const kernel::GarchGaussian&) {
            double a = s.scalar();
            double b = sp.scalar();
            if (a == b) return 0.0;
            if (a > b) std::swap(a, b);
            const double y = detail::garch_crossing(a, b);
            // Below the crossing the wider density is the smaller one.
            const double overlap = (1.0 - 2.0 * special::normal_sf(y / std::sqrt(b))) +
                                   2.0 * special::normal_sf(y / std::sqrt(a));
            return std::clamp(1.0 - overlap, 0.0, 1.0);
          },
          [&](const kernel::Location& l) {
            const double h = std::abs(s.scalar() - sp.scalar());
            return std::clamp(1.0 - 2.0 * detail::location_sf(l, 0.5 * h), 0.0, 1.0);
          },
          [&](const auto&) -> double {
            fail(ErrorCode::UnsupportedCombination, "closed-form TV only for continuous families");
          },
      },
      k);
}

/// Brute-force TV within `tol`: exact sums for discrete families (tail mass
/// bounded rigorously), adaptive quadrature of 1 - int min(p, q) otherwise.
inline double tv_exact(const ObservationKernel& k, const State& s, const State& sp, double tol = 1e-9) {
  require(tol > 0.0 && tol <= 1e-3, ErrorCode::InvalidSpec, "tol must be in (0, 1e-3]");
  check_state(k, s);
  check_state(k, sp);
  if (s == sp) return 0.0;

  auto count_tv = [&](const detail::CountWindow& a, const detail::CountWindow& b) {
    const long long lo = std::min(a.first, b.first);
    const long long hi = std::max(a.first + static_cast<long long>(a.probs.size()),
                                  b.first + static_cast<long long>(b.probs.size()));
    auto at = [](const detail::CountWindow& w, long long i) {
      const long long j = i - w.first;
      return j >= 0 && j < static_cast<long long>(w.probs.size()) ? w.probs[static_cast<std::size_t>(j)] : 0.0;
    };
    double total = 0.0;
    for (long long i = lo; i < hi; ++i) total += std::abs(at(a, i) - at(b, i));
    return std::clamp(0.5 * total, 0.0, 1.0);
  };

  return std::visit(
      overloaded{
          [&](const kernel::Poisson&) {
            return count_tv(detail::poisson_window(s.scalar(), tol / 8.0), detail::poisson_window(sp.scalar(), tol / 8.0));
          },
          [&](const kernel::NegBinomial& nb) {
            return count_tv(detail::nb_window(nb.r, s.scalar(), tol / 8.0),
                            detail::nb_window(nb.r, sp.scalar(), tol / 8.0));
          },
          [&](const kernel::GarchGaussian&) {
            double a = s.scalar();
            double b = sp.scalar();
            if (a > b) std::swap(a, b);
            const double y = detail::garch_crossing(a, b);
            auto integrand = [&](double v) { return std::min(detail::garch_pdf(a, v), detail::garch_pdf(b, v)); };
            // Symmetric in y: integrate over [0, inf) and double.
            double v1 = 0, e1 = 0, v2 = 0, e2 = 0;
            special::integrate(integrand, 0.0, y, tol, v1, e1);
            special::integrate(integrand, y, std::numeric_limits<double>::infinity(), tol, v2, e2);
            if (2.0 * (e1 + e2) >= tol) fail(ErrorCode::ToleranceUnreachable, "quadrature did not reach tolerance");
            return std::clamp(1.0 - 2.0 * (v1 + v2), 0.0, 1.0);
          },
          [&](const kernel::Location& l) {
            const double a = std::min(s.scalar(), sp.scalar());
            const double b = std::max(s.scalar(), sp.scalar());
            const double mid = 0.5 * (a + b);
            auto integrand = [&](double v) {
              return std::min(detail::location_pdf(l, v - a), detail::location_pdf(l, v - b));
            };
            const double inf = std::numeric_limits<double>::infinity();
            const std::array<double, 5> cuts{-inf, a, mid, b, inf};
            double total = 0.0;
            double error = 0.0;
            for (std::size_t i = 0; i + 1 < cuts.size(); ++i) {
              double v = 0, e = 0;
              special::integrate(integrand, cuts[i], cuts[i + 1], tol, v, e);
              total += v;
              error += e;
            }
            if (error >= tol) fail(ErrorCode::ToleranceUnreachable, "quadrature did not reach tolerance");
            return std::clamp(1.0 - total, 0.0, 1.0);
          },
          [&](const auto&) {
            const auto p = category_probs(k, s);
            const auto q = category_probs(k, sp);
            double total = 0.0;
            for (std::size_t i = 0; i < p.size(); ++i) total += std::abs(p[i] - q[i]);
            return std::clamp(0.5 * total, 0.0, 1.0);
          },
      },
      k);
}

// ---------------------------------------------------------------------------
// Maximal coupling

struct CoupleDraw {
  double y = 0.0;
  double y_prime = 0.0;
  bool met = false;
};

namespace detail {

inline double table_draw(std::span<const double> weights, double total, double u) {
  const double target = u * total;
  double cumulative = 0.0;
  std::size_t last_positive = 0;
  for (std::size_t i = 0; i < weights.size(); ++i) {
    if (weights[i] <= 0.0) continue;
    last_positive = i;
    cumulative += weights[i];
    if (target < cumulative) return static_cast<double>(i);
  }
  return static_cast<double>(last_positive);
}

/// Maximal coupling of two pmfs on the common index set [0, n).
inline CoupleDraw couple_tables(std::span<const double> p, std::span<const double> q, double offset, Stream& rng) {
  const std::size_t n = p.size();
  std::vector<double> overlap(n);
  std::vector<double> rest_p(n);
  std::vector<double> rest_q(n);
  double mass = 0.0;
  double mass_p = 0.0;
  double mass_q = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    overlap[i] = std::min(p[i], q[i]);
    rest_p[i] = p[i] - overlap[i];
    rest_q[i] = q[i] - overlap[i];
    mass += overlap[i];
    mass_p += rest_p[i];
    mass_q += rest_q[i];
  }
  const double u = rng.uniform();
  if (u * (mass + 0.5 * (mass_p + mass_q)) < mass) {
    const double y = offset + table_draw(overlap, mass, rng.uniform());
    return {y, y, true};
  }
  return {offset + table_draw(rest_p, mass_p, rng.uniform()), offset + table_draw(rest_q, mass_q, rng.uniform()),
          false};
}

template <class DensityP, class DensityQ, class SampleP>
double rejection(DensityP p, DensityQ q, SampleP draw_p, Stream& rng, bool overlap_part) {
  constexpr int kMaxAttempts = 1'000'000;
  for (int attempt = 0; attempt < kMaxAttempts; ++attempt) {
    const double y = draw_p();
    const double py = p(y);
    const double qy = q(y);
    const double ratio = py > 0.0 ? std::min(py, qy) / py : 0.0;
    const double accept = overlap_part ? ratio : 1.0 - ratio;
    if (rng.uniform() < accept) return y;
  }
  fail(ErrorCode::ToleranceUnreachable, "maximal coupling rejection sampler exceeded 1e6 attempts");
}

}  // namespace detail

/// Draw (y, y') with marginals p(.|s), p(.|s') and P(y != y') = TV.
inline CoupleDraw maximal_couple(const ObservationKernel& k, const State& s, const State& sp, Stream& rng) {
  check_state(k, s);
  check_state(k, sp);
  if (s == sp) {
    const double y = sample_from_uniform(k, s, rng.uniform_open());
    return {y, y, true};
  }
  if (!s.finite() || !sp.finite()) {
    // Divergent chains: no meaningful overlap; fall back to common uniforms.
    const double u = rng.uniform_open();
    const double y = sample_from_uniform(k, s, u);
    const double yp = sample_from_uniform(k, sp, u);
    return {y, yp, y == yp};
  }

  if (category_count(k) > 0) {
    const auto p = category_probs(k, s);
    const auto q = category_probs(k, sp);
    return detail::couple_tables(p, q, 0.0, rng);
  }

  if (is_discrete(k)) {
    constexpr double kEps = 1e-15;
    constexpr std::size_t kMaxWindow = 5'000'000;
    detail::CountWindow a;
    detail::CountWindow b;
    try {
      if (const auto* nb = std::get_if<kernel::NegBinomial>(&k)) {
        a = detail::nb_window(nb->r, s.scalar(), kEps, kMaxWindow);
        b = detail::nb_window(nb->r, sp.scalar(), kEps, kMaxWindow);
      } else {
        a = detail::poisson_window(s.scalar(), kEps, kMaxWindow);
        b = detail::poisson_window(sp.scalar(), kEps, kMaxWindow);
      }
    } catch (const Error&) {
      const double u = rng.uniform_open();
      const double y = sample_from_uniform(k, s, u);
      const double yp = sample_from_uniform(k, sp, u);
      return {y, yp, y == yp};
    }
    const long long lo = std::min(a.first, b.first);
    const long long hi = std::max(a.first + static_cast<long long>(a.probs.size()),
                                  b.first + static_cast<long long>(b.probs.size()));
    std::vector<double> p(static_cast<std::size_t>(hi - lo), 0.0);
    std::vector<double> q(p.size(), 0.0);
    std::copy(a.probs.begin(), a.probs.end(), p.begin() + (a.first - lo));
    std::copy(b.probs.begin(), b.probs.end(), q.begin() + (b.first - lo));
    return detail::couple_tables(p, q, static_cast<double>(lo), rng);
  }

  const double tv = tv_closed_form(k, s, sp);
  auto p = [&](double y) { return probability(k, s, y); };
  auto q = [&](double y) { return probability(k, sp, y); };
  auto draw_p = [&] { return sample_from_uniform(k, s, rng.uniform_open()); };
  auto draw_q = [&] { return sample_from_uniform(k, sp, rng.uniform_open()); };
  if (rng.uniform() >= tv) {
    const double y = detail::rejection(p, q, draw_p, rng, true);
    return {y, y, true};
  }
  const double y = detail::rejection(p, q, draw_p, rng, false);
  const double yp = detail::rejection(q, p, draw_q, rng, false);
  return {y, yp, false};
}

// ---------------------------------------------------------------------------
// Conditional moments

struct ConditionalMoment {
  double value = 0.0;  ///< int |y|^i p(dy|s)
  double D = 0.0;      ///< constant with value <= |s| + D (order 1) or s + D (order 2)
};

/// The order i the family supports: 2 for GARCH, 1 otherwise.
inline int supported_order(const ObservationKernel& k) {
  return std::holds_alternative<kernel::GarchGaussian>(k) ? 2 : 1;
}

/// Mean absolute value of the location noise.
inline double location_abs_mean(const kernel::Location& l) {
  switch (l.density) {
    case kernel::Density::Gaussian: return l.scale * std::sqrt(2.0 / std::numbers::pi);
    case kernel::Density::Laplace: return l.scale;
    case kernel::Density::StudentT:
      return 2.0 * std::sqrt(l.nu) * std::exp(std::lgamma(0.5 * (l.nu + 1.0)) - std::lgamma(0.5 * l.nu)) /
             (std::sqrt(std::numbers::pi) * (l.nu - 1.0));
  }
  return 0.0;
}

inline ConditionalMoment conditional_moment(const ObservationKernel& k, const State& s, int order) {
  check_state(k, s);
  require(order == supported_order(k), ErrorCode::UnsupportedOrder,
          "order " + std::to_string(order) + " not supported by " + family_name(k));
  const double x = s.scalar();
  return std::visit(
      overloaded{
          [&](const kernel::Poisson&) { return ConditionalMoment{x, 0.0}; },
          [&](const kernel::NegBinomial&) { return ConditionalMoment{x, 0.0}; },
          [&](const kernel::BernoulliLogit&) { return ConditionalMoment{special::logistic_cdf(x), 1.0}; },
          [&](const kernel::BernoulliProbit&) { return ConditionalMoment{special::normal_cdf(x), 1.0}; },
          // One-hot observations have unit norm.
          [&](const kernel::Multinomial&) { return ConditionalMoment{1.0, 1.0}; },
          [&](const kernel::GarchGaussian&) { return ConditionalMoment{x, 0.0}; },
          [&](const kernel::Location& l) {
            const double d = location_abs_mean(l);
            double value = 0.0;
            switch (l.density) {
              case kernel::Density::Gaussian: {
                const double sg = l.scale;
                value = sg * std::sqrt(2.0 / std::numbers::pi) * std::exp(-x * x / (2.0 * sg * sg)) +
                        x * (1.0 - 2.0 * special::normal_cdf(-x / sg));
                break;
              }
              case kernel::Density::Laplace:
                value = std::abs(x) + l.scale * std::exp(-std::abs(x) / l.scale);
                break;
              case kernel::Density::StudentT:
                value = x * (2.0 * special::student_cdf(x, l.nu) - 1.0) +
                        2.0 * (l.nu + x * x) / (l.nu - 1.0) * special::student_pdf(x, l.nu);
                break;
            }
            return ConditionalMoment{value, d};
          },
      },
      k);
}

}  // namespace odre
