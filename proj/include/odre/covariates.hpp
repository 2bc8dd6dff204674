#pragma once

// Exogenous covariate processes, sampled paths, and covariate-dependent
// coefficient maps.

#include "odre/error.hpp"
#include "odre/rng.hpp"
#include "odre/special.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <type_traits>
#include <variant>
#include <vector>

namespace odre {

// ---------------------------------------------------------------------------
// Marginal distributions

struct Gaussian {
  double mu = 0.0;
  double sigma = 1.0;
  bool operator==(const Gaussian&) const = default;
};

struct Uniform {
  double a = 0.0;
  double b = 1.0;
  bool operator==(const Uniform&) const = default;
};

struct PointMass {
  double value = 0.0;
  bool operator==(const PointMass&) const = default;
};

using Marginal = std::variant<Gaussian, Uniform, PointMass>;

inline void validate(const Marginal& m) {
  std::visit(
      [](const auto& d) {
        using T = std::decay_t<decltype(d)>;
        if constexpr (std::is_same_v<T, Gaussian>) {
          require(std::isfinite(d.mu) && d.sigma > 0.0 && std::isfinite(d.sigma), ErrorCode::InvalidSpec,
                  "Gaussian requires finite mu and sigma > 0");
        } else if constexpr (std::is_same_v<T, Uniform>) {
          require(std::isfinite(d.a) && std::isfinite(d.b) && d.a < d.b, ErrorCode::InvalidSpec,
                  "Uniform requires finite a < b");
        } else {
          require(std::isfinite(d.value), ErrorCode::InvalidSpec, "point mass must be finite");
        }
      },
      m);
}

/// Inverse-CDF draw consuming one uniform.
inline double sample(const Marginal& m, Stream& rng) {
  return std::visit(
      [&](const auto& d) -> double {
        using T = std::decay_t<decltype(d)>;
        if constexpr (std::is_same_v<T, Gaussian>) {
          return d.mu + d.sigma * special::normal_quantile(rng.uniform_open());
        } else if constexpr (std::is_same_v<T, Uniform>) {
          return d.a + (d.b - d.a) * rng.uniform();
        } else {
          return d.value;
        }
      },
      m);
}

inline double mean(const Marginal& m) {
  return std::visit(
      [](const auto& d) -> double {
        using T = std::decay_t<decltype(d)>;
        if constexpr (std::is_same_v<T, Gaussian>) return d.mu;
        else if constexpr (std::is_same_v<T, Uniform>) return 0.5 * (d.a + d.b);
        else return d.value;
      },
      m);
}

inline double variance(const Marginal& m) {
  return std::visit(
      [](const auto& d) -> double {
        using T = std::decay_t<decltype(d)>;
        if constexpr (std::is_same_v<T, Gaussian>) return d.sigma * d.sigma;
        else if constexpr (std::is_same_v<T, Uniform>) return (d.b - d.a) * (d.b - d.a) / 12.0;
        else return 0.0;
      },
      m);
}

// ---------------------------------------------------------------------------
// Covariate process specifications

namespace covariate {

struct Constant {
  std::vector<double> value{0.0};
  bool operator==(const Constant&) const = default;
};

/// Independent draws; every component of X_t is drawn from `marginal`.
struct IID {
  Marginal marginal = Gaussian{};
  std::size_t dimension = 1;
  bool operator==(const IID&) const = default;
};

/// Componentwise X_t = a X_{t-1} + e_t.
struct AR1 {
  double a = 0.0;
  Marginal noise = Gaussian{};
  std::size_t dimension = 1;
  bool operator==(const AR1&) const = default;
};

struct FiniteStateMarkov {
  std::vector<std::vector<double>> states;
  std::vector<std::vector<double>> transition;
  bool operator==(const FiniteStateMarkov&) const = default;
};

}  // namespace covariate

struct CovariateProcessSpec {
  std::variant<covariate::Constant, covariate::IID, covariate::AR1, covariate::FiniteStateMarkov> variant =
      covariate::Constant{};

  bool operator==(const CovariateProcessSpec&) const = default;

  std::size_t dimension() const {
    return std::visit(
        [](const auto& v) -> std::size_t {
          using T = std::decay_t<decltype(v)>;
          if constexpr (std::is_same_v<T, covariate::Constant>) return v.value.size();
          else if constexpr (std::is_same_v<T, covariate::FiniteStateMarkov>)
            return v.states.empty() ? 0 : v.states.front().size();
          else return v.dimension;
        },
        variant);
  }
};

/// True when every state can reach every other state through positive entries.
inline bool is_irreducible(const std::vector<std::vector<double>>& transition) {
  const std::size_t n = transition.size();
  for (std::size_t start = 0; start < n; ++start) {
    std::vector<char> seen(n, 0);
    std::vector<std::size_t> frontier{start};
    seen[start] = 1;
    while (!frontier.empty()) {
      const std::size_t i = frontier.back();
      frontier.pop_back();
      for (std::size_t j = 0; j < n; ++j) {
        if (transition[i][j] > 0.0 && !seen[j]) {
          seen[j] = 1;
          frontier.push_back(j);
        }
      }
    }
    if (std::count(seen.begin(), seen.end(), 1) != static_cast<std::ptrdiff_t>(n)) return false;
  }
  return true;
}

inline void validate(const CovariateProcessSpec& spec) {
  std::visit(
      [](const auto& v) {
        using T = std::decay_t<decltype(v)>;
        if constexpr (std::is_same_v<T, covariate::Constant>) {
          require(!v.value.empty(), ErrorCode::InvalidSpec, "constant covariate needs dimension >= 1");
          for (double x : v.value) require(std::isfinite(x), ErrorCode::InvalidSpec, "constant value not finite");
        } else if constexpr (std::is_same_v<T, covariate::IID>) {
          require(v.dimension >= 1, ErrorCode::InvalidSpec, "dimension must be positive");
          validate(v.marginal);
        } else if constexpr (std::is_same_v<T, covariate::AR1>) {
          require(v.dimension >= 1, ErrorCode::InvalidSpec, "dimension must be positive");
          require(std::abs(v.a) < 1.0, ErrorCode::InvalidSpec, "AR1 requires |a| < 1");
          validate(v.noise);
        } else {
          const std::size_t n = v.states.size();
          require(n >= 1, ErrorCode::InvalidSpec, "finite-state chain needs at least one state");
          require(v.transition.size() == n, ErrorCode::InvalidSpec, "transition matrix must be square");
          const std::size_t d = v.states.front().size();
          require(d >= 1, ErrorCode::InvalidSpec, "state vectors must be nonempty");
          for (const auto& s : v.states) require(s.size() == d, ErrorCode::InvalidSpec, "state dimension mismatch");
          for (const auto& row : v.transition) {
            require(row.size() == n, ErrorCode::InvalidSpec, "transition matrix must be square");
            double total = 0.0;
            for (double p : row) {
              require(p >= 0.0 && std::isfinite(p), ErrorCode::InvalidSpec, "negative transition probability");
              total += p;
            }
            require(std::abs(total - 1.0) <= 1e-12, ErrorCode::InvalidSpec, "transition rows must sum to 1");
          }
          require(is_irreducible(v.transition), ErrorCode::InvalidSpec, "finite-state chain is not irreducible");
        }
      },
      spec.variant);
}

/// Stationary vector of an irreducible chain by power iteration on the lazy
/// kernel (I + P) / 2, which shares its fixed point and also converges for
/// periodic chains.
inline std::vector<double> stationary_vector(const covariate::FiniteStateMarkov& chain) {
  const std::size_t n = chain.transition.size();
  std::vector<double> pi(n, 1.0 / static_cast<double>(n));
  std::vector<double> next(n);
  for (int iter = 0; iter < 10'000'000; ++iter) {
    std::fill(next.begin(), next.end(), 0.0);
    for (std::size_t i = 0; i < n; ++i) {
      next[i] += 0.5 * pi[i];
      for (std::size_t j = 0; j < n; ++j) next[j] += 0.5 * pi[i] * chain.transition[i][j];
    }
    const double total = std::accumulate(next.begin(), next.end(), 0.0);
    double change = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      next[i] /= total;
      change += std::abs(next[i] - pi[i]);
    }
    pi.swap(next);
    if (change < 1e-12) break;
  }
  return pi;
}

namespace detail {

inline std::size_t inverse_cdf_index(std::span<const double> probabilities, double u) {
  double cumulative = 0.0;
  for (std::size_t i = 0; i < probabilities.size(); ++i) {
    cumulative += probabilities[i];
    if (u < cumulative) return i;
  }
  // Rounding can leave the cumulative sum a hair below one.
  for (std::size_t i = probabilities.size(); i-- > 0;) {
    if (probabilities[i] > 0.0) return i;
  }
  return probabilities.size() - 1;
}

/// Number of AR1 noise terms folded into each value: at least the
/// 10 * ceil(1 / (1 - |a|)) burn-in and enough that |a|^K is below 1e-17.
inline std::size_t ar1_memory(double a) {
  const double magnitude = std::abs(a);
  const auto burn_in = static_cast<std::size_t>(10.0 * std::ceil(1.0 / (1.0 - magnitude)));
  if (magnitude == 0.0) return burn_in;
  const auto decay = static_cast<std::size_t>(std::ceil(std::log(1e-17) / std::log(magnitude)));
  return std::max(burn_in, decay);
}

inline void hash_mix(std::uint64_t& h, std::uint64_t v) { h = splitmix64(h ^ (v + 0x9E3779B97F4A7C15ULL)); }
inline void hash_mix(std::uint64_t& h, double v) { hash_mix(h, std::bit_cast<std::uint64_t>(v)); }

inline void hash_marginal(std::uint64_t& h, const Marginal& m) {
  hash_mix(h, static_cast<std::uint64_t>(m.index()));
  std::visit(
      [&](const auto& d) {
        using T = std::decay_t<decltype(d)>;
        if constexpr (std::is_same_v<T, Gaussian>) {
          hash_mix(h, d.mu);
          hash_mix(h, d.sigma);
        } else if constexpr (std::is_same_v<T, Uniform>) {
          hash_mix(h, d.a);
          hash_mix(h, d.b);
        } else {
          hash_mix(h, d.value);
        }
      },
      m);
}

}  // namespace detail

inline std::uint64_t spec_hash(const CovariateProcessSpec& spec) {
  std::uint64_t h = 0x0DDBA11CAFEF00DULL;
  detail::hash_mix(h, static_cast<std::uint64_t>(spec.variant.index()));
  std::visit(
      [&](const auto& v) {
        using T = std::decay_t<decltype(v)>;
        if constexpr (std::is_same_v<T, covariate::Constant>) {
          for (double x : v.value) detail::hash_mix(h, x);
        } else if constexpr (std::is_same_v<T, covariate::IID>) {
          detail::hash_marginal(h, v.marginal);
          detail::hash_mix(h, static_cast<std::uint64_t>(v.dimension));
        } else if constexpr (std::is_same_v<T, covariate::AR1>) {
          detail::hash_mix(h, v.a);
          detail::hash_marginal(h, v.noise);
          detail::hash_mix(h, static_cast<std::uint64_t>(v.dimension));
        } else {
          for (const auto& s : v.states)
            for (double x : s) detail::hash_mix(h, x);
          for (const auto& row : v.transition)
            for (double p : row) detail::hash_mix(h, p);
        }
      },
      spec.variant);
  return h;
}

// ---------------------------------------------------------------------------
// Sampled paths

struct TimeRange {
  std::int64_t t_min = 0;
  std::int64_t t_max = 0;

  std::size_t length() const { return static_cast<std::size_t>(t_max - t_min + 1); }
  bool contains(std::int64_t t) const { return t >= t_min && t <= t_max; }
  bool operator==(const TimeRange&) const = default;
};

class CovariatePath {
 public:
  CovariatePath() = default;
  CovariatePath(TimeRange range, std::size_t dimension, std::vector<double> values, std::uint64_t seed,
                std::uint64_t spec_hash)
      : range_(range), dimension_(dimension), values_(std::move(values)), seed_(seed), spec_hash_(spec_hash) {}

  const TimeRange& range() const { return range_; }
  std::size_t dimension() const { return dimension_; }
  std::size_t length() const { return range_.length(); }
  std::uint64_t seed() const { return seed_; }
  std::uint64_t spec_hash() const { return spec_hash_; }
  const std::vector<double>& values() const { return values_; }

  std::span<const double> at(std::int64_t t) const {
    if (!range_.contains(t)) fail(ErrorCode::PathTooShort, "time " + std::to_string(t) + " outside covariate path");
    return {values_.data() + static_cast<std::size_t>(t - range_.t_min) * dimension_, dimension_};
  }

  /// Restriction to a sub-range.
  CovariatePath slice(TimeRange sub) const {
    require(sub.t_min <= sub.t_max, ErrorCode::EmptyRange, "empty slice");
    require(range_.contains(sub.t_min) && range_.contains(sub.t_max), ErrorCode::PathTooShort,
            "slice outside covariate path");
    const auto first = static_cast<std::size_t>(sub.t_min - range_.t_min) * dimension_;
    std::vector<double> values(values_.begin() + static_cast<std::ptrdiff_t>(first),
                               values_.begin() + static_cast<std::ptrdiff_t>(first + sub.length() * dimension_));
    return {sub, dimension_, std::move(values), seed_, spec_hash_};
  }

  bool operator==(const CovariatePath&) const = default;

 private:
  TimeRange range_{};
  std::size_t dimension_ = 0;
  std::vector<double> values_;
  std::uint64_t seed_ = 0;
  std::uint64_t spec_hash_ = 0;
};

namespace detail {

inline std::size_t finite_state_step(const covariate::FiniteStateMarkov& chain, std::size_t state, double u) {
  return inverse_cdf_index(chain.transition[state], u);
}

/// Coupling from the past with the inverse-CDF grand coupling: the state at
/// time t is a function of the per-index uniforms before t only.
inline std::size_t finite_state_at(const covariate::FiniteStateMarkov& chain, std::int64_t t, std::uint64_t seed) {
  const std::size_t n = chain.transition.size();
  constexpr std::int64_t kMaxLookback = std::int64_t{1} << 20;
  for (std::int64_t lookback = 16; lookback <= kMaxLookback; lookback *= 2) {
    std::vector<std::size_t> states(n);
    std::iota(states.begin(), states.end(), std::size_t{0});
    for (std::int64_t s = t - lookback; s < t; ++s) {
      const double u = Stream(seed, s, Domain::CovariateNoise).uniform();
      for (auto& state : states) state = finite_state_step(chain, state, u);
    }
    if (std::all_of(states.begin(), states.end(), [&](std::size_t s) { return s == states.front(); }))
      return states.front();
  }
  // Non-coalescing chains (e.g. periodic): start from a stationary draw at the
  // maximal lookback.
  const auto pi = stationary_vector(chain);
  Stream init(seed, t, Domain::CovariateInit);
  std::size_t state = inverse_cdf_index(pi, init.uniform());
  for (std::int64_t s = t - kMaxLookback; s < t; ++s)
    state = finite_state_step(chain, state, Stream(seed, s, Domain::CovariateNoise).uniform());
  return state;
}

}  // namespace detail

/// Stationary covariate path over `range`. Value at each t depends only on
/// (spec, seed, t), so paths over nested ranges agree on their overlap.
inline CovariatePath generate_path(const CovariateProcessSpec& spec, TimeRange range, std::uint64_t seed) {
  validate(spec);
  require(range.t_min <= range.t_max, ErrorCode::EmptyRange, "covariate range is empty");
  const std::size_t d = spec.dimension();
  const std::size_t len = range.length();
  std::vector<double> values(len * d);

  std::visit(
      [&](const auto& v) {
        using T = std::decay_t<decltype(v)>;
        if constexpr (std::is_same_v<T, covariate::Constant>) {
          for (std::size_t i = 0; i < len; ++i) std::copy(v.value.begin(), v.value.end(), values.begin() + i * d);
        } else if constexpr (std::is_same_v<T, covariate::IID>) {
          for (std::size_t i = 0; i < len; ++i) {
            Stream rng(seed, range.t_min + static_cast<std::int64_t>(i), Domain::CovariateNoise);
            for (std::size_t k = 0; k < d; ++k) values[i * d + k] = sample(v.marginal, rng);
          }
        } else if constexpr (std::is_same_v<T, covariate::AR1>) {
          const std::size_t memory = detail::ar1_memory(v.a);
          const std::int64_t first = range.t_min - static_cast<std::int64_t>(memory);
          const std::size_t span_len = len + memory;
          std::vector<double> noise(span_len * d);
          for (std::size_t i = 0; i < span_len; ++i) {
            Stream rng(seed, first + static_cast<std::int64_t>(i), Domain::CovariateNoise);
            for (std::size_t k = 0; k < d; ++k) noise[i * d + k] = sample(v.noise, rng);
          }
          const auto* gaussian = std::get_if<Gaussian>(&v.noise);
          const double centre = mean(v.noise) / (1.0 - v.a);
          for (std::size_t i = 0; i < len; ++i) {
            const std::int64_t t = range.t_min + static_cast<std::int64_t>(i);
            Stream init(seed, t, Domain::CovariateInit);
            for (std::size_t k = 0; k < d; ++k) {
              // Gaussian noise starts from the exact stationary law; other
              // noises start at the stationary mean and rely on the burn-in.
              double x = centre;
              if (gaussian != nullptr) {
                const double sd = gaussian->sigma / std::sqrt(1.0 - v.a * v.a);
                x = centre + sd * special::normal_quantile(init.uniform_open());
              }
              for (std::size_t j = 0; j <= memory; ++j) x = v.a * x + noise[(i + j) * d + k];
              values[i * d + k] = x;
            }
          }
        } else {
          std::size_t state = detail::finite_state_at(v, range.t_min, seed);
          for (std::size_t i = 0; i < len; ++i) {
            const std::int64_t t = range.t_min + static_cast<std::int64_t>(i);
            std::copy(v.states[state].begin(), v.states[state].end(), values.begin() + i * d);
            state = detail::finite_state_step(v, state, Stream(seed, t, Domain::CovariateNoise).uniform());
          }
        }
      },
      spec.variant);
  return {range, d, std::move(values), seed, spec_hash(spec)};
}

/// One draw of X_0 from the stationary law, independent of any path.
inline std::vector<double> sample_stationary(const CovariateProcessSpec& spec, Stream& rng) {
  const std::size_t d = spec.dimension();
  std::vector<double> x(d);
  std::visit(
      [&](const auto& v) {
        using T = std::decay_t<decltype(v)>;
        if constexpr (std::is_same_v<T, covariate::Constant>) {
          x = v.value;
        } else if constexpr (std::is_same_v<T, covariate::IID>) {
          for (auto& xi : x) xi = sample(v.marginal, rng);
        } else if constexpr (std::is_same_v<T, covariate::AR1>) {
          const double centre = mean(v.noise) / (1.0 - v.a);
          if (const auto* g = std::get_if<Gaussian>(&v.noise)) {
            const double sd = g->sigma / std::sqrt(1.0 - v.a * v.a);
            for (auto& xi : x) xi = centre + sd * special::normal_quantile(rng.uniform_open());
          } else {
            const std::size_t memory = detail::ar1_memory(v.a);
            for (auto& xi : x) {
              xi = centre;
              for (std::size_t j = 0; j <= memory; ++j) xi = v.a * xi + sample(v.noise, rng);
            }
          }
        } else {
          static thread_local const covariate::FiniteStateMarkov* cached_chain = nullptr;
          static thread_local std::vector<double> cached_pi;
          if (cached_chain != &v) {
            cached_pi = stationary_vector(v);
            cached_chain = &v;
          }
          x = v.states[detail::inverse_cdf_index(cached_pi, rng.uniform())];
        }
      },
      spec.variant);
  return x;
}

// ---------------------------------------------------------------------------
// Coefficient maps

struct CoefficientMap;

namespace coef {

struct Constant {
  double c = 0.0;
  bool operator==(const Constant&) const = default;
};
/// c0 + sum_k c1_k x_k (c1 of size 1 broadcasts). May be negative.
struct Affine {
  double c0 = 0.0;
  std::vector<double> c1{0.0};
  bool operator==(const Affine&) const = default;
};
/// c0 + c1 * sum_k |x_k|.
struct AffineAbs {
  double c0 = 0.0;
  double c1 = 0.0;
  bool operator==(const AffineAbs&) const = default;
};
/// exp(c0 + sum_k c1_k x_k).
struct ExpAffine {
  double c0 = 0.0;
  std::vector<double> c1{0.0};
  bool operator==(const ExpAffine&) const = default;
};
/// Value per finite covariate state, keyed on the first component.
struct Table {
  std::vector<double> keys;
  std::vector<double> values;
  bool operator==(const Table&) const = default;
};
struct Abs {
  std::vector<CoefficientMap> args;
  bool operator==(const Abs&) const;
};
struct Max {
  std::vector<CoefficientMap> args;
  bool operator==(const Max&) const;
};
struct Sum {
  std::vector<CoefficientMap> args;
  bool operator==(const Sum&) const;
};
struct Product {
  std::vector<CoefficientMap> args;
  bool operator==(const Product&) const;
};

}  // namespace coef

struct CoefficientMap {
  using Variant = std::variant<coef::Constant, coef::Affine, coef::AffineAbs, coef::ExpAffine, coef::Table, coef::Abs,
                               coef::Max, coef::Sum, coef::Product>;
  Variant variant = coef::Constant{};
  bool nonnegative = false;

  CoefficientMap() = default;
  template <class T>
    requires std::is_constructible_v<Variant, T>
  CoefficientMap(T v, bool nonneg = false) : variant(std::move(v)), nonnegative(nonneg) {}

  bool operator==(const CoefficientMap&) const = default;

  double operator()(std::span<const double> x) const;
  bool structurally_nonnegative() const;
  bool is_constant() const { return std::holds_alternative<coef::Constant>(variant); }
  double constant_value() const { return std::get<coef::Constant>(variant).c; }
};

namespace coef {
inline bool Abs::operator==(const Abs&) const = default;
inline bool Max::operator==(const Max&) const = default;
inline bool Sum::operator==(const Sum&) const = default;
inline bool Product::operator==(const Product&) const = default;
}  // namespace coef

namespace detail {
inline double dot_broadcast(const std::vector<double>& c, std::span<const double> x) {
  if (c.size() == 1) {
    double total = 0.0;
    for (double xi : x) total += xi;
    return c.front() * total;
  }
  double total = 0.0;
  const std::size_t n = std::min(c.size(), x.size());
  for (std::size_t k = 0; k < n; ++k) total += c[k] * x[k];
  return total;
}
}  // namespace detail

inline double CoefficientMap::operator()(std::span<const double> x) const {
  return std::visit(
      [&](const auto& m) -> double {
        using T = std::decay_t<decltype(m)>;
        if constexpr (std::is_same_v<T, coef::Constant>) {
          return m.c;
        } else if constexpr (std::is_same_v<T, coef::Affine>) {
          return m.c0 + detail::dot_broadcast(m.c1, x);
        } else if constexpr (std::is_same_v<T, coef::AffineAbs>) {
          double total = 0.0;
          for (double xi : x) total += std::abs(xi);
          return m.c0 + m.c1 * total;
        } else if constexpr (std::is_same_v<T, coef::ExpAffine>) {
          return std::exp(m.c0 + detail::dot_broadcast(m.c1, x));
        } else if constexpr (std::is_same_v<T, coef::Table>) {
          const double key = x.empty() ? 0.0 : x.front();
          for (std::size_t i = 0; i < m.keys.size(); ++i) {
            if (std::abs(m.keys[i] - key) <= 1e-12) return m.values[i];
          }
          fail(ErrorCode::InvalidSpec, "covariate value has no table entry");
        } else if constexpr (std::is_same_v<T, coef::Abs>) {
          return std::abs(m.args.front()(x));
        } else if constexpr (std::is_same_v<T, coef::Max>) {
          double best = -std::numeric_limits<double>::infinity();
          for (const auto& a : m.args) best = std::max(best, a(x));
          return best;
        } else if constexpr (std::is_same_v<T, coef::Sum>) {
          double total = 0.0;
          for (const auto& a : m.args) total += a(x);
          return total;
        } else {
          double total = 1.0;
          for (const auto& a : m.args) total *= a(x);
          return total;
        }
      },
      variant);
}

inline bool CoefficientMap::structurally_nonnegative() const {
  return std::visit(
      [](const auto& m) -> bool {
        using T = std::decay_t<decltype(m)>;
        if constexpr (std::is_same_v<T, coef::Constant>) {
          return m.c >= 0.0;
        } else if constexpr (std::is_same_v<T, coef::Affine>) {
          return m.c0 >= 0.0 && std::all_of(m.c1.begin(), m.c1.end(), [](double c) { return c == 0.0; });
        } else if constexpr (std::is_same_v<T, coef::AffineAbs>) {
          return m.c0 >= 0.0 && m.c1 >= 0.0;
        } else if constexpr (std::is_same_v<T, coef::ExpAffine>) {
          return true;
        } else if constexpr (std::is_same_v<T, coef::Table>) {
          return std::all_of(m.values.begin(), m.values.end(), [](double v) { return v >= 0.0; });
        } else if constexpr (std::is_same_v<T, coef::Abs>) {
          return true;
        } else if constexpr (std::is_same_v<T, coef::Max>) {
          return std::any_of(m.args.begin(), m.args.end(),
                             [](const CoefficientMap& a) { return a.structurally_nonnegative(); });
        } else {
          return std::all_of(m.args.begin(), m.args.end(),
                             [](const CoefficientMap& a) { return a.structurally_nonnegative(); });
        }
      },
      variant);
}

inline void validate(const CoefficientMap& map) {
  std::visit(
      [](const auto& m) {
        using T = std::decay_t<decltype(m)>;
        if constexpr (std::is_same_v<T, coef::Constant>) {
          require(std::isfinite(m.c), ErrorCode::InvalidSpec, "constant coefficient not finite");
        } else if constexpr (std::is_same_v<T, coef::Affine> || std::is_same_v<T, coef::ExpAffine>) {
          require(!m.c1.empty(), ErrorCode::InvalidSpec, "affine slope vector is empty");
        } else if constexpr (std::is_same_v<T, coef::Table>) {
          require(!m.keys.empty() && m.keys.size() == m.values.size(), ErrorCode::InvalidSpec,
                  "table keys and values must have equal nonzero length");
        } else if constexpr (std::is_same_v<T, coef::Abs>) {
          require(m.args.size() == 1, ErrorCode::InvalidSpec, "abs takes exactly one argument");
          validate(m.args.front());
        } else if constexpr (std::is_same_v<T, coef::Max> || std::is_same_v<T, coef::Sum> ||
                             std::is_same_v<T, coef::Product>) {
          require(!m.args.empty(), ErrorCode::InvalidSpec, "composite map needs arguments");
          for (const auto& a : m.args) validate(a);
        }
      },
      map.variant);
  if (map.nonnegative)
    require(map.structurally_nonnegative(), ErrorCode::InvalidSpec,
            "map flagged nonnegative but its coefficients allow negative values");
}

// Constructors that fold constants, used when deriving envelopes and
// contraction constants.

inline CoefficientMap constant_map(double c) { return CoefficientMap(coef::Constant{c}, c >= 0.0); }

inline CoefficientMap abs_of(const CoefficientMap& m) {
  if (m.is_constant()) return constant_map(std::abs(m.constant_value()));
  if (m.structurally_nonnegative()) {
    CoefficientMap copy = m;
    copy.nonnegative = true;
    return copy;
  }
  return CoefficientMap(coef::Abs{{m}}, true);
}

inline CoefficientMap max_of(const std::vector<CoefficientMap>& maps) {
  if (maps.size() == 1) return maps.front();
  bool all_constant = std::all_of(maps.begin(), maps.end(), [](const auto& m) { return m.is_constant(); });
  if (all_constant) {
    double best = maps.front().constant_value();
    for (const auto& m : maps) best = std::max(best, m.constant_value());
    return constant_map(best);
  }
  // Identical arguments collapse.
  if (std::all_of(maps.begin(), maps.end(), [&](const auto& m) { return m == maps.front(); })) return maps.front();
  CoefficientMap out(coef::Max{maps});
  out.nonnegative = out.structurally_nonnegative();
  return out;
}

inline CoefficientMap sum_of(const std::vector<CoefficientMap>& maps) {
  std::vector<CoefficientMap> rest;
  double folded = 0.0;
  for (const auto& m : maps) {
    if (m.is_constant()) folded += m.constant_value();
    else rest.push_back(m);
  }
  if (rest.empty()) return constant_map(folded);
  if (folded != 0.0) rest.push_back(constant_map(folded));
  if (rest.size() == 1) return rest.front();
  CoefficientMap out(coef::Sum{rest});
  out.nonnegative = out.structurally_nonnegative();
  return out;
}

inline CoefficientMap product_of(const std::vector<CoefficientMap>& maps) {
  std::vector<CoefficientMap> rest;
  double folded = 1.0;
  for (const auto& m : maps) {
    if (m.is_constant()) folded *= m.constant_value();
    else rest.push_back(m);
  }
  if (folded == 0.0 || rest.empty()) return constant_map(rest.empty() ? folded : 0.0);
  if (folded != 1.0) rest.push_back(constant_map(folded));
  if (rest.size() == 1) return rest.front();
  CoefficientMap out(coef::Product{rest});
  out.nonnegative = out.structurally_nonnegative();
  return out;
}

inline std::string describe(const CoefficientMap& map) {
  std::ostringstream os;
  os.precision(6);
  auto slope = [&](const std::vector<double>& c) {
    if (c.size() == 1) {
      os << c.front() << "*sum(x)";
      return;
    }
    os << "[";
    for (std::size_t k = 0; k < c.size(); ++k) os << (k ? "," : "") << c[k];
    os << "].x";
  };
  std::visit(
      [&](const auto& m) {
        using T = std::decay_t<decltype(m)>;
        if constexpr (std::is_same_v<T, coef::Constant>) {
          os << m.c;
        } else if constexpr (std::is_same_v<T, coef::Affine>) {
          os << m.c0 << " + ";
          slope(m.c1);
        } else if constexpr (std::is_same_v<T, coef::AffineAbs>) {
          os << m.c0 << " + " << m.c1 << "*|x|";
        } else if constexpr (std::is_same_v<T, coef::ExpAffine>) {
          os << "exp(" << m.c0 << " + ";
          slope(m.c1);
          os << ")";
        } else if constexpr (std::is_same_v<T, coef::Table>) {
          os << "table{";
          for (std::size_t i = 0; i < m.keys.size(); ++i) os << (i ? ", " : "") << m.keys[i] << ":" << m.values[i];
          os << "}";
        } else {
          const char* name = std::is_same_v<T, coef::Abs>   ? "abs"
                             : std::is_same_v<T, coef::Max> ? "max"
                             : std::is_same_v<T, coef::Sum> ? "sum"
                                                            : "prod";
          os << name << "(";
          for (std::size_t i = 0; i < m.args.size(); ++i) os << (i ? ", " : "") << describe(m.args[i]);
          os << ")";
        }
      },
      map.variant);
  return os.str();
}

// ---------------------------------------------------------------------------
// Monte Carlo moment estimation

enum class Verdict { Negative, Nonnegative, Inconclusive };

constexpr std::string_view to_string(Verdict v) {
  switch (v) {
    case Verdict::Negative: return "negative";
    case Verdict::Nonnegative: return "nonnegative";
    case Verdict::Inconclusive: return "inconclusive";
  }
  return "inconclusive";
}

inline constexpr double kZ99 = 2.576;

struct MomentEstimate {
  double mean = 0.0;
  double std_error = 0.0;
  std::size_t n_samples = 0;
  Verdict verdict = Verdict::Inconclusive;
  std::size_t floored = 0;            ///< draws where the map was below the 1e-300 floor
  bool heavy_tail_suspected = false;  ///< one draw dominates the sum
};

inline Verdict sign_verdict(double mean, double std_error) {
  if (mean + kZ99 * std_error < 0.0) return Verdict::Negative;
  if (mean - kZ99 * std_error > 0.0) return Verdict::Nonnegative;
  return Verdict::Inconclusive;
}

namespace detail {

template <class Map, class Transform>
MomentEstimate moment_of(const Map& map, const CovariateProcessSpec& spec, std::size_t n, std::uint64_t seed,
                         Transform transform, bool check_degenerate) {
  require(n >= 100, ErrorCode::InvalidSpec, "moment estimation needs n >= 100");
  validate(spec);
  MomentEstimate est;
  est.n_samples = n;
  // Welford updates: constant samples give an exactly zero variance.
  double mean = 0.0;
  double m2 = 0.0;
  double largest = 0.0;
  double abs_total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    Stream rng(seed, static_cast<std::int64_t>(i), Domain::MonteCarlo);
    const auto x = sample_stationary(spec, rng);
    double v = std::abs(map(x));
    if (v < 1e-300) {
      ++est.floored;
      v = 1e-300;
    }
    const double value = transform(v);
    const double delta = value - mean;
    mean += delta / static_cast<double>(i + 1);
    m2 += delta * (value - mean);
    largest = std::max(largest, std::abs(value));
    abs_total += std::abs(value);
  }
  if (check_degenerate && est.floored == n) fail(ErrorCode::DegenerateMap, "map vanishes on the covariate support");
  const double dn = static_cast<double>(n);
  est.mean = mean;
  est.std_error = std::sqrt(std::max(0.0, m2 / (dn - 1.0)) / dn);
  est.verdict = sign_verdict(est.mean, est.std_error);
  est.heavy_tail_suspected = n >= 1000 && abs_total > 0.0 && largest > 0.5 * abs_total;
  return est;
}

}  // namespace detail

/// Sample mean of log map(X_0) over n independent stationary draws.
inline MomentEstimate log_moment_estimate(const CoefficientMap& map, const CovariateProcessSpec& spec, std::size_t n,
                                          std::uint64_t seed) {
  validate(map);
  return detail::moment_of(map, spec, n, seed, [](double v) { return std::log(v); }, true);
}

/// Sample mean of log+ map(X_0) = log max(map, 1).
inline MomentEstimate log_plus_moment_estimate(const CoefficientMap& map, const CovariateProcessSpec& spec,
                                               std::size_t n, std::uint64_t seed) {
  validate(map);
  return detail::moment_of(map, spec, n, seed, [](double v) { return std::log(std::max(v, 1.0)); }, false);
}

/// Sample mean of |map(X_0)|.
inline MomentEstimate moment_estimate(const CoefficientMap& map, const CovariateProcessSpec& spec, std::size_t n,
                                      std::uint64_t seed) {
  validate(map);
  return detail::moment_of(map, spec, n, seed, [](double v) { return v <= 1e-300 ? 0.0 : v; }, false);
}

/// The same estimators for an arbitrary function of the covariate.
enum class MomentKind { Log, LogPlus, Plain };

template <class F>
MomentEstimate function_moment(F&& fn, MomentKind kind, const CovariateProcessSpec& spec, std::size_t n,
                               std::uint64_t seed) {
  switch (kind) {
    case MomentKind::Log:
      return detail::moment_of(fn, spec, n, seed, [](double v) { return std::log(v); }, true);
    case MomentKind::LogPlus:
      return detail::moment_of(fn, spec, n, seed, [](double v) { return std::log(std::max(v, 1.0)); }, false);
    case MomentKind::Plain:
      return detail::moment_of(fn, spec, n, seed, [](double v) { return v <= 1e-300 ? 0.0 : v; }, false);
  }
  return {};
}

}  // namespace odre
