#pragma once

// Latent recursions f(s, y, x) and the contraction / growth envelopes the
// verifiers need.

#include "odre/covariates.hpp"
#include "odre/error.hpp"
#include "odre/kernels.hpp"

#include <cmath>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <variant>
#include <vector>

namespace odre {

// ---------------------------------------------------------------------------
// Interval maps for threshold regimes

namespace interval {

struct Fixed {
  double lo = -std::numeric_limits<double>::infinity();
  double hi = std::numeric_limits<double>::infinity();
  bool operator==(const Fixed&) const = default;
};

/// [lo * |x|, hi * |x|] with |x| the componentwise absolute sum.
struct CovariateScaled {
  double lo = 0.0;
  double hi = 1.0;
  bool operator==(const CovariateScaled&) const = default;
};

}  // namespace interval

using IntervalMap = std::variant<interval::Fixed, interval::CovariateScaled>;

inline void validate(const IntervalMap& m) {
  std::visit([](const auto& i) { require(i.lo <= i.hi, ErrorCode::InvalidSpec, "interval needs lo <= hi"); }, m);
}

inline bool contains(const IntervalMap& m, double y, std::span<const double> x) {
  return std::visit(overloaded{
                        [&](const interval::Fixed& i) { return y >= i.lo && y <= i.hi; },
                        [&](const interval::CovariateScaled& i) {
                          double ax = 0.0;
                          for (double v : x) ax += std::abs(v);
                          return y >= i.lo * ax && y <= i.hi * ax;
                        },
                    },
                    m);
}

/// True when every I(x) is a bounded interval.
inline bool is_bounded(const IntervalMap& m) {
  return std::visit(overloaded{
                        [](const interval::Fixed& i) { return std::isfinite(i.lo) && std::isfinite(i.hi); },
                        [](const interval::CovariateScaled& i) { return std::isfinite(i.lo) && std::isfinite(i.hi); },
                    },
                    m);
}

/// sup_{y in I(x)} |y|^order as a coefficient map.
inline CoefficientMap sup_abs_power(const IntervalMap& m, int order) {
  return std::visit(overloaded{
                        [&](const interval::Fixed& i) {
                          return constant_map(std::pow(std::max(std::abs(i.lo), std::abs(i.hi)), order));
                        },
                        [&](const interval::CovariateScaled& i) {
                          const CoefficientMap ax(coef::AffineAbs{0.0, std::max(std::abs(i.lo), std::abs(i.hi))}, true);
                          return order == 1 ? ax : product_of({ax, ax});
                        },
                    },
                    m);
}

// ---------------------------------------------------------------------------
// Link specifications

namespace link {

/// kappa(x) s + kappa_tilde(x) y^order + delta_tilde(x).
struct Linear {
  CoefficientMap kappa = constant_map(0.0);
  CoefficientMap kappa_tilde = constant_map(0.0);
  CoefficientMap delta_tilde = constant_map(0.0);
  int order = 1;
  bool operator==(const Linear&) const = default;
};

struct Regime {
  CoefficientMap kappa = constant_map(0.0);
  CoefficientMap kappa_tilde = constant_map(0.0);
  CoefficientMap gamma = constant_map(0.0);
  bool operator==(const Regime&) const = default;
};

/// Regime `inside` when y lies in I(x), else `outside`.
struct Threshold {
  Regime inside;
  Regime outside;
  IntervalMap interval = interval::Fixed{};
  int order = 1;
  bool operator==(const Threshold&) const = default;
};

/// g(y, x) = clamp(slope(x) y, -clip, clip) + intercept(x); no clamp when clip is absent.
struct LinearRegression {
  CoefficientMap slope = constant_map(0.0);
  CoefficientMap intercept = constant_map(0.0);
  std::optional<double> clip;
  bool operator==(const LinearRegression&) const = default;
};

/// g(y, x) = coef(x) sign(y) |y|^power.
struct PowerRegression {
  CoefficientMap coef = constant_map(0.0);
  double power = 1.0;
  bool operator==(const PowerRegression&) const = default;
};

using Regression = std::variant<LinearRegression, PowerRegression>;

/// a(x) s + g(y, x) - a(x) y.
struct ArmaLike {
  CoefficientMap a = constant_map(0.0);
  Regression g = LinearRegression{};
  bool operator==(const ArmaLike&) const = default;
};

/// Multinomial recursion on R^{N-1} with one-hot observations:
/// f_j = kappa(x) s_j + kappa_tilde(x) table[j][y] + delta_tilde(x) intercept[j].
struct Categorical {
  CoefficientMap kappa = constant_map(0.0);
  CoefficientMap kappa_tilde = constant_map(1.0);
  CoefficientMap delta_tilde = constant_map(1.0);
  std::vector<std::vector<double>> table;
  std::vector<double> intercept;
  bool operator==(const Categorical&) const = default;
};

}  // namespace link

struct LinkSpec {
  std::variant<link::Linear, link::Threshold, link::ArmaLike, link::Categorical> variant = link::Linear{};
  std::optional<double> floor = std::nullopt;  ///< output clamped below at this value
  bool operator==(const LinkSpec&) const = default;
};

/// Power order i of y in the growth bound (1 for ArmaLike and Categorical).
inline int link_order(const LinkSpec& link) {
  return std::visit(overloaded{
                        [](const link::Linear& l) { return l.order; },
                        [](const link::Threshold& t) { return t.order; },
                        [](const auto&) { return 1; },
                    },
                    link.variant);
}

inline void validate(const LinkSpec& link) {
  std::visit(overloaded{
                 [](const link::Linear& l) {
                   require(l.order == 1 || l.order == 2, ErrorCode::InvalidSpec, "order must be 1 or 2");
                   validate(l.kappa);
                   validate(l.kappa_tilde);
                   validate(l.delta_tilde);
                 },
                 [](const link::Threshold& t) {
                   require(t.order == 1 || t.order == 2, ErrorCode::InvalidSpec, "order must be 1 or 2");
                   for (const auto* r : {&t.inside, &t.outside}) {
                     validate(r->kappa);
                     validate(r->kappa_tilde);
                     validate(r->gamma);
                   }
                   validate(t.interval);
                 },
                 [](const link::ArmaLike& a) {
                   validate(a.a);
                   std::visit(overloaded{
                                  [](const link::LinearRegression& g) {
                                    validate(g.slope);
                                    validate(g.intercept);
                                    if (g.clip) require(*g.clip >= 0.0, ErrorCode::InvalidSpec, "clip must be >= 0");
                                  },
                                  [](const link::PowerRegression& g) {
                                    validate(g.coef);
                                    require(g.power >= 0.0 && std::isfinite(g.power), ErrorCode::InvalidSpec,
                                            "power must be finite and >= 0");
                                  },
                              },
                              a.g);
                 },
                 [](const link::Categorical& c) {
                   validate(c.kappa);
                   validate(c.kappa_tilde);
                   validate(c.delta_tilde);
                   require(!c.table.empty() && c.table.size() == c.intercept.size(), ErrorCode::InvalidSpec,
                           "categorical table needs N-1 rows matching the intercept");
                   for (const auto& row : c.table)
                     require(row.size() == c.table.size() + 1, ErrorCode::InvalidSpec,
                             "categorical table must be (N-1) x N");
                 },
             },
             link.variant);
  if (link.floor) require(std::isfinite(*link.floor), ErrorCode::InvalidSpec, "floor must be finite");
}

/// Check that a link can drive a kernel.
inline void validate_pair(const LinkSpec& link, const ObservationKernel& k) {
  validate(link);
  validate(k);
  const bool categorical = std::holds_alternative<link::Categorical>(link.variant);
  const bool multinomial = std::holds_alternative<kernel::Multinomial>(k);
  require(categorical == multinomial, ErrorCode::UnsupportedCombination,
          "the categorical link pairs exactly with the Multinomial kernel");
  if (multinomial) {
    const auto& c = std::get<link::Categorical>(link.variant);
    require(c.table.size() == state_dim(k), ErrorCode::UnsupportedCombination, "table rows must equal N-1");
  }
  require(link_order(link) == supported_order(k), ErrorCode::UnsupportedCombination,
          "link order " + std::to_string(link_order(link)) + " does not match the " + family_name(k) +
              " kernel's moment order " + std::to_string(supported_order(k)));
  if (link.floor)
    require(*link.floor >= domain_lower(k), ErrorCode::InvalidSpec, "floor below the kernel's state domain");
}

namespace detail {

inline double power_of(double y, int order) { return order == 1 ? y : y * y; }

inline double regression(const link::Regression& g, double y, std::span<const double> x) {
  return std::visit(overloaded{
                        [&](const link::LinearRegression& r) {
                          double v = r.slope(x) * y;
                          if (r.clip) v = std::clamp(v, -*r.clip, *r.clip);
                          return v + r.intercept(x);
                        },
                        [&](const link::PowerRegression& r) {
                          const double m = std::pow(std::abs(y), r.power);
                          return r.coef(x) * (y < 0.0 ? -m : m);
                        },
                    },
                    g);
}

/// f before clamping, scalar variants.
inline double raw_scalar(const LinkSpec& link, double s, double y, std::span<const double> x) {
  return std::visit(overloaded{
                        [&](const link::Linear& l) {
                          return l.kappa(x) * s + l.kappa_tilde(x) * power_of(y, l.order) + l.delta_tilde(x);
                        },
                        [&](const link::Threshold& t) {
                          const auto& r = contains(t.interval, y, x) ? t.inside : t.outside;
                          return r.kappa(x) * s + r.kappa_tilde(x) * power_of(y, t.order) + r.gamma(x);
                        },
                        [&](const link::ArmaLike& a) {
                          const double ax = a.a(x);
                          return ax * s + regression(a.g, y, x) - ax * y;
                        },
                        [&](const link::Categorical&) -> double {
                          fail(ErrorCode::UnsupportedCombination, "categorical link has vector state");
                        },
                    },
                    link.variant);
}

}  // namespace detail

/// Evaluate f(s, y, x), clamp at the floor, and check the output domain.
/// Non-finite outputs pass through so callers can detect divergence.
inline State apply(const LinkSpec& link, const State& s, double y, std::span<const double> x,
                   double domain_lo = -std::numeric_limits<double>::infinity()) {
  if (const auto* c = std::get_if<link::Categorical>(&link.variant)) {
    const auto cat = static_cast<std::size_t>(y);
    require(y >= 0.0 && cat < c->table.size() + 1 && static_cast<double>(cat) == y, ErrorCode::DomainViolation,
            "categorical observation out of range");
    const double k = c->kappa(x);
    const double kt = c->kappa_tilde(x);
    const double dt = c->delta_tilde(x);
    State out = State::zeros(c->table.size());
    for (std::size_t j = 0; j < c->table.size(); ++j) {
      out[j] = k * s[j] + kt * c->table[j][cat] + dt * c->intercept[j];
      if (link.floor) out[j] = std::max(out[j], *link.floor);
    }
    return out;
  }
  double v = detail::raw_scalar(link, s.scalar(), y, x);
  if (link.floor) v = std::max(v, *link.floor);
  if (v < domain_lo)
    fail(ErrorCode::DomainViolation, "link output " + std::to_string(v) + " below state domain bound " +
                                          std::to_string(domain_lo) + " (configure a floor)");
  return State(v);
}

/// f(s', y', x) - f(s, y, x) given gap = s' - s, computed from differences
/// so that a vanishing gap is not lost to rounding of the states.
inline State propagate_gap(const LinkSpec& link, const State& s, const State& gap, double y, double yp,
                           std::span<const double> x) {
  auto clamp_gap = [&](double f, double df) {
    if (!link.floor) return df;
    const double c = *link.floor;
    if (f >= c && f + df >= c) return df;
    return std::max(f + df, c) - std::max(f, c);
  };
  return std::visit(
      overloaded{
          [&](const link::Linear& l) {
            const double f = detail::raw_scalar(link, s.scalar(), y, x);
            const double df = l.kappa(x) * gap.scalar() +
                              l.kappa_tilde(x) * (detail::power_of(yp, l.order) - detail::power_of(y, l.order));
            return State(clamp_gap(f, df));
          },
          [&](const link::Threshold& t) {
            const double f = detail::raw_scalar(link, s.scalar(), y, x);
            const bool in = contains(t.interval, y, x);
            double df = 0.0;
            if (in == contains(t.interval, yp, x)) {
              const auto& r = in ? t.inside : t.outside;
              df = r.kappa(x) * gap.scalar() +
                   r.kappa_tilde(x) * (detail::power_of(yp, t.order) - detail::power_of(y, t.order));
            } else {
              df = detail::raw_scalar(link, s.scalar() + gap.scalar(), yp, x) - f;
            }
            return State(clamp_gap(f, df));
          },
          [&](const link::ArmaLike& a) {
            const double f = detail::raw_scalar(link, s.scalar(), y, x);
            const double ax = a.a(x);
            const double dg = y == yp ? 0.0 : detail::regression(a.g, yp, x) - detail::regression(a.g, y, x);
            return State(clamp_gap(f, ax * gap.scalar() + dg - ax * (yp - y)));
          },
          [&](const link::Categorical& c) {
            const auto cy = static_cast<std::size_t>(y);
            const auto cyp = static_cast<std::size_t>(yp);
            const double k = c.kappa(x);
            const double kt = c.kappa_tilde(x);
            const double dt = c.delta_tilde(x);
            State out = State::zeros(c.table.size());
            for (std::size_t j = 0; j < c.table.size(); ++j) {
              const double f = k * s[j] + kt * c.table[j][cy] + dt * c.intercept[j];
              out[j] = clamp_gap(f, k * gap[j] + kt * (c.table[j][cyp] - c.table[j][cy]));
            }
            return out;
          },
      },
      link.variant);
}

// ---------------------------------------------------------------------------
// Envelopes

/// Exact Lipschitz constant of f in s, per covariate value.
inline CoefficientMap contraction_map(const LinkSpec& link) {
  return std::visit(overloaded{
                        [](const link::Linear& l) { return abs_of(l.kappa); },
                        [](const link::Threshold& t) {
                          return max_of({abs_of(t.inside.kappa), abs_of(t.outside.kappa)});
                        },
                        [](const link::ArmaLike& a) { return abs_of(a.a); },
                        [](const link::Categorical& c) { return abs_of(c.kappa); },
                    },
                    link.variant);
}

enum class EnvelopeCase { Linear, ThresholdCase1, ThresholdCase2, ArmaLike, Categorical };

constexpr std::string_view to_string(EnvelopeCase c) {
  switch (c) {
    case EnvelopeCase::Linear: return "linear";
    case EnvelopeCase::ThresholdCase1: return "threshold-case1";
    case EnvelopeCase::ThresholdCase2: return "threshold-case2";
    case EnvelopeCase::ArmaLike: return "arma-like";
    case EnvelopeCase::Categorical: return "categorical";
  }
  return "linear";
}

/// |f(s, y, x)| <= kappa(x)|s| + kappa_tilde(x)|y|^order + delta_tilde(x).
struct GrowthEnvelope {
  CoefficientMap kappa;
  CoefficientMap kappa_tilde;
  CoefficientMap delta_tilde;
  int order = 1;
  bool is_contractive_in_s = false;  ///< kappa is a constant below one
  EnvelopeCase case_tag = EnvelopeCase::Linear;
  /// Case 2 only: |kappa_2| + |kappa_tilde_2|, the outside-regime growth.
  std::optional<CoefficientMap> outside_growth;

  double bound(const State& s, double y, std::span<const double> x) const {
    return kappa(x) * norm(s) + kappa_tilde(x) * std::pow(std::abs(y), order) + delta_tilde(x);
  }
};

inline GrowthEnvelope growth_envelope(const LinkSpec& link) {
  GrowthEnvelope env;
  std::visit(
      overloaded{
          [&](const link::Linear& l) {
            env.kappa = abs_of(l.kappa);
            env.kappa_tilde = abs_of(l.kappa_tilde);
            env.delta_tilde = abs_of(l.delta_tilde);
            env.order = l.order;
            env.case_tag = EnvelopeCase::Linear;
          },
          [&](const link::Threshold& t) {
            env.order = t.order;
            env.kappa = max_of({abs_of(t.inside.kappa), abs_of(t.outside.kappa)});
            if (is_bounded(t.interval)) {
              // Inside a bounded I(x) the y-term is at most |kappa_tilde_1| sup|y|^i.
              env.case_tag = EnvelopeCase::ThresholdCase2;
              env.kappa_tilde = abs_of(t.outside.kappa_tilde);
              const auto inside_const =
                  sum_of({abs_of(t.inside.gamma),
                          product_of({abs_of(t.inside.kappa_tilde), sup_abs_power(t.interval, t.order)})});
              env.delta_tilde = max_of({inside_const, abs_of(t.outside.gamma)});
              env.outside_growth = sum_of({abs_of(t.outside.kappa), abs_of(t.outside.kappa_tilde)});
            } else {
              env.case_tag = EnvelopeCase::ThresholdCase1;
              env.kappa_tilde = max_of({abs_of(t.inside.kappa_tilde), abs_of(t.outside.kappa_tilde)});
              env.delta_tilde = max_of({abs_of(t.inside.gamma), abs_of(t.outside.gamma)});
            }
          },
          [&](const link::ArmaLike& a) {
            env.case_tag = EnvelopeCase::ArmaLike;
            env.order = 1;
            env.kappa = abs_of(a.a);
            std::visit(overloaded{
                           [&](const link::LinearRegression& g) {
                             if (g.clip) {
                               env.kappa_tilde = abs_of(a.a);
                               env.delta_tilde = sum_of({abs_of(g.intercept), constant_map(*g.clip)});
                             } else {
                               env.kappa_tilde = sum_of({abs_of(g.slope), abs_of(a.a)});
                               env.delta_tilde = abs_of(g.intercept);
                             }
                           },
                           [&](const link::PowerRegression& g) {
                             if (g.power > 1.0)
                               fail(ErrorCode::UnboundedG, "regression grows like |y|^" + std::to_string(g.power) +
                                                               ", faster than order 1");
                             // |y|^p <= 1 + |y| for 0 <= p <= 1.
                             env.kappa_tilde = sum_of({abs_of(g.coef), abs_of(a.a)});
                             env.delta_tilde = g.power == 1.0 ? constant_map(0.0) : abs_of(g.coef);
                           },
                       },
                       a.g);
          },
          [&](const link::Categorical& c) {
            env.case_tag = EnvelopeCase::Categorical;
            env.order = 1;
            double table_max = 0.0;
            for (const auto& row : c.table)
              for (double v : row) table_max = std::max(table_max, std::abs(v));
            double intercept_max = 0.0;
            for (double v : c.intercept) intercept_max = std::max(intercept_max, std::abs(v));
            env.kappa = abs_of(c.kappa);
            env.kappa_tilde = product_of({abs_of(c.kappa_tilde), constant_map(table_max)});
            env.delta_tilde = product_of({abs_of(c.delta_tilde), constant_map(intercept_max)});
          },
      },
      link.variant);
  if (link.floor) env.delta_tilde = max_of({env.delta_tilde, constant_map(std::abs(*link.floor))});
  env.is_contractive_in_s = env.kappa.is_constant() && env.kappa.constant_value() < 1.0;
  return env;
}

}  // namespace odre
