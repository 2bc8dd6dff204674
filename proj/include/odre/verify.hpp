#pragma once

// Certification of the contraction (A1), drift (A2) and total-variation (A3)
// assumptions for a model, with three-way verdicts.

#include "odre/covariates.hpp"
#include "odre/kernels.hpp"
#include "odre/links.hpp"
#include "odre/model.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <initializer_list>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace odre {

enum class Outcome { Pass, Fail, Inconclusive };

constexpr std::string_view to_string(Outcome o) {
  switch (o) {
    case Outcome::Pass: return "pass";
    case Outcome::Fail: return "fail";
    case Outcome::Inconclusive: return "inconclusive";
  }
  return "inconclusive";
}

/// 0 pass, 2 fail, 3 inconclusive.
constexpr int exit_code(Outcome o) {
  switch (o) {
    case Outcome::Pass: return 0;
    case Outcome::Fail: return 2;
    case Outcome::Inconclusive: return 3;
  }
  return 3;
}

inline Outcome combine(std::initializer_list<Outcome> parts) {
  bool inconclusive = false;
  for (Outcome o : parts) {
    if (o == Outcome::Fail) return Outcome::Fail;
    inconclusive = inconclusive || o == Outcome::Inconclusive;
  }
  return inconclusive ? Outcome::Inconclusive : Outcome::Pass;
}

/// Negative log-moment passes, nonnegative fails.
inline Outcome from_sign(Verdict v) {
  switch (v) {
    case Verdict::Negative: return Outcome::Pass;
    case Verdict::Nonnegative: return Outcome::Fail;
    case Verdict::Inconclusive: return Outcome::Inconclusive;
  }
  return Outcome::Inconclusive;
}

struct VerifyConfig {
  std::size_t mc_n = 100'000;
  std::uint64_t seed = 1;
  std::size_t grid_size = 200;
  double tol = 1e-6;
  std::size_t lipschitz_triples = 1000;
  std::optional<PhiSpec> phi_override;  ///< replaces the family phi in A3 (negative controls)
};

namespace detail {

/// A state drawn across the operative range of the kernel.
inline State random_state(const ModelSpec& m, Stream& rng) {
  const double lo = std::max(domain_lower(m.kernel), m.link.floor.value_or(-HUGE_VAL));
  State s = State::zeros(state_dim(m.kernel));
  for (std::size_t i = 0; i < s.size(); ++i) {
    const double u = rng.uniform();
    s[i] = std::isfinite(lo) ? lo + 20.0 * u * u : -10.0 + 20.0 * u;
  }
  return s;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// A1

struct A1Report {
  std::string kappa_description;
  MomentEstimate log_kappa;
  bool kappa_vanishes = false;  ///< kappa is zero on the whole support (log moment -inf)
  std::size_t lipschitz_triples = 0;
  double lipschitz_max_excess = -HUGE_VAL;  ///< max of |f(s)-f(s')| - kappa |s - s'|
  bool lipschitz_pass = false;
  Outcome outcome = Outcome::Inconclusive;
};

inline A1Report check_a1(const ModelSpec& model, std::size_t mc_n, std::uint64_t seed, std::size_t triples = 1000) {
  validate(model);
  require(mc_n >= 10'000, ErrorCode::InvalidSpec, "A1 check needs mc_n >= 1e4");
  A1Report r;
  const auto kappa = contraction_map(model.link);
  r.kappa_description = describe(kappa);
  try {
    r.log_kappa = log_moment_estimate(kappa, model.covariates, mc_n, split_seed(seed, 11));
  } catch (const Error& e) {
    if (e.code() != ErrorCode::DegenerateMap) throw;
    r.kappa_vanishes = true;
    r.log_kappa.mean = -HUGE_VAL;
    r.log_kappa.n_samples = mc_n;
    r.log_kappa.verdict = Verdict::Negative;
  }
  const double lo = domain_lower(model.kernel);
  r.lipschitz_triples = triples;
  for (std::size_t i = 0; i < triples; ++i) {
    Stream rng(split_seed(seed, 12), static_cast<std::int64_t>(i), Domain::Grid);
    const State s = detail::random_state(model, rng);
    const State sp = detail::random_state(model, rng);
    const double y = sample(model.kernel, s, rng);
    const auto x = sample_stationary(model.covariates, rng);
    double excess = 0.0;
    try {
      const State f = apply(model.link, s, y, x, lo);
      const State fp = apply(model.link, sp, y, x, lo);
      excess = distance(f, fp) - kappa(x) * distance(s, sp);
    } catch (const Error& e) {
      if (e.code() != ErrorCode::DomainViolation) throw;
      continue;  // domain problems are reported by the drift check
    }
    r.lipschitz_max_excess = std::max(r.lipschitz_max_excess, excess);
  }
  r.lipschitz_pass = r.lipschitz_max_excess <= 1e-12;
  r.outcome = combine({from_sign(r.log_kappa.verdict), r.lipschitz_pass ? Outcome::Pass : Outcome::Fail});
  return r;
}

// ---------------------------------------------------------------------------
// A2

struct A2Report {
  DriftRoute route = DriftRoute::Pratique1;
  int order = 1;
  std::string kappa_description;
  std::string kappa_tilde_description;
  std::string delta_tilde_description;
  std::string gamma_description;
  std::string delta_description;
  std::string V_description = "V(s)=1+|s|";
  double D = 0.0;
  MomentEstimate log_gamma;  ///< E log gamma (kappa for the binary/categorical route)
  MomentEstimate log_plus_delta;
  /// Threshold case 2: E log(|kappa_2| + |kappa_tilde_2|) alongside E log kappa.
  std::optional<MomentEstimate> log_outside_growth;
  /// Binary/categorical route: E log+ |f(s0, y, X)| per category y.
  std::vector<MomentEstimate> log_plus_reference;
  std::optional<std::string> structural_error;
  Outcome outcome = Outcome::Inconclusive;
};

namespace detail {

/// Probe f over states, observations and covariates for outputs below the
/// kernel's domain; returns a description of the first violation.
inline std::optional<std::string> probe_domain(const ModelSpec& m, std::uint64_t seed, std::size_t probes) {
  const double lo = domain_lower(m.kernel);
  if (!std::isfinite(lo) || m.link.floor) return std::nullopt;
  for (std::size_t i = 0; i < probes; ++i) {
    Stream rng(seed, static_cast<std::int64_t>(i), Domain::Grid);
    State s = i % 4 == 0 ? State(lo) : random_state(m, rng);
    const auto x = sample_stationary(m.covariates, rng);
    const double y = i % 2 == 0 ? sample_from_uniform(m.kernel, s, 0.5) : sample(m.kernel, s, rng);
    try {
      (void)apply(m.link, s, y, x, lo);
    } catch (const Error& e) {
      if (e.code() != ErrorCode::DomainViolation) throw;
      return std::string(e.what());
    }
  }
  return std::nullopt;
}

inline Outcome tail_outcome(const MomentEstimate& e) {
  return e.heavy_tail_suspected || !std::isfinite(e.mean) ? Outcome::Inconclusive : Outcome::Pass;
}

}  // namespace detail

inline A2Report check_a2(const ModelSpec& model, std::size_t mc_n, std::uint64_t seed) {
  validate(model);
  require(mc_n >= 10'000, ErrorCode::InvalidSpec, "A2 check needs mc_n >= 1e4");
  A2Report r;
  r.structural_error = detail::probe_domain(model, split_seed(seed, 21), 2000);

  std::optional<DriftMaps> drift;
  try {
    drift = drift_maps(model);
  } catch (const Error& e) {
    if (e.code() != ErrorCode::UnboundedG) throw;
    r.structural_error = std::string(e.what());
  }
  if (!drift) {
    r.outcome = Outcome::Fail;
    return r;
  }
  r.route = drift->route;
  r.order = drift->envelope.order;
  r.kappa_description = describe(drift->envelope.kappa);
  r.kappa_tilde_description = describe(drift->envelope.kappa_tilde);
  r.delta_tilde_description = describe(drift->envelope.delta_tilde);
  r.gamma_description = drift->gamma_description;
  r.delta_description = drift->delta_description;
  r.D = drift->D;
  const std::uint64_t mc_seed = split_seed(seed, 22);

  auto log_moment = [&](auto fn) -> MomentEstimate {
    try {
      return function_moment(fn, MomentKind::Log, model.covariates, mc_n, mc_seed);
    } catch (const Error& e) {
      if (e.code() != ErrorCode::DegenerateMap) throw;
      MomentEstimate m;
      m.mean = -HUGE_VAL;
      m.n_samples = mc_n;
      m.verdict = Verdict::Negative;
      return m;
    }
  };

  std::vector<Outcome> parts;
  if (r.structural_error) parts.push_back(Outcome::Fail);

  if (r.route == DriftRoute::BinaryCategorical) {
    // Contraction plus log+ integrability of f(s0, y, .) for every category.
    r.log_gamma = log_moment(drift->gamma);
    parts.push_back(from_sign(r.log_gamma.verdict));
    const State s0 = State::zeros(state_dim(model.kernel));
    for (std::size_t y = 0; y < category_count(model.kernel); ++y) {
      auto fn = [&](std::span<const double> x) { return norm(apply(model.link, s0, static_cast<double>(y), x)); };
      r.log_plus_reference.push_back(function_moment(fn, MomentKind::LogPlus, model.covariates, mc_n, mc_seed));
      parts.push_back(detail::tail_outcome(r.log_plus_reference.back()));
    }
    r.log_plus_delta = function_moment(drift->delta, MomentKind::LogPlus, model.covariates, mc_n, mc_seed);
  } else {
    r.log_gamma = log_moment(drift->gamma);
    r.log_plus_delta = log_plus_moment_estimate(drift->envelope.delta_tilde, model.covariates, mc_n, mc_seed);
    parts.push_back(detail::tail_outcome(r.log_plus_delta));
    if (r.route == DriftRoute::ThresholdCase2) {
      // Bounded inside region: E log kappa < 0 and E log(|k2| + |kt2|) < 0.
      const auto log_kappa = log_moment(drift->envelope.kappa);
      r.log_outside_growth = log_moment(*drift->envelope.outside_growth);
      parts.push_back(from_sign(log_kappa.verdict));
      parts.push_back(from_sign(r.log_outside_growth->verdict));
    } else {
      parts.push_back(from_sign(r.log_gamma.verdict));
    }
  }
  Outcome o = Outcome::Pass;
  for (Outcome p : parts) o = combine({o, p});
  r.outcome = o;
  return r;
}

// ---------------------------------------------------------------------------
// A3

struct StatePair {
  State s;
  State s_prime;
};

/// Deterministic grid of state pairs with separations log-spaced over
/// [1e-4, 1e2] and base states across the operative range of the family.
inline std::vector<StatePair> standard_grid(const ObservationKernel& k, std::size_t size = 200) {
  require(size >= 5, ErrorCode::InvalidSpec, "grid needs at least 5 pairs");
  const std::size_t dim = state_dim(k);
  const double lo = domain_lower(k);
  const std::size_t n_bases = 5;
  const std::size_t n_h = (size + n_bases - 1) / n_bases;
  std::vector<StatePair> grid;
  grid.reserve(n_h * n_bases);
  for (std::size_t j = 0; j < n_h; ++j) {
    const double h = n_h == 1 ? 1.0 : std::pow(10.0, -4.0 + 6.0 * static_cast<double>(j) / static_cast<double>(n_h - 1));
    for (std::size_t b = 0; b < n_bases && grid.size() < size; ++b) {
      if (dim > 1) {
        // Vector states: base pattern plus a move along one axis, all axes or alternating signs.
        const double scale = std::array<double, 5>{0.0, 0.5, -1.0, 2.0, -4.0}[b];
        State s = State::zeros(dim);
        State d = State::zeros(dim);
        for (std::size_t i = 0; i < dim; ++i) {
          s[i] = scale * static_cast<double>(i + 1) / static_cast<double>(dim);
          switch ((j + b) % 3) {
            case 0: d[i] = i == 0 ? 1.0 : 0.0; break;
            case 1: d[i] = 1.0; break;
            default: d[i] = i % 2 == 0 ? 1.0 : -1.0; break;
          }
        }
        State sp = s;
        for (std::size_t i = 0; i < dim; ++i) sp[i] += h * d[i];
        grid.push_back({s, sp});
      } else if (std::isfinite(lo)) {
        const double offset = std::array<double, 5>{0.0, 0.5, 2.0, 10.0, 50.0}[b];
        const double base = lo + offset * (lo > 0.0 ? std::max(lo, 1.0) : 1.0);
        grid.push_back({State(base), State(base + h)});
      } else {
        // Pairs centred on c, so the symmetric worst case c = 0 is included.
        const double c = std::array<double, 5>{0.0, -5.0, -1.0, 0.5, 3.0}[b];
        grid.push_back({State(c - 0.5 * h), State(c + 0.5 * h)});
      }
    }
  }
  return grid;
}

struct A3Report {
  PhiSpec phi;
  std::size_t pairs = 0;
  double tol = 0.0;
  double max_violation = -HUGE_VAL;  ///< max of tv_exact - tv_bound
  StatePair worst;
  std::string grid_description;
  Outcome outcome = Outcome::Inconclusive;
};

inline A3Report check_a3(const ModelSpec& model, std::size_t grid_size = 200, double tol = 1e-6,
                         const std::optional<PhiSpec>& phi_override = std::nullopt) {
  require(grid_size >= 50, ErrorCode::InvalidSpec, "A3 grid needs at least 50 pairs");
  require(tol > 0.0, ErrorCode::InvalidSpec, "tol must be positive");
  validate(model.kernel);
  A3Report r;
  r.phi = phi_override.value_or(phi(model.kernel));
  validate(r.phi);
  r.tol = tol;
  const auto grid = standard_grid(model.kernel, grid_size);
  r.pairs = grid.size();
  r.grid_description = std::to_string(grid.size()) + " pairs, h log-spaced on [1e-4, 1e2], 5 base states";
  const double oracle_tol = std::min(tol, 1e-3) / 2.0;
  std::vector<double> violation(grid.size());
  parallel_for(grid.size(), [&](std::size_t i) {
    const auto& p = grid[i];
    violation[i] = tv_exact(model.kernel, p.s, p.s_prime, oracle_tol) - tv_bound(model.kernel, p.s, p.s_prime, r.phi);
  });
  for (std::size_t i = 0; i < grid.size(); ++i) {
    if (violation[i] > r.max_violation) {
      r.max_violation = violation[i];
      r.worst = grid[i];
    }
  }
  r.outcome = r.max_violation <= tol ? Outcome::Pass : Outcome::Fail;
  return r;
}

// ---------------------------------------------------------------------------

struct VerificationReport {
  static constexpr int kSchemaVersion = 1;
  A1Report a1;
  A2Report a2;
  A3Report a3;
  VerifyConfig config;
  Outcome overall = Outcome::Inconclusive;
};

inline VerificationReport full_report(const ModelSpec& model, const VerifyConfig& config = {}) {
  VerificationReport rep;
  rep.config = config;
  rep.a1 = check_a1(model, config.mc_n, config.seed, config.lipschitz_triples);
  rep.a2 = check_a2(model, config.mc_n, config.seed);
  rep.a3 = check_a3(model, config.grid_size, config.tol, config.phi_override);
  rep.overall = combine({rep.a1.outcome, rep.a2.outcome, rep.a3.outcome});
  return rep;
}

}  // namespace odre
