#pragma once

// Forward simulation, maximal coupling of two chains in one environment,
// backward iterations, the stationary sampler and the W-statistics.

#include "odre/covariates.hpp"
#include "odre/kernels.hpp"
#include "odre/links.hpp"
#include "odre/model.hpp"
#include "odre/wasserstein.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace odre {

// Seed layout: a top-level seed splits into the environment seed (index 0)
// and the observation seed (index 1); replica r then uses
// split_seed(observation seed, r).
inline std::uint64_t environment_seed(std::uint64_t seed) { return split_seed(seed, 0); }
inline std::uint64_t observation_seed(std::uint64_t seed) { return split_seed(seed, 1); }

// ---------------------------------------------------------------------------
// Forward simulation

struct Trajectory {
  TimeRange range;
  CovariatePath path;
  std::vector<State> lambda;  ///< lambda_t for t in range
  std::vector<double> y;      ///< Y_t for t in range
  std::uint64_t seed = 0;
  bool diverged = false;
};

/// Runs the chain along an existing path with lambda_{t_min} = s0.
inline Trajectory simulate_on_path(const ModelSpec& model, const State& s0, const CovariatePath& path,
                                   std::uint64_t obs_key) {
  check_state(model.kernel, s0);
  Trajectory tr;
  tr.range = path.range();
  tr.path = path;
  tr.seed = obs_key;
  const std::size_t len = path.length();
  tr.lambda.reserve(len);
  tr.y.reserve(len);
  State s = s0;
  for (std::int64_t t = path.range().t_min; t <= path.range().t_max; ++t) {
    tr.lambda.push_back(s);
    double y = 0.0;
    Stream rng(obs_key, t, Domain::Observation);
    s = step(model, s, rng.uniform_open(), path.at(t), &y);
    tr.y.push_back(y);
    if (!s.finite()) tr.diverged = true;
  }
  return tr;
}

inline Trajectory simulate(const ModelSpec& model, const State& s0, TimeRange range, std::uint64_t seed) {
  validate(model);
  const auto path = generate_path(model.covariates, range, environment_seed(seed));
  auto tr = simulate_on_path(model, s0, path, observation_seed(seed));
  tr.seed = seed;
  return tr;
}

// ---------------------------------------------------------------------------
// Maximal coupling in a shared environment

struct CouplingTrace {
  TimeRange range;
  std::vector<State> lambda;
  std::vector<State> lambda_prime;
  std::vector<double> y;
  std::vector<double> y_prime;
  std::vector<char> met;
  std::optional<std::int64_t> meet_time;  ///< first T with met_t for every recorded t >= T
  double lambda_gap_sum = 0.0;            ///< sum over t >= T of |lambda_t - lambda'_t|
  bool censored = true;                   ///< no meeting, or fewer than min_tail steps observed after it
  std::uint64_t path_seed = 0;
  std::uint64_t path_hash = 0;
};

inline CouplingTrace couple_forward(const ModelSpec& model, const State& s0, const State& s0_prime,
                                    const CovariatePath& path, std::uint64_t seed, std::size_t min_tail = 50) {
  validate(model);
  check_state(model.kernel, s0);
  check_state(model.kernel, s0_prime);
  CouplingTrace tr;
  tr.range = path.range();
  tr.path_seed = path.seed();
  tr.path_hash = path.spec_hash();
  const std::size_t len = path.length();
  tr.lambda.reserve(len);
  tr.lambda_prime.reserve(len);
  tr.y.reserve(len);
  tr.y_prime.reserve(len);
  tr.met.reserve(len);
  State s = s0;
  State sp = s0_prime;
  const double lo = domain_lower(model.kernel);
  for (std::int64_t t = path.range().t_min; t <= path.range().t_max; ++t) {
    tr.lambda.push_back(s);
    tr.lambda_prime.push_back(sp);
    Stream rng(seed, t, Domain::Coupling);
    const auto draw = maximal_couple(model.kernel, s, sp, rng);
    tr.y.push_back(draw.y);
    tr.y_prime.push_back(draw.y_prime);
    tr.met.push_back(draw.met ? 1 : 0);
    const auto x = path.at(t);
    s = std::isfinite(draw.y) && s.finite() ? apply(model.link, s, draw.y, x, lo) : State(HUGE_VAL);
    sp = std::isfinite(draw.y_prime) && sp.finite() ? apply(model.link, sp, draw.y_prime, x, lo) : State(HUGE_VAL);
  }
  std::size_t first_tail = len;
  while (first_tail > 0 && tr.met[first_tail - 1]) --first_tail;
  if (first_tail < len) {
    tr.meet_time = path.range().t_min + static_cast<std::int64_t>(first_tail);
    for (std::size_t i = first_tail; i < len; ++i) tr.lambda_gap_sum += distance(tr.lambda[i], tr.lambda_prime[i]);
    tr.censored = len - first_tail < min_tail;
  }
  return tr;
}

// ---------------------------------------------------------------------------
// Backward iterations

/// Empirical law of lambda_{end} started at s0 at time end - n, one point per
/// replica, with independent observation noise per replica. Replica r at time
/// t always uses the same stream, so measures for different n or start states
/// share their randomness on common times.
inline EmpiricalMeasure backward_measure(const ModelSpec& model, const State& s0, std::int64_t n,
                                         const CovariatePath& path, std::size_t replicas, std::uint64_t seed,
                                         std::int64_t end_time = 0) {
  require(n >= 1, ErrorCode::InvalidSpec, "backward measure needs n >= 1");
  require(replicas >= 1, ErrorCode::InvalidSpec, "backward measure needs replicas >= 1");
  check_state(model.kernel, s0);
  require(path.range().contains(end_time - n) && path.range().contains(end_time - 1), ErrorCode::PathTooShort,
          "covariate path does not cover the backward window");
  EmpiricalMeasure mu;
  mu.points.resize(replicas);
  mu.n_steps = n;
  mu.start = s0;
  mu.seed = seed;
  parallel_for(replicas, [&](std::size_t r) {
    const std::uint64_t key = split_seed(seed, r);
    State s = s0;
    for (std::int64_t t = end_time - n; t < end_time; ++t) {
      Stream rng(key, t, Domain::Observation);
      s = step(model, s, rng.uniform_open(), path.at(t));
      if (!s.finite()) break;
    }
    mu.points[r] = s;
  });
  mu.diverged = static_cast<std::size_t>(
      std::count_if(mu.points.begin(), mu.points.end(), [](const State& p) { return !p.finite(); }));
  return mu;
}

struct BackwardPair {
  EmpiricalMeasure from_s0;
  EmpiricalMeasure from_s0_prime;
  /// mean over replicas of min(|lambda - lambda'|, 1) under the shared-noise
  /// coupling; an upper bound on W1 between the two backward laws.
  double coupled_bound = 0.0;
};

/// Backward measures from two start states with shared noise. The gap is
/// propagated through differences so it stays resolvable after the two
/// states agree to machine precision.
inline BackwardPair backward_pair(const ModelSpec& model, const State& s0, const State& s0_prime, std::int64_t n,
                                  const CovariatePath& path, std::size_t replicas, std::uint64_t seed,
                                  std::int64_t end_time = 0) {
  BackwardPair out;
  out.from_s0 = backward_measure(model, s0, n, path, replicas, seed, end_time);
  out.from_s0_prime = backward_measure(model, s0_prime, n, path, replicas, seed, end_time);
  std::vector<double> gaps(replicas);
  parallel_for(replicas, [&](std::size_t r) {
    const std::uint64_t key = split_seed(seed, r);
    State s = s0;
    State gap = State::zeros(s0.size());
    for (std::size_t i = 0; i < s0.size(); ++i) gap[i] = s0_prime[i] - s0[i];
    for (std::int64_t t = end_time - n; t < end_time; ++t) {
      Stream rng(key, t, Domain::Observation);
      const double u = rng.uniform_open();
      const auto x = path.at(t);
      State sp = s;
      for (std::size_t i = 0; i < s.size(); ++i) sp[i] = s[i] + gap[i];
      const double y = sample_from_uniform(model.kernel, s, u);
      const double yp = sample_from_uniform(model.kernel, sp, u);
      if (!std::isfinite(y) || !std::isfinite(yp)) {
        gap = State(1.0);
        break;
      }
      gap = propagate_gap(model.link, s, gap, y, yp, x);
      s = apply(model.link, s, y, x, domain_lower(model.kernel));
    }
    gaps[r] = std::min(norm(gap), 1.0);
  });
  out.coupled_bound = canonical_mean(gaps);
  return out;
}

/// One step of the random kernel at time t applied to every point.
/// `domain` selects the noise: Observation reuses the replica streams of the
/// backward iterations, any other domain draws fresh noise.
inline EmpiricalMeasure push_forward(const ModelSpec& model, const EmpiricalMeasure& mu, const CovariatePath& path,
                                     std::int64_t t, std::uint64_t seed, Domain domain = Domain::Observation) {
  EmpiricalMeasure out = mu;
  out.n_steps = mu.n_steps + 1;
  const auto x = path.at(t);
  parallel_for(mu.points.size(), [&](std::size_t r) {
    Stream rng(split_seed(seed, r), t, domain);
    out.points[r] = mu.points[r].finite() ? step(model, mu.points[r], rng.uniform_open(), x) : mu.points[r];
  });
  return out;
}

// ---------------------------------------------------------------------------
// Stationary sampler

struct StationaryOptions {
  double tol = 0.01;
  std::int64_t max_n = 3200;
  std::size_t replicas = 2000;
  std::uint64_t seed = 1;
  std::optional<State> start;
  WassersteinOptions wasserstein;
};

struct StationaryResult {
  EmpiricalMeasure measure;  ///< approximation of pi_0
  bool converged = false;
  bool diverged = false;
  std::int64_t n = 0;         ///< backward steps of the returned measure
  double achieved_gap = std::numeric_limits<double>::quiet_NaN();
  std::vector<std::pair<std::int64_t, double>> history;  ///< (n, W1(mu_n, mu_2n))
  std::string diagnostic;
  CovariatePath path;  ///< environment on [-2 max_n, 1]
  std::uint64_t observation_seed = 0;
};

inline bool valid_max_n(std::int64_t max_n) {
  if (max_n < 25 || max_n % 25 != 0) return false;
  const std::int64_t k = max_n / 25;
  return (k & (k - 1)) == 0;
}

/// Doubles n from 25, extending the environment backwards, until
/// W1(mu_n, mu_2n) < tol or 2n would exceed max_n.
inline StationaryResult stationary_sampler(const ModelSpec& model, const StationaryOptions& opt) {
  validate(model);
  require(opt.tol > 0.0, ErrorCode::InvalidSpec, "tol must be positive");
  require(valid_max_n(opt.max_n), ErrorCode::InvalidSpec, "max_n must be 25 times a power of two");
  require(opt.replicas >= 1, ErrorCode::InvalidSpec, "replicas must be positive");
  StationaryResult res;
  res.path = generate_path(model.covariates, {-2 * opt.max_n, 1}, environment_seed(opt.seed));
  res.observation_seed = observation_seed(opt.seed);
  const State s0 = opt.start.value_or(reference_state(model));
  check_state(model.kernel, s0);

  std::int64_t n = 25;
  auto current = backward_measure(model, s0, n, res.path, opt.replicas, res.observation_seed);
  while (true) {
    if (current.diverged > 0) {
      res.diverged = true;
      res.measure = current;
      res.n = n;
      res.diagnostic = "NotConverged: " + std::to_string(current.diverged) + " of " +
                       std::to_string(opt.replicas) + " replicas diverged at n=" + std::to_string(n);
      return res;
    }
    if (2 * n > opt.max_n) {
      res.measure = current;
      res.n = n;
      res.diagnostic = "NotConverged: max_n=" + std::to_string(opt.max_n) + " reached, last gap " +
                       (res.history.empty() ? std::string("n/a") : std::to_string(res.history.back().second));
      return res;
    }
    auto doubled = backward_measure(model, s0, 2 * n, res.path, opt.replicas, res.observation_seed);
    if (doubled.diverged > 0) {
      current = std::move(doubled);
      n *= 2;
      continue;
    }
    const double gap = wasserstein1(current, doubled, opt.wasserstein).value;
    res.history.emplace_back(n, gap);
    res.achieved_gap = gap;
    n *= 2;
    current = std::move(doubled);
    if (gap < opt.tol) {
      res.converged = true;
      res.measure = std::move(current);
      res.n = n;
      res.diagnostic = "converged";
      return res;
    }
  }
}

struct InvarianceCheck {
  double gap = 0.0;  ///< W1(mu P_{X_0}, mu') with mu' the 2n-step measure ending at time 1
  std::int64_t n = 0;
  EmpiricalMeasure pushed;
  EmpiricalMeasure doubled;
};

/// Pushes the sampler output one step through the kernel at time 0 and
/// compares with the 2n-step backward measure ending at time 1. Both use the
/// replica streams of the sampler, so Monte Carlo noise is common to the two.
inline InvarianceCheck invariance_check(const ModelSpec& model, const StationaryResult& res,
                                        const StationaryOptions& opt) {
  require(!res.diverged, ErrorCode::InvalidSpec, "invariance check needs a finite stationary measure");
  InvarianceCheck out;
  out.n = res.n;
  const State s0 = opt.start.value_or(reference_state(model));
  out.pushed = push_forward(model, res.measure, res.path, 0, res.observation_seed);
  out.doubled = backward_measure(model, s0, 2 * res.n, res.path, opt.replicas, res.observation_seed, 1);
  out.gap = wasserstein1(out.pushed, out.doubled, opt.wasserstein).value;
  return out;
}

struct StationaryEnsemble {
  EmpiricalMeasure lambda;  ///< lambda_0, one independent environment per replica
  std::vector<double> y;    ///< Y_0 drawn from p(.|lambda_0)
};

/// Independent environments per replica: draws from the annealed stationary
/// law of (lambda_0, Y_0) by n-step backward iteration.
inline StationaryEnsemble stationary_ensemble(const ModelSpec& model, const State& s0, std::int64_t n,
                                              std::size_t replicas, std::uint64_t seed) {
  validate(model);
  StationaryEnsemble out;
  out.lambda.points.resize(replicas);
  out.lambda.n_steps = n;
  out.lambda.start = s0;
  out.lambda.seed = seed;
  out.y.resize(replicas);
  parallel_for(replicas, [&](std::size_t r) {
    const auto path = generate_path(model.covariates, {-n, 0}, split_seed(seed, 2 * r));
    const std::uint64_t key = split_seed(seed, 2 * r + 1);
    State s = s0;
    for (std::int64_t t = -n; t < 0 && s.finite(); ++t) {
      Stream rng(key, t, Domain::Observation);
      s = step(model, s, rng.uniform_open(), path.at(t));
    }
    out.lambda.points[r] = s;
    Stream rng(key, 0, Domain::Observation);
    out.y[r] = s.finite() ? sample_from_uniform(model.kernel, s, rng.uniform_open()) : s[0];
  });
  out.lambda.diverged = static_cast<std::size_t>(std::count_if(
      out.lambda.points.begin(), out.lambda.points.end(), [](const State& p) { return !p.finite(); }));
  return out;
}

// ---------------------------------------------------------------------------
// W-statistics and regeneration times

using ScalarFn = std::function<double(std::span<const double>)>;

struct WStatsInputs {
  ScalarFn gamma;
  ScalarFn delta;
  ScalarFn kappa;
  PhiSpec phi;
};

inline WStatsInputs wstats_inputs(const ModelSpec& model) {
  const auto drift = drift_maps(model);
  const auto kappa = contraction_map(model.link);
  return {drift.gamma, drift.delta, [kappa](std::span<const double> x) { return kappa(x); }, phi(model.kernel)};
}

struct WStats {
  std::int64_t t_first = 0;  ///< time of the first entry
  std::vector<double> w1, w2, w3, w4;
  int h = 1;
  int H = 1;
  double mean_log_gamma = 0.0;
  double mean_log_kappa = 0.0;
  // Geometric estimates of the truncated remainder of each series.
  double tail_w1 = 0.0;
  double tail_w2 = 0.0;
  double tail_w3 = 0.0;
  double tail_w4 = 0.0;

  std::size_t size() const { return w1.size(); }
};

namespace detail {

struct Tails {
  double w1, w2, w3, w4;
};

inline Tails tail_estimates(double rho_gamma, double rho_kappa, double mean_delta, double phi_slope, int H) {
  const double inf = std::numeric_limits<double>::infinity();
  Tails t{inf, inf, inf, inf};
  if (rho_gamma < 1.0) {
    t.w1 = mean_delta * std::pow(rho_gamma, H + 1) / (1.0 - rho_gamma);
    t.w2 = std::pow(rho_gamma, H + 1);
  }
  if (rho_kappa < 1.0) {
    t.w3 = std::pow(rho_kappa, H + 1);
    t.w4 = phi_slope * std::pow(rho_kappa, H + 2) / (1.0 - rho_kappa);
  }
  return t;
}

}  // namespace detail

/// Smallest horizon H >= h with every tail estimate below `target` (or 0
/// when the products do not decay).
inline int default_horizon(const WStatsInputs& in, const CovariatePath& path, int h, double target = 1e-6) {
  double lg = 0.0, lk = 0.0, md = 0.0;
  const auto& range = path.range();
  for (std::int64_t t = range.t_min; t <= range.t_max; ++t) {
    const auto x = path.at(t);
    lg += std::log(std::max(in.gamma(x), 1e-300));
    lk += std::log(std::max(in.kappa(x), 1e-300));
    md += in.delta(x);
  }
  const double n = static_cast<double>(path.length());
  const double rg = std::exp(lg / n), rk = std::exp(lk / n);
  if (rg >= 1.0 || rk >= 1.0) return 0;
  double slope = 0.0;
  for (double c : in.phi.coefficients) slope += c;
  for (int H = std::max(h, 1); H <= 100000; ++H) {
    const auto t = detail::tail_estimates(rg, rk, md / n, slope, H);
    if (std::max({t.w1, t.w2, t.w3, t.w4}) < target) return H;
  }
  return 0;
}

inline WStats w_stats(const WStatsInputs& in, const CovariatePath& path, int h, int H) {
  require(h >= 1, ErrorCode::InvalidSpec, "h must be >= 1");
  if (H <= 0) H = default_horizon(in, path, h);
  require(H >= h, ErrorCode::InvalidSpec, "need H >= h (products may not decay on this path)");
  const auto& range = path.range();
  const std::size_t len = path.length();
  std::vector<double> g(len), d(len), k(len);
  double lg = 0.0, lk = 0.0, md = 0.0;
  for (std::size_t i = 0; i < len; ++i) {
    const auto x = path.at(range.t_min + static_cast<std::int64_t>(i));
    g[i] = in.gamma(x);
    d[i] = in.delta(x);
    k[i] = in.kappa(x);
    lg += std::log(std::max(g[i], 1e-300));
    lk += std::log(std::max(k[i], 1e-300));
    md += d[i];
  }
  // Interior times need H + 1 values before and H values from t on.
  const std::int64_t first = range.t_min + H + 1;
  const std::int64_t last = range.t_max - H;
  require(first <= last, ErrorCode::PathTooShort,
          "path of length " + std::to_string(len) + " has no interior time for H=" + std::to_string(H));
  WStats ws;
  ws.t_first = first;
  ws.h = h;
  ws.H = H;
  ws.mean_log_gamma = lg / static_cast<double>(len);
  ws.mean_log_kappa = lk / static_cast<double>(len);
  double slope = 0.0;
  for (double c : in.phi.coefficients) slope += c;
  const auto tails = detail::tail_estimates(std::exp(ws.mean_log_gamma), std::exp(ws.mean_log_kappa),
                                            md / static_cast<double>(len), slope, H);
  ws.tail_w1 = tails.w1;
  ws.tail_w2 = tails.w2;
  ws.tail_w3 = tails.w3;
  ws.tail_w4 = tails.w4;
  const auto count = static_cast<std::size_t>(last - first + 1);
  ws.w1.resize(count);
  ws.w2.resize(count);
  ws.w3.resize(count);
  ws.w4.resize(count);
  for (std::size_t c = 0; c < count; ++c) {
    const std::size_t i = static_cast<std::size_t>(first - range.t_min) + c;  // index of time t
    double w1 = d[i - 1];
    double pg = 1.0, pk = 1.0;
    double w2 = 0.0, w3 = 0.0;
    for (int j = 1; j <= H; ++j) {
      pg *= g[i - static_cast<std::size_t>(j)];
      pk *= k[i - static_cast<std::size_t>(j)];
      w1 += pg * d[i - static_cast<std::size_t>(j) - 1];
      if (j >= h) {
        w2 = std::max(w2, pg);
        w3 = std::max(w3, pk);
      }
    }
    double w4 = 0.0;
    double fk = 1.0;
    for (int s = 0; s <= H; ++s) {
      fk *= k[i + static_cast<std::size_t>(s)];
      w4 += in.phi(fk);
    }
    ws.w1[c] = w1;
    ws.w2[c] = w2;
    ws.w3[c] = w3;
    ws.w4[c] = w4;
  }
  return ws;
}

inline WStats w_stats(const ModelSpec& model, const CovariatePath& path, int h, int H = 0) {
  return w_stats(wstats_inputs(model), path, h, H);
}

struct Regeneration {
  std::vector<std::int64_t> times;
  double C = 0.0;
  int h = 1;
  /// Smallest C admitting at least one time (reported when `times` is empty).
  std::optional<double> minimal_C;
  std::int64_t t_first = 0;

  /// M_n: number of regeneration times in [t_first, t_first + n].
  std::size_t count_up_to(std::int64_t n) const {
    return static_cast<std::size_t>(
        std::upper_bound(times.begin(), times.end(), t_first + n) - times.begin());
  }
};

inline bool regeneration_event(const WStats& s, std::size_t c, double C) {
  const double level = 1.0 - 1.0 / C;
  return s.w1[c] <= C && s.w2[c] <= level && s.w3[c] <= level && s.w4[c] <= C;
}

/// C needed for time index c to qualify.
inline double admitting_C(const WStats& s, std::size_t c) {
  const double inf = std::numeric_limits<double>::infinity();
  const double from2 = s.w2[c] < 1.0 ? 1.0 / (1.0 - s.w2[c]) : inf;
  const double from3 = s.w3[c] < 1.0 ? 1.0 / (1.0 - s.w3[c]) : inf;
  return std::max({s.w1[c], s.w4[c], from2, from3, 1.0});
}

/// Greedy left-to-right scan for times meeting all four thresholds with
/// spacing greater than h.
inline Regeneration regeneration_times(const WStats& stats, double C, int h) {
  require(C > 1.0, ErrorCode::InvalidSpec, "C must exceed 1");
  require(h >= 1, ErrorCode::InvalidSpec, "h must be >= 1");
  Regeneration r;
  r.C = C;
  r.h = h;
  r.t_first = stats.t_first;
  std::optional<std::int64_t> last;
  for (std::size_t c = 0; c < stats.size(); ++c) {
    const std::int64_t t = stats.t_first + static_cast<std::int64_t>(c);
    if (last && t - *last <= h) continue;
    if (regeneration_event(stats, c, C)) {
      r.times.push_back(t);
      last = t;
    }
  }
  if (r.times.empty()) {
    double best = std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < stats.size(); ++c) best = std::min(best, admitting_C(stats, c));
    r.minimal_C = best;
  }
  return r;
}

struct RegenerationDefaults {
  int h = 0;
  double C = 0.0;
  double frequency = 0.0;
  bool found = false;
};

/// Smallest h in 1..50 whose threshold event is nonempty, paired with the
/// smallest C in {2, 4, ..., 1024} reaching event frequency 0.01.
inline RegenerationDefaults default_regeneration_parameters(const WStatsInputs& in, const CovariatePath& pilot,
                                                            int H = 0) {
  RegenerationDefaults out;
  for (int h = 1; h <= 50; ++h) {
    const int horizon = H > 0 ? std::max(H, h) : 0;
    WStats s;
    try {
      s = w_stats(in, pilot, h, horizon);
    } catch (const Error&) {
      continue;
    }
    for (double C = 2.0; C <= 1024.0; C *= 2.0) {
      std::size_t hits = 0;
      for (std::size_t c = 0; c < s.size(); ++c) hits += regeneration_event(s, c, C) ? 1 : 0;
      const double freq = static_cast<double>(hits) / static_cast<double>(s.size());
      if (freq >= 0.01) {
        out = {h, C, freq, true};
        return out;
      }
    }
  }
  return out;
}

}  // namespace odre
