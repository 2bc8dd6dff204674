#pragma once

// Empirical measures and the Wasserstein-1 distance under the truncated
// metric min(|s - s'|, 1).

#include "odre/error.hpp"
#include "odre/kernels.hpp"
#include "odre/rng.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <numeric>
#include <vector>

namespace odre {

struct EmpiricalMeasure {
  std::vector<State> points;
  std::int64_t n_steps = 0;  ///< backward steps used to produce the points
  State start;
  std::uint64_t seed = 0;
  std::size_t diverged = 0;  ///< points that left every finite bound
};

inline double truncated_distance(const State& a, const State& b) { return std::min(distance(a, b), 1.0); }

// ---------------------------------------------------------------------------
// Exact assignment (Hungarian algorithm with potentials)

/// Minimum-cost perfect matching on a square cost matrix (row-major).
/// Returns column assigned to each row.
inline std::vector<std::size_t> hungarian(const std::vector<double>& cost, std::size_t n) {
  require(cost.size() == n * n, ErrorCode::SizeMismatch, "cost matrix must be n x n");
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0), minv(n + 1);
  std::vector<std::size_t> p(n + 1, 0), way(n + 1, 0);
  std::vector<char> used(n + 1);
  for (std::size_t i = 1; i <= n; ++i) {
    p[0] = i;
    std::size_t j0 = 0;
    std::fill(minv.begin(), minv.end(), inf);
    std::fill(used.begin(), used.end(), 0);
    do {
      used[j0] = 1;
      const std::size_t i0 = p[j0];
      double delta = inf;
      std::size_t j1 = 0;
      for (std::size_t j = 1; j <= n; ++j) {
        if (used[j]) continue;
        const double cur = cost[(i0 - 1) * n + (j - 1)] - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (std::size_t j = 0; j <= n; ++j) {
        if (used[j]) {
          u[p[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (p[j0] != 0);
    do {
      const std::size_t j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0 != 0);
  }
  std::vector<std::size_t> assignment(n);
  for (std::size_t j = 1; j <= n; ++j) assignment[p[j] - 1] = j - 1;
  return assignment;
}

/// Correctly rounded sum of doubles (Shewchuk's nonoverlapping partials,
/// final rounding half-even). The result depends only on the multiset.
inline double exact_sum(const std::vector<double>& xs) {
  std::vector<double> partials;
  for (double x : xs) {
    std::size_t i = 0;
    for (double y : partials) {
      if (std::abs(x) < std::abs(y)) std::swap(x, y);
      const double hi = x + y;
      const double lo = y - (hi - x);
      if (lo != 0.0) partials[i++] = lo;
      x = hi;
    }
    partials.resize(i);
    partials.push_back(x);
  }
  if (partials.empty()) return 0.0;
  std::size_t n = partials.size();
  double hi = partials[--n];
  double lo = 0.0;
  while (n > 0) {
    const double x = hi;
    const double y = partials[--n];
    hi = x + y;
    lo = y - (hi - x);
    if (lo != 0.0) break;
  }
  // Half-way case: the remaining partials decide the direction.
  if (n > 0 && ((lo < 0.0 && partials[n - 1] < 0.0) || (lo > 0.0 && partials[n - 1] > 0.0))) {
    const double y = lo * 2.0;
    const double x = hi + y;
    if (y == x - hi) hi = x;
  }
  return hi;
}

/// exact_sum(parts) / n rounded once: the quotient closest to the exact
/// mean among the naive quotient and its neighbours, ties to even.
inline double exact_mean(std::vector<double> parts, std::size_t n) {
  const double dn = static_cast<double>(n);
  const double q0 = exact_sum(parts) / dn;
  const std::size_t m = parts.size();
  parts.resize(m + 2);
  auto residual = [&](double q) {
    const double p = q * dn;
    parts[m] = -p;
    parts[m + 1] = -std::fma(q, dn, -p);
    return std::abs(exact_sum(parts));
  };
  auto even = [](double q) {
    int e = 0;
    return std::fmod(std::ldexp(std::frexp(q, &e), 53), 2.0) == 0.0;
  };
  double best = q0, best_r = residual(q0);
  for (double q : {std::nextafter(q0, -HUGE_VAL), std::nextafter(q0, HUGE_VAL)}) {
    const double r = residual(q);
    if (r < best_r || (r == best_r && even(q))) {
      best = q;
      best_r = r;
    }
  }
  return best;
}

inline double canonical_mean(const std::vector<double>& terms) { return exact_mean(terms, terms.size()); }

/// min(|a - b|, 1) as an unevaluated sum hi + lo equal to the true value of
/// the coordinate difference, so matchings with equal real cost give equal means.
inline void push_exact_distance(const State& a, const State& b, std::vector<double>& out) {
  double hi = 0.0, lo = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double s = a[i] - b[i];
    const double bb = s - a[i];
    double e = (a[i] - (s - bb)) + (-b[i] - bb);
    double d = s;
    if (d < 0.0 || (d == 0.0 && e < 0.0)) {
      d = -d;
      e = -e;
    }
    if (d > hi || (d == hi && e > lo)) {
      hi = d;
      lo = e;
    }
  }
  if (hi > 1.0 || (hi == 1.0 && lo >= 0.0)) {
    hi = 1.0;
    lo = 0.0;
  }
  out.push_back(hi);
  out.push_back(lo);
}

inline double assignment_w1(const std::vector<State>& a, const std::vector<State>& b) {
  require(a.size() == b.size() && !a.empty(), ErrorCode::SizeMismatch, "assignment needs equal nonempty sizes");
  const std::size_t n = a.size();
  std::vector<double> cost(n * n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) cost[i * n + j] = truncated_distance(a[i], b[j]);
  const auto match = hungarian(cost, n);
  std::vector<double> parts;
  parts.reserve(2 * n);
  for (std::size_t i = 0; i < n; ++i) push_exact_distance(a[i], b[match[i]], parts);
  return exact_mean(std::move(parts), n);
}

// ---------------------------------------------------------------------------
// Exact scalar solver
//
// min(|s - t|, 1) is the shortest-path metric of the graph joining sorted
// points along the line and every point to a hub at distance 1/2. The
// transport problem becomes a min-cost flow on that graph, solved by a
// convex piecewise-linear dynamic program over the cumulative hub flow H:
//   psi_k(H) = g_k |D_k - H| + min_H' { psi_{k-1}(H') + |H - H'| / 2 }.

namespace detail {

/// Convex piecewise-linear function stored as breakpoint weights:
/// f(x) = floor + sum_L w (l - x)_+ + sum_R w (x - r)_+.
class SlopeFunction {
 public:
  void add_abs(double centre, double weight) {
    if (weight <= 0.0) return;
    add_right(centre, weight);
    add_left(centre, weight);
  }

  /// Infimal convolution with c|.|: clamp slopes to [-c, c].
  void clamp_slopes(double c) {
    trim(left_, c, /*from_low=*/true);
    trim(right_, c, /*from_low=*/false);
  }

  double value_at(double x) const {
    double v = floor_;
    for (const auto& [pos, w] : left_)
      if (pos > x) v += w * (pos - x);
    for (const auto& [pos, w] : right_)
      if (pos < x) v += w * (x - pos);
    return v;
  }

  void reset(double weight) {
    left_ = {{0.0, weight}};
    right_ = {{0.0, weight}};
    floor_ = 0.0;
  }

 private:
  // w (x - d)_+ : push d into L, then move weight w of the largest L
  // breakpoints over to R.
  void add_right(double d, double w) {
    left_[d] += w;
    double remaining = w;
    while (remaining > 0.0) {
      auto it = std::prev(left_.end());
      const double take = std::min(remaining, it->second);
      floor_ += take * (it->first - d);
      right_[it->first] += take;
      remaining -= take;
      if (take >= it->second) left_.erase(it);
      else it->second -= take;
    }
  }

  // w (d - x)_+ : mirror image.
  void add_left(double d, double w) {
    right_[d] += w;
    double remaining = w;
    while (remaining > 0.0) {
      auto it = right_.begin();
      const double take = std::min(remaining, it->second);
      floor_ += take * (d - it->first);
      left_[it->first] += take;
      remaining -= take;
      if (take >= it->second) right_.erase(it);
      else it->second -= take;
    }
  }

  static void trim(std::map<double, double>& side, double cap, bool from_low) {
    double total = 0.0;
    for (const auto& kv : side) total += kv.second;
    double excess = total - cap;
    while (excess > 1e-15 && !side.empty()) {
      auto it = from_low ? side.begin() : std::prev(side.end());
      const double take = std::min(excess, it->second);
      excess -= take;
      if (take >= it->second) side.erase(it);
      else it->second -= take;
    }
  }

  std::map<double, double> left_;
  std::map<double, double> right_;
  double floor_ = 0.0;
};

}  // namespace detail

/// Exact W1 under min(|s - t|, 1) between weighted scalar samples
/// (each a-point has mass 1/|a|, each b-point 1/|b|).
inline double scalar_w1(std::vector<double> a, std::vector<double> b) {
  require(!a.empty() && !b.empty(), ErrorCode::InvalidSpec, "empty measure");
  for (double x : a) require(std::isfinite(x), ErrorCode::InvalidSpec, "measure has non-finite points");
  for (double x : b) require(std::isfinite(x), ErrorCode::InvalidSpec, "measure has non-finite points");
  // Integer supplies: each a-point carries |b| units, each b-point |a| units.
  const double wa = static_cast<double>(b.size());
  const double wb = static_cast<double>(a.size());
  std::vector<std::pair<double, double>> nodes;
  nodes.reserve(a.size() + b.size());
  for (double x : a) nodes.emplace_back(x, wa);
  for (double x : b) nodes.emplace_back(x, -wb);
  std::sort(nodes.begin(), nodes.end());
  // Merge coincident positions.
  std::vector<std::pair<double, double>> merged;
  for (const auto& nd : nodes) {
    if (!merged.empty() && merged.back().first == nd.first) merged.back().second += nd.second;
    else merged.push_back(nd);
  }
  detail::SlopeFunction psi;
  psi.reset(0.5);
  double prefix = 0.0;
  for (std::size_t k = 0; k + 1 < merged.size(); ++k) {
    prefix += merged[k].second;
    // A line edge of length >= 1 is never shorter than the hub route, so
    // capping it changes no distance and keeps the slope weights bounded.
    const double gap = std::min(merged[k + 1].first - merged[k].first, 1.0);
    psi.add_abs(prefix, gap);
    psi.clamp_slopes(0.5);
  }
  const double total = psi.value_at(0.0);
  return std::max(0.0, total / (wa * wb));
}

/// Sorted (monotone) coupling value; an upper bound for the truncated metric.
inline double monotone_w1(std::vector<State> a, std::vector<State> b) {
  require(a.size() == b.size() && !a.empty(), ErrorCode::SizeMismatch, "monotone coupling needs equal sizes");
  auto by_first = [](const State& x, const State& y) { return x[0] < y[0]; };
  std::sort(a.begin(), a.end(), by_first);
  std::sort(b.begin(), b.end(), by_first);
  std::vector<double> parts;
  parts.reserve(2 * a.size());
  for (std::size_t i = 0; i < a.size(); ++i) push_exact_distance(a[i], b[i], parts);
  return exact_mean(std::move(parts), a.size());
}

// ---------------------------------------------------------------------------
// Front end

struct WassersteinOptions {
  bool bootstrap_unequal = true;
  std::size_t hungarian_max = 256;       ///< scalar inputs up to this size use the assignment solver
  std::size_t vector_subsample = 512;    ///< subsample size for vector states above hungarian_max
  std::size_t subsample_draws = 8;
  std::uint64_t seed = 0x5EEDULL;
};

struct WassersteinResult {
  double value = 0.0;
  double spread = 0.0;  ///< std. deviation over subsample draws (0 when exact)
  double monotone_upper_bound = std::numeric_limits<double>::quiet_NaN();
  std::string method;   ///< "assignment", "flow" or "assignment-subsampled"
  bool bootstrapped = false;
  std::size_t n = 0;
};

inline WassersteinResult wasserstein1(const EmpiricalMeasure& mu, const EmpiricalMeasure& nu,
                                      const WassersteinOptions& opt = {}) {
  require(!mu.points.empty() && !nu.points.empty(), ErrorCode::InvalidSpec, "empty measure");
  for (const auto* m : {&mu, &nu})
    for (const auto& p : m->points) require(p.finite(), ErrorCode::InvalidSpec, "measure has non-finite points");
  WassersteinResult r;
  std::vector<State> a = mu.points;
  std::vector<State> b = nu.points;
  if (a.size() != b.size()) {
    require(opt.bootstrap_unequal, ErrorCode::SizeMismatch, "measures have different sizes");
    auto& smaller = a.size() < b.size() ? a : b;
    const std::size_t target = std::max(a.size(), b.size());
    const std::vector<State> source = smaller;
    Stream rng(opt.seed, 0, Domain::Bootstrap);
    smaller.resize(target);
    for (std::size_t i = 0; i < target; ++i) smaller[i] = source[rng() % source.size()];
    r.bootstrapped = true;
  }
  const std::size_t n = a.size();
  r.n = n;
  const bool scalar = a.front().size() == 1;
  if (scalar) r.monotone_upper_bound = monotone_w1(a, b);

  if (n <= opt.hungarian_max) {
    r.value = assignment_w1(a, b);
    r.method = "assignment";
    return r;
  }
  if (scalar) {
    std::vector<double> xa(n), xb(n);
    for (std::size_t i = 0; i < n; ++i) {
      xa[i] = a[i][0];
      xb[i] = b[i][0];
    }
    r.value = scalar_w1(std::move(xa), std::move(xb));
    r.method = "flow";
    return r;
  }
  // Vector states: stratified subsamples solved exactly.
  const std::size_t m = opt.vector_subsample;
  std::vector<double> values;
  for (std::size_t draw = 0; draw < opt.subsample_draws; ++draw) {
    Stream rng(opt.seed, static_cast<std::int64_t>(draw), Domain::Bootstrap);
    std::vector<State> sa(m), sb(m);
    for (std::size_t i = 0; i < m; ++i) {
      // One index from each of m equal strata.
      const std::size_t lo = i * n / m;
      const std::size_t hi = (i + 1) * n / m;
      sa[i] = a[lo + rng() % (hi - lo)];
      sb[i] = b[lo + rng() % (hi - lo)];
    }
    values.push_back(assignment_w1(sa, sb));
  }
  const double mean = std::accumulate(values.begin(), values.end(), 0.0) / static_cast<double>(values.size());
  double var = 0.0;
  for (double v : values) var += (v - mean) * (v - mean);
  r.value = mean;
  r.spread = values.size() > 1 ? std::sqrt(var / static_cast<double>(values.size() - 1)) : 0.0;
  r.method = "assignment-subsampled";
  return r;
}

}  // namespace odre
