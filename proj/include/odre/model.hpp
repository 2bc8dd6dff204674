#pragma once

// Assembled models, drift constants and the replica thread pool.

#include "odre/covariates.hpp"
#include "odre/kernels.hpp"
#include "odre/links.hpp"

#include <algorithm>
#include <atomic>
#include <exception>
#include <functional>
#include <limits>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

namespace odre {

struct ModelSpec {
  ObservationKernel kernel = kernel::Poisson{};
  LinkSpec link;
  CovariateProcessSpec covariates;
  double alpha = 1.0;  ///< V(s) >= |s|^alpha; 1 for V(s) = 1 + |s|
  bool operator==(const ModelSpec&) const = default;
};

/// "inf" for vector states, "abs" otherwise.
inline std::string norm_tag(const ModelSpec& m) { return state_dim(m.kernel) > 1 ? "inf" : "abs"; }

inline void validate(const ModelSpec& m) {
  validate(m.covariates);
  validate_pair(m.link, m.kernel);
  require(m.alpha > 0.0 && m.alpha <= 1.0, ErrorCode::InvalidSpec, "alpha must lie in (0, 1]");
}

/// One step of the random map: y ~ p(.|s) from uniform u, then f(s, y, x).
inline State step(const ModelSpec& m, const State& s, double u, std::span<const double> x, double* y_out = nullptr) {
  const double y = sample_from_uniform(m.kernel, s, u);
  if (y_out != nullptr) *y_out = y;
  if (!s.finite() || !std::isfinite(y)) {
    State bad = s;
    bad[0] = std::numeric_limits<double>::infinity();
    return bad;
  }
  return apply(m.link, s, y, x, domain_lower(m.kernel));
}

/// Canonical start state: zero moved into the state domain.
inline State reference_state(const ModelSpec& m) {
  State s = State::zeros(state_dim(m.kernel));
  const double lo = std::max(domain_lower(m.kernel), m.link.floor.value_or(-std::numeric_limits<double>::infinity()));
  if (s[0] < lo) s[0] = lo;
  return s;
}

// ---------------------------------------------------------------------------
// Drift constants for V(s) = 1 + |s|

enum class DriftRoute { Pratique1, ThresholdCase1, ThresholdCase2, BinaryCategorical };

constexpr std::string_view to_string(DriftRoute r) {
  switch (r) {
    case DriftRoute::Pratique1: return "pratique1";
    case DriftRoute::ThresholdCase1: return "pratique2-case1";
    case DriftRoute::ThresholdCase2: return "pratique2-case2";
    case DriftRoute::BinaryCategorical: return "binary/categorical";
  }
  return "pratique1";
}

/// P_x V <= gamma(x) V + delta(x).
struct DriftMaps {
  DriftRoute route = DriftRoute::Pratique1;
  std::function<double(std::span<const double>)> gamma;
  std::function<double(std::span<const double>)> delta;
  std::string gamma_description;
  std::string delta_description;
  double D = 0.0;  ///< conditional moment constant
  GrowthEnvelope envelope;
};

/// max over observations y of |f(s0, y, x)| for finite-support families.
inline double max_abs_link_at(const ModelSpec& m, const State& s0, std::span<const double> x) {
  double best = 0.0;
  const std::size_t n = category_count(m.kernel);
  for (std::size_t y = 0; y < n; ++y) {
    const State v = apply(m.link, s0, static_cast<double>(y), x);
    best = std::max(best, norm(v));
  }
  return best;
}

inline DriftMaps drift_maps(const ModelSpec& m) {
  validate(m);
  DriftMaps d;
  const auto kappa = contraction_map(m.link);
  if (category_count(m.kernel) > 0) {
    // |f(s,y,x)| <= kappa(x)|s| + max_y |f(s0,y,x)| + kappa(x)|s0| with s0 = 0.
    d.route = DriftRoute::BinaryCategorical;
    const State s0 = State::zeros(state_dim(m.kernel));
    d.gamma = [kappa](std::span<const double> x) { return kappa(x); };
    d.delta = [m, s0](std::span<const double> x) { return 1.0 + max_abs_link_at(m, s0, x); };
    d.gamma_description = describe(kappa);
    d.delta_description = "1 + max_y |f(0, y, x)|";
    d.D = 1.0;
    d.envelope = growth_envelope(m.link);
    return d;
  }
  d.envelope = growth_envelope(m.link);
  d.D = conditional_moment(m.kernel, reference_state(m), d.envelope.order).D;
  switch (d.envelope.case_tag) {
    case EnvelopeCase::ThresholdCase1: d.route = DriftRoute::ThresholdCase1; break;
    case EnvelopeCase::ThresholdCase2: d.route = DriftRoute::ThresholdCase2; break;
    default: d.route = DriftRoute::Pratique1; break;
  }
  // V = 1 + |s|: E|f| <= (kappa + kappa_tilde)|s| + kappa_tilde D + delta_tilde.
  const auto gamma = sum_of({d.envelope.kappa, d.envelope.kappa_tilde});
  const auto delta = sum_of({constant_map(1.0), product_of({d.envelope.kappa_tilde, constant_map(d.D)}),
                             d.envelope.delta_tilde});
  d.gamma = [gamma](std::span<const double> x) { return gamma(x); };
  d.delta = [delta](std::span<const double> x) { return delta(x); };
  d.gamma_description = describe(gamma);
  d.delta_description = describe(delta);
  return d;
}

// ---------------------------------------------------------------------------
// Replica parallelism

namespace detail {
inline std::atomic<unsigned>& thread_setting() {
  static std::atomic<unsigned> n{1};
  return n;
}
}  // namespace detail

inline void set_threads(unsigned n) { detail::thread_setting() = std::max(1u, n); }
inline unsigned threads() { return detail::thread_setting(); }

/// Runs fn(i) for i in [0, n). Each index owns its output slot, so results do
/// not depend on the thread count.
template <class Fn>
void parallel_for(std::size_t n, Fn&& fn) {
  const unsigned workers = static_cast<unsigned>(std::min<std::size_t>(threads(), n));
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::mutex error_mutex;
  std::vector<std::jthread> pool;
  pool.reserve(workers);
  for (unsigned w = 0; w < workers; ++w) {
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < n; i = next++) {
        try {
          fn(i);
        } catch (...) {
          std::lock_guard lock(error_mutex);
          if (!error) error = std::current_exception();
        }
      }
    });
  }
  pool.clear();
  if (error) std::rethrow_exception(error);
}

}  // namespace odre
