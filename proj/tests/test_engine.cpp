#include "oracles.hpp"

#include <gtest/gtest.h>

using namespace odre;

namespace {

ModelSpec memoryless(double c) { return fixture::linear_poisson(0.0, 0.0, c); }

ModelSpec gaussian_location() {
  ModelSpec m = fixture::linear_poisson(0.6, 0.3, 0.5);
  m.kernel = kernel::Location{kernel::Density::Gaussian, 1.0, 3.0};
  m.covariates.variant = covariate::IID{Gaussian{0.0, 1.0}, 1};
  return m;
}

std::vector<double> scalars(const std::vector<State>& xs) {
  std::vector<double> out;
  for (const auto& s : xs) out.push_back(s.scalar());
  return out;
}

WStatsInputs constant_inputs(double gamma, double delta, double kappa, PhiSpec phi) {
  return {[gamma](std::span<const double>) { return gamma; }, [delta](std::span<const double>) { return delta; },
          [kappa](std::span<const double>) { return kappa; }, std::move(phi)};
}

}  // namespace

// ---------------------------------------------------------------------------
// simulate

// [TRIVIAL] memoryless link.
TEST(Simulate, MemorylessLinkIsConstant) {
  const auto tr = simulate(memoryless(2.0), 17.0, {0, 100}, 3);
  EXPECT_EQ(tr.lambda[0].scalar(), 17.0);
  for (std::size_t i = 1; i < tr.lambda.size(); ++i) EXPECT_EQ(tr.lambda[i].scalar(), 2.0);
}

// [DERIVED] stationary mean 1 / (1 - 0.7) from E(Y | lambda) = lambda.
TEST(Simulate, LongRunMeanOfLinearPoisson) {
  const auto tr = simulate(fixture::linear_poisson(0.4, 0.3, 1.0), 1.0, {0, 100000}, 11);
  std::vector<double> lam = scalars(tr.lambda);
  lam.erase(lam.begin(), lam.begin() + 1000);
  // Batch means absorb the autocorrelation.
  std::vector<double> batches;
  for (std::size_t b = 0; b + 1000 <= lam.size(); b += 1000)
    batches.push_back(std::accumulate(lam.begin() + b, lam.begin() + b + 1000, 0.0) / 1000.0);
  const auto ms = oracle::mean_se(batches);
  EXPECT_NEAR(ms.mean, 10.0 / 3.0, 3.0 * ms.se);
}

TEST(Simulate, Deterministic) {
  const auto a = simulate(fixture::benchmark(), 1.0, {-50, 50}, 99);
  const auto b = simulate(fixture::benchmark(), 1.0, {-50, 50}, 99);
  EXPECT_EQ(a.lambda, b.lambda);
  EXPECT_EQ(a.y, b.y);
  const auto c = simulate(fixture::benchmark(), 1.0, {-50, 50}, 100);
  EXPECT_NE(a.y, c.y);
}

// [TRIVIAL] the recorded trajectory satisfies the recursion exactly.
TEST(Simulate, RecursionHoldsExactly) {
  for (const auto& m : {fixture::benchmark(), fixture::logit_benchmark(), gaussian_location()}) {
    const auto tr = simulate(m, reference_state(m), {0, 500}, 5);
    for (std::size_t i = 0; i + 1 < tr.lambda.size(); ++i) {
      const auto t = tr.range.t_min + static_cast<std::int64_t>(i);
      EXPECT_EQ(tr.lambda[i + 1], apply(m.link, tr.lambda[i], tr.y[i], tr.path.at(t), domain_lower(m.kernel)));
    }
  }
}

TEST(Simulate, DomainViolationPropagates) {
  auto m = fixture::linear_poisson(0.4, 0.3, -5.0);
  EXPECT_THROW(simulate(m, 0.0, {0, 10}, 1), Error);
}

// ---------------------------------------------------------------------------
// Conditional-kernel consistency

// [TRIVIAL] same stream: one step equals direct sampling then the link.
TEST(ConditionalKernel, SameStreamIsIdentical) {
  const auto m = fixture::benchmark();
  const auto tr = simulate(m, 3.0, {0, 200}, 8);
  for (std::size_t i = 0; i + 1 < tr.lambda.size(); ++i) {
    const auto t = static_cast<std::int64_t>(i);
    Stream rng(observation_seed(tr.seed), t, Domain::Observation);
    const double y = sample_from_uniform(m.kernel, tr.lambda[i], rng.uniform_open());
    EXPECT_EQ(y, tr.y[i]);
    EXPECT_EQ(tr.lambda[i + 1], apply(m.link, tr.lambda[i], y, tr.path.at(t)));
  }
}

// [DERIVED] different seeds: one-step law matches Poisson(s) pushed through f.
TEST(ConditionalKernel, OneStepLawPoisson) {
  const auto m = fixture::linear_poisson(0.4, 0.3, 1.0);
  const double s = 4.5;
  const auto path = generate_path(m.covariates, {0, 0}, 1);
  std::vector<double> counts(40, 0.0);
  for (int r = 0; r < 20000; ++r) {
    const auto tr = simulate_on_path(m, s, path, split_seed(77, r));
    double y = 0.0;
    Stream rng(split_seed(77, r), 0, Domain::Observation);
    const State next = step(m, s, rng.uniform_open(), path.at(0), &y);
    EXPECT_EQ(y, tr.y[0]);
    // Invert the link to recover the count.
    const double k = std::round((next.scalar() - 0.4 * s - 1.0) / 0.3);
    counts[std::min<std::size_t>(static_cast<std::size_t>(k), 39)] += 1.0;
  }
  std::vector<double> probs(40);
  double tail = 1.0;
  for (int k = 0; k < 39; ++k) tail -= (probs[k] = oracle::poisson_pmf(s, k));
  probs[39] = tail;
  EXPECT_GT(oracle::chi2_test(counts, probs), 1e-3);
}

// [DERIVED] continuous family: Y given lambda = s is N(s, 1).
TEST(ConditionalKernel, OneStepLawGaussian) {
  const auto m = gaussian_location();
  const double s = 0.7;
  const auto path = generate_path(m.covariates, {0, 0}, 2);
  std::vector<double> ys;
  for (int r = 0; r < 10000; ++r) ys.push_back(simulate_on_path(m, s, path, split_seed(5, r)).y[0]);
  EXPECT_GT(oracle::ks_test(ys, [s](double y) { return special::normal_cdf(y - s); }), 1e-3);
}

// ---------------------------------------------------------------------------
// couple_forward

// [TRIVIAL] identical chains stay glued.
TEST(Couple, IdenticalStartsStayGlued) {
  const auto m = fixture::benchmark();
  const auto path = generate_path(m.covariates, {0, 300}, 4);
  const auto tr = couple_forward(m, 2.0, 2.0, path, 9);
  for (char met : tr.met) EXPECT_TRUE(met);
  EXPECT_EQ(tr.meet_time, 0);
  EXPECT_EQ(tr.lambda_gap_sum, 0.0);
  EXPECT_FALSE(tr.censored);
}

// [DERIVED] Monte Carlo meeting frequency.
TEST(Couple, MeetingFrequency) {
  const auto m = fixture::linear_poisson(0.4, 0.3, 1.0);
  const auto path = generate_path(m.covariates, {0, 399}, 1);
  int met = 0;
  for (int r = 0; r < 500; ++r) {
    const auto tr = couple_forward(m, 0.0, 10.0, path, split_seed(12, r));
    if (tr.meet_time && !tr.censored && *tr.meet_time < 400) ++met;
  }
  EXPECT_GE(met / 500.0, 0.95);
}

// [TRIVIAL] after meeting the gap contracts by kappa(X_t) at every step.
TEST(Couple, GapContractsAfterMeeting) {
  for (const auto& m : {fixture::benchmark(), fixture::logit_benchmark(), gaussian_location()}) {
    const auto kappa = contraction_map(m.link);
    const auto path = generate_path(m.covariates, {0, 299}, 6);
    for (int r = 0; r < 50; ++r) {
      const auto tr = couple_forward(m, reference_state(m), 5.0, path, split_seed(3, r));
      if (!tr.meet_time) continue;
      for (std::int64_t t = *tr.meet_time; t < 299; ++t) {
        const auto i = static_cast<std::size_t>(t);
        const double g0 = distance(tr.lambda[i], tr.lambda_prime[i]);
        const double g1 = distance(tr.lambda[i + 1], tr.lambda_prime[i + 1]);
        EXPECT_LE(g1, kappa(path.at(t)) * g0 + 1e-12);
      }
    }
  }
}

// [DERIVED] each chain of the coupling is marginally the plain chain on the same path.
TEST(Couple, MarginalsPreserved) {
  const auto m = fixture::benchmark();
  const auto path = generate_path(m.covariates, {0, 20}, 2);
  std::vector<double> c0, c1, p0, p1;
  for (int r = 0; r < 10000; ++r) {
    const auto tr = couple_forward(m, 0.0, 10.0, path, split_seed(21, r));
    c0.push_back(tr.lambda[10].scalar());
    c1.push_back(tr.lambda_prime[10].scalar());
    p0.push_back(simulate_on_path(m, 0.0, path, split_seed(22, r)).lambda[10].scalar());
    p1.push_back(simulate_on_path(m, 10.0, path, split_seed(23, r)).lambda[10].scalar());
  }
  EXPECT_GT(oracle::ks_two_sample(c0, p0), 1e-3);
  EXPECT_GT(oracle::ks_two_sample(c1, p1), 1e-3);
}

// ---------------------------------------------------------------------------
// backward measures

// [TRIVIAL] one deterministic step.
TEST(Backward, OneStepMemoryless) {
  const auto m = memoryless(3.5);
  const auto path = generate_path(m.covariates, {-1, 0}, 1);
  const auto mu = backward_measure(m, 8.0, 1, path, 100, 4);
  for (const auto& p : mu.points) EXPECT_EQ(p.scalar(), 3.5);
}

TEST(Backward, PathMustCoverWindow) {
  const auto m = fixture::benchmark();
  const auto path = generate_path(m.covariates, {-10, 0}, 1);
  try {
    backward_measure(m, 1.0, 20, path, 100, 4);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::PathTooShort);
  }
}

// [DERIVED] gap between n and 2n measures decreases in n on the benchmark.
TEST(Backward, DoublingGapDecreases) {
  const auto m = fixture::benchmark();
  const auto path = generate_path(m.covariates, {-400, 1}, 5);
  std::vector<double> gaps;
  for (std::int64_t n : {25, 50, 100, 200}) {
    const auto a = backward_pair(m, 1.0, 1.0, n, path, 1000, 6);
    const auto b = backward_measure(m, 1.0, 2 * n, path, 1000, 6);
    gaps.push_back(wasserstein1(a.from_s0, b).value);
  }
  for (std::size_t i = 0; i + 1 < gaps.size(); ++i) EXPECT_LE(gaps[i + 1], gaps[i] + 1e-15) << i;
}

// [DERIVED] two start states forget each other.
TEST(Backward, StartStatesForgotten) {
  const auto m = fixture::benchmark();
  const auto path = generate_path(m.covariates, {-200, 0}, 7);
  const auto pair = backward_pair(m, 0.0, 10.0, 200, path, 2000, 8);
  EXPECT_LE(wasserstein1(pair.from_s0, pair.from_s0_prime).value, 0.02);
  EXPECT_LE(pair.coupled_bound, 0.02);
  // Shared noise makes the coupled gap an upper bound on the transport distance.
  EXPECT_GE(pair.coupled_bound + 1e-12, wasserstein1(pair.from_s0, pair.from_s0_prime).value);
}

// [DERIVED] backward decay is negative in sqrt(n) at 95% confidence.
TEST(Backward, DecayInSqrtN) {
  const auto m = fixture::benchmark();
  const auto path = generate_path(m.covariates, {-80, 0}, 9);
  std::vector<double> xs, ys;
  for (std::int64_t n = 10; n <= 80; n += 10) {
    const auto pair = backward_pair(m, 0.0, 10.0, n, path, 500, 10);
    xs.push_back(std::sqrt(static_cast<double>(n)));
    ys.push_back(std::log(pair.coupled_bound));
  }
  const auto fit = oracle::least_squares(xs, ys);
  EXPECT_LT(fit.slope + oracle::t975(static_cast<int>(xs.size()) - 2) * fit.se, 0.0);
}

TEST(Backward, ThreadCountDoesNotChangeResults) {
  const auto m = fixture::benchmark();
  const auto path = generate_path(m.covariates, {-100, 0}, 1);
  set_threads(1);
  const auto a = backward_pair(m, 0.0, 10.0, 100, path, 300, 2);
  set_threads(4);
  const auto b = backward_pair(m, 0.0, 10.0, 100, path, 300, 2);
  set_threads(1);
  EXPECT_EQ(a.from_s0.points, b.from_s0.points);
  EXPECT_EQ(a.coupled_bound, b.coupled_bound);
}

// ---------------------------------------------------------------------------
// stationary sampler

// [TRIVIAL] memoryless link converges at the first doubling.
TEST(Stationary, MemorylessConvergesImmediately) {
  StationaryOptions opt;
  opt.replicas = 200;
  const auto res = stationary_sampler(memoryless(2.5), opt);
  EXPECT_TRUE(res.converged);
  ASSERT_EQ(res.history.size(), 1u);
  EXPECT_EQ(res.achieved_gap, 0.0);
  for (const auto& p : res.measure.points) EXPECT_EQ(p.scalar(), 2.5);
}

// [DERIVED] benchmark budget.
TEST(Stationary, BenchmarkConvergesWithin400) {
  StationaryOptions opt;
  opt.tol = 0.01;
  opt.replicas = 2000;
  const auto res = stationary_sampler(fixture::benchmark(), opt);
  EXPECT_TRUE(res.converged) << res.diagnostic;
  EXPECT_LE(res.n, 400);
  EXPECT_LT(res.achieved_gap, 0.01);
}

// [DERIVED] divergent recursion reports NotConverged.
TEST(Stationary, DivergentReportsNotConverged) {
  StationaryOptions opt;
  opt.replicas = 200;
  opt.max_n = 800;
  const auto res = stationary_sampler(fixture::linear_poisson(1.1, 0.0, 1.0), opt);
  EXPECT_FALSE(res.converged);
  EXPECT_NE(res.diagnostic.find("NotConverged"), std::string::npos);
}

TEST(Stationary, RejectsBadOptions) {
  StationaryOptions opt;
  opt.max_n = 300;
  EXPECT_THROW(stationary_sampler(fixture::benchmark(), opt), Error);
  opt.max_n = 400;
  opt.tol = 0.0;
  EXPECT_THROW(stationary_sampler(fixture::benchmark(), opt), Error);
}

// [DERIVED] one push through the kernel at time 0 lands near the doubled measure.
TEST(Stationary, InvarianceRelation) {
  StationaryOptions opt;
  opt.tol = 0.01;
  opt.replicas = 1000;
  const auto m = fixture::benchmark();
  const auto res = stationary_sampler(m, opt);
  ASSERT_TRUE(res.converged);
  const auto inv = invariance_check(m, res, opt);
  EXPECT_LE(inv.gap, 2.0 * opt.tol);
}

// ---------------------------------------------------------------------------
// W-statistics

// [DERIVED] geometric series closed forms.
TEST(WStatsTest, ConstantClosedForms) {
  const auto in = constant_inputs(0.5, 1.0, 0.5, PhiSpec{{1.0}});
  const auto path = generate_path({covariate::Constant{{0.0}}}, {0, 200}, 1);
  const auto ws = w_stats(in, path, 3, 0);
  ASSERT_GT(ws.size(), 0u);
  for (std::size_t c = 0; c < ws.size(); ++c) {
    EXPECT_DOUBLE_EQ(ws.w2[c], 0.125);
    EXPECT_DOUBLE_EQ(ws.w3[c], 0.125);
    EXPECT_NEAR(ws.w1[c], 2.0, 1e-5);
    EXPECT_NEAR(ws.w4[c], 1.0, 1e-5);
    EXPECT_NEAR(ws.w1[c] + ws.tail_w1, 2.0, 1e-12);
    EXPECT_NEAR(ws.w4[c] + ws.tail_w4, 1.0, 1e-12);
  }
}

// [TRIVIAL] shift invariance in a constant environment.
TEST(WStatsTest, ConstantEnvironmentGivesConstantStats) {
  const auto m = fixture::linear_poisson(0.4, 0.3, 1.0);
  const auto path = generate_path(m.covariates, {0, 300}, 1);
  const auto ws = w_stats(m, path, 2);
  for (std::size_t c = 1; c < ws.size(); ++c) {
    EXPECT_EQ(ws.w1[c], ws.w1[0]);
    EXPECT_EQ(ws.w2[c], ws.w2[0]);
    EXPECT_EQ(ws.w3[c], ws.w3[0]);
    EXPECT_EQ(ws.w4[c], ws.w4[0]);
  }
}

TEST(WStatsTest, EntriesNonnegativeAndW2MonotoneInH) {
  const auto m = fixture::benchmark();
  const auto path = generate_path(m.covariates, {0, 2000}, 3);
  const auto a = w_stats(m, path, 2, 20);
  const auto b = w_stats(m, path, 2, 40);
  const auto off = static_cast<std::size_t>(b.t_first - a.t_first);
  for (std::size_t c = 0; c < b.size(); ++c) {
    for (double v : {b.w1[c], b.w2[c], b.w3[c], b.w4[c]}) EXPECT_GE(v, 0.0);
    EXPECT_GE(b.w2[c], a.w2[c + off]);
    EXPECT_GE(b.w1[c], a.w1[c + off]);
  }
}

// [DERIVED] sup over j >= h of kappa products vanishes as h grows.
TEST(WStatsTest, W3DecaysInH) {
  auto m = fixture::benchmark();
  auto& l = std::get<link::Linear>(m.link.variant);
  l.kappa = CoefficientMap(coef::AffineAbs{0.1, 1.2}, true);  // kappa(x) = 0.1 + 1.2 x crosses 1
  const auto path = generate_path(m.covariates, {0, 5000}, 4);
  double prev = HUGE_VAL;
  for (int h : {1, 5, 10, 20, 40}) {
    const auto ws = w_stats(m, path, h, 60);
    const double mean = std::accumulate(ws.w3.begin(), ws.w3.end(), 0.0) / static_cast<double>(ws.size());
    EXPECT_LT(mean, prev);
    prev = mean;
  }
  EXPECT_LT(prev, 1e-3);
}

TEST(WStatsTest, PathTooShort) {
  const auto m = fixture::benchmark();
  const auto path = generate_path(m.covariates, {0, 30}, 1);
  try {
    w_stats(m, path, 2, 20);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::PathTooShort);
  }
}

// ---------------------------------------------------------------------------
// regeneration times

namespace {

WStats constant_stats(std::size_t n, double w1, double w2, double w3, double w4) {
  WStats s;
  s.t_first = 0;
  s.w1.assign(n, w1);
  s.w2.assign(n, w2);
  s.w3.assign(n, w3);
  s.w4.assign(n, w4);
  return s;
}

}  // namespace

// [TRIVIAL] deterministic spacing.
TEST(Regeneration, ConstantStatsGiveRegularSpacing) {
  const auto stats = constant_stats(1000, 1.0, 0.1, 0.1, 1.0);
  for (int h : {1, 3, 7}) {
    const auto r = regeneration_times(stats, 2.0, h);
    for (std::size_t i = 0; i < r.times.size(); ++i)
      EXPECT_EQ(r.times[i], static_cast<std::int64_t>(i) * (h + 1));
    for (std::int64_t n : {0, 1, 10, 57, 999})
      EXPECT_EQ(r.count_up_to(n), static_cast<std::size_t>(n / (h + 1) + 1));
  }
}

// [TRIVIAL] thresholds below the stats.
TEST(Regeneration, EmptyWhenThresholdsTooStrict) {
  const auto stats = constant_stats(100, 3.0, 0.6, 0.1, 1.0);
  const auto r = regeneration_times(stats, 2.0, 1);
  EXPECT_TRUE(r.times.empty());
  ASSERT_TRUE(r.minimal_C.has_value());
  EXPECT_DOUBLE_EQ(*r.minimal_C, 3.0);
  EXPECT_FALSE(regeneration_times(stats, *r.minimal_C, 1).times.empty());
  EXPECT_THROW(regeneration_times(stats, 1.0, 1), Error);
}

// [DERIVED] ergodic frequency of the threshold event is positive and stable.
TEST(Regeneration, FrequencyOnBenchmark) {
  const auto m = fixture::benchmark();
  const auto in = wstats_inputs(m);
  const auto pilot = generate_path(m.covariates, {0, 3000}, 1);
  const auto d = default_regeneration_parameters(in, pilot);
  ASSERT_TRUE(d.found);
  const auto path = generate_path(m.covariates, {0, 12000}, 2);
  const auto ws = w_stats(in, path, d.h, 0);
  const auto r = regeneration_times(ws, d.C, d.h);
  const double f3 = static_cast<double>(r.count_up_to(1000)) / 1000.0;
  const double f4 = static_cast<double>(r.count_up_to(10000)) / 10000.0;
  EXPECT_GT(f3, 0.0);
  EXPECT_GT(f4, 0.0);
  EXPECT_NEAR(f4, f3, 0.5 * f4);
}
