#include "oracles.hpp"

#include <gtest/gtest.h>

using namespace odre;

namespace {

const std::vector<double> kNoX{0.0};

LinkSpec linear(double k, double kt, double dt, int order = 1) {
  link::Linear l;
  l.kappa = constant_map(k);
  l.kappa_tilde = constant_map(kt);
  l.delta_tilde = constant_map(dt);
  l.order = order;
  return {l};
}

LinkSpec threshold(double k1, double kt1, double g1, double k2, double kt2, double g2, IntervalMap interval,
                   int order = 1) {
  link::Threshold t;
  t.inside = {constant_map(k1), constant_map(kt1), constant_map(g1)};
  t.outside = {constant_map(k2), constant_map(kt2), constant_map(g2)};
  t.interval = interval;
  t.order = order;
  return {t};
}

/// A menu of links with covariate-dependent maps for the property tests.
std::vector<LinkSpec> property_links() {
  std::vector<LinkSpec> out;
  link::Linear l;
  l.kappa = CoefficientMap(coef::Affine{0.2, {0.3}});
  l.kappa_tilde = CoefficientMap(coef::AffineAbs{0.1, 0.2}, true);
  l.delta_tilde = CoefficientMap(coef::ExpAffine{0.0, {0.5}}, true);
  out.push_back({l});
  l.order = 2;
  out.push_back({l});
  link::Threshold t;
  t.inside = {CoefficientMap(coef::Affine{-0.3, {0.1}}), constant_map(5.0), constant_map(1.0)};
  t.outside = {constant_map(0.4), CoefficientMap(coef::AffineAbs{0.0, 0.3}, true), constant_map(-0.5)};
  t.interval = interval::CovariateScaled{-1.0, 2.0};
  out.push_back({t});
  t.interval = interval::Fixed{-1.0, 1.0};
  t.order = 2;
  out.push_back({t});
  t.interval = interval::Fixed{0.0, HUGE_VAL};
  out.push_back({t});
  link::ArmaLike a;
  a.a = CoefficientMap(coef::AffineAbs{0.1, 0.2}, true);
  a.g = link::LinearRegression{CoefficientMap(coef::Affine{0.0, {1.0}}), constant_map(0.5), 2.0};
  out.push_back({a});
  a.g = link::LinearRegression{constant_map(0.7), CoefficientMap(coef::Affine{0.0, {1.0}}), std::nullopt};
  out.push_back({a});
  a.g = link::PowerRegression{constant_map(-1.5), 0.5};
  out.push_back({a});
  return out;
}

}  // namespace

// ---------------------------------------------------------------------------
// apply

// [TRIVIAL] arithmetic of the linear form.
TEST(Apply, Linear) { EXPECT_DOUBLE_EQ(apply(linear(0.4, 0.3, 1.0), 2.0, 3.0, kNoX).scalar(), 2.7); }

// [TRIVIAL] regime selection.
TEST(Apply, ThresholdRegimes) {
  const auto t = threshold(0.2, 0, 0, 0.5, 0, 0, interval::Fixed{0.0, 1.0});
  EXPECT_DOUBLE_EQ(apply(t, 1.0, 0.5, kNoX).scalar(), 0.2);
  EXPECT_DOUBLE_EQ(apply(t, 1.0, 2.0, kNoX).scalar(), 0.5);
}

// [TRIVIAL] a = 0 forgets s.
TEST(Apply, ArmaLikeWithZeroA) {
  link::ArmaLike a;
  a.a = constant_map(0.0);
  a.g = link::LinearRegression{constant_map(0.5), constant_map(0.0), std::nullopt};
  EXPECT_DOUBLE_EQ(apply({a}, 7.0, 2.0, kNoX).scalar(), 1.0);
}

TEST(Apply, CovariateScaledInterval) {
  const auto t = threshold(0.2, 0, 0, 0.5, 0, 0, interval::CovariateScaled{0.0, 1.0});
  const std::vector<double> x{-2.0, 1.0};  // I(x) = [0, 3]
  EXPECT_DOUBLE_EQ(apply(t, 1.0, 2.9, x).scalar(), 0.2);
  EXPECT_DOUBLE_EQ(apply(t, 1.0, 3.1, x).scalar(), 0.5);
}

TEST(Apply, SquaredObservation) { EXPECT_DOUBLE_EQ(apply(linear(0.5, 0.25, 1.0, 2), 2.0, -2.0, kNoX).scalar(), 3.0); }

TEST(Apply, DomainViolationWithoutFloor) {
  try {
    apply(linear(0.4, 0.3, -5.0), 1.0, 0.0, kNoX, 0.0);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::DomainViolation);
  }
  LinkSpec floored = linear(0.4, 0.3, -5.0);
  floored.floor = 0.0;
  EXPECT_EQ(apply(floored, 1.0, 0.0, kNoX, 0.0).scalar(), 0.0);
}

TEST(Apply, CategoricalOneHot) {
  link::Categorical c;
  c.kappa = constant_map(0.5);
  c.kappa_tilde = constant_map(2.0);
  c.delta_tilde = constant_map(1.0);
  c.table = {{0.0, 1.0, 0.0}, {0.0, 0.0, 1.0}};
  c.intercept = {-0.5, 0.25};
  const double raw[] = {1.0, -1.0};
  const State s(std::span<const double>(raw, 2));
  const auto out = apply({c}, s, 2.0, kNoX);
  EXPECT_DOUBLE_EQ(out[0], 0.5 - 0.5);
  EXPECT_DOUBLE_EQ(out[1], -0.5 + 2.0 + 0.25);
  EXPECT_THROW(apply({c}, s, 3.0, kNoX), Error);
}

// ---------------------------------------------------------------------------
// contraction_map and growth_envelope

TEST(ContractionMap, Examples) {
  const std::vector<double> x{1.7};
  EXPECT_EQ(contraction_map(linear(0.4, 0.3, 1.0)), constant_map(0.4));  // [TRIVIAL]
  EXPECT_EQ(contraction_map(threshold(0.2, 0, 0, 0.5, 0, 0, interval::Fixed{0, 1})),
            constant_map(0.5));  // [PAPER] max of the regime moduli
  link::ArmaLike a;
  a.a = CoefficientMap(coef::AffineAbs{0.1, 0.2}, true);
  EXPECT_DOUBLE_EQ(contraction_map({a})(x), 0.1 + 0.2 * 1.7);  // [TRIVIAL]
}

TEST(GrowthEnvelope, LinearIsItself) {
  const auto env = growth_envelope(linear(0.4, 0.3, 1.0));
  EXPECT_EQ(env.kappa.constant_value(), 0.4);
  EXPECT_EQ(env.kappa_tilde.constant_value(), 0.3);
  EXPECT_EQ(env.delta_tilde.constant_value(), 1.0);
  EXPECT_TRUE(env.is_contractive_in_s);
}

// [DERIVED] sup over y in [0,1] of 5y is absorbed into the intercept.
TEST(GrowthEnvelope, ThresholdCaseTwo) {
  const auto t = threshold(0.4, 5.0, 1.0, 0.4, 0.3, 1.0, interval::Fixed{0.0, 1.0});
  const auto env = growth_envelope(t);
  EXPECT_EQ(env.case_tag, EnvelopeCase::ThresholdCase2);
  EXPECT_DOUBLE_EQ(env.kappa(kNoX), 0.4);
  EXPECT_DOUBLE_EQ(env.kappa_tilde(kNoX), 0.3);
  EXPECT_DOUBLE_EQ(env.delta_tilde(kNoX), 6.0);
  ASSERT_TRUE(env.outside_growth.has_value());
  EXPECT_DOUBLE_EQ((*env.outside_growth)(kNoX), 0.7);
  // Exhaustive grid over (s, y).
  for (int i = 0; i <= 200; ++i)
    for (int j = 0; j <= 200; ++j) {
      const double s = -10.0 + 0.1 * i, y = -10.0 + 0.1 * j;
      EXPECT_LE(std::abs(apply(t, s, y, kNoX).scalar()), env.bound(s, y, kNoX) + 1e-12);
    }
}

// [PAPER] case 1 takes the max of the regime y-coefficients.
TEST(GrowthEnvelope, ThresholdCaseOne) {
  const auto env = growth_envelope(threshold(0.4, 5.0, 1.0, 0.4, 0.3, 1.0, interval::Fixed{0.0, HUGE_VAL}));
  EXPECT_EQ(env.case_tag, EnvelopeCase::ThresholdCase1);
  EXPECT_DOUBLE_EQ(env.kappa_tilde(kNoX), 5.0);
  EXPECT_DOUBLE_EQ(env.delta_tilde(kNoX), 1.0);
}

TEST(GrowthEnvelope, UnboundedRegressionRejected) {
  link::ArmaLike a;
  a.a = constant_map(0.3);
  a.g = link::PowerRegression{constant_map(1.0), 1.5};
  try {
    growth_envelope({a});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::UnboundedG);
  }
}

// ---------------------------------------------------------------------------
// Property tests on 1e3 random triples

namespace {

struct Triple {
  double s, sp, y;
  std::vector<double> x;
};

Triple random_triple(std::uint64_t key, std::int64_t i) {
  Stream rng(key, i, Domain::Grid);
  Triple t;
  t.s = -20.0 + 40.0 * rng.uniform();
  t.sp = -20.0 + 40.0 * rng.uniform();
  t.y = -15.0 + 30.0 * rng.uniform();
  if (rng.uniform() < 0.2) t.y = std::round(t.y);
  t.x = {-3.0 + 6.0 * rng.uniform()};
  return t;
}

}  // namespace

// [DERIVED] |f(s) - f(s')| <= kappa(x) |s - s'| + 1e-12.
TEST(LinkProperties, LipschitzCertification) {
  for (const auto& link : property_links()) {
    const auto kappa = contraction_map(link);
    for (int i = 0; i < 1000; ++i) {
      const auto t = random_triple(1, i);
      const double lhs = std::abs(apply(link, t.sp, t.y, t.x).scalar() - apply(link, t.s, t.y, t.x).scalar());
      EXPECT_LE(lhs, kappa(t.x) * std::abs(t.s - t.sp) + 1e-12 * (1.0 + std::abs(t.s) + std::abs(t.sp)));
    }
  }
}

// [DERIVED] |f(s, y, x)| <= envelope bound + 1e-12.
TEST(LinkProperties, EnvelopeCertification) {
  for (const auto& link : property_links()) {
    const auto env = growth_envelope(link);
    for (int i = 0; i < 1000; ++i) {
      const auto t = random_triple(2, i);
      const double f = std::abs(apply(link, t.s, t.y, t.x).scalar());
      EXPECT_LE(f, env.bound(t.s, t.y, t.x) + 1e-12 * (1.0 + f));
    }
  }
}

// [DERIVED] floor clamp holds and preserves the Lipschitz constant.
TEST(LinkProperties, FloorRespected) {
  for (auto link : property_links()) {
    link.floor = 0.7;
    const auto kappa = contraction_map(link);
    for (int i = 0; i < 1000; ++i) {
      const auto t = random_triple(3, i);
      const double f = apply(link, t.s, t.y, t.x).scalar();
      const double fp = apply(link, t.sp, t.y, t.x).scalar();
      EXPECT_GE(f, 0.7);
      EXPECT_LE(std::abs(f - fp), kappa(t.x) * std::abs(t.s - t.sp) + 1e-12 * (1.0 + std::abs(t.s) + std::abs(t.sp)));
    }
  }
}

// [DERIVED] propagate_gap agrees with the direct difference of two evaluations.
TEST(LinkProperties, PropagateGapMatchesDifference) {
  for (auto link : property_links()) {
    for (bool floored : {false, true}) {
      if (floored) link.floor = 0.0;
      for (int i = 0; i < 1000; ++i) {
        const auto t = random_triple(4, i);
        const double yp = i % 3 == 0 ? t.y : t.y + (i % 2 ? 1.0 : -0.5);
        const double direct = apply(link, t.sp, yp, t.x).scalar() - apply(link, t.s, t.y, t.x).scalar();
        const double gap = propagate_gap(link, t.s, State(t.sp - t.s), t.y, yp, t.x).scalar();
        EXPECT_NEAR(gap, direct, 1e-9 * (1.0 + std::abs(t.s) + std::abs(t.sp) + t.y * t.y));
      }
    }
  }
}

// ---------------------------------------------------------------------------
// Validation

TEST(LinkValidation, OrderMustMatchKernel) {
  try {
    validate_pair(linear(0.4, 0.3, 1.0, 2), kernel::Poisson{});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::UnsupportedCombination);
  }
  EXPECT_NO_THROW(validate_pair(linear(0.4, 0.3, 1.0, 2), kernel::GarchGaussian{1.0}));
  EXPECT_THROW(validate_pair(linear(0.4, 0.3, 1.0, 3), kernel::Poisson{}), Error);
}

TEST(LinkValidation, FloorBelowDomainRejected) {
  auto l = linear(0.4, 0.3, 1.0, 2);
  l.floor = 0.5;
  EXPECT_THROW(validate_pair(l, kernel::GarchGaussian{1.0}), Error);
}

TEST(LinkValidation, CategoricalPairsOnlyWithMultinomial) {
  const auto m = fixture::model_for(kernel::Multinomial{3});
  EXPECT_NO_THROW(validate_pair(m.link, m.kernel));
  EXPECT_THROW(validate_pair(m.link, kernel::Poisson{}), Error);
  EXPECT_THROW(validate_pair(linear(0.4, 0.3, 1.0), kernel::Multinomial{3}), Error);
  EXPECT_THROW(validate_pair(m.link, kernel::Multinomial{4}), Error);
}
