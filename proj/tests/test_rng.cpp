#include "oracles.hpp"

#include <gtest/gtest.h>

#include <set>

using namespace odre;

// [DERIVED] Philox4x32-10 known-answer vectors from the Random123 distribution.
TEST(Rng, PhiloxKnownAnswerZero) {
  const auto out = Philox4x32::encrypt({0, 0, 0, 0}, {0, 0});
  EXPECT_EQ(out, (Philox4x32::Counter{0x6627e8d5U, 0xe169c58dU, 0xbc57ac4cU, 0x9b00dbd8U}));
}

TEST(Rng, PhiloxKnownAnswerOnes) {
  const auto out = Philox4x32::encrypt({0xffffffffU, 0xffffffffU, 0xffffffffU, 0xffffffffU}, {0xffffffffU, 0xffffffffU});
  EXPECT_EQ(out, (Philox4x32::Counter{0x408f276dU, 0x41c83b0eU, 0xa20bc7c6U, 0x6d5451fdU}));
}

TEST(Rng, PhiloxKnownAnswerPi) {
  const auto out = Philox4x32::encrypt({0x243f6a88U, 0x85a308d3U, 0x13198a2eU, 0x03707344U}, {0xa4093822U, 0x299f31d0U});
  EXPECT_EQ(out, (Philox4x32::Counter{0xd16cfe09U, 0x94fdccebU, 0x5001e420U, 0x24126ea1U}));
}

// [TRIVIAL] streams are pure functions of their address.
TEST(Rng, StreamAddressDeterminism) {
  Stream a(42, -7, Domain::Observation);
  Stream b(42, -7, Domain::Observation);
  for (int i = 0; i < 100; ++i) EXPECT_EQ(a(), b());
}

TEST(Rng, DomainsAndIndicesSeparateStreams) {
  std::set<std::uint64_t> firsts;
  for (std::int64_t t = -50; t < 50; ++t)
    for (auto d : {Domain::Observation, Domain::Coupling, Domain::CovariateNoise}) firsts.insert(Stream(9, t, d)());
  EXPECT_EQ(firsts.size(), 300u);
}

TEST(Rng, SplitSeedIsInjectiveOnSmallRange) {
  std::set<std::uint64_t> seen;
  for (std::uint64_t r = 0; r < 10000; ++r) seen.insert(split_seed(1, r));
  EXPECT_EQ(seen.size(), 10000u);
}

TEST(Rng, UniformOpenNeverHitsEndpoints) {
  Stream s(1, 0, Domain::MonteCarlo);
  for (int i = 0; i < 100000; ++i) {
    const double u = s.uniform_open();
    ASSERT_GT(u, 0.0);
    ASSERT_LT(u, 1.0);
  }
}

// [DERIVED] uniforms from consecutive indices pass a KS test against U(0,1).
TEST(Rng, UniformsAcrossIndicesAreUniform) {
  std::vector<double> xs;
  for (std::int64_t t = 0; t < 100000; ++t) xs.push_back(Stream(5, t, Domain::Observation).uniform());
  EXPECT_GT(oracle::ks_test(xs, [](double x) { return std::clamp(x, 0.0, 1.0); }), 1e-3);
}
