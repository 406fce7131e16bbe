#include <gtest/gtest.h>

#include "mixlab/weight_bound.hpp"

using namespace mixlab;

namespace {

double bern_kl_bits(double p, double q) {
  double d = 0.0;
  if (p > 0) d += p * std::log2(p / q);
  if (p < 1) d += (1 - p) * std::log2((1 - p) / (1 - q));
  return d;
}

}  // namespace

TEST(WeightBound, KlExamples) {
  const auto b = ModelFamily::bernoulli();
  EXPECT_NEAR(kl_to(b, param({0.5}), param({0.25}), 10, Setting::Online), 0.20752, 1e-5);
  EXPECT_NEAR(kl_to(b, param({0.3}), param({0.6}), 10, Setting::Online), bern_kl_bits(0.3, 0.6), 1e-14);
  EXPECT_EQ(kl_to(b, param({0.3}), param({0.3}), 4, Setting::Online), 0.0);
  EXPECT_EQ(kl_to(b, param({0.3}), param({1.0}), 4, Setting::Online), kInf);
  // Batch divergence for a chain depends on the last symbol only.
  const auto m = ModelFamily::markov(2, 1);
  const std::vector<int> ctx = {0, 1};
  EXPECT_NEAR(kl_to(m, param({0.9, 0.3}), param({0.5, 0.6}), 3, Setting::Batch, ctx), bern_kl_bits(0.7, 0.4), 1e-14);
}

// For a chain started uniformly, (1/n) D(P0^n || P^n) equals the brute-force
// sum over all sequences.
TEST(WeightBound, MarkovOnlineKlMatchesEnumeration) {
  const auto m = ModelFamily::markov(2, 1);
  const ParamVector t0 = param({0.8, 0.3}), t = param({0.6, 0.45});
  const int n = 8;
  double d = 0.0;
  for (int code = 0; code < (1 << n); ++code) {
    SequenceSample s;
    for (int j = 0; j < n; ++j) s.symbols.push_back((code >> j) & 1);
    const double lp = m.log_likelihood(t0, s);
    d += std::exp(lp) * (lp - m.log_likelihood(t, s));
  }
  EXPECT_NEAR(kl_to(m, t0, t, n, Setting::Online), nats_to_bits(d) / n, 1e-12);
}

TEST(WeightBound, LinearGaussianKlIsQuadratic) {
  const auto lg = ModelFamily::linear_gaussian(2, 0.5);
  const double d = kl_to(lg, param({0.0, 0.0}), param({0.3, -0.4}), 5, Setting::Online);
  EXPECT_NEAR(d, nats_to_bits(0.5 * 0.25 / 0.5), 1e-14);
}

TEST(WeightBound, SupervisedUsesWorstFeature) {
  const auto net = ModelFamily::softmax_net(1, 0, 2);
  const SupervisedSetting fs{{param({-1.0}), param({2.0})}, {0.5, 0.5}};
  const ParamVector t0 = param({1.0, -1.0, 0.0, 0.0}), t = param({0.5, -0.5, 0.1, 0.0});
  const double sup = kl_to(net, t0, t, 3, Setting::Supervised, {}, fs);
  double worst = 0.0, avg = 0.0;
  for (const auto& x : fs.features) {
    const double v = nats_to_bits(kl_divergence(net.label_predictive(t0, x).probs, net.label_predictive(t, x).probs));
    worst = std::max(worst, v);
    avg += 0.5 * v;
  }
  EXPECT_NEAR(sup, worst, 1e-14);
  EXPECT_NEAR(kl_to(net, t0, t, 3, Setting::Online, {}, fs), avg, 1e-14);
  EXPECT_THROW(kl_to(net, t0, t, 3, Setting::Supervised), NotAvailableError);
}

TEST(WeightBound, Membership) {
  const auto b = ModelFamily::bernoulli();
  KLBallSpec spec{Setting::Online, param({0.5}), bern_kl_bits(0.5, 0.25), {}, std::nullopt};
  EXPECT_TRUE(ball_membership(spec, param({0.5}), b, 4));
  EXPECT_TRUE(ball_membership(spec, param({0.3}), b, 4));
  EXPECT_FALSE(ball_membership(spec, param({0.2}), b, 4));
  EXPECT_FALSE(ball_membership(spec, param({0.8}), b, 4));
}

// Symmetric around 1/2: the ball is [0.25, 0.75] with prior mass 1/2.
TEST(WeightBound, WeightOfSymmetricBall) {
  const auto b = ModelFamily::bernoulli();
  KLBallSpec spec{Setting::Online, param({0.5}), bern_kl_bits(0.5, 0.25), {}, std::nullopt};
  const auto w = estimate_weight(spec, b, 4, PriorSpec::uniform(1001), 40000, 3);
  EXPECT_NEAR(w.value, 0.5, 3 * w.ci_halfwidth);
  EXPECT_LE(w.lower, 0.5);
  EXPECT_GE(w.upper, 0.5);
  EXPECT_FALSE(w.exact);
  // Exact sum over the prior grid.
  const Mixture mix(b, PriorSpec::uniform(1001));
  const auto g = estimate_weight(spec, b, 4, mix.posterior_grid(mix.log_prior()));
  EXPECT_NEAR(g.value, 0.5, 2e-3);
}

TEST(WeightBound, FinitePriorWeightIsExact) {
  const auto b = ModelFamily::bernoulli();
  const auto prior = PriorSpec::finite({param({0.2}), param({0.5}), param({0.9})}, {0.5, 0.3, 0.2});
  KLBallSpec spec{Setting::Online, param({0.5}), bern_kl_bits(0.5, 0.2) + 1e-9, {}, std::nullopt};
  const auto w = estimate_weight(spec, b, 3, prior, 10, 1);
  EXPECT_TRUE(w.exact);
  EXPECT_DOUBLE_EQ(w.value, 0.8);
}

TEST(WeightBound, WeightIsMonotoneInEpsilon) {
  const auto c = ModelFamily::categorical(3);
  double prev = 0.0;
  for (double eps : {0.001, 0.01, 0.05, 0.2, 1.0}) {
    KLBallSpec spec{Setting::Online, param({0.2, 0.3}), eps, {}, std::nullopt};
    const double w = estimate_weight(spec, c, 5, PriorSpec::uniform(51), 5000, 17).value;
    EXPECT_GE(w, prev);
    prev = w;
  }
}

TEST(WeightBound, PosteriorWeightAtZeroDataIsPriorWeight) {
  const auto b = ModelFamily::bernoulli();
  const Mixture mix(b, PriorSpec::uniform(401));
  KLBallSpec spec{Setting::Batch, param({0.3}), 0.05, {}, std::nullopt};
  const auto post = posterior_weights(mix, SequenceSample{});
  double oracle = 0.0;
  for (std::size_t i = 0; i < mix.size(); ++i)
    if (bern_kl_bits(0.3, mix.nodes()[i][0]) <= 0.05) oracle += std::exp(mix.log_prior()[i]);
  EXPECT_NEAR(estimate_weight(spec, b, 1, post).value, oracle, 1e-12);
}

TEST(WeightBound, OnlineBoundDominatesExactRegret) {
  const auto b = ModelFamily::bernoulli();
  const Mixture mix(b, PriorSpec::uniform(1001));
  for (int n : {2, 8, 32}) {
    const auto r = regret_bound(b, param({0.3}), PriorSpec::uniform(1001), n, Setting::Online, {}, 20000, 5);
    EXPECT_FALSE(r.unbounded);
    EXPECT_EQ(r.rows.size(), 40u);
    EXPECT_GE(r.bound, exact_regret_online(mix, param({0.3}), n).value);
  }
}

TEST(WeightBound, BatchBoundDominatesExactRegret) {
  const auto c = ModelFamily::categorical(3);
  const PriorSpec prior = PriorSpec::uniform(61);
  const Mixture mix(c, prior);
  for (int n : {2, 6}) {
    const auto r = regret_bound(c, param({0.2, 0.3}), prior, n, Setting::Batch, {}, 0, 0);
    EXPECT_GE(r.bound, exact_regret_batch(mix, param({0.2, 0.3}), n).value);
  }
}

// A two-atom class at the truth: the bound reaches log2(2) / n.
TEST(WeightBound, FiniteClassBound) {
  const auto b = ModelFamily::bernoulli();
  const auto prior = PriorSpec::finite({param({0.2}), param({0.8})});
  const Mixture mix(b, prior);
  for (int n : {1, 4, 16}) {
    const auto r = regret_bound(b, param({0.2}), prior, n, Setting::Online, {}, 10, 1);
    EXPECT_LE(r.bound, 1.0 / n + 1e-4 / n + 1e-12);
    EXPECT_GE(r.bound, exact_regret_online(mix, param({0.2}), n).value);
  }
}

TEST(WeightBound, SupervisedBoundDominatesExactRegret) {
  const auto net = ModelFamily::softmax_net(1, 0, 2);
  std::vector<ParamVector> atoms;
  for (double a : {-1.0, 0.0, 1.0})
    for (double c : {-0.5, 0.5}) atoms.push_back(param({a, -a, c, 0.0}));
  const auto prior = PriorSpec::finite(atoms);
  const SupervisedSetting fs{{param({-1.0}), param({1.0})}, {0.3, 0.7}};
  const Mixture mix(net, prior);
  const ParamVector t0 = param({0.6, -0.6, 0.2, 0.0});
  for (int n : {0, 2, 5}) {
    const auto r = regret_bound(net, t0, prior, n, Setting::Supervised, {}, 0, 0, fs);
    EXPECT_GE(r.bound, exact_regret_supervised(mix, t0, fs, n).value);
  }
  EXPECT_THROW(regret_bound(net, t0, prior, 2, Setting::Supervised, {}, 0, 0), NotAvailableError);
}

TEST(WeightBound, DefaultGrid) {
  const auto g = default_epsilon_grid(100);
  ASSERT_EQ(g.size(), 40u);
  EXPECT_NEAR(g.front(), 1e-6, 1e-18);
  EXPECT_NEAR(g.back(), 10.0, 1e-12);
  for (std::size_t i = 1; i < g.size(); ++i) EXPECT_GT(g[i], g[i - 1]);
  EXPECT_THROW(regret_bound(ModelFamily::bernoulli(), param({0.5}), PriorSpec::uniform(11), 3, Setting::Online,
                            {0.5, 0.1}, 10, 1),
               ParameterError);
}

TEST(WeightBound, Chi2SkipsAtOneAndPassesForLargeAlpha) {
  const auto b = ModelFamily::bernoulli();
  EXPECT_TRUE(chi2_weight_check(b, param({0.5}), 1, 1.5, 10, 10, 1).skipped);
  const auto r = chi2_weight_check(b, param({0.5}), 50, 40.0, 200, 200, 1);
  EXPECT_FALSE(r.skipped);
  EXPECT_TRUE(r.passes);
  EXPECT_EQ(r.mean_deficit, 0.0);
  EXPECT_THROW(chi2_weight_check(ModelFamily::markov(2, 1), param({0.5, 0.5}), 10, 2.0, 10, 10, 1), NotAvailableError);
}

TEST(WeightBound, Chi2LargeAlphaHasSmallDeficit) {
  const auto r = chi2_weight_check(ModelFamily::bernoulli(), param({0.5}), 100, 10.0, 500, 500, 4);
  EXPECT_FALSE(r.skipped);
  EXPECT_LT(r.mean_deficit, 1e-3);
}

// Bernoulli KL around 1/2 is symmetric, so the ball is too.
TEST(WeightBound, MembershipIsSymmetricAtHalf) {
  const auto b = ModelFamily::bernoulli();
  KLBallSpec spec{Setting::Online, param({0.5}), 0.1, {}, std::nullopt};
  for (int i = 0; i <= 100; ++i) {
    const double t = i / 100.0;
    EXPECT_EQ(ball_membership(spec, param({t}), b, 4), ball_membership(spec, param({1 - t}), b, 4)) << t;
  }
}
