#include <gtest/gtest.h>

#include "mixlab/regret.hpp"

using namespace mixlab;

namespace {

// All sequences of length n over a symbols, lexicographic.
std::vector<std::vector<int>> all_sequences(int a, int n) {
  std::vector<std::vector<int>> out;
  std::vector<int> s(static_cast<std::size_t>(n), 0);
  while (true) {
    out.push_back(s);
    int pos = n - 1;
    while (pos >= 0 && s[static_cast<std::size_t>(pos)] == a - 1) s[static_cast<std::size_t>(pos--)] = 0;
    if (pos < 0) break;
    ++s[static_cast<std::size_t>(pos)];
  }
  if (n == 0) out.assign(1, {});
  return out;
}

// P_theta(x^n) by direct multiplication of conditional table entries.
double seq_prob(const ModelFamily& f, const ParamVector& theta, const std::vector<int>& x) {
  const auto table = f.prob_table(theta);
  const int a = f.alphabet_size(), m = f.markov_order();
  double p = 1.0;
  for (std::size_t t = 0; t < x.size(); ++t) {
    if (static_cast<int>(t) < m) {
      p /= a;
      continue;
    }
    int ctx = 0;
    for (int j = 0; j < m; ++j) ctx = ctx * a + x[t - static_cast<std::size_t>(m) + static_cast<std::size_t>(j)];
    p *= table[static_cast<std::size_t>(ctx * a + x[t])];
  }
  return p;
}

double mix_prob(const Mixture& mix, const std::vector<int>& x) {
  double q = 0.0;
  for (std::size_t i = 0; i < mix.size(); ++i) q += std::exp(mix.log_prior()[i]) * seq_prob(mix.family(), mix.nodes()[i], x);
  return q;
}

// Online regret (bits per symbol) by brute force.
double brute_online(const Mixture& mix, const ParamVector& theta0, int n) {
  double d = 0.0;
  for (const auto& x : all_sequences(mix.family().alphabet_size(), n)) {
    const double p = seq_prob(mix.family(), theta0, x);
    if (p > 0) d += p * std::log2(p / mix_prob(mix, x));
  }
  return d / n;
}

double brute_batch(const Mixture& mix, const ParamVector& theta0, int n) {
  const int a = mix.family().alphabet_size();
  double d = 0.0;
  for (const auto& x : all_sequences(a, n - 1)) {
    const double p = seq_prob(mix.family(), theta0, x);
    if (p == 0) continue;
    const double q = mix_prob(mix, x);
    for (int s = 0; s < a; ++s) {
      auto y = x;
      y.push_back(s);
      const double pc = seq_prob(mix.family(), theta0, y) / p;
      if (pc > 0) d += p * pc * std::log2(pc / (mix_prob(mix, y) / q));
    }
  }
  return d;
}

}  // namespace

TEST(Regret, BernoulliTwoSymbolExample) {
  // Q(00) = Q(11) = 1/3, Q(01) = Q(10) = 1/6 under the uniform prior.
  const double oracle = 0.5 * (0.5 * std::log2(0.25 * 3) + 0.5 * std::log2(0.25 * 6));
  EXPECT_NEAR(oracle, 0.04248, 1e-5);
  const Mixture mix(ModelFamily::bernoulli(), PriorSpec::uniform(10001));
  EXPECT_NEAR(exact_regret_online(mix, param({0.5}), 2).value, oracle, 1e-7);
}

TEST(Regret, PointMassAtTruthHasZeroRegret) {
  const ParamVector t = param({0.3, 0.5});
  const Mixture mix(ModelFamily::categorical(3), PriorSpec::point_mass(t));
  EXPECT_NEAR(exact_regret_online(mix, t, 6).value, 0.0, 1e-14);
  EXPECT_NEAR(exact_regret_batch(mix, t, 6).value, 0.0, 1e-14);
}

TEST(Regret, FiniteClassCeiling) {
  const Mixture mix(ModelFamily::bernoulli(), PriorSpec::finite({param({0.2}), param({0.8})}));
  for (int n : {1, 4, 16, 64}) {
    const double r = exact_regret_online(mix, param({0.2}), n).value;
    EXPECT_GE(r, 0.0);
    EXPECT_LE(n * r, 1.0 + 1e-12);
  }
}

TEST(Regret, OnlineMatchesBruteForce) {
  const Mixture cat(ModelFamily::categorical(3), PriorSpec::uniform(31));
  EXPECT_NEAR(exact_regret_online(cat, param({0.2, 0.3}), 6).value, brute_online(cat, param({0.2, 0.3}), 6), 1e-10);
  const Mixture mk(ModelFamily::markov(2, 1), PriorSpec::uniform(41));
  auto r = exact_regret_online(mk, param({0.7, 0.4}), 9);
  EXPECT_EQ(r.method, RegretMethod::ExactEnumeration);
  EXPECT_NEAR(r.value, brute_online(mk, param({0.7, 0.4}), 9), 1e-10);
  const Mixture b(ModelFamily::bernoulli(), PriorSpec::uniform(101));
  r = exact_regret_online(b, param({0.35}), 12);
  EXPECT_EQ(r.method, RegretMethod::ExactSufficientStat);
  EXPECT_NEAR(r.value, brute_online(b, param({0.35}), 12), 1e-10);
}

TEST(Regret, BatchMatchesBruteForce) {
  const Mixture cat(ModelFamily::categorical(3), PriorSpec::uniform(31));
  EXPECT_NEAR(exact_regret_batch(cat, param({0.2, 0.3}), 5).value, brute_batch(cat, param({0.2, 0.3}), 5), 1e-10);
  const Mixture mk(ModelFamily::markov(2, 2), PriorSpec::point_mass(param({0.7, 0.4, 0.1, 0.5})));
  const Mixture mk2(ModelFamily::markov(2, 1), PriorSpec::uniform(21));
  EXPECT_NEAR(exact_regret_batch(mk2, param({0.7, 0.4}), 7).value, brute_batch(mk2, param({0.7, 0.4}), 7), 1e-10);
  // Warm-up prediction is uniform on both sides.
  EXPECT_NEAR(exact_regret_batch(mk, param({0.7, 0.4, 0.1, 0.5}), 2).value, 0.0, 1e-14);
}

TEST(Regret, BatchOnlineIdentity) {
  const Mixture b(ModelFamily::bernoulli(), PriorSpec::uniform(501));
  const Mixture mk(ModelFamily::markov(2, 1), PriorSpec::uniform(31));
  for (int n = 1; n <= 8; ++n) {
    EXPECT_NEAR(batch_online_identity(b, param({0.3}), n), 0.0, 1e-12);
    EXPECT_NEAR(batch_online_identity(mk, param({0.6, 0.25}), n), 0.0, 1e-12);
  }
}

TEST(Regret, PointwiseBatchAveragesToBatch) {
  const auto fam = ModelFamily::bernoulli();
  const Mixture mix(fam, PriorSpec::uniform(201));
  const ParamVector t = param({0.3});
  double avg = 0.0;
  for (const auto& x : all_sequences(2, 4)) avg += seq_prob(fam, t, x) * pointwise_batch_regret(mix, t, x);
  EXPECT_NEAR(avg, exact_regret_batch(mix, t, 5).value, 1e-10);
}

// Brute force over all 16 ordered training sets of size 2 from a
// two-feature, two-label setting.
TEST(Regret, SupervisedMatchesBruteForce) {
  const auto fam = ModelFamily::softmax_net(1, 0, 2);
  Rng rng = make_rng(77);
  std::normal_distribution<double> nrm(0.0, 1.0);
  std::vector<ParamVector> atoms;
  for (int i = 0; i < 5; ++i) {
    ParamVector t(4);
    for (int j = 0; j < 4; ++j) t[j] = nrm(rng);
    atoms.push_back(t);
  }
  const Mixture mix(fam, PriorSpec::finite(atoms, {0.1, 0.2, 0.3, 0.15, 0.25}));
  const ParamVector theta0 = param({0.5, -0.5, 0.2, 0.1});
  SupervisedSetting setting{{param({-1.0}), param({1.0})}, {0.4, 0.6}};

  auto py = [&](const ParamVector& t, int xi, int y) {
    return fam.label_predictive(t, setting.features[static_cast<std::size_t>(xi)]).probs[static_cast<std::size_t>(y)];
  };
  double oracle = 0.0;
  int sets = 0;
  for (int c1 = 0; c1 < 4; ++c1) {
    for (int c2 = 0; c2 < 4; ++c2) {
      ++sets;
      const int x1 = c1 / 2, y1 = c1 % 2, x2 = c2 / 2, y2 = c2 % 2;
      const double ps = setting.feature_probs[x1] * py(theta0, x1, y1) * setting.feature_probs[x2] * py(theta0, x2, y2);
      std::vector<double> post(atoms.size());
      double z = 0.0;
      for (std::size_t i = 0; i < atoms.size(); ++i) {
        post[i] = std::exp(mix.log_prior()[i]) * py(atoms[i], x1, y1) * py(atoms[i], x2, y2);
        z += post[i];
      }
      double inner = 0.0;
      for (int x = 0; x < 2; ++x) {
        for (int y = 0; y < 2; ++y) {
          double q = 0.0;
          for (std::size_t i = 0; i < atoms.size(); ++i) q += post[i] / z * py(atoms[i], x, y);
          inner += setting.feature_probs[x] * py(theta0, x, y) * std::log2(py(theta0, x, y) / q);
        }
      }
      oracle += ps * inner;
    }
  }
  EXPECT_EQ(sets, 16);
  EXPECT_NEAR(exact_regret_supervised(mix, theta0, setting, 2).value, oracle, 1e-12);
  const auto mc = mc_regret(mix, theta0, 2, Setting::Supervised, 20000, 5, setting);
  EXPECT_LE(std::abs(mc.value - oracle), 3.5 * *mc.std_error);
}

TEST(Regret, MonteCarloAgreesWithExact) {
  const Mixture mix(ModelFamily::categorical(3), PriorSpec::uniform(51));
  const ParamVector t = param({0.2, 0.3});
  for (auto which : {Setting::Online, Setting::Batch}) {
    const double exact =
        which == Setting::Online ? exact_regret_online(mix, t, 10).value : exact_regret_batch(mix, t, 10).value;
    const auto mc = mc_regret(mix, t, 10, which, 20000, 9);
    ASSERT_TRUE(mc.std_error.has_value());
    EXPECT_LE(std::abs(mc.value - exact), 3.5 * *mc.std_error) << to_string(which);
  }
}

TEST(Regret, MonteCarloErrorShrinksAsRootN) {
  const Mixture mix(ModelFamily::bernoulli(), PriorSpec::uniform(201));
  const double small = *mc_regret(mix, param({0.4}), 16, Setting::Online, 4000, 1).std_error;
  const double large = *mc_regret(mix, param({0.4}), 16, Setting::Online, 16000, 2).std_error;
  EXPECT_NEAR(small / large, 2.0, 0.2);
}

TEST(Regret, MonteCarloIsDeterministic) {
  const Mixture mix(ModelFamily::bernoulli(), PriorSpec::uniform(201));
  set_num_threads(1);
  const double one = mc_regret(mix, param({0.4}), 8, Setting::Batch, 3000, 12).value;
  set_num_threads(3);
  const double three = mc_regret(mix, param({0.4}), 8, Setting::Batch, 3000, 12).value;
  set_num_threads(1);
  EXPECT_EQ(one, three);
}

TEST(Regret, DominanceOfMixtureAgainstItselfIsZero) {
  const Mixture mix(ModelFamily::bernoulli(), PriorSpec::uniform(201));
  const auto r = dominance_mass(mix, 4, mixture_learner(mix), 1.0, 500, 3);
  EXPECT_EQ(r.mass, 0.0);
  EXPECT_LT(r.ci_upper, 0.01);
}

// A single fixed model only beats the mixture by 2 bits near itself.
TEST(Regret, DominanceOfFixedModelIsSmall) {
  const auto fam = ModelFamily::bernoulli();
  const Mixture mix(fam, PriorSpec::uniform(201));
  const auto r = dominance_mass(mix, 4, fixed_model_learner(fam, param({0.5})), 2.0, 2000, 4);
  EXPECT_LE(r.mass, 0.25 + 3 * r.ci_halfwidth);
  EXPECT_LE(r.ci_lower, r.mass + 1e-12);
  EXPECT_GE(r.ci_upper, r.mass);
}

TEST(Regret, ErmLearnerProbabilities) {
  const auto learner = erm_plugin_learner(ModelFamily::bernoulli());
  // uniform, then 1/1, then 2/2 -> only the first symbol costs.
  EXPECT_NEAR(learner(std::vector<int>{1, 1, 1}), std::log(0.5), 1e-15);
  EXPECT_EQ(learner(std::vector<int>{1, 0}), -kInf);
}

TEST(Regret, RejectsBadArguments) {
  const Mixture mix(ModelFamily::bernoulli(), PriorSpec::uniform(11));
  EXPECT_THROW(exact_regret_online(mix, param({0.5}), 0), ParameterError);
  EXPECT_THROW(exact_regret_online(mix, param({1.5}), 3), ParameterError);
  EXPECT_THROW(dominance_mass(mix, 30, mixture_learner(mix), 1.0, 10, 1), SizeError);
  const Mixture mk(ModelFamily::markov(2, 1), PriorSpec::uniform(11));
  EXPECT_THROW(exact_regret_online(mk, param({0.5, 0.5}), 40), SizeError);
}
