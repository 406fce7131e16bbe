#include <gtest/gtest.h>

#include "mixlab/model_family.hpp"

using namespace mixlab;

namespace {

std::vector<ModelFamily> all_families() {
  return {ModelFamily::bernoulli(), ModelFamily::categorical(3), ModelFamily::markov(2, 1), ModelFamily::markov(3, 2),
          ModelFamily::linear_gaussian(2, 0.7), ModelFamily::softmax_net(3, 4, 3), ModelFamily::softmax_net(2, 0, 3)};
}

// A random interior parameter (simplex rows stay away from the boundary).
ParamVector interior(const ModelFamily& f, Rng& rng) {
  std::uniform_real_distribution<double> u(0.1, 0.9);
  std::normal_distribution<double> nrm(0.0, 0.7);
  ParamVector t(f.dimension());
  if (!f.is_sequence()) {
    for (Eigen::Index i = 0; i < t.size(); ++i) t[i] = nrm(rng);
    return t;
  }
  const int per = f.alphabet_size() - 1;
  for (int r = 0; r < f.dimension() / per; ++r) {
    std::vector<double> w(static_cast<std::size_t>(per + 1));
    double s = 0.0;
    for (double& v : w) s += (v = u(rng));
    for (int j = 0; j < per; ++j) t[r * per + j] = w[static_cast<std::size_t>(j)] / s;
  }
  return t;
}

}  // namespace

TEST(ModelFamily, LogLikelihoodExamples) {
  const auto b = ModelFamily::bernoulli();
  EXPECT_NEAR(b.log_likelihood(param({0.5}), symbols({1, 0, 1})), 3 * std::log(0.5), 1e-12);
  EXPECT_NEAR(-2.0794, b.log_likelihood(param({0.5}), symbols({1, 0, 1})), 1e-4);
  EXPECT_EQ(b.log_likelihood(param({1.0}), symbols({1, 1})), 0.0);
  EXPECT_EQ(b.log_likelihood(param({1.0}), symbols({1, 0})), -kInf);
  // Symbols are 0-based: the third symbol is 2.
  const auto c = ModelFamily::categorical(3);
  EXPECT_NEAR(c.log_likelihood(param({0.2, 0.3}), symbols({2})), std::log(0.5), 1e-12);
}

TEST(ModelFamily, ErrorsOnBadInput) {
  const auto b = ModelFamily::bernoulli();
  EXPECT_THROW(b.log_likelihood(param({0.5, 0.5}), symbols({1})), ParameterError);
  EXPECT_THROW(b.log_likelihood(param({1.5}), symbols({1})), ParameterError);
  EXPECT_THROW(b.log_likelihood(param({0.5}), symbols({2})), DataError);
  EXPECT_THROW(b.grad_log_likelihood(param({0.0}), symbols({1})), BoundaryError);
  EXPECT_THROW(b.grad_log_likelihood(param({1.0}), symbols({1})), BoundaryError);
  EXPECT_THROW(ModelFamily::markov(2, 1).predictive(param({0.5, 0.5}), std::vector<int>{}), ContextError);
  EXPECT_THROW(ModelFamily::softmax_net(2, 3, 2).analytic_fisher(ParamVector::Zero(17), 1), NotAvailableError);
  EXPECT_THROW(b.sample_sequence(param({0.5}), 0, 1), ParameterError);
  EXPECT_THROW(ModelFamily::categorical(1), ParameterError);
}

TEST(ModelFamily, GradientExamples) {
  EXPECT_NEAR(ModelFamily::bernoulli().grad_log_likelihood(param({0.5}), symbols({1}))[0], 2.0, 1e-12);
  const auto lg = ModelFamily::linear_gaussian(2, 1.0);
  SequenceSample s;
  s.features = {param({1.0, 0.0})};
  s.labels = {1.0};
  const auto g = lg.grad_log_likelihood(param({0.0, 0.0}), s);
  EXPECT_NEAR(g[0], 1.0, 1e-12);
  EXPECT_NEAR(g[1], 0.0, 1e-12);
}

// Central differences with step 1e-5 on every family.
TEST(ModelFamily, GradientMatchesFiniteDifferences) {
  Rng rng = make_rng(3);
  for (const auto& f : all_families()) {
    for (int rep = 0; rep < 3; ++rep) {
      const ParamVector theta = interior(f, rng);
      const auto data = f.sample_sequence(theta, 12, 100 + rep);
      const ParamVector g = f.grad_log_likelihood(theta, data);
      const double h = 1e-5;
      for (Eigen::Index i = 0; i < theta.size(); ++i) {
        ParamVector tp = theta, tm = theta;
        tp[i] += h;
        tm[i] -= h;
        const double fd = (f.log_likelihood(tp, data) - f.log_likelihood(tm, data)) / (2 * h);
        EXPECT_LE(std::abs(fd - g[i]), 1e-4 * std::max(1.0, std::abs(g[i]))) << f.name() << " coord " << i;
      }
    }
  }
}

// Sum over all x^n of P(x^n) = 1 by brute force (n <= 10, |X| <= 3).
TEST(ModelFamily, NormalizationByEnumeration) {
  Rng rng = make_rng(4);
  for (const auto& f : {ModelFamily::bernoulli(), ModelFamily::categorical(3), ModelFamily::markov(2, 1),
                        ModelFamily::markov(3, 1), ModelFamily::markov(2, 2)}) {
    const ParamVector theta = interior(f, rng);
    const int a = f.alphabet_size();
    const int n = a == 2 ? 10 : 7;
    std::vector<int> seq(static_cast<std::size_t>(n), 0);
    std::vector<double> probs;
    while (true) {
      SequenceSample s;
      s.symbols = seq;
      probs.push_back(std::exp(f.log_likelihood(theta, s)));
      int pos = n - 1;
      while (pos >= 0 && seq[static_cast<std::size_t>(pos)] == a - 1) seq[static_cast<std::size_t>(pos--)] = 0;
      if (pos < 0) break;
      ++seq[static_cast<std::size_t>(pos)];
    }
    EXPECT_NEAR(pairwise_sum(probs), 1.0, 1e-9) << f.name();
  }
}

TEST(ModelFamily, LabelDistributionsNormalized) {
  Rng rng = make_rng(5);
  const auto f = ModelFamily::softmax_net(3, 4, 5);
  const ParamVector theta = interior(f, rng);
  const auto p = f.label_predictive(theta, param({0.3, -1.0, 2.0})).probs;
  double s = 0.0;
  for (double v : p) s += v;
  EXPECT_NEAR(s, 1.0, 1e-12);
}

TEST(ModelFamily, IidAdditivity) {
  const auto f = ModelFamily::categorical(3);
  const ParamVector theta = param({0.2, 0.45});
  const auto data = f.sample_sequence(theta, 40, 6);
  double sum = 0.0;
  for (int s : data.symbols) sum += f.log_likelihood(theta, symbols({s}));
  EXPECT_NEAR(f.log_likelihood(theta, data), sum, 1e-12);
}

TEST(ModelFamily, SamplingExamples) {
  const auto b = ModelFamily::bernoulli();
  for (int s : b.sample_sequence(param({1.0}), 50, 1).symbols) EXPECT_EQ(s, 1);
  for (int s : b.sample_sequence(param({0.0}), 50, 1).symbols) EXPECT_EQ(s, 0);
  const auto d = b.sample_sequence(param({0.3}), 10000, 2);
  double m = 0.0;
  for (int s : d.symbols) m += s;
  m /= 10000.0;
  EXPECT_LE(std::abs(m - 0.3), 3 * std::sqrt(0.21 / 1e4));
  EXPECT_EQ(b.sample_sequence(param({0.3}), 100, 9).symbols, b.sample_sequence(param({0.3}), 100, 9).symbols);
}

TEST(ModelFamily, AnalyticFisherExamples) {
  const auto b = ModelFamily::bernoulli();
  EXPECT_DOUBLE_EQ(b.analytic_fisher(param({0.5}), 1)(0, 0), 4.0);
  EXPECT_DOUBLE_EQ(b.analytic_fisher(param({0.5}), 100)(0, 0), 400.0);
  EXPECT_TRUE(ModelFamily::linear_gaussian(3, 1.0).analytic_fisher(param({1, 2, 3}), 1).isApprox(Matrix::Identity(3, 3)));
  const auto c = ModelFamily::categorical(4);
  const ParamVector t = param({0.1, 0.2, 0.3});
  EXPECT_TRUE(c.analytic_fisher(t, 7).isApprox(7.0 * c.analytic_fisher(t, 1)));
  EXPECT_THROW(b.analytic_fisher(param({0.0}), 1), BoundaryError);
}

// Categorical Fisher equals the exact covariance of the one-symbol score.
TEST(ModelFamily, CategoricalFisherIsScoreCovariance) {
  const auto c = ModelFamily::categorical(3);
  const ParamVector t = param({0.2, 0.5});
  const auto p = c.prob_table(t);
  Matrix cov = Matrix::Zero(2, 2);
  for (int s = 0; s < 3; ++s) {
    const auto g = c.grad_log_likelihood(t, symbols({s}));
    cov += p[static_cast<std::size_t>(s)] * g * g.transpose();
  }
  EXPECT_TRUE(cov.isApprox(c.analytic_fisher(t, 1), 1e-12));
}

TEST(ModelFamily, PredictiveExamples) {
  EXPECT_DOUBLE_EQ(ModelFamily::bernoulli().predictive(param({0.7}), std::vector<int>{0, 0, 1}).probs[1], 0.7);
  const auto m = ModelFamily::markov(2, 1);
  // Parameters are P(0 | context) for contexts 0 and 1.
  const auto p = m.predictive(param({0.5, 0.5}), std::vector<int>{1});
  EXPECT_DOUBLE_EQ(p.probs[0], 0.5);
  EXPECT_DOUBLE_EQ(p.probs[1], 0.5);
  EXPECT_DOUBLE_EQ(m.predictive(param({0.9, 0.3}), std::vector<int>{1, 0}).probs[0], 0.9);
  EXPECT_DOUBLE_EQ(m.predictive(param({0.9, 0.3}), std::vector<int>{0, 1}).probs[0], 0.3);
}

TEST(ModelFamily, MarkovCountsSkipWarmup) {
  const auto m = ModelFamily::markov(2, 1);
  const auto counts = m.sufficient_stats(std::vector<int>{1, 0, 0, 1});
  // transitions 1->0, 0->0, 0->1
  EXPECT_EQ(counts, (std::vector<int>{1, 1, 1, 0}));
  SequenceSample s;
  s.symbols = {1, 0, 0, 1};
  EXPECT_NEAR(m.log_likelihood(param({0.9, 0.3}), s), std::log(0.5) + std::log(0.3) + std::log(0.9) + std::log(0.1),
              1e-12);
}
