#include <gtest/gtest.h>

#include "mixlab/fisher.hpp"
#include "mixlab/weight_bound.hpp"

using namespace mixlab;

namespace {

Matrix random_symmetric(int d, std::uint64_t seed) {
  Rng rng = make_rng(seed);
  std::normal_distribution<double> nrm(0.0, 1.0);
  Matrix m(d, d);
  for (int i = 0; i < d; ++i)
    for (int j = 0; j <= i; ++j) m(i, j) = m(j, i) = nrm(rng);
  return m;
}

// Roots of the characteristic polynomial of a symmetric 3x3 matrix by the
// trigonometric formula, descending.
std::vector<double> cubic_roots(const Matrix& a) {
  const double q = a.trace() / 3.0;
  const Matrix b = a - q * Matrix::Identity(3, 3);
  const double p = std::sqrt((b * b).trace() / 6.0);
  const double r = std::clamp((b / p).determinant() / 2.0, -1.0, 1.0);
  const double phi = std::acos(r) / 3.0;
  const double e1 = q + 2 * p * std::cos(phi);
  const double e3 = q + 2 * p * std::cos(phi + 2 * M_PI / 3);
  return {e1, 3 * q - e1 - e3, e3};
}

}  // namespace

TEST(Fisher, JacobiTrivialCases) {
  const auto id = eigen_spectrum(Matrix::Identity(5, 5));
  for (int i = 0; i < 5; ++i) EXPECT_DOUBLE_EQ(id[i], 1.0);
  Matrix d = Matrix::Zero(2, 2);
  d(0, 0) = 1;
  d(1, 1) = 3;
  const auto e = eigen_spectrum(d);
  EXPECT_DOUBLE_EQ(e[0], 3.0);
  EXPECT_DOUBLE_EQ(e[1], 1.0);
}

TEST(Fisher, JacobiMatchesCubicRoots) {
  for (std::uint64_t s = 0; s < 20; ++s) {
    const Matrix m = random_symmetric(3, s);
    const auto e = eigen_spectrum(m);
    const auto roots = cubic_roots(m);
    for (int i = 0; i < 3; ++i) EXPECT_NEAR(e[i], roots[static_cast<std::size_t>(i)], 1e-8);
  }
}

TEST(Fisher, JacobiReconstruction) {
  for (int d : {2, 10, 50}) {
    const Matrix m = random_symmetric(d, 100 + d);
    const auto ed = jacobi_eigen(m);
    const Matrix rec = ed.vectors * ed.values.asDiagonal() * ed.vectors.transpose();
    EXPECT_LE((rec - m).norm(), 1e-9 * m.norm());
    for (int i = 1; i < d; ++i) EXPECT_GE(ed.values[i - 1], ed.values[i]);
    EXPECT_LE((ed.vectors.transpose() * ed.vectors - Matrix::Identity(d, d)).norm(), 1e-9);
  }
}

TEST(Fisher, JacobiRejectsAsymmetric) {
  Matrix m = Matrix::Identity(3, 3);
  m(0, 1) = 1e-3;
  EXPECT_THROW(jacobi_eigen(m), InputError);
}

TEST(Fisher, EmpiricalBernoulli) {
  const Matrix f = empirical_fim(ModelFamily::bernoulli(), param({0.5}), 100000, 1);
  EXPECT_NEAR(f(0, 0), 4.0, 0.2);
  EXPECT_THROW(empirical_fim(ModelFamily::bernoulli(), param({1.0}), 100, 1), BoundaryError);
}

TEST(Fisher, EmpiricalLinearGaussian) {
  const Matrix f = empirical_fim(ModelFamily::linear_gaussian(3, 1.0), param({0.1, -0.2, 0.3}), 100000, 2);
  EXPECT_LE((f - Matrix::Identity(3, 3)).cwiseAbs().maxCoeff(), 0.05);
  EXPECT_GE(eigen_spectrum(f).minCoeff(), -1e-9);
}

TEST(Fisher, EmpiricalAgreesWithAnalytic) {
  for (const auto& [fam, theta] : std::vector<std::pair<ModelFamily, ParamVector>>{
           {ModelFamily::categorical(4), param({0.1, 0.2, 0.3})}, {ModelFamily::bernoulli(), param({0.2})}}) {
    const Matrix e = empirical_fim(fam, theta, 100000, 3);
    const Matrix a = fam.analytic_fisher(theta, 1);
    EXPECT_LE((e - a).norm() / a.norm(), 0.05) << fam.name();
  }
}

TEST(Fisher, EffectiveKExamples) {
  EXPECT_EQ(effective_k(param({100.0, 1.0}), 100, 0.01, 1.0), 1);
  EXPECT_EQ(effective_k(param({1e6, 1e6, 1e6}), 100, 0.01, 1.0), 3);
  EXPECT_EQ(effective_k(param({0.0, 0.0}), 100, 0.01, 1.0), 0);
}

TEST(Fisher, Theorem1Examples) {
  const auto one = theorem1_bound(param({400.0}), 100, 1.0);
  ASSERT_TRUE(one.applicable);
  EXPECT_EQ(one.k, 1);
  EXPECT_NEAR(one.bound_bits, (std::log(2.0) + std::log2(1.4426950408889634) + std::log2(400.0)) / 200.0, 1e-12);
  EXPECT_NEAR(one.bound_bits, 0.04933, 1e-5);
  const auto two = theorem1_bound(param({400.0, 300.0}), 100, 1.0);
  ASSERT_TRUE(two.applicable);
  EXPECT_EQ(two.k, 2);
  EXPECT_NEAR(two.epsilon_sq, 0.006931, 1e-6);
}

TEST(Fisher, Theorem1FallsBackToFullRank) {
  // lambda_2 is above 1 / (R^2 log e), so only k = d is admissible.
  const auto r = theorem1_bound(param({50.0, 40.0}), 10, 1.0);
  EXPECT_TRUE(r.applicable);
  EXPECT_EQ(r.k, 2);
}

TEST(Fisher, Theorem1BoundDominatesExactBernoulliRegret) {
  const auto b = ModelFamily::bernoulli();
  const auto prior = PriorSpec::box(1, 0.5, 2001, 0.5);
  const Mixture mix(b, prior);
  const double r = prior_box(prior, b).radius();
  const auto t1 = theorem1_bound(b.analytic_fisher(param({0.5}), 100).diagonal(), 100, r);
  ASSERT_TRUE(t1.applicable);
  EXPECT_GE(t1.bound_bits, exact_regret_online(mix, param({0.5}), 100).value);
}

TEST(Fisher, EllipsoidWeight) {
  EXPECT_DOUBLE_EQ(ellipsoid_weight(param({0.0, 0.0}), 50, 0.01, 1.0), 1.0);
  const Eigen::VectorXd lam = param({500.0, 300.0});
  const double w1 = ellipsoid_weight(lam, 50, 1e-3, 1.0);
  const double w2 = ellipsoid_weight(lam, 50, 4e-3, 1.0);
  ASSERT_EQ(effective_k(lam, 50, 4e-3, 1.0), 2);
  EXPECT_NEAR(w2 / w1, 4.0, 1e-12);
}

// Quadratic divergence 0.5 |delta|^2 with prior uniform on [-1, 1]^2.
TEST(Fisher, EllipsoidWithinFactorTwoOfMonteCarlo) {
  const auto lg = ModelFamily::linear_gaussian(2, 1.0);
  const auto prior = PriorSpec::box(2, 1.0, 101);
  const double eps_nats = 0.01;
  const double radius = prior_box(prior, lg).radius();
  const Eigen::VectorXd lam = lg.analytic_fisher(param({0.0, 0.0}), 50).diagonal();
  const double approx = ellipsoid_weight(lam, 50, eps_nats, radius);
  KLBallSpec spec{Setting::Online, param({0.0, 0.0}), nats_to_bits(eps_nats), {}, std::nullopt};
  const double mc = estimate_weight(spec, lg, 50, prior, 200000, 4).value;
  EXPECT_GT(mc, 0.0);
  EXPECT_LE(approx / mc, 2.0);
  EXPECT_GE(approx / mc, 0.5);
}

TEST(Fisher, LaplaceMeanAndCovariance) {
  const auto b = ModelFamily::bernoulli();
  SequenceSample s;
  for (int i = 0; i < 10; ++i) s.symbols.push_back(i < 3 ? 1 : 0);
  EXPECT_DOUBLE_EQ(laplace_posterior(b, s).mean[0], 0.3);
  SequenceSample h;
  for (int i = 0; i < 20; ++i) h.symbols.push_back(i % 2);
  const auto lh = laplace_posterior(b, h);
  EXPECT_DOUBLE_EQ(lh.mean[0], 0.5);
  SequenceSample hh = h;
  hh.symbols.insert(hh.symbols.end(), h.symbols.begin(), h.symbols.end());
  EXPECT_NEAR(laplace_posterior(b, hh).covariance(0, 0), 0.5 * lh.covariance(0, 0), 1e-15);
  EXPECT_THROW(laplace_posterior(b, symbols({1, 1, 1})), BoundaryError);
}

TEST(Fisher, LaplaceCloseToBetaPosterior) {
  SequenceSample s;
  for (int i = 0; i < 200; ++i) s.symbols.push_back(i < 120 ? 1 : 0);
  const auto lp = laplace_posterior(ModelFamily::bernoulli(), s);
  const double m = lp.mean[0], sd = std::sqrt(lp.covariance(0, 0));
  const int g = 1000;
  std::vector<double> p(g), q(g);
  double sp = 0, sq = 0;
  const double lbeta = std::lgamma(121) + std::lgamma(81) - std::lgamma(202);
  for (int i = 0; i < g; ++i) {
    const double t = (i + 0.5) / g;
    p[i] = std::exp(-0.5 * (t - m) * (t - m) / (sd * sd));
    q[i] = std::exp(120 * std::log(t) + 80 * std::log(1 - t) - lbeta);
    sp += p[i];
    sq += q[i];
  }
  double tv = 0.0;
  for (int i = 0; i < g; ++i) tv += 0.5 * std::abs(p[i] / sp - q[i] / sq);
  EXPECT_LE(tv, 0.05);
}

TEST(Fisher, LaplaceLinearGaussianIsLeastSquares) {
  const auto lg = ModelFamily::linear_gaussian(2, 0.5);
  const auto data = lg.sample_sequence(param({1.0, -2.0}), 40, 5);
  Matrix x(40, 2);
  Eigen::VectorXd y(40);
  for (int i = 0; i < 40; ++i) {
    x.row(i) = data.features[static_cast<std::size_t>(i)].transpose();
    y[i] = data.labels[static_cast<std::size_t>(i)];
  }
  const Eigen::VectorXd ols = (x.transpose() * x).ldlt().solve(x.transpose() * y);
  const auto lp = laplace_posterior(lg, data);
  EXPECT_LE((lp.mean - ols).norm(), 1e-10);
  EXPECT_TRUE(lp.covariance.isApprox(Matrix::Identity(2, 2) * 0.5 / 40.0));
}

// D(P0 || P) - 0.5 delta' I delta = O(|delta|^3): the fitted constant is
// stable as the radius shrinks, and exactly zero for the Gaussian model.
TEST(Fisher, KlFisherExpansionRemainder) {
  const auto b = ModelFamily::bernoulli();
  const double t0 = 0.3, info = 1.0 / (t0 * (1 - t0));
  std::vector<double> c;
  for (double r : {1e-1, 1e-2, 1e-3}) {
    const double p = t0 + r;
    const double d = t0 * std::log(t0 / p) + (1 - t0) * std::log((1 - t0) / (1 - p));
    c.push_back(std::abs(d - 0.5 * info * r * r) / (r * r * r));
  }
  EXPECT_LT(c[1] / c[2], 1.5);
  EXPECT_GT(c[1] / c[2], 1.0 / 1.5);
  EXPECT_LT(c[0] / c[2], 2.0);
  const auto lg = ModelFamily::linear_gaussian(2, 1.0);
  for (double r : {1e-1, 1e-2, 1e-3}) {
    const ParamVector t = param({r, -r});
    const double d = bits_to_nats(kl_to(lg, param({0.0, 0.0}), t, 1, Setting::Online));
    const double quad = 0.5 * t.dot(lg.analytic_fisher(param({0.0, 0.0}), 1) * t);
    EXPECT_LE(std::abs(d - quad), 1e-15);
  }
}

TEST(Fisher, AnalyticScaling) {
  const auto c = ModelFamily::categorical(3);
  const ParamVector t = param({0.3, 0.3});
  EXPECT_TRUE(c.analytic_fisher(t, 250).isApprox(250.0 * c.analytic_fisher(t, 1), 1e-14));
}

TEST(Fisher, DeepLinearShape) {
  const auto rows = deep_linear_spectrum({0, 1, 2}, 6, 9, 3);
  ASSERT_EQ(rows.size(), 3u);
  for (int i = 0; i < 6; ++i) EXPECT_NEAR(rows[0].singular_values[i], 1.0, 1e-14);
  EXPECT_DOUBLE_EQ(rows[0].median_condition, 1.0);
  for (const auto& r : rows) {
    EXPECT_EQ(r.singular_values.size(), 6);
    EXPECT_EQ(r.conditions.size(), 9u);
  }
  EXPECT_THROW(deep_linear_spectrum({1}, 1, 3, 0), ParameterError);
}

TEST(Fisher, TailMassRatio) {
  EXPECT_DOUBLE_EQ(tail_mass_ratio(param({3.0, 1.0, 0.5, 0.5})), 0.2);
  EXPECT_DOUBLE_EQ(tail_mass_ratio(param({0.0, 0.0})), 0.0);
}
