#pragma once

#include <chrono>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

#include "mixlab/fisher.hpp"
#include "mixlab/regret.hpp"
#include "mixlab/sgld.hpp"
#include "mixlab/weight_bound.hpp"

namespace mixlab::acceptance {

enum class Level { Fast, Full };

struct CriterionResult {
  int id = 0;
  std::string name;
  bool passed = false;
  std::string detail;
  double seconds = 0.0;
  double time_limit = 0.0;
};

namespace detail {

inline std::string fmt(double v, int prec = 6) {
  std::ostringstream os;
  os.precision(prec);
  os << v;
  return os.str();
}

// Extra seeds for the stochastic criteria at the full level.
inline std::vector<std::uint64_t> seeds_for(Level level, std::uint64_t base) {
  if (level == Level::Fast) return {base};
  return {base, base + 101, base + 202, base + 303};
}

// Sample KS distance to a Beta(a, b) law; the CDF is integrated on a fine
// midpoint grid.
inline double ks_to_beta(std::vector<double> xs, double a, double b) {
  std::sort(xs.begin(), xs.end());
  const int grid = 200000;
  std::vector<double> cdf(grid + 1, 0.0);
  const double lnorm = std::lgamma(a) + std::lgamma(b) - std::lgamma(a + b);
  for (int i = 0; i < grid; ++i) {
    const double t = (i + 0.5) / grid;
    cdf[i + 1] = cdf[i] + std::exp((a - 1) * std::log(t) + (b - 1) * std::log1p(-t) - lnorm) / grid;
  }
  auto at = [&](double x) {
    const double pos = std::clamp(x, 0.0, 1.0) * grid;
    const int i = std::min(static_cast<int>(pos), grid - 1);
    return cdf[i] + (cdf[i + 1] - cdf[i]) * (pos - i);
  };
  double ks = 0.0;
  const double m = static_cast<double>(xs.size());
  for (std::size_t i = 0; i < xs.size(); ++i) {
    const double f = at(xs[i]);
    ks = std::max({ks, std::abs(f - i / m), std::abs(f - (i + 1) / m)});
  }
  return ks;
}

}  // namespace detail

// 1. regret_bound >= exact online regret - 1e-6 bits.
inline CriterionResult bound_sandwich(Level level) {
  CriterionResult r{1, "bound sandwich", true, "", 0.0, 120.0};
  double worst = kInf;
  std::string where;
  const auto bern = ModelFamily::bernoulli();
  const auto cat = ModelFamily::categorical(3);
  const PriorSpec bern_prior = PriorSpec::uniform(1001);
  const PriorSpec cat_prior = PriorSpec::uniform(201);
  const Mixture bern_mix(bern, bern_prior);
  const Mixture cat_mix(cat, cat_prior);
  std::vector<std::pair<bool, ParamVector>> cases;
  for (double t : {0.3, 0.5, 0.7}) cases.push_back({false, param({t})});
  for (double t : {0.3, 0.5, 0.7}) cases.push_back({true, param({t, (1.0 - t) / 2.0})});
  cases.push_back({true, param({1.0 / 3.0, 1.0 / 3.0})});
  for (auto seed : detail::seeds_for(level, 11)) {
    for (const auto& [is_cat, theta] : cases) {
      for (int n : {2, 8, 32, 128}) {
        const auto& family = is_cat ? cat : bern;
        const double exact = exact_regret_online(is_cat ? cat_mix : bern_mix, theta, n).value;
        const auto b = regret_bound(family, theta, is_cat ? cat_prior : bern_prior, n, Setting::Online, {}, 100000,
                                    mix_seed(seed, static_cast<std::uint64_t>(n)));
        const double slack = b.bound - exact;
        if (slack < worst) {
          worst = slack;
          where = family.name() + " theta0[0]=" + detail::fmt(theta[0], 4) + " n=" + std::to_string(n);
        }
        if (!(slack >= -1e-6)) r.passed = false;
      }
    }
  }
  r.detail = "min(bound - exact) = " + detail::fmt(worst) + " bits at " + where;
  return r;
}

// 2. Grid mixture reproduces the rule of succession.
inline CriterionResult laplace_rule(Level) {
  CriterionResult r{2, "laplace rule equivalence", true, "", 0.0, 5.0};
  const Mixture mix(ModelFamily::bernoulli(), PriorSpec::uniform(10000));
  double worst = 0.0;
  for (int trials = 0; trials <= 20; ++trials) {
    for (int s = 0; s <= trials; ++s) {
      std::vector<int> ctx(static_cast<std::size_t>(trials), 0);
      for (int i = 0; i < s; ++i) ctx[static_cast<std::size_t>(i)] = 1;
      const double p = predict_online(mix, ctx).probs[1];
      worst = std::max(worst, std::abs(p - (s + 1.0) / (trials + 2.0)));
    }
  }
  r.passed = worst <= 1e-4;
  r.detail = "max |Q(1|x^t) - (s+1)/(t+2)| = " + detail::fmt(worst);
  return r;
}

// 3. R^b(n) = n R^o(n) - (n-1) R^o(n-1).
inline CriterionResult batch_online_identity_check(Level) {
  CriterionResult r{3, "batch/online identity", true, "", 0.0, 10.0};
  const Mixture bern(ModelFamily::bernoulli(), PriorSpec::uniform(1001));
  const Mixture cat(ModelFamily::categorical(3), PriorSpec::uniform(101));
  double worst = 0.0;
  for (int n = 2; n <= 8; ++n) {
    for (double t : {0.3, 0.5}) worst = std::max(worst, std::abs(batch_online_identity(bern, param({t}), n)));
    worst = std::max(worst, std::abs(batch_online_identity(cat, param({0.2, 0.3}), n)));
  }
  r.passed = worst <= 1e-9;
  r.detail = "max |residual| = " + detail::fmt(worst) + " bits";
  return r;
}

// 4. n R^o(n) - (1/2) log2 n stays in a band of width <= 2 bits.
inline CriterionResult classical_scaling(Level) {
  CriterionResult r{4, "classical scaling", true, "", 0.0, 30.0};
  const Mixture mix(ModelFamily::bernoulli(), PriorSpec::uniform(1001));
  double lo = kInf, hi = -kInf;
  for (int n = 64; n <= 4096; n *= 2) {
    const auto rep = exact_regret_online(mix, param({0.5}), n);
    if (rep.method != RegretMethod::ExactSufficientStat) r.passed = false;
    const double v = n * rep.value - 0.5 * std::log2(static_cast<double>(n));
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  r.passed = r.passed && hi - lo <= 2.0;
  r.detail = "n R - log2(n)/2 in [" + detail::fmt(lo) + ", " + detail::fmt(hi) + "]";
  return r;
}

// 5. Theorem-1 bound above the exact regret, with eps^2 = k / (2 n log2 e).
inline CriterionResult theorem1_consistency(Level) {
  CriterionResult r{5, "theorem 1 consistency", true, "", 0.0, 30.0};
  const auto family = ModelFamily::bernoulli();
  const PriorSpec prior = PriorSpec::box(1, 0.5, 1001, 0.5);
  const Mixture mix(family, prior);
  const double radius = prior_box(prior, family).radius();
  std::ostringstream os;
  for (int n : {64, 256, 1024}) {
    const Matrix fim = family.analytic_fisher(param({0.5}), static_cast<std::size_t>(n));
    const auto t1 = theorem1_bound(eigen_spectrum(fim), static_cast<std::size_t>(n), radius);
    const double exact = exact_regret_online(mix, param({0.5}), n).value;
    const double eps_target = t1.k / (2.0 * n * kLog2e);
    const bool ok = t1.applicable && t1.bound_bits >= exact && std::abs(t1.epsilon_sq - eps_target) <= 1e-12;
    r.passed = r.passed && ok;
    os << "n=" << n << " bound " << detail::fmt(t1.bound_bits) << " exact " << detail::fmt(exact) << "; ";
  }
  r.detail = os.str();
  return r;
}

// 6. n R^b(n) in nats within [0.35, 0.65] k.
inline CriterionResult theorem2_rate(Level) {
  CriterionResult r{6, "theorem 2 rate", true, "", 0.0, 60.0};
  const Mixture mix(ModelFamily::bernoulli(), PriorSpec::uniform(1001));
  const int n = 2000;
  const double v = n * bits_to_nats(exact_regret_batch(mix, param({0.5}), n).value);
  r.passed = v >= 0.35 && v <= 0.65;
  r.detail = "n R^b = " + detail::fmt(v) + " nats (k = 1)";
  return r;
}

// 7. Prior mass where the plug-in learner beats the mixture by gamma bits.
inline CriterionResult dominance(Level level) {
  CriterionResult r{7, "dominance mass", true, "", 0.0, 60.0};
  const auto family = ModelFamily::bernoulli();
  const Mixture mix(family, PriorSpec::uniform(1001));
  const auto alt = erm_plugin_learner(family);
  std::ostringstream os;
  for (auto seed : detail::seeds_for(level, 5)) {
    for (double g : {1.0, 2.0, 3.0}) {
      const auto d = dominance_mass(mix, 4, alt, g, 10000, mix_seed(seed, static_cast<std::uint64_t>(g)));
      r.passed = r.passed && d.mass <= std::pow(2.0, -g) + 3.0 * d.ci_halfwidth;
      if (seed == 5) os << "gamma=" << g << " mass " << detail::fmt(d.mass) << "; ";
    }
  }
  r.detail = os.str();
  return r;
}

// 8. Empirical vs analytic Fisher, and eigensolver reconstruction.
inline CriterionResult fisher_agreement(Level) {
  CriterionResult r{8, "fisher agreement", true, "", 0.0, 60.0};
  const auto bern = ModelFamily::bernoulli();
  const double fb = empirical_fim(bern, param({0.5}), 100000, 8)(0, 0);
  const double eb = std::abs(fb - 4.0) / 4.0;
  const auto lg = ModelFamily::linear_gaussian(3, 1.0);
  const Matrix fl = empirical_fim(lg, param({0.5, -1.0, 0.25}), 100000, 9);
  const double el = (fl - Matrix::Identity(3, 3)).norm() / std::sqrt(3.0);
  Rng rng = make_rng(10);
  std::normal_distribution<double> normal(0.0, 1.0);
  Matrix m(50, 50);
  for (Eigen::Index i = 0; i < 50; ++i)
    for (Eigen::Index j = 0; j <= i; ++j) m(i, j) = m(j, i) = normal(rng);
  const auto eig = jacobi_eigen(m);
  const double recon = (eig.vectors * eig.values.asDiagonal() * eig.vectors.transpose() - m).norm() / m.norm();
  r.passed = eb <= 0.05 && el <= 0.05 && recon <= 1e-9;
  r.detail = "bernoulli rel err " + detail::fmt(eb) + ", linear-gaussian rel err " + detail::fmt(el) +
             ", reconstruction " + detail::fmt(recon);
  return r;
}

// 9. SGLD samples vs Beta(31, 21); ensemble predictive vs grid mixture.
inline CriterionResult sgld_fidelity(Level level) {
  CriterionResult r{9, "sgld fidelity", true, "", 0.0, 120.0};
  const auto family = ModelFamily::bernoulli();
  SequenceSample data;
  for (int i = 0; i < 50; ++i) data.symbols.push_back(i < 30 ? 1 : 0);
  const Mixture mix(family, PriorSpec::uniform(1001));
  const auto grid = predict_batch(mix, data.symbols);
  std::ostringstream os;
  for (auto seed : detail::seeds_for(level, 9)) {
    const auto chain = sgld_chain(family, data, PriorSpec::uniform(1001), SgldConfig{}, seed);
    std::vector<double> xs;
    for (const auto& t : chain.thetas) xs.push_back(t[0]);
    const double ks = detail::ks_to_beta(xs, 31.0, 21.0);
    const double tv = total_variation(ensemble_predict(chain, family, data.symbols), grid);
    r.passed = r.passed && ks <= 0.1 && tv <= 0.05 && chain.thetas.size() >= 10000;
    if (seed == 9) os << "KS " << detail::fmt(ks) << ", TV " << detail::fmt(tv) << ", kept " << chain.thetas.size();
  }
  r.detail = os.str();
  return r;
}

// 10. Structured data: lighter spectral tail and smaller gradients.
inline CriterionResult spectrum_experiment(Level level) {
  CriterionResult r{10, "spectrum experiment", true, "", 0.0, 300.0};
  const SoftmaxNet net{8, 8, 3};
  int wins = 0;
  const int seeds = 5;
  std::ostringstream os;
  const std::uint64_t base = level == Level::Fast ? 0 : 100;
  for (std::uint64_t s = base; s < base + seeds; ++s) {
    const auto a = fim_spectrum_experiment(DatasetKind::Structured, net, 200, s).report;
    const auto b = fim_spectrum_experiment(DatasetKind::RandomLabels, net, 200, s).report;
    const bool win = a.tail_mass_ratio < b.tail_mass_ratio && b.mean_grad_norm > a.mean_grad_norm;
    wins += win ? 1 : 0;
  }
  r.passed = wins >= 4;
  os << wins << " of " << seeds << " seeds ordered as expected";
  r.detail = os.str();
  return r;
}

// 11. Products of Gaussian matrices grow more ill-conditioned with depth.
inline CriterionResult deep_linear(Level) {
  CriterionResult r{11, "deep-linear ill-conditioning", true, "", 0.0, 60.0};
  const auto rows = deep_linear_spectrum({1, 2, 4, 8}, 16, 50, 11);
  std::ostringstream os;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (i > 0 && !(rows[i].median_condition > rows[i - 1].median_condition)) r.passed = false;
    os << "l=" << rows[i].layers << ": " << detail::fmt(rows[i].median_condition, 4) << "; ";
  }
  r.detail = os.str();
  return r;
}

// 12. Posterior weight of the KL ball at eps^2 = alpha k ln(n)/n.
inline CriterionResult chi2_weight(Level level) {
  CriterionResult r{12, "chi-square weight check", true, "", 0.0, 60.0};
  std::ostringstream os;
  for (auto seed : detail::seeds_for(level, 12)) {
    const auto c = chi2_weight_check(ModelFamily::bernoulli(), param({0.5}), 400, 1.5, 2000, 2000, seed);
    r.passed = r.passed && c.passes;
    if (seed == 12)
      os << "deficit " << detail::fmt(c.mean_deficit) << " +- " << detail::fmt(c.std_error) << " vs n^-alpha "
         << detail::fmt(c.threshold) << " (centred-posterior deficit " << detail::fmt(c.centred_deficit) << ")";
  }
  r.detail = os.str();
  return r;
}

using Criterion = std::function<CriterionResult(Level)>;

inline const std::vector<Criterion>& all_criteria() {
  static const std::vector<Criterion> list = {
      bound_sandwich, laplace_rule, batch_online_identity_check, classical_scaling, theorem1_consistency,
      theorem2_rate,  dominance,    fisher_agreement,            sgld_fidelity,     spectrum_experiment,
      deep_linear,    chi2_weight};
  return list;
}

// Runs one criterion, timing it; an exception counts as a failure.
inline CriterionResult run_criterion(int id, Level level) {
  const auto start = std::chrono::steady_clock::now();
  CriterionResult r;
  try {
    r = all_criteria().at(static_cast<std::size_t>(id - 1))(level);
  } catch (const std::exception& e) {
    r.id = id;
    r.passed = false;
    r.detail = std::string("exception: ") + e.what();
  }
  r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  if (level == Level::Fast && r.time_limit > 0.0 && r.seconds > r.time_limit) {
    r.passed = false;
    r.detail += " [over time limit " + detail::fmt(r.time_limit) + " s]";
  }
  return r;
}

inline std::string format_line(const CriterionResult& r) {
  std::ostringstream os;
  os << (r.passed ? "PASS" : "FAIL") << "  " << (r.id < 10 ? " " : "") << r.id << ". " << r.name << ": " << r.detail
     << " (" << detail::fmt(r.seconds, 3) << " s)";
  return os.str();
}

}  // namespace mixlab::acceptance
