#pragma once

#include <optional>
#include <variant>
#include <vector>

#include "mixlab/fisher.hpp"
#include "mixlab/mixture.hpp"
#include "mixlab/regret.hpp"

namespace mixlab {

// Theta_0 = {theta : divergence to theta0 <= epsilon_sq} (bits). Batch sets
// use `context` (x^{n-1}); supervised sets use the finite `features`
// alphabet and take the worst case over it.
struct KLBallSpec {
  Setting setting = Setting::Online;
  ParamVector theta0;
  double epsilon_sq = 0.0;
  std::vector<int> context;
  std::optional<SupervisedSetting> features;
};

namespace detail {

// (1/n) D(P0(X^n) || P(X^n)) for an order-m chain, by propagating the exact
// distribution of the current context. The warm-up symbols contribute 0.
inline double markov_online_kl(const ModelFamily& family, const std::vector<double>& p0, const std::vector<double>& p,
                               int n) {
  const int a = family.alphabet_size();
  const int m = family.markov_order();
  const int nc = family.contexts();
  std::vector<double> row_kl(static_cast<std::size_t>(nc));
  for (int c = 0; c < nc; ++c)
    row_kl[c] = kl_divergence(std::span(p0).subspan(c * a, a), std::span(p).subspan(c * a, a));
  std::vector<double> dist(static_cast<std::size_t>(nc), 1.0 / nc), next(static_cast<std::size_t>(nc));
  double total = 0.0;
  for (int t = m; t < n; ++t) {
    for (int c = 0; c < nc; ++c) {
      if (dist[c] == 0.0) continue;
      if (row_kl[c] == kInf) return kInf;
      total += dist[c] * row_kl[c];
    }
    std::fill(next.begin(), next.end(), 0.0);
    for (int c = 0; c < nc; ++c)
      for (int s = 0; s < a; ++s) next[(c * a + s) % nc] += dist[c] * p0[c * a + s];
    dist.swap(next);
  }
  return total / n;
}

inline double label_kl(const ModelFamily& family, const ParamVector& theta0, const ParamVector& theta,
                       const Eigen::VectorXd& x) {
  if (family.continuous_labels()) {
    const auto& g = std::get<LinearGaussian>(family.spec());
    const double r = x.dot(theta - theta0);
    return 0.5 * r * r / g.noise_var;
  }
  return kl_divergence(family.label_predictive(theta0, x).probs, family.label_predictive(theta, x).probs);
}

}  // namespace detail

// Divergence defining Theta_0, bits; +inf on an absolute-continuity failure.
inline double kl_to(const ModelFamily& family, const ParamVector& theta0, const ParamVector& theta, int n,
                    Setting setting, std::span<const int> context = {},
                    const std::optional<SupervisedSetting>& features = std::nullopt) {
  family.validate(theta0);
  family.validate(theta);
  if (family.is_sequence()) {
    if (setting == Setting::Supervised) throw ParameterError("supervised divergence needs a supervised family");
    if (setting == Setting::Batch) {
      const auto p0 = family.conditional_probs(theta0, context);
      const auto p = family.conditional_probs(theta, context);
      return nats_to_bits(kl_divergence(p0, p));
    }
    if (n < 1) throw ParameterError("kl_to: n must be at least 1");
    const auto p0 = family.prob_table(theta0);
    const auto p = family.prob_table(theta);
    if (family.markov_order() == 0) return nats_to_bits(kl_divergence(p0, p));
    return nats_to_bits(detail::markov_online_kl(family, p0, p, n));
  }
  if (features) {
    features->validate(family);
    double worst = 0.0, avg = 0.0;
    for (std::size_t j = 0; j < features->features.size(); ++j) {
      const double d = detail::label_kl(family, theta0, theta, features->features[j]);
      avg += features->feature_probs[j] * d;
      if (features->feature_probs[j] > 0.0) worst = std::max(worst, d);
    }
    return nats_to_bits(setting == Setting::Supervised ? worst : avg);
  }
  if (family.continuous_labels()) {
    // Expectation over x ~ N(0, Sigma); the worst case over R^f is unbounded,
    // so the supervised set also uses the average here.
    const auto& g = std::get<LinearGaussian>(family.spec());
    const Matrix cov = g.feature_cov.size() > 0 ? g.feature_cov : Matrix::Identity(g.features, g.features);
    const Eigen::VectorXd delta = theta - theta0;
    return nats_to_bits(0.5 * delta.dot(cov * delta) / g.noise_var);
  }
  throw NotAvailableError(family.name() + ": divergence needs a finite feature alphabet");
}

inline double kl_to(const ModelFamily& family, const KLBallSpec& spec, const ParamVector& theta, int n) {
  return kl_to(family, spec.theta0, theta, n, spec.setting, spec.context, spec.features);
}

inline bool ball_membership(const KLBallSpec& spec, const ParamVector& theta, const ModelFamily& family, int n) {
  return kl_to(family, spec, theta, n) <= spec.epsilon_sq;
}

enum class Measure { Prior, Posterior };

struct WeightEstimate {
  double value = 0.0;
  double ci_halfwidth = 0.0;
  double lower = 0.0;
  double upper = 0.0;
  std::size_t n_draws = 0;
  Measure measure = Measure::Prior;
  bool exact = false;
};

namespace detail {

// Divergences of the measure's support points (or draws) to theta0, with
// their probability weights (uniform for Monte-Carlo draws).
struct WeightedDivergences {
  std::vector<double> kl;
  std::vector<double> weight;
  bool exact = false;
};

inline WeightedDivergences prior_divergences(const KLBallSpec& spec, const ModelFamily& family, int n,
                                             const PriorSpec& prior, std::size_t n_mc, std::uint64_t seed) {
  validate_prior(prior, family);
  WeightedDivergences out;
  if (prior.is_atomic()) {
    out.exact = true;
    for (std::size_t i = 0; i < prior.atoms.size(); ++i) {
      out.kl.push_back(kl_to(family, spec, prior.atoms[i], n));
      out.weight.push_back(prior.atom_weights[i]);
    }
    return out;
  }
  if (n_mc < 1) throw ParameterError("estimate_weight: need at least one Monte-Carlo draw");
  out.kl.resize(n_mc);
  out.weight.assign(n_mc, 1.0 / static_cast<double>(n_mc));
  parallel_for(n_mc, [&](std::size_t i) {
    Rng rng = make_rng(seed, i);
    out.kl[i] = kl_to(family, spec, sample_prior(prior, family, rng), n);
  });
  return out;
}

inline WeightEstimate weight_at(const WeightedDivergences& w, double epsilon_sq, Measure measure) {
  WeightEstimate e;
  e.measure = measure;
  e.n_draws = w.kl.size();
  e.exact = w.exact;
  if (w.exact) {
    std::vector<double> in(w.kl.size());
    for (std::size_t i = 0; i < in.size(); ++i) in[i] = w.kl[i] <= epsilon_sq ? w.weight[i] : 0.0;
    e.value = std::clamp(pairwise_sum(in), 0.0, 1.0);
    e.lower = e.upper = e.value;
    return e;
  }
  std::size_t hits = 0;
  for (double k : w.kl) hits += k <= epsilon_sq ? 1 : 0;
  const auto ci = wilson_interval(hits, w.kl.size());
  e.value = ci.estimate;
  e.ci_halfwidth = ci.halfwidth;
  e.lower = ci.lower;
  e.upper = ci.upper;
  return e;
}

}  // namespace detail

// w(Theta_0) under the prior: exact for finite priors, Monte Carlo with a
// Wilson interval otherwise.
inline WeightEstimate estimate_weight(const KLBallSpec& spec, const ModelFamily& family, int n, const PriorSpec& prior,
                                      std::size_t n_mc, std::uint64_t seed) {
  if (n_mc < 1) throw ParameterError("estimate_weight: need at least one Monte-Carlo draw");
  if (spec.epsilon_sq < 0.0) throw ParameterError("estimate_weight: epsilon_sq must be nonnegative");
  return detail::weight_at(detail::prior_divergences(spec, family, n, prior, n_mc, seed), spec.epsilon_sq,
                           Measure::Prior);
}

// w(Theta_0 | data) as an exact sum over a posterior grid.
inline WeightEstimate estimate_weight(const KLBallSpec& spec, const ModelFamily& family, int n,
                                      const PosteriorGrid& posterior) {
  if (spec.epsilon_sq < 0.0) throw ParameterError("estimate_weight: epsilon_sq must be nonnegative");
  detail::WeightedDivergences w;
  w.exact = true;
  w.kl.resize(posterior.size());
  w.weight.resize(posterior.size());
  parallel_for(posterior.size(), [&](std::size_t i) {
    w.weight[i] = std::exp(posterior.log_weights[i]);
    w.kl[i] = w.weight[i] > 0.0 && family.in_domain(posterior.nodes[i]) ? kl_to(family, spec, posterior.nodes[i], n) : kInf;
  });
  auto e = detail::weight_at(w, spec.epsilon_sq, Measure::Posterior);
  e.n_draws = posterior.size();
  return e;
}

// Default search grid: 40 log-spaced points from 1e-4/n to 10 bits.
inline std::vector<double> default_epsilon_grid(int n, int points = 40) {
  std::vector<double> g(static_cast<std::size_t>(points));
  const double lo = std::log(1e-4 / std::max(n, 1));
  const double hi = std::log(10.0);
  for (int i = 0; i < points; ++i) g[i] = std::exp(lo + (hi - lo) * i / (points - 1));
  return g;
}

struct BoundRow {
  double epsilon_sq = 0.0;
  double weight = 0.0;        // prior weight (online) or expected posterior weight
  double weight_lower = 0.0;  // value used in the bound
  double log_term = 0.0;      // bits
  double bound = 0.0;         // bits
};

struct ContextDiagnostic {
  std::vector<int> counts;
  int context = 0;
  double probability = 0.0;
  double log_term = 0.0;  // -log2 w(Theta_0 | context) at the chosen epsilon
};

struct BoundReport {
  Setting setting = Setting::Online;
  std::size_t n = 0;
  std::vector<BoundRow> rows;
  double bound = kInf;
  double epsilon_sq = 0.0;
  bool unbounded = true;
  std::vector<ContextDiagnostic> contexts;
};

namespace detail {

inline void finish_bound(BoundReport& r) {
  for (const auto& row : r.rows) {
    if (row.bound < r.bound) {
      r.bound = row.bound;
      r.epsilon_sq = row.epsilon_sq;
      r.unbounded = false;
    }
  }
}

inline void check_grid(const std::vector<double>& grid) {
  if (grid.empty()) throw ParameterError("regret_bound: epsilon grid is empty");
  for (std::size_t i = 0; i < grid.size(); ++i) {
    if (grid[i] < 0.0) throw ParameterError("regret_bound: epsilon grid must be nonnegative");
    if (i > 0 && !(grid[i] > grid[i - 1])) throw ParameterError("regret_bound: epsilon grid must be increasing");
  }
}

// Expected -log2 w(Theta_0 | context) over P0-distributed contexts, for
// posterior weights given per context class by `log_post(class)` and node
// divergences given per Markov context by `node_kl(ctx)`.
template <typename Classes, typename LogPost, typename NodeKl>
void expected_posterior_terms(BoundReport& r, const std::vector<double>& grid, const Classes& classes,
                              const std::vector<double>& class_prob, LogPost&& log_post, NodeKl&& node_kl) {
  const std::size_t ne = grid.size();
  std::vector<std::vector<double>> log_terms(classes.size(), std::vector<double>(ne, 0.0));
  std::vector<std::vector<double>> weights(classes.size(), std::vector<double>(ne, 0.0));
  parallel_for(classes.size(), [&](std::size_t c) {
    if (class_prob[c] == 0.0) return;
    const auto lp = log_post(c);
    const auto& kl = node_kl(c);
    for (std::size_t e = 0; e < ne; ++e) {
      std::vector<double> in(lp.size());
      for (std::size_t i = 0; i < lp.size(); ++i) in[i] = kl[i] <= grid[e] ? std::exp(lp[i]) : 0.0;
      const double w = std::min(pairwise_sum(in), 1.0);
      weights[c][e] = w;
      log_terms[c][e] = w > 0.0 ? -std::log2(w) : kInf;
    }
  });
  for (std::size_t e = 0; e < ne; ++e) {
    std::vector<double> lt(classes.size()), wt(classes.size());
    for (std::size_t c = 0; c < classes.size(); ++c) {
      if (class_prob[c] == 0.0) continue;
      lt[c] = log_terms[c][e] == kInf ? kInf : class_prob[c] * log_terms[c][e];
      wt[c] = class_prob[c] * weights[c][e];
    }
    BoundRow row;
    row.epsilon_sq = grid[e];
    row.weight = pairwise_sum(wt);
    row.weight_lower = row.weight;
    row.log_term = pairwise_sum(lt);
    row.bound = grid[e] + row.log_term;
    r.rows.push_back(row);
  }
  finish_bound(r);
  const std::size_t best =
      static_cast<std::size_t>(std::find_if(grid.begin(), grid.end(), [&](double g) { return g == r.epsilon_sq; }) - grid.begin());
  if (r.unbounded) return;
  for (std::size_t c = 0; c < classes.size(); ++c) {
    if (class_prob[c] == 0.0) continue;
    r.contexts.push_back({classes[c].counts, classes[c].context, class_prob[c], log_terms[c][best]});
  }
}

}  // namespace detail

// min over the epsilon grid of the regret bound, bits.
//   online:     eps^2 + (1/n) log2(1 / w_lower(Theta_0))
//   batch:      eps^2 + E_{x^{n-1}} log2(1 / w(Theta_0^b(x^{n-1}) | x^{n-1}))
//   supervised: eps^2 + E_S log2(1 / w(Theta_0^s | S))
// The posterior forms are exact sums over the mixture's nodes.
inline BoundReport regret_bound(const ModelFamily& family, const ParamVector& theta0, const PriorSpec& prior, int n,
                                Setting setting, std::vector<double> epsilon_grid, std::size_t n_mc,
                                std::uint64_t seed, const std::optional<SupervisedSetting>& features = std::nullopt) {
  family.validate(theta0);
  if (epsilon_grid.empty()) epsilon_grid = default_epsilon_grid(n);
  detail::check_grid(epsilon_grid);
  BoundReport r;
  r.setting = setting;
  r.n = static_cast<std::size_t>(std::max(n, 0));

  if (setting == Setting::Online) {
    if (n < 1) throw ParameterError("regret_bound: n must be at least 1");
    KLBallSpec spec{setting, theta0, 0.0, {}, features};
    const auto draws = detail::prior_divergences(spec, family, n, prior, n_mc, seed);
    for (double eps : epsilon_grid) {
      const auto w = detail::weight_at(draws, eps, Measure::Prior);
      BoundRow row{eps, w.value, w.lower, w.lower > 0.0 ? -std::log2(w.lower) / n : kInf, 0.0};
      row.bound = eps + row.log_term;
      r.rows.push_back(row);
    }
    detail::finish_bound(r);
    return r;
  }

  const Mixture mix(family, prior);
  if (setting == Setting::Batch) {
    detail::require_sequence(family, "batch regret_bound");
    if (n < 1) throw ParameterError("regret_bound: n must be at least 1");
    const auto classes = detail::sequence_classes(family, n - 1, true, nullptr);
    const auto table0 = family.log_prob_table(theta0);
    const auto prefix = static_cast<std::size_t>(n - 1);
    const bool warmup = n - 1 < family.markov_order();
    // Node divergences per Markov context; a warm-up context is uniform.
    const int a = family.alphabet_size();
    std::vector<std::vector<double>> ctx_kl(static_cast<std::size_t>(family.contexts()),
                                            std::vector<double>(mix.size(), 0.0));
    if (!warmup) {
      const auto p0 = family.prob_table(theta0);
      for (int c = 0; c < family.contexts(); ++c) {
        parallel_for(mix.size(), [&](std::size_t i) {
          const auto t = mix.log_table(i);
          std::vector<double> p(static_cast<std::size_t>(a));
          for (int s = 0; s < a; ++s) p[s] = std::exp(t[c * a + s]);
          ctx_kl[c][i] = nats_to_bits(kl_divergence(std::span(p0).subspan(c * a, a), p));
        });
      }
    }
    std::vector<double> prob(classes.size());
    for (std::size_t c = 0; c < classes.size(); ++c) {
      const double lp = family.warmup_log_prob(prefix) + ModelFamily::dot_counts(classes[c].counts, table0);
      prob[c] = lp == -kInf ? 0.0 : std::exp(classes[c].log_multiplicity + lp);
    }
    detail::expected_posterior_terms(
        r, epsilon_grid, classes, prob,
        [&](std::size_t c) {
          std::vector<double> ll(mix.size());
          for (std::size_t i = 0; i < mix.size(); ++i) ll[i] = ModelFamily::dot_counts(classes[c].counts, mix.log_table(i));
          return mix.normalize(ll);
        },
        [&](std::size_t c) -> const std::vector<double>& { return ctx_kl[static_cast<std::size_t>(classes[c].context)]; });
    return r;
  }

  // Supervised.
  if (!family.is_supervised() || family.continuous_labels() || !features)
    throw NotAvailableError("supervised regret_bound needs a finite-label family and a finite feature alphabet");
  features->validate(family);
  if (n < 0) throw ParameterError("regret_bound: n must be nonnegative");
  const int c = family.alphabet_size();
  const std::size_t nx = features->features.size();
  const int cells = static_cast<int>(nx) * c;
  if (detail::composition_count(n, cells) > detail::kMaxCompositions)
    throw SizeError("too many training-set count vectors for the supervised bound");
  std::vector<double> log_cell0(static_cast<std::size_t>(cells));
  for (std::size_t j = 0; j < nx; ++j) {
    const auto p0 = family.label_predictive(theta0, features->features[j]).probs;
    for (int y = 0; y < c; ++y) {
      const double pc = features->feature_probs[j] * p0[static_cast<std::size_t>(y)];
      log_cell0[j * c + y] = pc > 0.0 ? std::log(pc) : -kInf;
    }
  }
  const auto tables = detail::cell_log_tables(mix, *features);
  std::vector<double> node_kl(mix.size());
  parallel_for(mix.size(), [&](std::size_t i) {
    node_kl[i] = kl_to(family, theta0, mix.nodes()[i], std::max(n, 1), Setting::Supervised, {}, features);
  });
  std::vector<detail::SequenceClass> classes;
  for (auto& comp : compositions(n, cells)) classes.push_back({std::move(comp.counts), 0, comp.log_multinomial});
  std::vector<double> prob(classes.size());
  for (std::size_t k = 0; k < classes.size(); ++k) {
    const double lp = ModelFamily::dot_counts(classes[k].counts, log_cell0);
    prob[k] = lp == -kInf ? 0.0 : std::exp(classes[k].log_multiplicity + lp);
  }
  detail::expected_posterior_terms(
      r, epsilon_grid, classes, prob,
      [&](std::size_t k) {
        std::vector<double> ll(mix.size());
        for (std::size_t i = 0; i < mix.size(); ++i) ll[i] = ModelFamily::dot_counts(classes[k].counts, tables[i]);
        return mix.normalize(ll);
      },
      [&](std::size_t) -> const std::vector<double>& { return node_kl; });
  return r;
}

// ---- chi-square weight check -------------------------------------------

struct Chi2Report {
  bool skipped = false;
  double epsilon_sq = 0.0;       // nats
  double epsilon_sq_bits = 0.0;
  double threshold = 0.0;        // n^{-alpha}
  double mean_deficit = 0.0;     // E[1 - w(Theta_0^b | x^{n-1})]
  double std_error = 0.0;
  double weight_lower = 1.0;     // 1 - mean_deficit
  double centred_deficit = 0.0;  // same with the Gaussian centred at theta0
  bool passes = false;
};

// Monte Carlo over training sequences x^{n-1} ~ P0 and draws from the
// Laplace posterior N(mle(x^{n-1}), I^{-1}(theta0) / (n-1)); Theta_0^b uses
// the exact divergence with eps^2 = alpha k ln(n) / n nats.
inline Chi2Report chi2_weight_check(const ModelFamily& family, const ParamVector& theta0, int n, double alpha,
                                    std::size_t n_data, std::size_t n_draws, std::uint64_t seed) {
  if (!family.is_sequence() || !family.memoryless() || !family.has_analytic_fisher())
    throw NotAvailableError(family.name() + ": chi-square check needs a memoryless family with analytic Fisher");
  family.validate(theta0);
  if (!(alpha >= 1.0)) throw ParameterError("chi2_weight_check: alpha must be at least 1");
  if (n < 1) throw ParameterError("chi2_weight_check: n must be at least 1");
  if (n_data < 2 || n_draws < 1) throw ParameterError("chi2_weight_check: need Monte-Carlo draws");
  Chi2Report r;
  const int k = family.dimension();
  r.threshold = std::pow(static_cast<double>(n), -alpha);
  r.epsilon_sq = alpha * k * std::log(static_cast<double>(n)) / n;
  r.epsilon_sq_bits = nats_to_bits(r.epsilon_sq);
  if (n == 1) {
    r.skipped = true;
    return r;
  }
  const Matrix cov = family.analytic_fisher(theta0, static_cast<std::size_t>(n - 1)).inverse();
  const Matrix chol = Eigen::LLT<Matrix>(cov).matrixL();
  const auto p0 = family.prob_table(theta0);
  auto inside = [&](const ParamVector& theta) {
    if (!family.in_domain(theta)) return false;
    return kl_divergence(p0, family.prob_table(theta)) <= r.epsilon_sq;
  };
  std::vector<double> deficit(n_data), centred(n_data);
  parallel_for(n_data, [&](std::size_t s) {
    const auto data = family.sample_sequence(theta0, static_cast<std::size_t>(n - 1), mix_seed(seed, 2 * s));
    const auto counts = family.sufficient_stats(data.symbols);
    ParamVector mle(k);
    if (k == 1 && family.alphabet_size() == 2) {
      mle[0] = counts[1] / static_cast<double>(n - 1);
    } else {
      for (int j = 0; j < k; ++j) mle[j] = counts[static_cast<std::size_t>(j)] / static_cast<double>(n - 1);
    }
    Rng rng = make_rng(seed, 2 * s + 1);
    std::normal_distribution<double> normal(0.0, 1.0);
    std::size_t miss = 0, miss_c = 0;
    Eigen::VectorXd z(k);
    for (std::size_t t = 0; t < n_draws; ++t) {
      for (int j = 0; j < k; ++j) z[j] = normal(rng);
      const Eigen::VectorXd step = chol * z;
      miss += inside(mle + step) ? 0 : 1;
      miss_c += inside(theta0 + step) ? 0 : 1;
    }
    deficit[s] = static_cast<double>(miss) / static_cast<double>(n_draws);
    centred[s] = static_cast<double>(miss_c) / static_cast<double>(n_draws);
  });
  const auto est = mean_and_stderr(deficit);
  r.mean_deficit = est.mean;
  r.std_error = est.std_error;
  r.weight_lower = 1.0 - est.mean;
  r.centred_deficit = mean_and_stderr(centred).mean;
  r.passes = r.mean_deficit <= r.threshold + 3.0 * r.std_error;
  return r;
}

}  // namespace mixlab
