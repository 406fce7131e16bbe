#pragma once

#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "mixlab/mixture.hpp"

namespace mixlab {

enum class Setting { Online, Batch, Supervised };
enum class RegretMethod { ExactEnumeration, ExactSufficientStat, MonteCarlo };

inline std::string to_string(Setting s) {
  switch (s) {
    case Setting::Online: return "online";
    case Setting::Batch: return "batch";
    default: return "supervised";
  }
}

inline std::string to_string(RegretMethod m) {
  switch (m) {
    case RegretMethod::ExactEnumeration: return "exact-enum";
    case RegretMethod::ExactSufficientStat: return "exact-sufficient-stat";
    default: return "monte-carlo";
  }
}

// Finite feature alphabet with its distribution P_X, for the supervised
// setting. Labels range over the family's class alphabet.
struct SupervisedSetting {
  std::vector<Eigen::VectorXd> features;
  std::vector<double> feature_probs;

  void validate(const ModelFamily& family) const {
    if (features.empty() || features.size() != feature_probs.size())
      throw ParameterError("supervised setting needs one probability per feature");
    double s = 0.0;
    for (std::size_t i = 0; i < features.size(); ++i) {
      if (features[i].size() != family.feature_dim()) throw ParameterError("supervised feature has wrong dimension");
      if (feature_probs[i] < 0.0) throw ParameterError("feature probabilities must be nonnegative");
      s += feature_probs[i];
    }
    if (std::abs(s - 1.0) > 1e-9) throw ParameterError("feature probabilities must sum to 1");
  }
};

// Regret value in bits. Online regret is normalized by n; batch and
// supervised regret are per test symbol.
struct RegretReport {
  Setting setting = Setting::Online;
  double value = 0.0;
  RegretMethod method = RegretMethod::ExactEnumeration;
  std::optional<double> std_error;
  std::size_t n = 0;
};

namespace detail {

inline constexpr double kMaxEnumeration = 1048576.0;  // 2^20
inline constexpr double kMaxCompositions = 4.0e6;

inline double composition_count(int n, int k) {
  return std::exp(std::lgamma(n + k) - std::lgamma(n + 1.0) - std::lgamma(static_cast<double>(k)));
}

// Calls visit(symbols) for every sequence in A^n.
template <typename Visit>
void for_each_sequence(int alphabet, int n, Visit&& visit) {
  std::vector<int> seq(static_cast<std::size_t>(n), 0);
  while (true) {
    visit(std::span<const int>(seq));
    int pos = n - 1;
    while (pos >= 0 && seq[static_cast<std::size_t>(pos)] == alphabet - 1) seq[static_cast<std::size_t>(pos--)] = 0;
    if (pos < 0) return;
    ++seq[static_cast<std::size_t>(pos)];
  }
}

// A class of sequences that share P_theta for every theta: same sufficient
// statistics and (for batch use) the same final Markov context.
struct SequenceClass {
  std::vector<int> counts;
  int context = 0;
  double log_multiplicity = 0.0;
};

// Groups X^n into equivalence classes. Exchangeable families use count
// vectors with multinomial multiplicities; others enumerate.
inline std::vector<SequenceClass> sequence_classes(const ModelFamily& family, int n, bool track_context,
                                                   RegretMethod* method) {
  const int a = family.alphabet_size();
  std::vector<SequenceClass> out;
  if (family.exchangeable()) {
    if (composition_count(n, a) > kMaxCompositions)
      throw SizeError("too many count vectors for exact regret");
    for (auto& c : compositions(n, a)) out.push_back({std::move(c.counts), 0, c.log_multinomial});
    if (method) *method = RegretMethod::ExactSufficientStat;
    return out;
  }
  if (std::pow(static_cast<double>(a), n) > kMaxEnumeration)
    throw SizeError("sequence space too large for exact enumeration");
  std::map<std::pair<std::vector<int>, int>, double> mult;
  for_each_sequence(a, n, [&](std::span<const int> seq) {
    const int ctx = track_context && static_cast<int>(seq.size()) >= family.markov_order() && family.markov_order() > 0
                        ? family.context_index(seq)
                        : 0;
    mult[{family.sufficient_stats(seq), ctx}] += 1.0;
  });
  for (auto& [key, m] : mult) out.push_back({key.first, key.second, std::log(m)});
  if (method) *method = RegretMethod::ExactEnumeration;
  return out;
}

inline void require_sequence(const ModelFamily& family, const char* what) {
  if (!family.is_sequence()) throw ParameterError(std::string(what) + " needs a sequence family");
}

}  // namespace detail

// (1/n) D(P_theta0(X^n) || Q(X^n)) in bits.
inline RegretReport exact_regret_online(const Mixture& mix, const ParamVector& theta0, int n) {
  const auto& family = mix.family();
  detail::require_sequence(family, "exact_regret_online");
  family.validate(theta0);
  if (n < 1) throw ParameterError("exact_regret_online: n must be at least 1");
  RegretReport r{Setting::Online, 0.0, RegretMethod::ExactEnumeration, std::nullopt, static_cast<std::size_t>(n)};
  const auto classes = detail::sequence_classes(family, n, false, &r.method);
  const auto table0 = family.log_prob_table(theta0);
  const double warm = family.warmup_log_prob(static_cast<std::size_t>(n));
  const double total = parallel_sum(classes.size(), [&](std::size_t i) {
    const auto& c = classes[i];
    const double lp = warm + ModelFamily::dot_counts(c.counts, table0);
    if (lp == -kInf) return 0.0;
    const double lq = mix.log_marginal_stats(c.counts, static_cast<std::size_t>(n));
    if (lq == -kInf) return kInf;
    return std::exp(c.log_multiplicity + lp) * (lp - lq);
  });
  r.value = nats_to_bits(total) / n;
  return r;
}

// D(P_theta0(X_n | X^{n-1}) || Q(X_n | X^{n-1}) | X^{n-1}) in bits.
inline RegretReport exact_regret_batch(const Mixture& mix, const ParamVector& theta0, int n) {
  const auto& family = mix.family();
  detail::require_sequence(family, "exact_regret_batch");
  family.validate(theta0);
  if (n < 1) throw ParameterError("exact_regret_batch: n must be at least 1");
  RegretReport r{Setting::Batch, 0.0, RegretMethod::ExactEnumeration, std::nullopt, static_cast<std::size_t>(n)};
  const auto classes = detail::sequence_classes(family, n - 1, true, &r.method);
  const auto table0 = family.log_prob_table(theta0);
  const int a = family.alphabet_size();
  const int m = family.markov_order();
  const auto prefix_len = static_cast<std::size_t>(n - 1);
  const double total = parallel_sum(classes.size(), [&](std::size_t i) {
    const auto& c = classes[i];
    const double lp = family.warmup_log_prob(prefix_len) + ModelFamily::dot_counts(c.counts, table0);
    if (lp == -kInf) return 0.0;
    const double lq = mix.log_marginal_stats(c.counts, prefix_len);
    // Next-symbol conditionals; uniform during Markov warm-up.
    const bool warmup = static_cast<int>(prefix_len) < m;
    double d = 0.0;
    auto next = c.counts;
    for (int s = 0; s < a; ++s) {
      const std::size_t cell = static_cast<std::size_t>(c.context * a + s);
      const double lp_cond = warmup ? -std::log(static_cast<double>(a)) : table0[cell];
      if (lp_cond == -kInf) continue;
      double lq_cond;
      if (warmup) {
        lq_cond = -std::log(static_cast<double>(a));
      } else {
        ++next[cell];
        lq_cond = mix.log_marginal_stats(next, prefix_len + 1) - lq;
        --next[cell];
      }
      d += std::exp(lp_cond) * (lp_cond - lq_cond);
    }
    return std::exp(c.log_multiplicity + lp) * d;
  });
  r.value = nats_to_bits(total);
  return r;
}

// Pointwise batch regret D(P_theta0(X_n | x^{n-1}) || Q(X_n | x^{n-1})) for
// one realized training sequence, bits. Diagnostic only.
inline double pointwise_batch_regret(const Mixture& mix, const ParamVector& theta0, std::span<const int> training) {
  const auto& family = mix.family();
  detail::require_sequence(family, "pointwise_batch_regret");
  const auto q = predict_batch(mix, training);
  const auto p = family.conditional_probs(theta0, training);
  return nats_to_bits(kl_divergence(p, q.probs));
}

namespace detail {

// Per-node log P(y | x) for every (feature, label) cell of a finite setting.
inline std::vector<std::vector<double>> cell_log_tables(const Mixture& mix, const SupervisedSetting& setting) {
  const auto& family = mix.family();
  const int c = family.alphabet_size();
  std::vector<std::vector<double>> tables(mix.size());
  parallel_for(mix.size(), [&](std::size_t i) {
    auto& t = tables[i];
    t.reserve(setting.features.size() * static_cast<std::size_t>(c));
    for (const auto& x : setting.features) {
      const auto p = family.label_predictive(mix.nodes()[i], x).probs;
      for (double v : p) t.push_back(v > 0.0 ? std::log(v) : -kInf);
    }
  });
  return tables;
}

}  // namespace detail

// D(P_theta0(Y|X) || Q(Y|X; S) | X; S) in bits, exact over all training
// sets of size n drawn from the finite setting.
inline RegretReport exact_regret_supervised(const Mixture& mix, const ParamVector& theta0,
                                            const SupervisedSetting& setting, int n) {
  const auto& family = mix.family();
  if (!family.is_supervised() || family.continuous_labels())
    throw ParameterError("exact_regret_supervised needs a finite-label supervised family");
  family.validate(theta0);
  setting.validate(family);
  if (n < 0) throw ParameterError("exact_regret_supervised: n must be nonnegative");
  const int c = family.alphabet_size();
  const std::size_t nx = setting.features.size();
  const int cells = static_cast<int>(nx) * c;
  if (detail::composition_count(n, cells) > detail::kMaxCompositions)
    throw SizeError("too many training-set count vectors for exact supervised regret");

  std::vector<std::vector<double>> p0(nx);
  std::vector<double> log_cell0(static_cast<std::size_t>(cells));
  for (std::size_t j = 0; j < nx; ++j) {
    p0[j] = family.label_predictive(theta0, setting.features[j]).probs;
    for (int y = 0; y < c; ++y) {
      const double pc = setting.feature_probs[j] * p0[j][static_cast<std::size_t>(y)];
      log_cell0[j * c + y] = pc > 0.0 ? std::log(pc) : -kInf;
    }
  }
  const auto tables = detail::cell_log_tables(mix, setting);
  const auto comps = compositions(n, cells);
  const double total = parallel_sum(comps.size(), [&](std::size_t k) {
    const auto& comp = comps[k];
    const double lp = ModelFamily::dot_counts(comp.counts, log_cell0);
    if (lp == -kInf) return 0.0;
    std::vector<double> lpost(mix.size());
    for (std::size_t i = 0; i < mix.size(); ++i)
      lpost[i] = mix.log_prior()[i] + ModelFamily::dot_counts(comp.counts, tables[i]);
    const double z = log_sum_exp(lpost);
    if (z == -kInf) return kInf;
    double inner = 0.0;
    std::vector<double> terms(mix.size());
    for (std::size_t j = 0; j < nx; ++j) {
      if (setting.feature_probs[j] == 0.0) continue;
      std::vector<double> q(static_cast<std::size_t>(c));
      for (int y = 0; y < c; ++y) {
        for (std::size_t i = 0; i < mix.size(); ++i) terms[i] = lpost[i] - z + tables[i][j * c + y];
        q[static_cast<std::size_t>(y)] = std::exp(log_sum_exp(terms));
      }
      inner += setting.feature_probs[j] * kl_divergence(p0[j], q);
    }
    return std::exp(comp.log_multinomial + lp) * inner;
  });
  return {Setting::Supervised, nats_to_bits(total), RegretMethod::ExactSufficientStat, std::nullopt,
          static_cast<std::size_t>(n)};
}

// Monte-Carlo estimate of the regret from the pointwise log-ratio. For the
// supervised setting features come from `setting` when given, otherwise
// from the family's own feature distribution.
inline RegretReport mc_regret(const Mixture& mix, const ParamVector& theta0, int n, Setting which,
                              std::size_t n_mc, std::uint64_t seed,
                              const std::optional<SupervisedSetting>& setting = std::nullopt) {
  const auto& family = mix.family();
  family.validate(theta0);
  if (n_mc < 2) throw ParameterError("mc_regret: need at least 2 Monte-Carlo draws");
  if (which == Setting::Supervised) {
    if (!family.is_supervised()) throw ParameterError("supervised regret needs a supervised family");
    if (n < 0) throw ParameterError("mc_regret: n must be nonnegative");
    if (setting) setting->validate(family);
  } else {
    detail::require_sequence(family, "online/batch mc_regret");
    if (n < 1) throw ParameterError("mc_regret: n must be at least 1");
  }
  std::vector<double> vals(n_mc);
  parallel_for(n_mc, [&](std::size_t k) {
    Rng rng = make_rng(seed, k);
    if (which == Setting::Supervised) {
      auto draw_x = [&]() -> Eigen::VectorXd {
        if (!setting) return family.sample_feature(rng);
        return setting->features[static_cast<std::size_t>(ModelFamily::draw_index(setting->feature_probs, rng))];
      };
      SequenceSample train;
      for (int t = 0; t < n; ++t) {
        train.features.push_back(draw_x());
        train.labels.push_back(family.sample_label(theta0, train.features.back(), rng));
      }
      const Eigen::VectorXd x = draw_x();
      const double y = family.sample_label(theta0, x, rng);
      const auto lpost = mix.log_posterior(train);
      std::vector<double> terms(mix.size());
      for (std::size_t i = 0; i < mix.size(); ++i) terms[i] = lpost[i] + family.log_label_prob(mix.nodes()[i], x, y);
      vals[k] = nats_to_bits(family.log_label_prob(theta0, x, y) - log_sum_exp(terms));
      return;
    }
    const auto seq = family.sample_sequence(theta0, static_cast<std::size_t>(n), mix_seed(seed, k)).symbols;
    const auto table0 = family.log_prob_table(theta0);
    auto score = [&](std::span<const int> s, double* lp, double* lq) {
      const auto counts = family.sufficient_stats(s);
      *lp = family.warmup_log_prob(s.size()) + ModelFamily::dot_counts(counts, table0);
      *lq = mix.log_marginal_stats(counts, s.size());
    };
    double lp_n, lq_n;
    score(seq, &lp_n, &lq_n);
    if (which == Setting::Online) {
      vals[k] = nats_to_bits(lp_n - lq_n) / n;
      return;
    }
    double lp_prev, lq_prev;
    score(std::span<const int>(seq).first(seq.size() - 1), &lp_prev, &lq_prev);
    vals[k] = nats_to_bits((lp_n - lp_prev) - (lq_n - lq_prev));
  });
  const auto est = mean_and_stderr(vals);
  return {which, est.mean, RegretMethod::MonteCarlo, est.std_error, static_cast<std::size_t>(n)};
}

// R^b(n) - [n R^o(n) - (n-1) R^o(n-1)], bits.
inline double batch_online_identity(const Mixture& mix, const ParamVector& theta0, int n) {
  const double rb = exact_regret_batch(mix, theta0, n).value;
  const double total_n = n * exact_regret_online(mix, theta0, n).value;
  const double total_prev = n > 1 ? (n - 1) * exact_regret_online(mix, theta0, n - 1).value : 0.0;
  return rb - (total_n - total_prev);
}

// ---- strong lower bound: dominance mass --------------------------------

// Probability assignment over whole sequences: returns log Q(x^n) in nats.
using SequenceLearner = std::function<double(std::span<const int>)>;

inline SequenceLearner mixture_learner(const Mixture& mix) {
  return [&mix](std::span<const int> seq) {
    return mix.log_marginal_stats(mix.family().sufficient_stats(seq), seq.size());
  };
}

// Plug-in predictor: at time t uses the maximum-likelihood parameter of
// x^{t-1} (per-context relative frequencies); uniform before any data in a
// context.
inline SequenceLearner erm_plugin_learner(const ModelFamily& family) {
  detail::require_sequence(family, "erm_plugin_learner");
  return [family](std::span<const int> seq) {
    const int a = family.alphabet_size();
    const int m = family.markov_order();
    std::vector<int> counts(static_cast<std::size_t>(family.num_stats()), 0);
    std::vector<int> totals(static_cast<std::size_t>(family.contexts()), 0);
    double lq = 0.0;
    for (std::size_t t = 0; t < seq.size(); ++t) {
      if (static_cast<int>(t) < m) {
        lq -= std::log(static_cast<double>(a));
        continue;
      }
      const int ctx = m == 0 ? 0 : family.context_index(seq.first(t));
      const int tot = totals[static_cast<std::size_t>(ctx)];
      const std::size_t cell = static_cast<std::size_t>(ctx * a + seq[t]);
      if (tot == 0) {
        lq -= std::log(static_cast<double>(a));
      } else {
        if (counts[cell] == 0) return -kInf;
        lq += std::log(static_cast<double>(counts[cell]) / tot);
      }
      ++counts[cell];
      ++totals[static_cast<std::size_t>(ctx)];
    }
    return lq;
  };
}

// The single model P_{theta*}.
inline SequenceLearner fixed_model_learner(const ModelFamily& family, const ParamVector& theta) {
  family.validate(theta);
  return [family, theta](std::span<const int> seq) {
    SequenceSample s;
    s.symbols.assign(seq.begin(), seq.end());
    return family.log_likelihood(theta, s);
  };
}

struct DominanceReport {
  double mass = 0.0;
  double ci_halfwidth = 0.0;
  double ci_lower = 0.0;
  double ci_upper = 0.0;
  std::size_t draws = 0;
  double gamma = 0.0;
};

// Prior mass of {theta : D(P_theta || Q) - D(P_theta || Q_alt) > gamma}
// (bits), estimated with theta ~ prior and exact divergences over X^n.
inline DominanceReport dominance_mass(const Mixture& mix, int n, const SequenceLearner& alt, double gamma,
                                      std::size_t draws, std::uint64_t seed) {
  const auto& family = mix.family();
  detail::require_sequence(family, "dominance_mass");
  if (!(gamma > 0.0)) throw ParameterError("dominance_mass: gamma must be positive");
  if (draws < 1) throw ParameterError("dominance_mass: need at least one prior draw");
  const int a = family.alphabet_size();
  if (std::pow(static_cast<double>(a), n) > detail::kMaxEnumeration)
    throw SizeError("dominance_mass: sequence space too large");
  std::vector<std::vector<int>> stats;
  std::vector<double> log_q, log_alt;
  detail::for_each_sequence(a, n, [&](std::span<const int> seq) {
    stats.push_back(family.sufficient_stats(seq));
    log_q.push_back(mix.log_marginal_stats(stats.back(), seq.size()));
    log_alt.push_back(alt(seq));
  });
  const double warm = family.warmup_log_prob(static_cast<std::size_t>(n));
  std::vector<double> hit(draws);
  parallel_for(draws, [&](std::size_t k) {
    Rng rng = make_rng(seed, k);
    const auto theta = sample_prior(mix.prior(), family, rng);
    const auto table = family.log_prob_table(theta);
    double diff = 0.0;
    for (std::size_t s = 0; s < stats.size(); ++s) {
      const double lp = warm + ModelFamily::dot_counts(stats[s], table);
      if (lp == -kInf) continue;
      if (log_alt[s] == -kInf) {
        diff = -kInf;
        break;
      }
      if (log_q[s] == -kInf) {
        diff = kInf;
        continue;
      }
      diff += std::exp(lp) * (log_alt[s] - log_q[s]);
    }
    hit[k] = nats_to_bits(diff) > gamma ? 1.0 : 0.0;
  });
  const auto hits = static_cast<std::size_t>(pairwise_sum(hit));
  const auto ci = wilson_interval(hits, draws);
  return {ci.estimate, ci.halfwidth, ci.lower, ci.upper, draws, gamma};
}

}  // namespace mixlab
