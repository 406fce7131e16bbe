#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <span>
#include <vector>

#include "mixlab/error.hpp"
#include "mixlab/model_family.hpp"
#include "mixlab/numeric.hpp"

namespace mixlab {

// Piecewise-constant relative density along one coordinate. `breaks` spans
// the coordinate's interval; density[i] applies on [breaks[i], breaks[i+1]).
struct PiecewiseDensity {
  std::vector<double> breaks;
  std::vector<double> density;

  double at(double x) const {
    if (density.empty()) return 1.0;
    for (std::size_t i = 0; i + 1 < breaks.size(); ++i)
      if (x < breaks[i + 1]) return density[i];
    return density.back();
  }
};

// Prior w(theta). Uniform priors live on a box (the family's natural
// domain when no box is given) intersected with the family domain, and are
// discretized on a trapezoid tensor grid for d <= 3 or by prior particles
// otherwise. Atom priors are finite hypothesis classes.
struct PriorSpec {
  enum class Kind { Uniform, Atoms };

  Kind kind = Kind::Uniform;
  ParamVector lower;
  ParamVector upper;
  int grid = 1001;
  std::vector<PiecewiseDensity> pieces;
  std::vector<ParamVector> atoms;
  std::vector<double> atom_weights;
  std::size_t particles = 20000;
  std::uint64_t particle_seed = 0;

  static PriorSpec uniform(int grid_nodes) {
    PriorSpec p;
    p.grid = grid_nodes;
    return p;
  }

  // Uniform on [center - a, center + a]^d.
  static PriorSpec box(int d, double a, int grid_nodes, double center = 0.0) {
    PriorSpec p;
    p.lower = ParamVector::Constant(d, center - a);
    p.upper = ParamVector::Constant(d, center + a);
    p.grid = grid_nodes;
    return p;
  }

  static PriorSpec finite(std::vector<ParamVector> points, std::vector<double> weights = {}) {
    PriorSpec p;
    p.kind = Kind::Atoms;
    if (weights.empty()) weights.assign(points.size(), 1.0 / static_cast<double>(points.size()));
    p.atoms = std::move(points);
    p.atom_weights = std::move(weights);
    return p;
  }

  static PriorSpec point_mass(const ParamVector& theta) { return finite({theta}, {1.0}); }

  bool is_atomic() const { return kind == Kind::Atoms; }

  // Largest over smallest piecewise density value; 1 for a flat prior.
  double density_ratio() const {
    double lo = kInf, hi = 0.0;
    for (const auto& pd : pieces)
      for (double v : pd.density) {
        lo = std::min(lo, v);
        hi = std::max(hi, v);
      }
    return hi > 0.0 ? hi / lo : 1.0;
  }
};

struct Box {
  ParamVector lower;
  ParamVector upper;

  // Radius of the ball enclosing the box around its center: R^2 = sum a_i^2,
  // which is a^2 d for a cube of half-width a.
  double radius() const { return (0.5 * (upper - lower)).norm(); }
};

inline Box prior_box(const PriorSpec& prior, const ModelFamily& family) {
  Box b{prior.lower, prior.upper};
  const int d = family.dimension();
  if (b.lower.size() == 0) b.lower = family.lower_bounds();
  if (b.upper.size() == 0) b.upper = family.upper_bounds();
  if (b.lower.size() != d || b.upper.size() != d) throw ParameterError("prior box has wrong dimension");
  for (int i = 0; i < d; ++i) {
    if (!std::isfinite(b.lower[i]) || !std::isfinite(b.upper[i]))
      throw ParameterError(family.name() + ": uniform prior needs a bounded box");
    if (!(b.lower[i] < b.upper[i])) throw ParameterError("prior box must have lower < upper");
  }
  return b;
}

inline void validate_prior(const PriorSpec& prior, const ModelFamily& family) {
  if (prior.is_atomic()) {
    if (prior.atoms.empty() || prior.atoms.size() != prior.atom_weights.size())
      throw ParameterError("finite prior needs one weight per atom");
    double s = 0.0;
    for (std::size_t i = 0; i < prior.atoms.size(); ++i) {
      family.validate(prior.atoms[i]);
      if (prior.atom_weights[i] < 0.0) throw ParameterError("prior weights must be nonnegative");
      s += prior.atom_weights[i];
    }
    if (std::abs(s - 1.0) > 1e-12) throw ParameterError("prior weights must sum to 1");
    return;
  }
  const Box b = prior_box(prior, family);
  if (prior.grid < 2) throw ParameterError("uniform prior needs at least 2 grid nodes per dimension");
  if (!prior.pieces.empty()) {
    if (static_cast<int>(prior.pieces.size()) != family.dimension())
      throw ParameterError("piecewise prior needs one density per coordinate");
    for (const auto& pd : prior.pieces) {
      if (pd.breaks.size() != pd.density.size() + 1) throw ParameterError("piecewise prior: breaks/density mismatch");
      for (double v : pd.density)
        if (!(v > 0.0)) throw ParameterError("piecewise prior densities must be positive");
    }
  }
  (void)b;
}

// Draw theta ~ w. Uniform priors on non-box domains use rejection.
inline ParamVector sample_prior(const PriorSpec& prior, const ModelFamily& family, Rng& rng) {
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  if (prior.is_atomic()) {
    const int i = ModelFamily::draw_index(prior.atom_weights, rng);
    return prior.atoms[static_cast<std::size_t>(i)];
  }
  const Box b = prior_box(prior, family);
  const int d = family.dimension();
  for (int attempt = 0; attempt < 100000; ++attempt) {
    ParamVector theta(d);
    for (int j = 0; j < d; ++j) {
      if (prior.pieces.empty()) {
        theta[j] = b.lower[j] + (b.upper[j] - b.lower[j]) * unif(rng);
        continue;
      }
      const auto& pd = prior.pieces[static_cast<std::size_t>(j)];
      std::vector<double> mass(pd.density.size());
      for (std::size_t k = 0; k < mass.size(); ++k) mass[k] = pd.density[k] * (pd.breaks[k + 1] - pd.breaks[k]);
      const double total = std::accumulate(mass.begin(), mass.end(), 0.0);
      for (double& m : mass) m /= total;
      const auto k = static_cast<std::size_t>(ModelFamily::draw_index(mass, rng));
      theta[j] = pd.breaks[k] + (pd.breaks[k + 1] - pd.breaks[k]) * unif(rng);
    }
    if (family.in_domain(theta)) return theta;
  }
  throw ParameterError("prior box does not intersect the family domain");
}

// Discretized (posterior) distribution over parameter nodes.
struct PosteriorGrid {
  std::vector<ParamVector> nodes;
  std::vector<double> log_weights;  // normalized; -inf marks excluded nodes
  bool stochastic = false;          // nodes are prior particles, not a grid

  std::size_t size() const { return nodes.size(); }

  double weight_sum() const {
    std::vector<double> w(log_weights.size());
    for (std::size_t i = 0; i < w.size(); ++i) w[i] = std::exp(log_weights[i]);
    return pairwise_sum(w);
  }
};

// The Bayesian mixture Q = sum_i w_i P_{theta_i} over a fixed discretization
// of the prior. Sequence families cache per-node log symbol tables so that
// any sequence is scored from its sufficient statistics.
class Mixture {
 public:
  Mixture(ModelFamily family, PriorSpec prior) : family_(std::move(family)), prior_(std::move(prior)) {
    validate_prior(prior_, family_);
    build();
  }

  const ModelFamily& family() const { return family_; }
  const PriorSpec& prior() const { return prior_; }
  std::size_t size() const { return nodes_.size(); }
  const std::vector<ParamVector>& nodes() const { return nodes_; }
  std::span<const double> log_prior() const { return log_prior_; }
  bool stochastic() const { return stochastic_; }
  std::size_t full_grid_size() const { return full_size_; }

  std::span<const double> log_table(std::size_t node) const {
    const auto k = static_cast<std::size_t>(family_.num_stats());
    return std::span<const double>(tables_).subspan(node * k, k);
  }

  // log P_{theta_i}(data) for every node.
  std::vector<double> node_log_likelihoods(const SequenceSample& data) const {
    family_.validate_data(data);
    std::vector<double> ll(size());
    if (family_.is_sequence()) {
      const auto counts = family_.sufficient_stats(data.symbols);
      const double warm = family_.warmup_log_prob(data.symbols.size());
      parallel_for(size(), [&](std::size_t i) { ll[i] = warm + ModelFamily::dot_counts(counts, log_table(i)); });
      return ll;
    }
    parallel_for(size(), [&](std::size_t i) {
      double s = 0.0;
      for (std::size_t t = 0; t < data.labels.size(); ++t)
        s += family_.log_label_prob(nodes_[i], data.features[t], data.labels[t]);
      ll[i] = s;
    });
    return ll;
  }

  // log Q from sufficient statistics; -inf when no node explains the data.
  double log_marginal_stats(std::span<const int> counts, std::size_t n) const {
    std::vector<double> terms(size());
    for (std::size_t i = 0; i < size(); ++i) terms[i] = log_prior_[i] + ModelFamily::dot_counts(counts, log_table(i));
    return family_.warmup_log_prob(n) + log_sum_exp(terms);
  }

  double log_marginal(const SequenceSample& data) const {
    const auto ll = node_log_likelihoods(data);
    std::vector<double> terms(size());
    for (std::size_t i = 0; i < size(); ++i) terms[i] = log_prior_[i] + ll[i];
    const double lq = log_sum_exp(terms);
    if (lq == -kInf) throw DegenerateEvidenceError("every prior node assigns zero probability to the data");
    return lq;
  }

  // Normalized log posterior weights over the stored nodes.
  std::vector<double> log_posterior(const SequenceSample& data) const {
    return normalize(node_log_likelihoods(data));
  }

  // Log posterior from per-node log-likelihoods.
  std::vector<double> normalize(std::span<const double> ll) const {
    std::vector<double> lp(size());
    for (std::size_t i = 0; i < size(); ++i) lp[i] = log_prior_[i] + ll[i];
    const double z = log_sum_exp(lp);
    if (z == -kInf) throw DegenerateEvidenceError("every prior node assigns zero probability to the data");
#ifndef MIXLAB_MUTATE_BREAK_NORMALIZATION
    for (double& v : lp) v -= z;
#endif
    return lp;
  }

  PosteriorGrid posterior_grid(std::span<const double> log_post) const {
    PosteriorGrid g;
    g.stochastic = stochastic_;
    g.nodes.reserve(full_size_);
    g.log_weights.reserve(full_size_);
    std::size_t next = 0;
    for (std::size_t i = 0; i < full_size_; ++i) {
      if (next < active_.size() && active_[next] == i) {
        g.nodes.push_back(nodes_[next]);
        g.log_weights.push_back(log_post[next]);
        ++next;
      } else {
        g.nodes.push_back(excluded_node(i));
        g.log_weights.push_back(-kInf);
      }
    }
    return g;
  }

  // Q(. | context) for sequence families from given log posterior weights.
  PredictiveDistribution predict_sequence(std::span<const double> log_post, std::span<const int> context) const {
    const int a = family_.alphabet_size();
    const int m = family_.markov_order();
    std::vector<double> probs(static_cast<std::size_t>(a), 0.0);
    if (static_cast<int>(context.size()) < m) {
      std::vector<double> w(size());
      for (std::size_t i = 0; i < size(); ++i) w[i] = std::exp(log_post[i]);
      const double total = pairwise_sum(w);
      for (double& p : probs) p = total / a;
      return PredictiveDistribution{probs, {}, {}, 0.0};
    }
    const int ctx = m == 0 ? 0 : family_.context_index(context);
    std::vector<double> terms(size());
    for (int s = 0; s < a; ++s) {
      for (std::size_t i = 0; i < size(); ++i) terms[i] = log_post[i] + log_table(i)[static_cast<std::size_t>(ctx * a + s)];
      probs[static_cast<std::size_t>(s)] = std::exp(log_sum_exp(terms));
    }
    return PredictiveDistribution{probs, {}, {}, 0.0};
  }

  PredictiveDistribution predict_label(std::span<const double> log_post, const Eigen::VectorXd& x) const {
    if (family_.continuous_labels()) {
      PredictiveDistribution p;
      for (std::size_t i = 0; i < size(); ++i) {
        if (log_post[i] == -kInf) continue;
        const auto comp = family_.label_predictive(nodes_[i], x);
        p.component_weights.push_back(std::exp(log_post[i]));
        p.component_means.push_back(comp.component_means[0]);
        p.component_sd = comp.component_sd;
      }
      return p;
    }
    const int c = family_.alphabet_size();
    std::vector<double> probs(static_cast<std::size_t>(c), 0.0);
    std::vector<std::vector<double>> per_node(size());
    parallel_for(size(), [&](std::size_t i) {
      if (log_post[i] == -kInf) return;
      per_node[i] = family_.label_predictive(nodes_[i], x).probs;
    });
    for (int y = 0; y < c; ++y) {
      std::vector<double> terms(size());
      for (std::size_t i = 0; i < size(); ++i)
        terms[i] = per_node[i].empty() ? 0.0 : std::exp(log_post[i]) * per_node[i][static_cast<std::size_t>(y)];
      probs[static_cast<std::size_t>(y)] = pairwise_sum(terms);
    }
    return PredictiveDistribution{probs, {}, {}, 0.0};
  }

 private:
  void build() {
    const int d = family_.dimension();
    if (prior_.is_atomic()) {
      nodes_ = prior_.atoms;
      for (double w : prior_.atom_weights) log_prior_.push_back(w > 0.0 ? std::log(w) : -kInf);
      full_size_ = nodes_.size();
      for (std::size_t i = 0; i < full_size_; ++i) active_.push_back(i);
    } else if (d <= 3) {
      build_grid(d);
    } else {
      stochastic_ = true;
      Rng rng = make_rng(prior_.particle_seed, 0x5EED);
      const double lw = -std::log(static_cast<double>(prior_.particles));
      for (std::size_t i = 0; i < prior_.particles; ++i) {
        nodes_.push_back(sample_prior(prior_, family_, rng));
        log_prior_.push_back(lw);
        active_.push_back(i);
      }
      full_size_ = nodes_.size();
    }
    if (family_.is_sequence()) {
      const auto k = static_cast<std::size_t>(family_.num_stats());
      tables_.resize(nodes_.size() * k);
      parallel_for(nodes_.size(), [&](std::size_t i) {
        const auto t = family_.log_prob_table(nodes_[i]);
        std::copy(t.begin(), t.end(), tables_.begin() + static_cast<std::ptrdiff_t>(i * k));
      });
    }
  }

  ParamVector grid_node(std::size_t flat) const {
    const int d = static_cast<int>(box_.lower.size());
    ParamVector theta(d);
    const auto g = static_cast<std::size_t>(prior_.grid);
    for (int j = d - 1; j >= 0; --j) {
      const std::size_t idx = flat % g;
      flat /= g;
      theta[j] = box_.lower[j] + (box_.upper[j] - box_.lower[j]) * static_cast<double>(idx) / static_cast<double>(g - 1);
    }
    return theta;
  }

  ParamVector excluded_node(std::size_t flat) const { return grid_node(flat); }

  // Trapezoid tensor grid: end nodes carry half-cell weight.
  void build_grid(int d) {
    box_ = prior_box(prior_, family_);
    const auto g = static_cast<std::size_t>(prior_.grid);
    full_size_ = 1;
    for (int j = 0; j < d; ++j) full_size_ *= g;
    std::vector<double> raw;
    for (std::size_t flat = 0; flat < full_size_; ++flat) {
      ParamVector theta = grid_node(flat);
      if (!family_.in_domain(theta)) continue;
      double w = 1.0;
      std::size_t rest = flat;
      for (int j = d - 1; j >= 0; --j) {
        const std::size_t idx = rest % g;
        rest /= g;
        if (idx == 0 || idx == g - 1) w *= 0.5;
        if (!prior_.pieces.empty()) w *= prior_.pieces[static_cast<std::size_t>(j)].at(theta[j]);
      }
      nodes_.push_back(std::move(theta));
      raw.push_back(w);
      active_.push_back(flat);
    }
    if (nodes_.empty()) throw ParameterError("prior grid has no node inside the family domain");
    const double total = pairwise_sum(raw);
    for (double w : raw) log_prior_.push_back(std::log(w / total));
  }

  ModelFamily family_;
  PriorSpec prior_;
  Box box_;
  std::vector<ParamVector> nodes_;
  std::vector<double> log_prior_;
  std::vector<double> tables_;
  std::vector<std::size_t> active_;
  std::size_t full_size_ = 0;
  bool stochastic_ = false;
};

// ---- free-function interface -------------------------------------------

// log Q(x^n) in nats.
inline double marginal_likelihood(const Mixture& mix, const SequenceSample& data) { return mix.log_marginal(data); }

inline PosteriorGrid posterior_weights(const Mixture& mix, const SequenceSample& data) {
  return mix.posterior_grid(mix.log_posterior(data));
}

// Q(x_t | x^{t-1}).
inline PredictiveDistribution predict_online(const Mixture& mix, std::span<const int> context) {
  if (!mix.family().is_sequence()) throw ParameterError("predict_online needs a sequence family");
  SequenceSample ctx;
  ctx.symbols.assign(context.begin(), context.end());
  return mix.predict_sequence(mix.log_posterior(ctx), context);
}

// Q(x_n | x^{n-1}): the online predictor evaluated at the end of training.
inline PredictiveDistribution predict_batch(const Mixture& mix, std::span<const int> training) {
  return predict_online(mix, training);
}

// Q(y | x; S). Depends only on S and x, never on a feature distribution.
inline PredictiveDistribution predict_supervised(const Mixture& mix, const SequenceSample& training,
                                                 const Eigen::VectorXd& query) {
  if (!mix.family().is_supervised()) throw ParameterError("predict_supervised needs a supervised family");
  if (query.size() != mix.family().feature_dim()) throw DataError("query feature has wrong dimension");
  return mix.predict_label(mix.log_posterior(training), query);
}

}  // namespace mixlab
