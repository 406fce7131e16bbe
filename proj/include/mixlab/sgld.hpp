#pragma once

#include <algorithm>
#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "mixlab/fisher.hpp"
#include "mixlab/mixture.hpp"

namespace mixlab {

enum class Boundary { Reflect, Clip };

struct SgldConfig {
  double step_size = 1e-3;
  std::size_t steps = 110000;
  std::size_t burn_in = 10000;
  std::size_t thinning = 10;
  std::size_t minibatch = 0;  // 0 = full batch
  Boundary boundary = Boundary::Reflect;
  bool noise = true;          // false gives plain gradient ascent
  std::optional<ParamVector> init;

  void validate() const {
    if (!(step_size > 0.0)) throw ParameterError("sgld: step size must be positive");
    if (burn_in >= steps) throw ParameterError("sgld: burn_in must be smaller than steps");
    if (thinning < 1) throw ParameterError("sgld: thinning must be at least 1");
  }
};

struct EnsembleSample {
  std::vector<ParamVector> thetas;
};

namespace detail {

// Keeps theta inside the prior box intersected with the family domain.
// Reflection mirrors at each violated face (box faces and, for simplex rows,
// the plane sum = 1) until no face is violated.
inline void enforce_domain(ParamVector& theta, const Box& box, const ModelFamily& family, Boundary rule) {
  const int d = static_cast<int>(theta.size());
  const bool simplex = family.is_sequence() && family.alphabet_size() > 2;
  const int per_row = family.alphabet_size() - 1;
  const int rows = simplex ? d / per_row : 0;
  if (rule == Boundary::Clip) {
    for (int i = 0; i < d; ++i) theta[i] = std::clamp(theta[i], box.lower[i], box.upper[i]);
    for (int r = 0; r < rows; ++r) {
      auto seg = theta.segment(r * per_row, per_row);
      const double s = seg.sum();
      if (s > 1.0) seg /= s;
    }
    return;
  }
  for (int iter = 0; iter < 64; ++iter) {
    bool moved = false;
    for (int i = 0; i < d; ++i) {
      const double lo = box.lower[i], hi = box.upper[i];
      const double w = hi - lo;
      if (theta[i] >= lo && theta[i] <= hi) continue;
      // Fold onto [lo, hi] with period 2w.
      double u = std::fmod(theta[i] - lo, 2.0 * w);
      if (u < 0.0) u += 2.0 * w;
      theta[i] = lo + (u <= w ? u : 2.0 * w - u);
      moved = true;
    }
    for (int r = 0; r < rows; ++r) {
      auto seg = theta.segment(r * per_row, per_row);
      const double excess = seg.sum() - 1.0;
      if (excess > 0.0) {
        seg.array() -= 2.0 * excess / per_row;
        moved = true;
      }
    }
    if (!moved) return;
  }
  enforce_domain(theta, box, family, Boundary::Clip);
}

// Gradient of log P_theta from sequence sufficient statistics. Table
// entries are floored at 1e-300 so a sample on the boundary stays finite.
inline ParamVector count_gradient(const ModelFamily& family, const ParamVector& theta, const std::vector<int>& counts) {
  const auto table = family.prob_table(theta);
  const int a = family.alphabet_size();
  ParamVector g = ParamVector::Zero(theta.size());
  auto p = [&](std::size_t i) { return std::max(table[i], 1e-300); };
  if (family.dimension() == 1 && a == 2 && family.markov_order() == 0) {
    g[0] = counts[1] / p(1) - counts[0] / p(0);
    return g;
  }
  for (int c = 0; c < family.contexts(); ++c) {
    const std::size_t last = static_cast<std::size_t>(c * a + a - 1);
    for (int j = 0; j < a - 1; ++j) {
      const std::size_t cell = static_cast<std::size_t>(c * a + j);
      g[c * (a - 1) + j] = counts[cell] / p(cell) - counts[last] / p(last);
    }
  }
  return g;
}

}  // namespace detail

// theta <- theta + (eta/2) grad[log w + log P_theta(data)] + sqrt(eta) xi.
// The prior is uniform (optionally piecewise) on its box, so log w
// contributes no gradient inside the box.
inline EnsembleSample sgld_chain(const ModelFamily& family, const SequenceSample& data, const PriorSpec& prior,
                                 const SgldConfig& config, std::uint64_t seed) {
  config.validate();
  family.validate_data(data);
  validate_prior(prior, family);
  if (prior.is_atomic()) throw ParameterError("sgld: needs a continuous prior");
  const Box box = prior_box(prior, family);
  const double radius = box.radius();
  const ParamVector center = 0.5 * (box.lower + box.upper);
  const int d = family.dimension();

  ParamVector theta;
  if (config.init) {
    theta = *config.init;
    family.validate(theta);
  } else if (family.is_sequence()) {
    theta = ParamVector::Constant(d, 1.0 / family.alphabet_size());
    detail::enforce_domain(theta, box, family, Boundary::Clip);
  } else {
    theta = center;
  }

  const bool sequence = family.is_sequence();
  const auto counts = sequence ? family.sufficient_stats(data.symbols) : std::vector<int>{};
  const std::size_t n_data = data.labels.size();
  const std::size_t batch = (config.minibatch == 0 || sequence) ? n_data : std::min(config.minibatch, n_data);

  Rng rng = make_rng(seed, 0);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_int_distribution<std::size_t> pick(0, n_data > 0 ? n_data - 1 : 0);
  const double noise_scale = std::sqrt(config.step_size);

  EnsembleSample out;
  out.thetas.reserve((config.steps - config.burn_in) / config.thinning + 1);
  for (std::size_t step = 0; step < config.steps; ++step) {
    ParamVector g;
    if (sequence) {
      g = detail::count_gradient(family, theta, counts);
    } else {
      g = ParamVector::Zero(d);
      if (batch == n_data) {
        for (std::size_t i = 0; i < n_data; ++i) g += family.grad_log_label(theta, data.features[i], data.labels[i]);
      } else {
        for (std::size_t b = 0; b < batch; ++b) {
          const std::size_t i = pick(rng);
          g += family.grad_log_label(theta, data.features[i], data.labels[i]);
        }
        g *= static_cast<double>(n_data) / static_cast<double>(batch);
      }
    }
    theta += 0.5 * config.step_size * g;
    if (config.noise)
      for (int j = 0; j < d; ++j) theta[j] += noise_scale * normal(rng);
    if (!theta.allFinite() || (theta - center).norm() > 1e3 * radius)
      throw InstabilityError("sgld: chain diverged at step " + std::to_string(step) + "; use a smaller step size");
    detail::enforce_domain(theta, box, family, config.boundary);
    if (step >= config.burn_in && (step - config.burn_in) % config.thinning == 0) out.thetas.push_back(theta);
  }
  return out;
}

// Uniform average of P_theta(. | context) over the samples.
inline PredictiveDistribution ensemble_predict(const EnsembleSample& samples, const ModelFamily& family,
                                               std::span<const int> context) {
  if (samples.thetas.empty()) throw ParameterError("ensemble_predict: no samples");
  if (!family.is_sequence()) throw ParameterError("ensemble_predict: use ensemble_predict_label for supervised families");
  const std::size_t a = static_cast<std::size_t>(family.alphabet_size());
  std::vector<std::vector<double>> per(a, std::vector<double>(samples.thetas.size()));
  for (std::size_t i = 0; i < samples.thetas.size(); ++i) {
    const auto p = family.conditional_probs(samples.thetas[i], context);
    for (std::size_t s = 0; s < a; ++s) per[s][i] = p[s];
  }
  std::vector<double> probs(a);
  for (std::size_t s = 0; s < a; ++s) probs[s] = pairwise_sum(per[s]) / static_cast<double>(samples.thetas.size());
  return PredictiveDistribution{probs, {}, {}, 0.0};
}

inline PredictiveDistribution ensemble_predict_label(const EnsembleSample& samples, const ModelFamily& family,
                                                     const Eigen::VectorXd& x) {
  if (samples.thetas.empty()) throw ParameterError("ensemble_predict_label: no samples");
  const double w = 1.0 / static_cast<double>(samples.thetas.size());
  if (family.continuous_labels()) {
    PredictiveDistribution p;
    for (const auto& t : samples.thetas) {
      const auto comp = family.label_predictive(t, x);
      p.component_weights.push_back(w);
      p.component_means.push_back(comp.component_means[0]);
      p.component_sd = comp.component_sd;
    }
    return p;
  }
  const std::size_t c = static_cast<std::size_t>(family.alphabet_size());
  std::vector<std::vector<double>> per(c, std::vector<double>(samples.thetas.size()));
  for (std::size_t i = 0; i < samples.thetas.size(); ++i) {
    const auto p = family.label_predictive(samples.thetas[i], x).probs;
    for (std::size_t y = 0; y < c; ++y) per[y][i] = p[y];
  }
  std::vector<double> probs(c);
  for (std::size_t y = 0; y < c; ++y) probs[y] = pairwise_sum(per[y]) * w;
  return PredictiveDistribution{probs, {}, {}, 0.0};
}

// ---- spectrum experiment -------------------------------------------------

enum class DatasetKind { Structured, RandomLabels, RandomInputs };

inline std::string to_string(DatasetKind k) {
  switch (k) {
    case DatasetKind::Structured: return "structured";
    case DatasetKind::RandomLabels: return "random_labels";
    default: return "random_inputs";
  }
}

struct SpectrumExperimentOptions {
  double learning_rate = 0.5;
  std::size_t max_steps = 5000;
  std::size_t plateau_window = 100;
  double plateau_tol = 1e-3;  // absolute loss change over one window
  double cluster_spread = 0.5;
  double center_scale = 3.0;
  double radius = 1.0;
};

// Gaussian clusters, one per class, in the net's input space. The
// random_labels set keeps the inputs and permutes the labels; random_inputs
// keeps the labels and replaces the inputs by standard-normal noise.
inline SequenceSample spectrum_dataset(DatasetKind kind, const SoftmaxNet& net, std::size_t n_train,
                                       std::uint64_t seed, const SpectrumExperimentOptions& opt = {}) {
  Rng rng = make_rng(seed, 1);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<Eigen::VectorXd> centers(static_cast<std::size_t>(net.classes));
  for (auto& c : centers) {
    c.resize(net.inputs);
    for (Eigen::Index j = 0; j < c.size(); ++j) c[j] = normal(rng);
    c *= opt.center_scale / std::max(c.norm(), 1e-12);
  }
  SequenceSample s;
  for (std::size_t i = 0; i < n_train; ++i) {
    const int y = static_cast<int>(i % static_cast<std::size_t>(net.classes));
    Eigen::VectorXd x(net.inputs);
    for (Eigen::Index j = 0; j < x.size(); ++j) x[j] = centers[static_cast<std::size_t>(y)][j] + opt.cluster_spread * normal(rng);
    s.features.push_back(x);
    s.labels.push_back(y);
  }
  if (kind == DatasetKind::RandomLabels) {
    std::shuffle(s.labels.begin(), s.labels.end(), rng);
  } else if (kind == DatasetKind::RandomInputs) {
    for (auto& x : s.features)
      for (Eigen::Index j = 0; j < x.size(); ++j) x[j] = normal(rng);
  }
  return s;
}

inline ParamVector softmax_init(const SoftmaxNet& net, std::uint64_t seed) {
  const ModelFamily family(net);
  Rng rng = make_rng(seed, 2);
  std::normal_distribution<double> normal(0.0, 1.0);
  ParamVector theta(family.dimension());
  for (Eigen::Index i = 0; i < theta.size(); ++i) theta[i] = normal(rng) / std::sqrt(static_cast<double>(net.inputs));
  return theta;
}

struct SpectrumExperimentResult {
  SpectrumReport report;
  ParamVector theta;
  std::size_t steps = 0;
};

// Trains by full-batch gradient descent on the mean log-loss until the loss
// plateaus, then takes the empirical Fisher (mean outer product of
// per-example scores at the observed labels) and its spectrum.
inline SpectrumExperimentResult fim_spectrum_experiment(DatasetKind kind, const SoftmaxNet& net, std::size_t n_train,
                                                        std::uint64_t seed, const SpectrumExperimentOptions& opt = {},
                                                        bool train = true) {
  const ModelFamily family(net);
  if (family.dimension() > 200) throw ParameterError("fim_spectrum_experiment: network too large for dense spectra");
  if (n_train < 1) throw ParameterError("fim_spectrum_experiment: need training data");
  const auto data = spectrum_dataset(kind, net, n_train, seed, opt);
  SpectrumExperimentResult res;
  res.theta = softmax_init(net, seed);
  const double nn = static_cast<double>(n_train);
  auto loss_and_grad = [&](const ParamVector& theta, ParamVector* grad) {
    double loss = 0.0;
    if (grad) grad->setZero(theta.size());
    for (std::size_t i = 0; i < n_train; ++i) {
      loss -= family.log_label_prob(theta, data.features[i], data.labels[i]);
      if (grad) *grad += family.grad_log_label(theta, data.features[i], data.labels[i]);
    }
    if (grad) *grad /= nn;
    return loss / nn;
  };
  bool converged = !train;
  double window_start = loss_and_grad(res.theta, nullptr);
  ParamVector g;
  if (train) {
    for (res.steps = 1; res.steps <= opt.max_steps; ++res.steps) {
      const double loss = loss_and_grad(res.theta, &g);
      res.theta += opt.learning_rate * g;
      if (res.steps % opt.plateau_window == 0) {
        if (std::abs(window_start - loss) <= opt.plateau_tol) {
          converged = true;
          break;
        }
        window_start = loss;
      }
    }
  }
  const Matrix fim = empirical_fim_from_data(family, res.theta, data);
  auto& rep = res.report;
  rep = spectrum_report(eigen_spectrum(fim), n_train, opt.radius);
  rep.converged = converged;
  rep.final_loss = loss_and_grad(res.theta, nullptr);
  std::vector<double> norms(n_train);
  for (std::size_t i = 0; i < n_train; ++i) norms[i] = family.grad_log_label(res.theta, data.features[i], data.labels[i]).norm();
  rep.mean_grad_norm = pairwise_sum(norms) / nn;
  return res;
}

}  // namespace mixlab
