#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "mixlab/error.hpp"
#include "mixlab/numeric.hpp"

namespace mixlab {

using ParamVector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

// Observed data. Sequence families use `symbols`; supervised families use
// the parallel `features` / `labels` arrays (class labels are stored as
// integral doubles).
struct SequenceSample {
  std::vector<int> symbols;
  std::vector<Eigen::VectorXd> features;
  std::vector<double> labels;

  std::size_t size() const { return symbols.empty() ? labels.size() : symbols.size(); }
  bool empty() const { return size() == 0; }
};

// Distribution over the next symbol or label. Finite outcomes live in
// `probs`; a continuous (Gaussian) label is a mixture of equal-variance
// Gaussian components.
struct PredictiveDistribution {
  std::vector<double> probs;
  std::vector<double> component_weights;
  std::vector<double> component_means;
  double component_sd = 0.0;

  bool continuous() const { return probs.empty(); }

  double mean() const {
    double m = 0.0;
    if (continuous()) {
      for (std::size_t i = 0; i < component_weights.size(); ++i)
        m += component_weights[i] * component_means[i];
    } else {
      for (std::size_t i = 0; i < probs.size(); ++i) m += probs[i] * static_cast<double>(i);
    }
    return m;
  }

  double log_prob(double outcome) const {
    if (!continuous()) {
      const auto idx = static_cast<std::size_t>(outcome);
      if (outcome < 0 || idx >= probs.size()) return -kInf;
      return probs[idx] > 0.0 ? std::log(probs[idx]) : -kInf;
    }
    std::vector<double> terms(component_weights.size());
    const double norm = -0.5 * std::log(2.0 * M_PI * component_sd * component_sd);
    for (std::size_t i = 0; i < terms.size(); ++i) {
      const double r = (outcome - component_means[i]) / component_sd;
      terms[i] = std::log(component_weights[i]) + norm - 0.5 * r * r;
    }
    return log_sum_exp(terms);
  }
};

inline double total_variation(const PredictiveDistribution& a, const PredictiveDistribution& b) {
  double tv = 0.0;
  for (std::size_t i = 0; i < a.probs.size(); ++i) tv += std::abs(a.probs[i] - b.probs[i]);
  return 0.5 * tv;
}

struct BernoulliIID {};

// Free parameters are the first A-1 symbol probabilities.
struct CategoricalIID {
  int alphabet = 3;
};

// Order-m chain; one categorical row of A-1 free probabilities per context.
// The first m symbols are uniform.
struct MarkovChain {
  int alphabet = 2;
  int order = 1;
};

// y = x^T theta + N(0, noise_var); features ~ N(0, feature_cov)
// (identity when feature_cov is empty).
struct LinearGaussian {
  int features = 1;
  double noise_var = 1.0;
  Matrix feature_cov;
};

// One tanh hidden layer followed by softmax; hidden == 0 gives a linear
// softmax classifier. Parameters are the raw weights, features ~ N(0, I).
struct SoftmaxNet {
  int inputs = 2;
  int hidden = 4;
  int classes = 2;
};

using FamilySpec = std::variant<BernoulliIID, CategoricalIID, MarkovChain, LinearGaussian, SoftmaxNet>;

class ModelFamily {
 public:
  explicit ModelFamily(FamilySpec spec) : spec_(std::move(spec)) { check_spec(); }

  static ModelFamily bernoulli() { return ModelFamily(BernoulliIID{}); }
  static ModelFamily categorical(int alphabet) { return ModelFamily(CategoricalIID{alphabet}); }
  static ModelFamily markov(int alphabet, int order) { return ModelFamily(MarkovChain{alphabet, order}); }
  static ModelFamily linear_gaussian(int features, double noise_var, Matrix cov = {}) {
    return ModelFamily(LinearGaussian{features, noise_var, std::move(cov)});
  }
  static ModelFamily softmax_net(int inputs, int hidden, int classes) {
    return ModelFamily(SoftmaxNet{inputs, hidden, classes});
  }

  const FamilySpec& spec() const { return spec_; }

  std::string name() const {
    switch (spec_.index()) {
      case 0: return "bernoulli";
      case 1: return "categorical";
      case 2: return "markov";
      case 3: return "linear_gaussian";
      default: return "softmax_net";
    }
  }

  bool is_sequence() const { return spec_.index() <= 2; }
  bool is_supervised() const { return !is_sequence(); }
  bool exchangeable() const { return spec_.index() <= 1; }
  bool memoryless() const { return spec_.index() != 2; }
  bool continuous_labels() const { return spec_.index() == 3; }

  int markov_order() const {
    if (const auto* m = std::get_if<MarkovChain>(&spec_)) return m->order;
    return 0;
  }

  // Number of outcomes per step (symbols or classes); 0 for a real label.
  int alphabet_size() const {
    switch (spec_.index()) {
      case 0: return 2;
      case 1: return std::get<CategoricalIID>(spec_).alphabet;
      case 2: return std::get<MarkovChain>(spec_).alphabet;
      case 3: return 0;
      default: return std::get<SoftmaxNet>(spec_).classes;
    }
  }

  int feature_dim() const {
    if (const auto* g = std::get_if<LinearGaussian>(&spec_)) return g->features;
    if (const auto* s = std::get_if<SoftmaxNet>(&spec_)) return s->inputs;
    return 0;
  }

  int dimension() const {
    switch (spec_.index()) {
      case 0: return 1;
      case 1: return std::get<CategoricalIID>(spec_).alphabet - 1;
      case 2: {
        const auto& m = std::get<MarkovChain>(spec_);
        return contexts() * (m.alphabet - 1);
      }
      case 3: return std::get<LinearGaussian>(spec_).features;
      default: {
        const auto& s = std::get<SoftmaxNet>(spec_);
        if (s.hidden == 0) return s.classes * s.inputs + s.classes;
        return s.hidden * s.inputs + s.hidden + s.classes * s.hidden + s.classes;
      }
    }
  }

  // Natural per-coordinate bounds (infinite for raw-weight families).
  ParamVector lower_bounds() const {
    return ParamVector::Constant(dimension(), is_sequence() ? 0.0 : -kInf);
  }
  ParamVector upper_bounds() const {
    return ParamVector::Constant(dimension(), is_sequence() ? 1.0 : kInf);
  }

  bool in_domain(const ParamVector& theta) const {
    if (theta.size() != dimension()) return false;
    for (Eigen::Index i = 0; i < theta.size(); ++i)
      if (!std::isfinite(theta[i])) return false;
    if (!is_sequence()) return true;
    for (Eigen::Index i = 0; i < theta.size(); ++i)
      if (theta[i] < 0.0 || theta[i] > 1.0) return false;
    const int rows = spec_.index() == 2 ? contexts() : 1;
    const int per_row = alphabet_size() - 1;
    for (int r = 0; r < rows; ++r)
      if (theta.segment(r * per_row, per_row).sum() > 1.0 + 1e-12) return false;
    return true;
  }

  void validate(const ParamVector& theta) const {
    if (theta.size() != dimension())
      throw ParameterError(name() + ": parameter has dimension " + std::to_string(theta.size()) +
                           ", expected " + std::to_string(dimension()));
    if (!in_domain(theta)) throw ParameterError(name() + ": parameter outside the family domain");
  }

  void validate_data(const SequenceSample& data) const {
    if (is_sequence()) {
      const int a = alphabet_size();
      for (int s : data.symbols)
        if (s < 0 || s >= a) throw DataError(name() + ": symbol " + std::to_string(s) + " outside alphabet");
      if (!data.labels.empty()) throw DataError(name() + ": labels given to a sequence family");
      return;
    }
    if (!data.symbols.empty()) throw DataError(name() + ": symbols given to a supervised family");
    if (data.features.size() != data.labels.size()) throw DataError(name() + ": feature/label count mismatch");
    for (const auto& x : data.features)
      if (x.size() != feature_dim()) throw DataError(name() + ": feature has wrong dimension");
    if (!continuous_labels()) {
      for (double y : data.labels)
        if (y < 0 || y >= alphabet_size() || y != std::floor(y))
          throw DataError(name() + ": label outside alphabet");
    }
  }

  // ---- sequence families: per-context symbol tables -------------------

  // Number of Markov contexts (1 for IID families).
  int contexts() const {
    if (const auto* m = std::get_if<MarkovChain>(&spec_)) {
      int c = 1;
      for (int i = 0; i < m->order; ++i) c *= m->alphabet;
      return c;
    }
    return 1;
  }

  // Length of the sufficient-statistic vector: contexts * alphabet.
  int num_stats() const { return contexts() * alphabet_size(); }

  // Symbol probabilities for every context, row-major [context][symbol].
  std::vector<double> prob_table(const ParamVector& theta) const {
    const int a = alphabet_size();
    const int per_row = a - 1;
    std::vector<double> table(static_cast<std::size_t>(num_stats()));
    if (spec_.index() == 0) {
      table[0] = 1.0 - theta[0];
      table[1] = theta[0];
      return table;
    }
    for (int c = 0; c < contexts(); ++c) {
      double rest = 1.0;
      for (int j = 0; j < per_row; ++j) {
        table[c * a + j] = theta[c * per_row + j];
        rest -= theta[c * per_row + j];
      }
      table[c * a + per_row] = std::max(rest, 0.0);
    }
    return table;
  }

  std::vector<double> log_prob_table(const ParamVector& theta) const {
    auto t = prob_table(theta);
    for (double& v : t) v = v > 0.0 ? std::log(v) : -kInf;
    return t;
  }

  // Context index of the last m symbols of a prefix.
  int context_index(std::span<const int> prefix) const {
    const int m = markov_order();
    const int a = alphabet_size();
    int idx = 0;
    for (int j = 0; j < m; ++j) idx = idx * a + prefix[prefix.size() - m + j];
    return idx;
  }

  // Transition counts [context][symbol]; symbols before the Markov order is
  // reached are not counted (they carry the constant uniform term).
  std::vector<int> sufficient_stats(std::span<const int> symbols) const {
    std::vector<int> counts(static_cast<std::size_t>(num_stats()), 0);
    const int m = markov_order();
    const int a = alphabet_size();
    for (std::size_t t = static_cast<std::size_t>(m); t < symbols.size(); ++t) {
      const int ctx = m == 0 ? 0 : context_index(symbols.first(t));
      ++counts[static_cast<std::size_t>(ctx * a + symbols[t])];
    }
    return counts;
  }

  // log P of the uniform warm-up symbols of a length-n sequence.
  double warmup_log_prob(std::size_t n) const {
    const auto m = static_cast<std::size_t>(markov_order());
    return -static_cast<double>(std::min(n, m)) * std::log(static_cast<double>(alphabet_size()));
  }

  static double dot_counts(std::span<const int> counts, std::span<const double> log_table) {
    double s = 0.0;
    for (std::size_t i = 0; i < counts.size(); ++i) {
      if (counts[i] == 0) continue;
      if (log_table[i] == -kInf) return -kInf;
      s += counts[i] * log_table[i];
    }
    return s;
  }

  // P_theta(. | prefix), uniform while the prefix is shorter than the order.
  std::vector<double> conditional_probs(const ParamVector& theta, std::span<const int> prefix) const {
    const int a = alphabet_size();
    const int m = markov_order();
    if (static_cast<int>(prefix.size()) < m) return std::vector<double>(static_cast<std::size_t>(a), 1.0 / a);
    const auto table = prob_table(theta);
    const int ctx = m == 0 ? 0 : context_index(prefix);
    return {table.begin() + ctx * a, table.begin() + (ctx + 1) * a};
  }

  // ---- evaluation ------------------------------------------------------

  PredictiveDistribution predictive(const ParamVector& theta, std::span<const int> context) const {
    if (!is_sequence()) throw ParameterError(name() + ": use label_predictive for supervised families");
    validate(theta);
    if (static_cast<int>(context.size()) < markov_order())
      throw ContextError(name() + ": context shorter than the Markov order");
    for (int s : context)
      if (s < 0 || s >= alphabet_size()) throw DataError(name() + ": context symbol outside alphabet");
    return PredictiveDistribution{conditional_probs(theta, context), {}, {}, 0.0};
  }

  // P_theta(y | x) for a supervised family.
  PredictiveDistribution label_predictive(const ParamVector& theta, const Eigen::VectorXd& x) const {
    if (const auto* g = std::get_if<LinearGaussian>(&spec_)) {
      PredictiveDistribution p;
      p.component_weights = {1.0};
      p.component_means = {x.dot(theta)};
      p.component_sd = std::sqrt(g->noise_var);
      return p;
    }
    if (const auto* s = std::get_if<SoftmaxNet>(&spec_)) {
      Eigen::VectorXd probs = softmax_forward(*s, theta, x).probs;
      return PredictiveDistribution{std::vector<double>(probs.data(), probs.data() + probs.size()), {}, {}, 0.0};
    }
    throw ParameterError(name() + ": not a supervised family");
  }

  double log_label_prob(const ParamVector& theta, const Eigen::VectorXd& x, double y) const {
    if (const auto* g = std::get_if<LinearGaussian>(&spec_)) {
      const double r = y - x.dot(theta);
      return -0.5 * std::log(2.0 * M_PI * g->noise_var) - 0.5 * r * r / g->noise_var;
    }
    const auto& s = std::get<SoftmaxNet>(spec_);
    const auto f = softmax_forward(s, theta, x);
    return f.log_probs[static_cast<Eigen::Index>(y)];
  }

  // log P_theta(x^n) or log P_theta(y^n | x^n), nats; -inf for impossible data.
  double log_likelihood(const ParamVector& theta, const SequenceSample& data) const {
    validate(theta);
    validate_data(data);
    if (is_sequence()) {
      const auto counts = sufficient_stats(data.symbols);
      return warmup_log_prob(data.symbols.size()) + dot_counts(counts, log_prob_table(theta));
    }
    double s = 0.0;
    for (std::size_t i = 0; i < data.labels.size(); ++i)
      s += log_label_prob(theta, data.features[i], data.labels[i]);
    return s;
  }

  ParamVector grad_log_likelihood(const ParamVector& theta, const SequenceSample& data) const {
    validate(theta);
    validate_data(data);
    ParamVector g = ParamVector::Zero(dimension());
    if (is_sequence()) {
      const auto table = prob_table(theta);
      for (double p : table)
        if (p <= 0.0) throw BoundaryError(name() + ": gradient undefined on the domain boundary");
      const auto counts = sufficient_stats(data.symbols);
      const int a = alphabet_size();
      if (spec_.index() == 0) {
        g[0] = counts[1] / table[1] - counts[0] / table[0];
        return g;
      }
      for (int c = 0; c < contexts(); ++c) {
        const double last = counts[c * a + a - 1] / table[c * a + a - 1];
        for (int j = 0; j < a - 1; ++j) g[c * (a - 1) + j] = counts[c * a + j] / table[c * a + j] - last;
      }
      return g;
    }
    for (std::size_t i = 0; i < data.labels.size(); ++i) g += grad_log_label(theta, data.features[i], data.labels[i]);
    return g;
  }

  // Gradient of log P_theta(y | x) for one supervised pair.
  ParamVector grad_log_label(const ParamVector& theta, const Eigen::VectorXd& x, double y) const {
    if (const auto* g = std::get_if<LinearGaussian>(&spec_)) return (y - x.dot(theta)) / g->noise_var * x;
    const auto& s = std::get<SoftmaxNet>(spec_);
    return softmax_backward(s, theta, x, static_cast<int>(y));
  }

  // ---- sampling --------------------------------------------------------

  Eigen::VectorXd sample_feature(Rng& rng) const {
    std::normal_distribution<double> normal(0.0, 1.0);
    Eigen::VectorXd z(feature_dim());
    for (Eigen::Index i = 0; i < z.size(); ++i) z[i] = normal(rng);
    if (const auto* g = std::get_if<LinearGaussian>(&spec_); g && g->feature_cov.size() > 0) {
      Eigen::LLT<Matrix> llt(g->feature_cov);
      return llt.matrixL() * z;
    }
    return z;
  }

  double sample_label(const ParamVector& theta, const Eigen::VectorXd& x, Rng& rng) const {
    if (const auto* g = std::get_if<LinearGaussian>(&spec_)) {
      std::normal_distribution<double> normal(0.0, std::sqrt(g->noise_var));
      return x.dot(theta) + normal(rng);
    }
    const auto probs = label_predictive(theta, x).probs;
    return static_cast<double>(draw_index(probs, rng));
  }

  static int draw_index(std::span<const double> probs, Rng& rng) {
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    const double u = unif(rng);
    double cum = 0.0;
    int last_positive = 0;
    for (std::size_t i = 0; i < probs.size(); ++i) {
      if (probs[i] <= 0.0) continue;
      cum += probs[i];
      last_positive = static_cast<int>(i);
      if (u < cum) return static_cast<int>(i);
    }
    return last_positive;
  }

  // n draws from P_theta. Supervised families draw features from their own
  // feature distribution.
  SequenceSample sample_sequence(const ParamVector& theta, std::size_t n, std::uint64_t seed) const {
    validate(theta);
    if (n < 1) throw ParameterError("sample_sequence: n must be at least 1");
    Rng rng = make_rng(seed);
    SequenceSample out;
    if (is_sequence()) {
      out.symbols.reserve(n);
      for (std::size_t t = 0; t < n; ++t) {
        const auto probs = conditional_probs(theta, out.symbols);
        out.symbols.push_back(draw_index(probs, rng));
      }
      return out;
    }
    for (std::size_t t = 0; t < n; ++t) {
      out.features.push_back(sample_feature(rng));
      out.labels.push_back(sample_label(theta, out.features.back(), rng));
    }
    return out;
  }

  // ---- Fisher information ---------------------------------------------

  // I_n(theta) in nats for families with a closed form.
  Matrix analytic_fisher(const ParamVector& theta, std::size_t n) const {
    validate(theta);
    const double scale = static_cast<double>(n);
    switch (spec_.index()) {
      case 0: {
        const double t = theta[0];
        if (t <= 0.0 || t >= 1.0) throw BoundaryError("bernoulli: Fisher information diverges on the boundary");
        return Matrix::Constant(1, 1, scale / (t * (1.0 - t)));
      }
      case 1: {
        const auto p = prob_table(theta);
        for (double v : p)
          if (v <= 0.0) throw BoundaryError("categorical: Fisher information diverges on the boundary");
        const int d = dimension();
        Matrix f = Matrix::Constant(d, d, 1.0 / p.back());
        for (int j = 0; j < d; ++j) f(j, j) += 1.0 / p[static_cast<std::size_t>(j)];
        return scale * f;
      }
      case 3: {
        const auto& g = std::get<LinearGaussian>(spec_);
        const Matrix cov = g.feature_cov.size() > 0 ? g.feature_cov : Matrix::Identity(g.features, g.features);
        return scale / g.noise_var * cov;
      }
      default:
        throw NotAvailableError(name() + ": no closed-form Fisher information; use empirical_fim");
    }
  }

  bool has_analytic_fisher() const { return spec_.index() == 0 || spec_.index() == 1 || spec_.index() == 3; }

  // ---- softmax network internals ---------------------------------------

  struct SoftmaxForward {
    Eigen::VectorXd hidden;     // tanh activations (empty for hidden == 0)
    Eigen::VectorXd log_probs;
    Eigen::VectorXd probs;
  };

  static SoftmaxForward softmax_forward(const SoftmaxNet& s, const ParamVector& theta, const Eigen::VectorXd& x) {
    SoftmaxForward f;
    Eigen::VectorXd logits;
    if (s.hidden == 0) {
      Eigen::Map<const Matrix> w(theta.data(), s.classes, s.inputs);
      Eigen::Map<const Eigen::VectorXd> b(theta.data() + s.classes * s.inputs, s.classes);
      logits = w * x + b;
    } else {
      const double* p = theta.data();
      Eigen::Map<const Matrix> w1(p, s.hidden, s.inputs);
      p += s.hidden * s.inputs;
      Eigen::Map<const Eigen::VectorXd> b1(p, s.hidden);
      p += s.hidden;
      Eigen::Map<const Matrix> w2(p, s.classes, s.hidden);
      p += s.classes * s.hidden;
      Eigen::Map<const Eigen::VectorXd> b2(p, s.classes);
      f.hidden = (w1 * x + b1).array().tanh();
      logits = w2 * f.hidden + b2;
    }
    const double m = logits.maxCoeff();
    const double lse = m + std::log((logits.array() - m).exp().sum());
    f.log_probs = logits.array() - lse;
    f.probs = f.log_probs.array().exp();
    return f;
  }

  // Backpropagation of log softmax(y) through the single hidden layer.
  static ParamVector softmax_backward(const SoftmaxNet& s, const ParamVector& theta, const Eigen::VectorXd& x, int y) {
    const auto f = softmax_forward(s, theta, x);
    Eigen::VectorXd dlogits = -f.probs;
    dlogits[y] += 1.0;
    ParamVector g(theta.size());
    if (s.hidden == 0) {
      Eigen::Map<Matrix> gw(g.data(), s.classes, s.inputs);
      gw = dlogits * x.transpose();
      g.segment(s.classes * s.inputs, s.classes) = dlogits;
      return g;
    }
    const Eigen::Index off_b1 = s.hidden * s.inputs;
    const Eigen::Index off_w2 = off_b1 + s.hidden;
    const Eigen::Index off_b2 = off_w2 + s.classes * s.hidden;
    Eigen::Map<const Matrix> w2(theta.data() + off_w2, s.classes, s.hidden);
    const Eigen::VectorXd dh = w2.transpose() * dlogits;
    const Eigen::VectorXd dpre = dh.array() * (1.0 - f.hidden.array().square());
    Eigen::Map<Matrix>(g.data(), s.hidden, s.inputs) = dpre * x.transpose();
    g.segment(off_b1, s.hidden) = dpre;
    Eigen::Map<Matrix>(g.data() + off_w2, s.classes, s.hidden) = dlogits * f.hidden.transpose();
    g.segment(off_b2, s.classes) = dlogits;
    return g;
  }

 private:
  void check_spec() const {
    if (const auto* c = std::get_if<CategoricalIID>(&spec_); c && c->alphabet < 2)
      throw ParameterError("categorical: alphabet must have at least 2 symbols");
    if (const auto* m = std::get_if<MarkovChain>(&spec_); m && (m->alphabet < 2 || m->order < 0))
      throw ParameterError("markov: need alphabet >= 2 and order >= 0");
    if (const auto* g = std::get_if<LinearGaussian>(&spec_)) {
      if (g->features < 1 || !(g->noise_var > 0.0))
        throw ParameterError("linear_gaussian: need features >= 1 and noise_var > 0");
      if (g->feature_cov.size() > 0 && (g->feature_cov.rows() != g->features || g->feature_cov.cols() != g->features))
        throw ParameterError("linear_gaussian: feature covariance has wrong shape");
    }
    if (const auto* s = std::get_if<SoftmaxNet>(&spec_); s && (s->inputs < 1 || s->hidden < 0 || s->classes < 2))
      throw ParameterError("softmax_net: need inputs >= 1, hidden >= 0, classes >= 2");
  }

  FamilySpec spec_;
};

// Free-function spellings of the family operations.
inline double log_likelihood(const ModelFamily& family, const ParamVector& theta, const SequenceSample& data) {
  return family.log_likelihood(theta, data);
}

inline ParamVector grad_log_likelihood(const ModelFamily& family, const ParamVector& theta,
                                       const SequenceSample& data) {
  return family.grad_log_likelihood(theta, data);
}

inline SequenceSample sample_sequence(const ModelFamily& family, const ParamVector& theta, std::size_t n,
                                      std::uint64_t seed) {
  return family.sample_sequence(theta, n, seed);
}

inline Matrix analytic_fisher(const ModelFamily& family, const ParamVector& theta, std::size_t n) {
  return family.analytic_fisher(theta, n);
}

inline PredictiveDistribution predictive(const ModelFamily& family, const ParamVector& theta,
                                         std::span<const int> context) {
  return family.predictive(theta, context);
}

inline ParamVector param(std::initializer_list<double> values) {
  ParamVector v(static_cast<Eigen::Index>(values.size()));
  Eigen::Index i = 0;
  for (double x : values) v[i++] = x;
  return v;
}

inline SequenceSample symbols(std::initializer_list<int> values) {
  SequenceSample s;
  s.symbols.assign(values);
  return s;
}

}  // namespace mixlab
