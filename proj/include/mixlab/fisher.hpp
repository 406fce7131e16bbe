#pragma once

#include <Eigen/Dense>
#include <Eigen/SVD>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <optional>
#include <vector>

#include "mixlab/error.hpp"
#include "mixlab/model_family.hpp"
#include "mixlab/numeric.hpp"

namespace mixlab {

struct EigenDecomposition {
  Eigen::VectorXd values;   // descending
  Matrix vectors;           // column i pairs with values[i]
  int sweeps = 0;
};

// Cyclic Jacobi rotations on a symmetric matrix.
inline EigenDecomposition jacobi_eigen(const Matrix& m, double tol = 1e-10, int max_sweeps = 100) {
  if (m.rows() != m.cols()) throw InputError("jacobi_eigen: matrix must be square");
  const Eigen::Index d = m.rows();
  const double scale = std::max(m.cwiseAbs().maxCoeff(), 1e-300);
  if ((m - m.transpose()).cwiseAbs().maxCoeff() > 1e-8 * std::max(1.0, scale))
    throw InputError("jacobi_eigen: matrix is not symmetric");
  Matrix a = 0.5 * (m + m.transpose());
  Matrix v = Matrix::Identity(d, d);
  const double frob = a.norm();
  EigenDecomposition out;
  auto off_norm = [&] {
    double s = 0.0;
    for (Eigen::Index i = 0; i < d; ++i)
      for (Eigen::Index j = i + 1; j < d; ++j) s += 2.0 * a(i, j) * a(i, j);
    return std::sqrt(s);
  };
  for (out.sweeps = 0; out.sweeps < max_sweeps; ++out.sweeps) {
    if (off_norm() <= tol * std::max(frob, 1e-300)) break;
    for (Eigen::Index p = 0; p < d - 1; ++p) {
      for (Eigen::Index q = p + 1; q < d; ++q) {
        const double apq = a(p, q);
        if (apq == 0.0) continue;
        const double theta = (a(q, q) - a(p, p)) / (2.0 * apq);
        const double t = (theta >= 0.0 ? 1.0 : -1.0) / (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0);
        const double s = t * c;
        for (Eigen::Index k = 0; k < d; ++k) {
          const double akp = a(k, p), akq = a(k, q);
          a(k, p) = c * akp - s * akq;
          a(k, q) = s * akp + c * akq;
        }
        for (Eigen::Index k = 0; k < d; ++k) {
          const double apk = a(p, k), aqk = a(q, k);
          a(p, k) = c * apk - s * aqk;
          a(q, k) = s * apk + c * aqk;
        }
        a(p, q) = a(q, p) = 0.0;
        for (Eigen::Index k = 0; k < d; ++k) {
          const double vkp = v(k, p), vkq = v(k, q);
          v(k, p) = c * vkp - s * vkq;
          v(k, q) = s * vkp + c * vkq;
        }
      }
    }
  }
  if (off_norm() > tol * std::max(frob, 1e-300) && frob > 0.0)
    throw InstabilityError("jacobi_eigen: no convergence");
  std::vector<Eigen::Index> order(static_cast<std::size_t>(d));
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](auto i, auto j) { return a(i, i) > a(j, j); });
  out.values.resize(d);
  out.vectors.resize(d, d);
  for (Eigen::Index i = 0; i < d; ++i) {
    out.values[i] = a(order[static_cast<std::size_t>(i)], order[static_cast<std::size_t>(i)]);
    out.vectors.col(i) = v.col(order[static_cast<std::size_t>(i)]);
  }
  return out;
}

inline Eigen::VectorXd eigen_spectrum(const Matrix& m) { return jacobi_eigen(m).values; }

// Per-observation data for one Fisher sample: a single symbol for IID
// families, one transition after the warm-up for Markov chains, one (x, y)
// pair for supervised families.
inline SequenceSample fisher_unit_sample(const ModelFamily& family, const ParamVector& theta, std::uint64_t seed) {
  const std::size_t len = family.is_sequence() ? static_cast<std::size_t>(family.markov_order()) + 1 : 1;
  return family.sample_sequence(theta, len, seed);
}

// Mean outer product of the given gradients (rows of g), nats.
inline Matrix fim_from_gradients(const Matrix& g) {
  if (g.rows() == 0) throw ParameterError("fim_from_gradients: no gradients");
  Matrix f = g.transpose() * g / static_cast<double>(g.rows());
  return 0.5 * (f + f.transpose());
}

// Empirical per-observation Fisher information at theta, nats.
inline Matrix empirical_fim(const ModelFamily& family, const ParamVector& theta, std::size_t n_samples,
                            std::uint64_t seed) {
  family.validate(theta);
  const int d = family.dimension();
  if (n_samples < static_cast<std::size_t>(d)) throw ParameterError("empirical_fim: need at least d samples");
  if (family.is_sequence())
    for (double p : family.prob_table(theta))
      if (p <= 0.0) throw BoundaryError(family.name() + ": Fisher information undefined on the boundary");
  Matrix g(static_cast<Eigen::Index>(n_samples), d);
  parallel_for(n_samples, [&](std::size_t i) {
    const auto sample = fisher_unit_sample(family, theta, mix_seed(seed, i));
    g.row(static_cast<Eigen::Index>(i)) = family.grad_log_likelihood(theta, sample).transpose();
  });
  return fim_from_gradients(g);
}

// Empirical Fisher from observed supervised data (labels as observed).
inline Matrix empirical_fim_from_data(const ModelFamily& family, const ParamVector& theta, const SequenceSample& data) {
  family.validate(theta);
  family.validate_data(data);
  if (!family.is_supervised()) throw ParameterError("empirical_fim_from_data needs a supervised family");
  Matrix g(static_cast<Eigen::Index>(data.labels.size()), family.dimension());
  parallel_for(data.labels.size(), [&](std::size_t i) {
    g.row(static_cast<Eigen::Index>(i)) = family.grad_log_label(theta, data.features[i], data.labels[i]).transpose();
  });
  return fim_from_gradients(g);
}

// Largest k with lambda_k >= 2 n eps^2 / R^2; eps^2 in nats.
inline int effective_k(const Eigen::VectorXd& eigenvalues, std::size_t n, double epsilon_sq_nats, double radius) {
  const double threshold = 2.0 * static_cast<double>(n) * epsilon_sq_nats / (radius * radius);
  int k = 0;
  for (Eigen::Index i = 0; i < eigenvalues.size(); ++i)
    if (eigenvalues[i] > 0.0 && eigenvalues[i] >= threshold) k = static_cast<int>(i) + 1;
  return k;
}

struct Theorem1Result {
  bool applicable = false;
  double bound_bits = kInf;
  double epsilon_sq = 0.0;  // bits
  int k = 0;
};

// Eigenvalues are those of I_n (nats), descending. Scans every k whose
// precondition lambda_{k+1} <= k / (R^2 log2 e) holds and keeps the smallest
// bound.
inline Theorem1Result theorem1_bound(const Eigen::VectorXd& eigenvalues, std::size_t n, double radius) {
  if (n < 1) throw ParameterError("theorem1_bound: n must be at least 1");
  if (!(radius > 0.0)) throw ParameterError("theorem1_bound: radius must be positive");
  const Eigen::Index d = eigenvalues.size();
  const double r2 = radius * radius;
  const double nn = static_cast<double>(n);
  Theorem1Result best;
  auto lam = [&](Eigen::Index i) { return i < d ? eigenvalues[i] : 0.0; };
  if (d == 0 || lam(0) <= 0.0) {
    best.applicable = true;
    best.bound_bits = 0.0;
    return best;
  }
  double log_sum = 0.0;
  for (Eigen::Index k = 1; k <= d; ++k) {
    if (lam(k - 1) <= 0.0) break;
    log_sum += std::log2(r2 * lam(k - 1));
    const double kk = static_cast<double>(k);
    if (lam(k) > kk / (r2 * kLog2e)) continue;
    const double b = (kk / kLog2e + kk * std::log2(kLog2e / kk) + log_sum) / (2.0 * nn);
    if (!best.applicable || b < best.bound_bits) {
      best.applicable = true;
      best.bound_bits = b;
      best.k = static_cast<int>(k);
      best.epsilon_sq = kk / (2.0 * nn * kLog2e);
    }
  }
  return best;
}

// Volume fraction (sqrt(2n) eps)^k / (R^k prod_{i<=k} sqrt(lambda_i)) with
// k = effective_k, capped to [0, 1]; eps^2 in nats, eigenvalues of I_n.
inline double ellipsoid_weight(const Eigen::VectorXd& eigenvalues, std::size_t n, double epsilon_sq_nats,
                               double radius) {
  const int k = effective_k(eigenvalues, n, epsilon_sq_nats, radius);
  double log_w = 0.0;
  const double axis = std::sqrt(2.0 * static_cast<double>(n) * epsilon_sq_nats);
  for (int i = 0; i < k; ++i) log_w += std::log(axis / (radius * std::sqrt(eigenvalues[i])));
  return std::clamp(std::exp(log_w), 0.0, 1.0);
}

struct SpectrumReport {
  Eigen::VectorXd eigenvalues;
  std::size_t n = 0;
  double radius = 1.0;
  int effective_k = 0;
  std::optional<double> bound_bits;
  double tail_mass_ratio = 0.0;
  double mean_grad_norm = 0.0;
  bool converged = true;
  double final_loss = 0.0;
};

// sum_{i > d/2} lambda_i / sum_i lambda_i.
inline double tail_mass_ratio(const Eigen::VectorXd& eigenvalues) {
  const Eigen::Index d = eigenvalues.size();
  double total = 0.0, tail = 0.0;
  for (Eigen::Index i = 0; i < d; ++i) {
    const double v = std::max(eigenvalues[i], 0.0);
    total += v;
    if (i >= d / 2) tail += v;
  }
  return total > 0.0 ? tail / total : 0.0;
}

// Theorem-1 summary of a per-observation spectrum scaled to n samples.
inline SpectrumReport spectrum_report(const Eigen::VectorXd& per_sample, std::size_t n, double radius) {
  SpectrumReport r;
  r.eigenvalues = per_sample;
  r.n = n;
  r.radius = radius;
  const Eigen::VectorXd scaled = per_sample * static_cast<double>(n);
  const auto t1 = theorem1_bound(scaled, n, radius);
  if (t1.applicable) {
    r.bound_bits = t1.bound_bits;
    r.effective_k = t1.k;
  } else {
    r.effective_k = effective_k(scaled, n, bits_to_nats(static_cast<double>(per_sample.size()) /
                                                             (2.0 * static_cast<double>(n) * kLog2e)), radius);
  }
  r.tail_mass_ratio = tail_mass_ratio(per_sample);
  return r;
}

struct LaplacePosterior {
  ParamVector mean;
  Matrix covariance;
};

// Gaussian posterior around the ML estimate with covariance I^{-1}(mle)/n.
inline LaplacePosterior laplace_posterior(const ModelFamily& family, const SequenceSample& data) {
  family.validate_data(data);
  if (!family.has_analytic_fisher()) throw NotAvailableError(family.name() + ": Laplace posterior needs an analytic Fisher");
  const std::size_t n = data.size();
  if (n == 0) throw DataError("laplace_posterior: no data");
  LaplacePosterior lp;
  if (family.is_sequence()) {
    const auto counts = family.sufficient_stats(data.symbols);
    const int a = family.alphabet_size();
    lp.mean.resize(family.dimension());
    if (a == 2 && family.dimension() == 1) {
      lp.mean[0] = static_cast<double>(counts[1]) / static_cast<double>(n);
    } else {
      for (int j = 0; j < a - 1; ++j) lp.mean[j] = static_cast<double>(counts[static_cast<std::size_t>(j)]) / static_cast<double>(n);
    }
    for (int c : counts)
      if (c == 0) throw BoundaryError(family.name() + ": ML estimate on the boundary");
  } else {
    const int f = family.feature_dim();
    Matrix x(static_cast<Eigen::Index>(n), f);
    Eigen::VectorXd y(static_cast<Eigen::Index>(n));
    for (std::size_t i = 0; i < n; ++i) {
      x.row(static_cast<Eigen::Index>(i)) = data.features[i].transpose();
      y[static_cast<Eigen::Index>(i)] = data.labels[i];
    }
    Eigen::JacobiSVD<Matrix> svd(x, Eigen::ComputeThinU | Eigen::ComputeThinV);
    if (svd.rank() < f) throw DataError("laplace_posterior: design matrix is rank deficient");
    lp.mean = svd.solve(y);
  }
  const Matrix fisher = family.analytic_fisher(lp.mean, n);
  lp.covariance = fisher.inverse();
  lp.covariance = 0.5 * (lp.covariance + lp.covariance.transpose());
  return lp;
}

struct DeepLinearRow {
  int layers = 0;
  double median_condition = 1.0;
  std::vector<double> conditions;       // one per seed
  Eigen::VectorXd singular_values;      // first seed, descending
};

// Singular spectra of the product of l IID standard-normal dim x dim
// matrices (l = 0 is the identity).
inline std::vector<DeepLinearRow> deep_linear_spectrum(const std::vector<int>& layers, int dim, std::size_t n_seeds,
                                                       std::uint64_t seed) {
  if (dim < 2) throw ParameterError("deep_linear_spectrum: dim must be at least 2");
  if (n_seeds < 1) throw ParameterError("deep_linear_spectrum: need at least one seed");
  std::vector<DeepLinearRow> rows;
  for (int l : layers) {
    if (l < 0) throw ParameterError("deep_linear_spectrum: layer count must be nonnegative");
    DeepLinearRow row;
    row.layers = l;
    row.conditions.resize(n_seeds);
    std::vector<Eigen::VectorXd> spectra(n_seeds);
    parallel_for(n_seeds, [&](std::size_t s) {
      Rng rng = make_rng(seed, s);
      std::normal_distribution<double> normal(0.0, 1.0);
      Matrix prod = Matrix::Identity(dim, dim);
      for (int i = 0; i < l; ++i) {
        Matrix a(dim, dim);
        for (Eigen::Index r = 0; r < dim; ++r)
          for (Eigen::Index c = 0; c < dim; ++c) a(r, c) = normal(rng);
        prod = a * prod;
      }
      Eigen::JacobiSVD<Matrix> svd(prod);
      spectra[s] = svd.singularValues();
      const double smin = spectra[s][dim - 1];
      row.conditions[s] = smin > 0.0 ? spectra[s][0] / smin : kInf;
    });
    row.singular_values = spectra[0];
    std::vector<double> sorted = row.conditions;
    std::sort(sorted.begin(), sorted.end());
    const std::size_t mid = sorted.size() / 2;
    row.median_condition = sorted.size() % 2 ? sorted[mid] : 0.5 * (sorted[mid - 1] + sorted[mid]);
    rows.push_back(std::move(row));
  }
  return rows;
}

// Diagnostic for the batch rate argument: k is the smallest index with
// lambda_{k+1} <= 0.1 k / (4 n R^2) (per-observation eigenvalues, nats),
// delta = 1/2 sum_{i>k} lambda_i (2R)^2, and the check passes when
// delta <= (k / 2n) / 10.
struct Theorem2Check {
  int k = 0;
  double delta = 0.0;
  double target = 0.0;
  bool ok = false;
};

inline Theorem2Check theorem2_check(const Eigen::VectorXd& eigenvalues, std::size_t n, double radius) {
  const Eigen::Index d = eigenvalues.size();
  const double nn = static_cast<double>(n);
  const double r2 = radius * radius;
  Theorem2Check c;
  c.k = static_cast<int>(d);
  for (Eigen::Index k = 1; k < d; ++k) {
    if (eigenvalues[k] <= 0.1 * static_cast<double>(k) / (4.0 * nn * r2)) {
      c.k = static_cast<int>(k);
      break;
    }
  }
  for (Eigen::Index i = c.k; i < d; ++i) c.delta += 0.5 * std::max(eigenvalues[i], 0.0) * 4.0 * r2;
  c.target = static_cast<double>(c.k) / (2.0 * nn);
  c.ok = c.delta <= c.target / 10.0;
  return c;
}

}  // namespace mixlab
