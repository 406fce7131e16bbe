#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <limits>
#include <random>
#include <span>
#include <thread>
#include <vector>

namespace mixlab {

inline constexpr double kLog2e = 1.4426950408889634;  // log2(e)
inline constexpr double kLn2 = 0.6931471805599453;
inline constexpr double kInf = std::numeric_limits<double>::infinity();

inline double nats_to_bits(double nats) { return nats * kLog2e; }
inline double bits_to_nats(double bits) { return bits * kLn2; }

using Rng = std::mt19937_64;

// splitmix64 finalizer; used to derive independent stream seeds from one
// user seed so that every random draw is reachable from the config.
inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream) {
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

inline Rng make_rng(std::uint64_t seed, std::uint64_t stream = 0) {
  return Rng(mix_seed(seed, stream));
}

// log(sum(exp(x))) with -inf entries ignored; returns -inf for an empty or
// all -inf input.
inline double log_sum_exp(std::span<const double> x) {
  double m = -kInf;
  for (double v : x) m = std::max(m, v);
  if (m == -kInf) return -kInf;
  if (m == kInf) return kInf;
  double s = 0.0;
  for (double v : x) s += std::exp(v - m);
  return m + std::log(s);
}

inline double log_add_exp(double a, double b) {
  if (a == -kInf) return b;
  if (b == -kInf) return a;
  const double m = std::max(a, b);
  return m + std::log(std::exp(a - m) + std::exp(b - m));
}

// Pairwise (tree) summation. The order of additions depends only on the
// input length, so parallel producers give reproducible totals.
inline double pairwise_sum(std::span<const double> x) {
  if (x.size() <= 8) {
    double s = 0.0;
    for (double v : x) s += v;
    return s;
  }
  const std::size_t half = x.size() / 2;
  return pairwise_sum(x.first(half)) + pairwise_sum(x.subspan(half));
}

// x*log(x/y) convention with 0*log(0/y) = 0.
inline double xlogx_over_y(double x, double y) {
  if (x <= 0.0) return 0.0;
  if (y <= 0.0) return kInf;
  return x * std::log(x / y);
}

// KL divergence between two probability vectors, nats.
inline double kl_divergence(std::span<const double> p, std::span<const double> q) {
  double d = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    d += xlogx_over_y(p[i], q[i]);
    if (d == kInf) return kInf;
  }
  return std::max(d, 0.0);
}

// Wilson score interval for a binomial proportion.
struct ProportionInterval {
  double estimate = 0.0;
  double lower = 0.0;
  double upper = 1.0;
  double halfwidth = 0.5;
};

inline ProportionInterval wilson_interval(std::size_t hits, std::size_t trials,
                                          double z = 1.959963984540054) {
  ProportionInterval ci;
  if (trials == 0) return ci;
  const double nt = static_cast<double>(trials);
  const double p = static_cast<double>(hits) / nt;
  const double z2 = z * z;
  const double denom = 1.0 + z2 / nt;
  const double center = (p + z2 / (2.0 * nt)) / denom;
  const double hw = z * std::sqrt(p * (1.0 - p) / nt + z2 / (4.0 * nt * nt)) / denom;
  ci.estimate = p;
  ci.lower = std::clamp(center - hw, 0.0, 1.0);
  ci.upper = std::clamp(center + hw, 0.0, 1.0);
  ci.halfwidth = hw;
  return ci;
}

// Mean and standard error of the mean.
struct MeanEstimate {
  double mean = 0.0;
  double std_error = 0.0;
};

inline MeanEstimate mean_and_stderr(std::span<const double> x) {
  MeanEstimate r;
  if (x.empty()) return r;
  const double n = static_cast<double>(x.size());
  r.mean = pairwise_sum(x) / n;
  if (x.size() < 2) return r;
  std::vector<double> sq(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) sq[i] = (x[i] - r.mean) * (x[i] - r.mean);
  const double var = pairwise_sum(sq) / (n - 1.0);
  r.std_error = std::sqrt(var / n);
  return r;
}

// Worker count used by the data-parallel loops. Results never depend on it.
inline std::atomic<unsigned>& thread_count_setting() {
  static std::atomic<unsigned> count{1};
  return count;
}

inline void set_num_threads(unsigned n) { thread_count_setting() = std::max(1u, n); }
inline unsigned num_threads() { return thread_count_setting(); }

// Calls fn(i) for i in [0, n) across the configured workers, in contiguous
// chunks. fn must only write to slots it owns.
template <typename Fn>
void parallel_for(std::size_t n, Fn&& fn) {
  const unsigned workers = static_cast<unsigned>(
      std::min<std::size_t>(num_threads(), std::max<std::size_t>(n, 1)));
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::jthread> pool;
  pool.reserve(workers);
  const std::size_t chunk = (n + workers - 1) / workers;
  for (unsigned w = 0; w < workers; ++w) {
    const std::size_t lo = w * chunk;
    const std::size_t hi = std::min(n, lo + chunk);
    if (lo >= hi) break;
    pool.emplace_back([lo, hi, &fn] {
      for (std::size_t i = lo; i < hi; ++i) fn(i);
    });
  }
}

// Evaluates fn(i) for every i and returns the pairwise sum.
template <typename Fn>
double parallel_sum(std::size_t n, Fn&& fn) {
  std::vector<double> terms(n);
  parallel_for(n, [&](std::size_t i) { terms[i] = fn(i); });
  return pairwise_sum(terms);
}

// Calls visit(counts, log_multinomial) for every composition of n into k
// nonnegative parts; log_multinomial = log(n! / prod counts!).
template <typename Visit>
void for_each_composition(int n, int k, Visit&& visit) {
  std::vector<int> counts(static_cast<std::size_t>(k), 0);
  const double log_nfact = std::lgamma(n + 1.0);
  auto rec = [&](auto&& self, int pos, int remaining, double log_denom) -> void {
    if (pos == k - 1) {
      counts[pos] = remaining;
      visit(std::span<const int>(counts), log_nfact - log_denom - std::lgamma(remaining + 1.0));
      return;
    }
    for (int c = 0; c <= remaining; ++c) {
      counts[pos] = c;
      self(self, pos + 1, remaining - c, log_denom + std::lgamma(c + 1.0));
    }
  };
  if (k <= 0) return;
  rec(rec, 0, n, 0.0);
}

// Collects all compositions (counts, log multinomial) up front; used where a
// parallel loop needs random access.
struct Composition {
  std::vector<int> counts;
  double log_multinomial = 0.0;
};

inline std::vector<Composition> compositions(int n, int k) {
  std::vector<Composition> out;
  for_each_composition(n, k, [&](std::span<const int> c, double lm) {
    out.push_back({std::vector<int>(c.begin(), c.end()), lm});
  });
  return out;
}

}  // namespace mixlab
