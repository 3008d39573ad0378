#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>
#include <vector>

#include "opckit/errors.hpp"
#include "opckit/fft.hpp"
#include "opckit/grid.hpp"

namespace opckit {

/// Deterministic pattern embedder. The Fourier magnitude spectrum drops
/// phase, so embeddings of cyclic shifts of one pattern are identical;
/// after average-pooling to pool_to, shifts by multiples of the pooling
/// factor stay exact and smaller shifts are near-invariant.
struct EmbedderConfig {
  int k_dim = 256;
  int pool_to = 256;
};

struct EmbeddingVector {
  std::vector<double> values;
  bool normalized = false;

  double norm() const {
    double s = 0.0;
    for (double v : values) s += v * v;
    return std::sqrt(s);
  }
};

namespace detail {

/// Low-frequency-first coefficient ordering for a P×P spectrum: sort by
/// squared radial frequency with signed frequencies in (-P/2, P/2], ties
/// by (fx, fy). Deterministic for a fixed P.
inline std::vector<std::size_t> radial_order(int p) {
  struct Key {
    long r2;
    int fx, fy;
    std::size_t idx;
  };
  std::vector<Key> keys;
  keys.reserve(static_cast<std::size_t>(p) * p);
  for (int y = 0; y < p; ++y)
    for (int x = 0; x < p; ++x) {
      const int fx = x <= p / 2 ? x : x - p;
      const int fy = y <= p / 2 ? y : y - p;
      keys.push_back({static_cast<long>(fx) * fx + static_cast<long>(fy) * fy, fx, fy,
                      static_cast<std::size_t>(y) * p + x});
    }
  std::sort(keys.begin(), keys.end(), [](const Key& a, const Key& b) {
    if (a.r2 != b.r2) return a.r2 < b.r2;
    if (a.fx != b.fx) return a.fx < b.fx;
    return a.fy < b.fy;
  });
  std::vector<std::size_t> order(keys.size());
  for (std::size_t i = 0; i < keys.size(); ++i) order[i] = keys[i].idx;
  return order;
}

inline Grid<double> average_pool(const PatternGrid& pattern, int pool_to) {
  const int n = pattern.size();
  if (n <= pool_to) {
    Grid<double> out(n);
    for (std::size_t i = 0; i < out.cell_count(); ++i) out.data()[i] = pattern.data()[i] ? 1.0 : 0.0;
    return out;
  }
  const int f = n / pool_to;
  Grid<double> out(pool_to);
  const double inv = 1.0 / (static_cast<double>(f) * f);
  for (int py = 0; py < pool_to; ++py)
    for (int px = 0; px < pool_to; ++px) {
      double s = 0.0;
      for (int j = 0; j < f; ++j)
        for (int i = 0; i < f; ++i) s += pattern(px * f + i, py * f + j);
      out(px, py) = s * inv;
    }
  return out;
}

}  // namespace detail

/// Pool, transform, keep the k lowest-radial-frequency magnitudes,
/// normalize onto the unit hypersphere.
inline EmbeddingVector embed(const PatternGrid& pattern, const EmbedderConfig& cfg = {}) {
  if (!is_power_of_two(cfg.pool_to)) throw invalid_param("embed: pool_to must be a power of two");
  if (count_ones(pattern) == 0) throw degenerate_input("embed: pattern is all zero");
  const Grid<double> pooled = detail::average_pool(pattern, cfg.pool_to);
  const int p = pooled.size();
  if (cfg.k_dim < 1 || static_cast<long>(cfg.k_dim) > static_cast<long>(p) * p)
    throw invalid_param("embed: k_dim must lie in [1, pool_to^2]");

  auto spectrum = fft::forward_2d(pooled);
  const auto order = detail::radial_order(p);

  EmbeddingVector v;
  v.values.resize(cfg.k_dim);
  for (int i = 0; i < cfg.k_dim; ++i) v.values[i] = std::abs(spectrum[order[i]]);

  double norm = v.norm();
  if (!(norm > 0)) throw degenerate_input("embed: zero spectrum");
  for (auto& x : v.values) x /= norm;
  v.normalized = true;
  return v;
}

// --- Similarity measurements ------------------------------------------------

inline void check_same_dim(const EmbeddingVector& a, const EmbeddingVector& b) {
  if (a.values.size() != b.values.size()) throw size_mismatch("distance: dimension mismatch");
}

/// Plain inner product. Not a metric: it violates positivity (another
/// vector can score higher against v than v itself).
inline double d_inner(const EmbeddingVector& a, const EmbeddingVector& b) {
  check_same_dim(a, b);
  double s = 0.0;
  for (std::size_t i = 0; i < a.values.size(); ++i) s += a.values[i] * b.values[i];
  return s;
}

/// 1 - cos(angle); range [0, 2].
inline double d_cosine(const EmbeddingVector& a, const EmbeddingVector& b) {
  check_same_dim(a, b);
  const double na = a.norm(), nb = b.norm();
  if (!(na > 0) || !(nb > 0)) throw degenerate_input("d_cosine: zero vector");
  return 1.0 - d_inner(a, b) / (na * nb);
}

/// Euclidean distance (the root, not the squared norm).
inline double d_euclid(const EmbeddingVector& a, const EmbeddingVector& b) {
  check_same_dim(a, b);
  double s = 0.0;
  for (std::size_t i = 0; i < a.values.size(); ++i) {
    const double d = a.values[i] - b.values[i];
    s += d * d;
  }
  return std::sqrt(s);
}

enum class Metric { inner, cosine, euclid };

inline std::string metric_name(Metric m) {
  switch (m) {
    case Metric::inner: return "inner";
    case Metric::cosine: return "cosine";
    default: return "euclid";
  }
}

inline Metric metric_from_name(const std::string& name) {
  if (name == "inner") return Metric::inner;
  if (name == "cosine") return Metric::cosine;
  if (name == "euclid") return Metric::euclid;
  throw invalid_param("unknown metric '" + name + "'");
}

/// Ascending-is-closer distance for graph search. Inner product is a
/// similarity, so it enters negated.
inline double metric_distance(Metric m, const EmbeddingVector& a, const EmbeddingVector& b) {
  switch (m) {
    case Metric::inner: return -d_inner(a, b);
    case Metric::cosine: return d_cosine(a, b);
    default: return d_euclid(a, b);
  }
}

// --- Supervised contrastive loss (evaluation utility) ------------------------

struct SupConConfig {
  double tau = 0.07;
};

/// L = -sum_i (1/|J(i)|) sum_{j in J(i)} log( exp(z_i.z_j / tau) /
/// sum_{a != i} exp(z_i.z_a / tau) ), where J(i) are the same-label
/// indices other than i. Inputs must be unit vectors and every label
/// needs at least two members.
inline double supcon_loss(const std::vector<EmbeddingVector>& batch, const std::vector<int>& labels,
                          const SupConConfig& cfg = {}) {
  if (!(cfg.tau > 0)) throw invalid_param("supcon_loss: tau must be positive");
  const std::size_t n = batch.size();
  if (labels.size() != n) throw invalid_batch("supcon_loss: batch/label size mismatch");
  if (n < 2) throw invalid_batch("supcon_loss: batch too small");
  for (const auto& z : batch)
    if (std::abs(z.norm() - 1.0) > 1e-6) throw invalid_batch("supcon_loss: vectors must be unit norm");
  {
    std::vector<int> sorted(labels);
    std::sort(sorted.begin(), sorted.end());
    if (sorted.front() == sorted.back()) throw invalid_batch("supcon_loss: needs at least two labels");
    for (std::size_t i = 0; i < sorted.size();) {
      std::size_t j = i;
      while (j < sorted.size() && sorted[j] == sorted[i]) ++j;
      if (j - i < 2) throw invalid_batch("supcon_loss: singleton class");
      i = j;
    }
  }

  double loss = 0.0;
  std::vector<double> sims(n);
  for (std::size_t i = 0; i < n; ++i) {
    double max_sim = -std::numeric_limits<double>::infinity();
    for (std::size_t a = 0; a < n; ++a) {
      if (a == i) continue;
      sims[a] = d_inner(batch[i], batch[a]) / cfg.tau;
      max_sim = std::max(max_sim, sims[a]);
    }
    double denom = 0.0;
    for (std::size_t a = 0; a < n; ++a)
      if (a != i) denom += std::exp(sims[a] - max_sim);
    const double log_denom = max_sim + std::log(denom);

    double positive_sum = 0.0;
    int positives = 0;
    for (std::size_t j = 0; j < n; ++j) {
      if (j == i || labels[j] != labels[i]) continue;
      positive_sum += sims[j] - log_denom;
      ++positives;
    }
    loss -= positive_sum / positives;
  }
  return loss;
}

}  // namespace opckit
