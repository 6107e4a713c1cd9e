#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "permsort/numkernel.hpp"
#include "permsort/permutation.hpp"

namespace permsort {

struct GridShape {
  std::size_t n_y = 0;  // rows
  std::size_t n_x = 0;  // columns

  std::size_t size() const noexcept { return n_y * n_x; }
  GridShape transposed() const noexcept { return {n_x, n_y}; }
  std::string to_string() const { return std::to_string(n_y) + "x" + std::to_string(n_x); }

  friend bool operator==(const GridShape&, const GridShape&) = default;
};

inline void check_grid(const GridShape& g, std::size_t n) {
  if (g.n_y == 0 || g.n_x == 0) throw Error("grid " + g.to_string() + " has an empty dimension");
  if (g.size() != n)
    throw Error("grid size " + std::to_string(g.size()) + " \u2260 " + std::to_string(n) + " rows");
}

using NeighborPair = std::pair<std::size_t, std::size_t>;

/// Horizontal then vertical 4-neighbour pairs of a row-major grid, open boundary.
inline std::vector<NeighborPair> grid_neighbors(const GridShape& g) {
  std::vector<NeighborPair> pairs;
  if (g.size() == 0) return pairs;
  pairs.reserve(g.n_y * (g.n_x - 1) + g.n_x * (g.n_y - 1));
  for (std::size_t r = 0; r < g.n_y; ++r)
    for (std::size_t c = 0; c + 1 < g.n_x; ++c) pairs.emplace_back(r * g.n_x + c, r * g.n_x + c + 1);
  for (std::size_t r = 0; r + 1 < g.n_y; ++r)
    for (std::size_t c = 0; c < g.n_x; ++c) pairs.emplace_back(r * g.n_x + c, (r + 1) * g.n_x + c);
  return pairs;
}

inline double row_distance(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t c = 0; c < a.size(); ++c) {
    const double d = a[c] - b[c];
    s += d * d;
  }
  return std::sqrt(s);
}

// ---------------------------------------------------------------------------
// Smoothness term

/// Mean Euclidean distance over `pairs`, divided by `norm`. When `grad` is
/// given it receives dL/dy (zero-length pairs contribute a zero subgradient).
inline double neighborhood_loss(const Matrix& y, std::span<const NeighborPair> pairs, double norm,
                                Matrix* grad = nullptr) {
  if (!(norm > 0.0)) throw Error("neighborhood_loss: norm must be positive");
  if (grad) *grad = Matrix(y.rows(), y.cols());
  if (pairs.empty()) return 0.0;
  const double scale = 1.0 / (static_cast<double>(pairs.size()) * norm);
  double total = 0.0;
  for (const auto& [a, b] : pairs) {
    const double d = row_distance(y.row(a), y.row(b));
    total += d;
    if (grad && d > 0.0) {
      auto ga = grad->row(a);
      auto gb = grad->row(b);
      for (std::size_t c = 0; c < y.cols(); ++c) {
        const double v = scale * (y(a, c) - y(b, c)) / d;
        ga[c] += v;
        gb[c] -= v;
      }
    }
  }
  return total * scale;
}

inline double neighborhood_loss(const Matrix& y, const GridShape& g, double norm, Matrix* grad = nullptr) {
  check_grid(g, y.rows());
  const auto pairs = grid_neighbors(g);
  return neighborhood_loss(y, pairs, norm, grad);
}

// ---------------------------------------------------------------------------
// Stochastic constraint term

/// (1/N) sum_j (colsum_j - 1)^2
inline double stochastic_constraint_loss(std::span<const double> colsum, std::vector<double>* grad = nullptr) {
  const double n = static_cast<double>(colsum.size());
  double total = 0.0;
  if (grad) grad->assign(colsum.size(), 0.0);
  for (std::size_t j = 0; j < colsum.size(); ++j) {
    const double e = colsum[j] - 1.0;
    total += e * e;
    if (grad) (*grad)[j] = 2.0 * e / n;
  }
  return colsum.empty() ? 0.0 : total / n;
}

inline double stochastic_constraint_loss(const Matrix& p) { return stochastic_constraint_loss(column_sums(p)); }

// ---------------------------------------------------------------------------
// Standard deviation term

/// Population standard deviation over every entry of m.
inline double global_std(const Matrix& m) {
  if (m.empty()) return 0.0;
  double mean = 0.0;
  for (double v : m.values()) mean += v;
  mean /= static_cast<double>(m.size());
  double var = 0.0;
  for (double v : m.values()) var += (v - mean) * (v - mean);
  return std::sqrt(var / static_cast<double>(m.size()));
}

/// |sigma_x - sigma_y| / sigma_x with sigma_x passed precomputed.
inline double std_loss(double sigma_x, const Matrix& y, Matrix* grad = nullptr) {
  if (!(sigma_x > 0.0)) throw Error("std_loss: input has zero standard deviation");
  const double sigma_y = global_std(y);
  if (grad) {
    *grad = Matrix(y.rows(), y.cols());
    const double s = sign(sigma_y - sigma_x) / sigma_x;
    if (s != 0.0 && sigma_y > 0.0) {
      double mean = 0.0;
      for (double v : y.values()) mean += v;
      mean /= static_cast<double>(y.size());
      const double k = s / (static_cast<double>(y.size()) * sigma_y);
      for (std::size_t i = 0; i < y.size(); ++i) grad->values()[i] = k * (y.values()[i] - mean);
    }
  }
  return std::abs(sigma_x - sigma_y) / sigma_x;
}

inline double std_loss(const Matrix& x, const Matrix& y, Matrix* grad = nullptr) {
  return std_loss(global_std(x), y, grad);
}

// ---------------------------------------------------------------------------
// Normalization and quality

/// Mean Euclidean distance over all unordered pairs of distinct rows.
inline double mean_pairwise_distance_exact(const Matrix& x) {
  const std::size_t n = x.rows();
  if (n < 2) return 0.0;
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) total += row_distance(x.row(i), x.row(j));
  return total / (static_cast<double>(n) * static_cast<double>(n - 1) / 2.0);
}

inline constexpr std::size_t kPairSamples = 10000;
inline constexpr std::size_t kExactPairLimit = 512;

/// Mean distance over `samples` seeded random pairs of distinct rows.
inline double mean_pairwise_distance_sampled(const Matrix& x, std::uint64_t seed, std::size_t samples = kPairSamples) {
  const std::size_t n = x.rows();
  if (n < 2) return 0.0;
  Rng rng(seed);
  double total = 0.0;
  for (std::size_t k = 0; k < samples; ++k) {
    const std::size_t i = uniform_index(rng, n);
    std::size_t j = uniform_index(rng, n - 1);
    if (j >= i) ++j;
    total += row_distance(x.row(i), x.row(j));
  }
  return total / static_cast<double>(samples);
}

/// Exact enumeration up to 512 rows, seeded sampling above.
inline double mean_pairwise_distance(const Matrix& x, std::uint64_t seed) {
  return x.rows() <= kExactPairLimit ? mean_pairwise_distance_exact(x) : mean_pairwise_distance_sampled(x, seed);
}

/// 1 - mean neighbour distance of the arranged grid / mean pairwise distance.
/// A scale-free stand-in for neighbourhood-preservation scores: 1 means all
/// neighbours are identical, 0 is what a random arrangement gives.
inline double quality(const Matrix& x, const HardPermutation& h, const GridShape& g, std::uint64_t seed) {
  check_grid(g, x.rows());
  const Matrix arranged = apply_hard(h, x);
  const double mpd = mean_pairwise_distance(x, seed);
  if (!(mpd > 0.0)) throw Error("quality: mean pairwise distance is zero (all vectors identical)");
  const double nbr = neighborhood_loss(arranged, g, 1.0);
  return 1.0 - nbr / mpd;
}

// ---------------------------------------------------------------------------
// Total loss

struct LossWeights {
  double lambda_s = 1.0;
  double lambda_sigma = 2.0;
};

struct LossBreakdown {
  double total = 0.0;
  double l_nbr = 0.0;
  double l_s = 0.0;
  double l_sigma = 0.0;
  double lambda_s = 1.0;
  double lambda_sigma = 2.0;
};

/// Smoothness + lambda_s * stochastic + lambda_sigma * std, evaluated on
/// Y = P X and the column sums of P. Holds everything that stays fixed over
/// a training run.
class GridObjective {
 public:
  GridObjective(const Matrix& x, std::vector<NeighborPair> pairs, double norm, LossWeights weights = {})
      : pairs_(std::move(pairs)), norm_(norm), sigma_x_(global_std(x)), weights_(weights) {
    if (!(norm_ > 0.0)) throw Error("GridObjective: normalization must be positive");
    if (!(sigma_x_ > 0.0)) throw Error("GridObjective: input has zero standard deviation");
  }

  struct Evaluation {
    LossBreakdown loss;
    Matrix grad_y;
    std::vector<double> grad_colsum;
  };

  Evaluation evaluate(const Matrix& y, std::span<const double> colsum, bool with_grad = true) const {
    Evaluation e;
    Matrix g_sigma;
    e.loss.lambda_s = weights_.lambda_s;
    e.loss.lambda_sigma = weights_.lambda_sigma;
    e.loss.l_nbr = neighborhood_loss(y, pairs_, norm_, with_grad ? &e.grad_y : nullptr);
    e.loss.l_s = stochastic_constraint_loss(colsum, with_grad ? &e.grad_colsum : nullptr);
    e.loss.l_sigma = std_loss(sigma_x_, y, with_grad ? &g_sigma : nullptr);
    e.loss.total = e.loss.l_nbr + weights_.lambda_s * e.loss.l_s + weights_.lambda_sigma * e.loss.l_sigma;
    if (with_grad) {
      for (std::size_t k = 0; k < e.grad_y.size(); ++k)
        e.grad_y.values()[k] += weights_.lambda_sigma * g_sigma.values()[k];
      for (double& v : e.grad_colsum) v *= weights_.lambda_s;
    }
    return e;
  }

  void set_pairs(std::vector<NeighborPair> pairs) { pairs_ = std::move(pairs); }
  std::span<const NeighborPair> pairs() const noexcept { return pairs_; }
  double norm() const noexcept { return norm_; }
  double sigma_x() const noexcept { return sigma_x_; }
  const LossWeights& weights() const noexcept { return weights_; }

 private:
  std::vector<NeighborPair> pairs_;
  double norm_;
  double sigma_x_;
  LossWeights weights_;
};

/// Loss and weight gradient of SoftSort(w, tau) applied to x, streamed.
struct SoftSortLoss {
  LossBreakdown loss;
  std::vector<double> grad_w;
};

inline SoftSortLoss softsort_loss(std::span<const double> w, double tau, const Matrix& x, const GridObjective& obj,
                                  std::size_t block = kDefaultBlock, bool with_grad = true) {
  const SoftSortView view(w, tau, block);
  const StreamedProduct fwd = apply_soft_rowwise(view, x);
  auto e = obj.evaluate(fwd.y, fwd.colsum, with_grad);
  SoftSortLoss out{e.loss, {}};
  if (with_grad) out.grad_w = apply_soft_rowwise_backward(view, x, e.grad_y, e.grad_colsum, false).w;
  return out;
}

/// Same loss with P materialized and gradients taken on the tape.
inline SoftSortLoss softsort_loss_materialized(std::span<const double> w, double tau, const Matrix& x,
                                               const GridObjective& obj) {
  Tape t;
  Var wv = t.variable(Matrix::column(w));
  Var p = softsort(t, wv, tau);
  const Matrix& pv = t.value(p);
  auto e = obj.evaluate(matmul(pv, x), column_sums(pv));
  // dL/dP = dL/dY X^T + 1 (dL/dcolsum)^T
  Matrix gp = matmul_nt(e.grad_y, x);
  for (std::size_t i = 0; i < gp.rows(); ++i)
    for (std::size_t j = 0; j < gp.cols(); ++j) gp(i, j) += e.grad_colsum[j];
  t.backward(p, gp);
  const Matrix gw = t.grad(wv);
  return {e.loss, std::vector<double>(gw.values().begin(), gw.values().end())};
}

/// Total loss of SoftSort(w, tau) on x laid out on g, streamed, with the
/// smoothness normalized by the mean pairwise distance of x.
inline LossBreakdown total_loss(std::span<const double> w, const Matrix& x, const GridShape& g, double tau,
                                LossWeights weights = {}, std::uint64_t seed = 0, std::size_t block = kDefaultBlock) {
  check_grid(g, x.rows());
  if (w.size() != x.rows()) throw Error("total_loss: weight count does not match rows");
  const GridObjective obj(x, grid_neighbors(g), mean_pairwise_distance(x, seed), weights);
  return softsort_loss(w, tau, x, obj, block, false).loss;
}

}  // namespace permsort
