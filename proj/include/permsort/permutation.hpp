#pragma once

#include <algorithm>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "permsort/numkernel.hpp"
#include "permsort/tape.hpp"

namespace permsort {

/// Rows of the streaming block used when none is given. At N = 1024 a block
/// is 2 MiB.
inline constexpr std::size_t kDefaultBlock = 256;

/// SoftSort entries with -|s_i - w_j| / tau below -kSoftSortSupport are
/// dropped (relative size < 3e-16).
inline constexpr double kSoftSortSupport = 36.0;

/// perm[i] is the source row placed at output slot i.
struct HardPermutation {
  std::vector<std::size_t> perm;

  std::size_t size() const noexcept { return perm.size(); }

  static HardPermutation identity(std::size_t n) {
    HardPermutation h;
    h.perm.resize(n);
    std::iota(h.perm.begin(), h.perm.end(), std::size_t{0});
    return h;
  }

  friend bool operator==(const HardPermutation&, const HardPermutation&) = default;
};

struct Validity {
  bool valid = true;
  /// First value that occurs twice (or is out of range) when invalid.
  std::optional<std::size_t> duplicate;

  explicit operator bool() const noexcept { return valid; }
};

inline Validity is_valid(const HardPermutation& h) {
  std::vector<char> seen(h.size(), 0);
  for (std::size_t target : h.perm) {
    if (target >= h.size() || seen[target]) return {false, target};
    seen[target] = 1;
  }
  return {};
}

inline HardPermutation inverse(const HardPermutation& h) {
  if (!is_valid(h)) throw Error("inverse: permutation is not a bijection");
  HardPermutation inv;
  inv.perm.resize(h.size());
  for (std::size_t i = 0; i < h.size(); ++i) inv.perm[h.perm[i]] = i;
  return inv;
}

/// Composition with the convention of apply_hard:
/// apply_hard(compose(a, b), x) == apply_hard(b, apply_hard(a, x)).
inline HardPermutation compose(const HardPermutation& a, const HardPermutation& b) {
  if (a.size() != b.size()) throw Error("compose: size mismatch");
  HardPermutation c;
  c.perm.resize(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) c.perm[i] = a.perm[b.perm[i]];
  return c;
}

/// out.row(i) = x.row(perm[i])
inline Matrix apply_hard(const HardPermutation& h, const Matrix& x) {
  if (h.size() != x.rows())
    throw Error("apply_hard: permutation of size " + std::to_string(h.size()) + " for " +
                std::to_string(x.rows()) + " rows");
  if (auto v = is_valid(h); !v)
    throw Error("apply_hard: invalid permutation (duplicate " + std::to_string(*v.duplicate) + ")");
  Matrix out(x.rows(), x.cols());
  for (std::size_t i = 0; i < h.size(); ++i) {
    auto src = x.row(h.perm[i]);
    std::copy(src.begin(), src.end(), out.row(i).begin());
  }
  return out;
}

template <typename T>
std::vector<T> apply_hard(const HardPermutation& h, const std::vector<T>& v) {
  if (h.size() != v.size()) throw Error("apply_hard: size mismatch");
  std::vector<T> out(v.size());
  for (std::size_t i = 0; i < h.size(); ++i) out[i] = v[h.perm[i]];
  return out;
}

/// Stable ascending argsort; ties keep their original index order.
inline std::vector<std::size_t> argsort(std::span<const double> w) {
  std::vector<std::size_t> order(w.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return w[a] < w[b]; });
  return order;
}

inline void check_softsort_args(std::span<const double> w, double tau) {
  if (w.empty()) throw Error("softsort: empty weight vector");
  if (!all_finite(w)) throw Error("softsort: non-finite weight");
  if (!(tau > 0.0) || !std::isfinite(tau)) throw Error("softsort: temperature must be positive, got " + std::to_string(tau));
}

/// Weights k / N for k = 0..N-1. They harden to the identity at every tau.
inline std::vector<double> ascending_weights(std::size_t n) {
  std::vector<double> w(n);
  for (std::size_t k = 0; k < n; ++k) w[k] = static_cast<double>(k) / static_cast<double>(n);
  return w;
}

/// Argmax of every row, lowest index on ties. The result may contain duplicates.
inline HardPermutation harden(const Matrix& p) {
  HardPermutation h;
  h.perm.resize(p.rows());
  for (std::size_t i = 0; i < p.rows(); ++i) {
    auto r = p.row(i);
    h.perm[i] = static_cast<std::size_t>(std::max_element(r.begin(), r.end()) - r.begin());
  }
  return h;
}

/// SoftSort recorded on a tape; `w` is an N x 1 variable. The sorted vector
/// is w gathered by its argsort, so gradients reach w through both operands.
inline Var softsort(Tape& t, Var w, double tau) {
  const Matrix& wv = t.value(w);
  if (wv.cols() != 1) throw Error("softsort: weights must be a column vector");
  check_softsort_args(wv.values(), tau);
  Var sorted = gather_rows(t, w, argsort(wv.values()));
  Var dist = abs_distance(t, sorted, w);
  return softmax_rows(t, scale(t, dist, -1.0 / tau));
}

/// Lazy SoftSort matrix defined by (w, tau) and evaluated one block of rows at
/// a time, so P is never held in full. Peak scratch is block x N doubles plus
/// O(N) bookkeeping.
class SoftSortView {
 public:
  SoftSortView(std::span<const double> w, double tau, std::size_t block = kDefaultBlock)
      : w_(w.begin(), w.end()), tau_(tau), block_(block) {
    check_softsort_args(w, tau);
    if (block_ == 0) throw Error("SoftSortView: block must be >= 1");
    const auto order = argsort(w);
    order_.assign(order.begin(), order.end());
    sorted_.resize(w_.size());
    for (std::size_t i = 0; i < w_.size(); ++i) sorted_[i] = w_[order_[i]];
  }

  std::size_t size() const noexcept { return w_.size(); }
  double tau() const noexcept { return tau_; }
  std::size_t block() const noexcept { return block_; }
  std::span<const double> weights() const noexcept { return w_; }
  /// order()[i] is the index of the i-th smallest weight.
  std::span<const std::size_t> order() const noexcept { return order_; }

  /// Writes rows [begin, begin + out.rows()) of P into `out`. Only weights
  /// within kSoftSortSupport * tau of the row's sorted value are evaluated;
  /// the rest are below exp(-kSoftSortSupport) of the row maximum and are
  /// stored as exact zeros.
  void rows(std::size_t begin, Matrix& out) const {
    const double reach = kSoftSortSupport * tau_;
    for (std::size_t r = 0; r < out.rows(); ++r) {
      const double s = sorted_[begin + r];
      auto o = out.row(r);
      std::fill(o.begin(), o.end(), 0.0);
      const auto lo = std::lower_bound(sorted_.begin(), sorted_.end(), s - reach) - sorted_.begin();
      const auto hi = std::upper_bound(sorted_.begin(), sorted_.end(), s + reach) - sorted_.begin();
      // The row maximum is exactly 0: s equals w[order[begin + r]].
      for (auto k = lo; k < hi; ++k) o[order_[k]] = std::exp(-std::abs(s - sorted_[k]) / tau_);
      double total = 0.0;
      for (double v : o) total += v;
      const double inv = 1.0 / total;
      for (auto k = lo; k < hi; ++k) o[order_[k]] *= inv;
    }
  }

  Matrix materialize() const {
    Matrix p(size(), size());
    rows(0, p);
    return p;
  }

  /// Calls fn(begin, block_matrix) for consecutive row blocks.
  template <typename Fn>
  void for_each_block(Fn&& fn) const {
    const std::size_t n = size();
    Matrix buf(std::min(block_, n), n);
    for (std::size_t begin = 0; begin < n; begin += block_) {
      const std::size_t len = std::min(block_, n - begin);
      if (len != buf.rows()) {
        buf = Matrix();
        buf = Matrix(len, n);
      }
      rows(begin, buf);
      fn(begin, static_cast<const Matrix&>(buf));
    }
  }

 private:
  TrackedVector<double> w_;
  double tau_;
  std::size_t block_;
  TrackedVector<std::size_t> order_;
  TrackedVector<double> sorted_;
};

/// Materialized SoftSort matrix: row i is softmax(-|sort(w)_i - w| / tau).
inline Matrix softsort(std::span<const double> w, double tau) { return SoftSortView(w, tau, w.size()).materialize(); }

inline HardPermutation harden(const SoftSortView& p) {
  HardPermutation h;
  h.perm.resize(p.size());
  p.for_each_block([&](std::size_t begin, const Matrix& blk) {
    for (std::size_t r = 0; r < blk.rows(); ++r) {
      auto row = blk.row(r);
      h.perm[begin + r] = static_cast<std::size_t>(std::max_element(row.begin(), row.end()) - row.begin());
    }
  });
  return h;
}

/// Result of streaming Y = P X.
struct StreamedProduct {
  Matrix y;
  /// Column sums of P, accumulated block by block.
  std::vector<double> colsum;
};

/// Y = P_soft X computed in blocks of at most `block` rows.
inline StreamedProduct apply_soft_rowwise(const SoftSortView& p, const Matrix& x) {
  const std::size_t n = p.size();
  if (x.rows() != n) throw Error("apply_soft_rowwise: X has " + std::to_string(x.rows()) + " rows, P is " + std::to_string(n));
  const std::size_t d = x.cols();
  StreamedProduct out{Matrix(n, d), std::vector<double>(n, 0.0)};
  p.for_each_block([&](std::size_t begin, const Matrix& blk) {
    for (std::size_t r = 0; r < blk.rows(); ++r) {
      auto prow = blk.row(r);
      auto yrow = out.y.row(begin + r);
      for (std::size_t j = 0; j < n; ++j) {
        const double pij = prow[j];
        if (pij == 0.0) continue;
        out.colsum[j] += pij;
        auto xrow = x.row(j);
        for (std::size_t c = 0; c < d; ++c) yrow[c] += pij * xrow[c];
      }
    }
  });
  return out;
}

inline StreamedProduct apply_soft_rowwise(std::span<const double> w, double tau, const Matrix& x,
                                          std::size_t block = kDefaultBlock) {
  return apply_soft_rowwise(SoftSortView(w, tau, block), x);
}

struct StreamedGradients {
  std::vector<double> w;
  Matrix x;
};

/// Backward pass of apply_soft_rowwise. Takes dL/dY and dL/d(colsum) and
/// returns dL/dw and (optionally) dL/dX, recomputing P block by block.
inline StreamedGradients apply_soft_rowwise_backward(const SoftSortView& p, const Matrix& x, const Matrix& grad_y,
                                                     std::span<const double> grad_colsum, bool with_grad_x = true) {
  const std::size_t n = p.size();
  const std::size_t d = x.cols();
  if (x.rows() != n || grad_y.rows() != n || grad_y.cols() != d || grad_colsum.size() != n)
    throw Error("apply_soft_rowwise_backward: shape mismatch");
  const auto w = p.weights();
  const auto order = p.order();
  const double inv_tau = 1.0 / p.tau();
  StreamedGradients g{std::vector<double>(n, 0.0), with_grad_x ? Matrix(n, d) : Matrix()};
  TrackedVector<double> gp(n);
  p.for_each_block([&](std::size_t begin, const Matrix& blk) {
    for (std::size_t r = 0; r < blk.rows(); ++r) {
      const std::size_t i = begin + r;
      auto prow = blk.row(r);
      auto gy = grad_y.row(i);
      // dL/dP_ij = <dL/dY_i, X_j> + dL/dcolsum_j
      double dot = 0.0;
      for (std::size_t j = 0; j < n; ++j) {
        if (prow[j] == 0.0) continue;
        auto xrow = x.row(j);
        double v = grad_colsum[j];
        for (std::size_t c = 0; c < d; ++c) v += gy[c] * xrow[c];
        gp[j] = v;
        dot += prow[j] * v;
      }
      const double s = w[order[i]];
      double g_sorted = 0.0;
      for (std::size_t j = 0; j < n; ++j) {
        const double pij = prow[j];
        if (pij == 0.0) continue;
        // logits_ij = -|s_i - w_j| / tau
        const double dlogit = pij * (gp[j] - dot);
        const double dl_ds = -sign(s - w[j]) * inv_tau * dlogit;
        g_sorted += dl_ds;
        g.w[j] -= dl_ds;
        if (with_grad_x) {
          auto gx = g.x.row(j);
          for (std::size_t c = 0; c < d; ++c) gx[c] += pij * gy[c];
        }
      }
      g.w[order[i]] += g_sorted;
    }
  });
  return g;
}

}  // namespace permsort
