#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <memory>
#include <string>
#include <vector>

#include "permsort/numkernel.hpp"
#include "permsort/objective.hpp"
#include "permsort/permutation.hpp"
#include "permsort/tape.hpp"

namespace permsort {

// ---------------------------------------------------------------------------
// Sinkhorn normalization (log space)

namespace detail {

/// Row and column log-sum-exp offsets subtracted at every iteration.
struct SinkhornTrace {
  std::vector<std::vector<double>> row_offsets;
  std::vector<std::vector<double>> col_offsets;
};

inline double log_sum_exp(std::span<const double> v) {
  double mx = -std::numeric_limits<double>::infinity();
  for (double x : v) mx = std::max(mx, x);
  double s = 0.0;
  for (double x : v) s += std::exp(x - mx);
  return mx + std::log(s);
}

/// In-place alternating row/column normalization of a log-matrix.
inline void log_sinkhorn_inplace(Matrix& l, std::size_t iterations, SinkhornTrace* trace) {
  const std::size_t n = l.rows(), m = l.cols();
  std::vector<double> colmax(m), colsum(m), offs(m);
  for (std::size_t it = 0; it < iterations; ++it) {
    std::vector<double> a(n);
    for (std::size_t i = 0; i < n; ++i) {
      auto r = l.row(i);
      a[i] = log_sum_exp(r);
      for (double& v : r) v -= a[i];
    }
    std::fill(colmax.begin(), colmax.end(), -std::numeric_limits<double>::infinity());
    for (std::size_t i = 0; i < n; ++i) {
      auto r = l.row(i);
      for (std::size_t j = 0; j < m; ++j) colmax[j] = std::max(colmax[j], r[j]);
    }
    std::fill(colsum.begin(), colsum.end(), 0.0);
    for (std::size_t i = 0; i < n; ++i) {
      auto r = l.row(i);
      for (std::size_t j = 0; j < m; ++j) colsum[j] += std::exp(r[j] - colmax[j]);
    }
    for (std::size_t j = 0; j < m; ++j) offs[j] = colmax[j] + std::log(colsum[j]);
    for (std::size_t i = 0; i < n; ++i) {
      auto r = l.row(i);
      for (std::size_t j = 0; j < m; ++j) r[j] -= offs[j];
    }
    if (trace) {
      trace->row_offsets.push_back(std::move(a));
      trace->col_offsets.push_back(offs);
    }
  }
}

}  // namespace detail

/// `iterations` rounds of row then column normalization of a positive
/// matrix, carried out on log(m).
inline Matrix sinkhorn_normalize(const Matrix& m, std::size_t iterations) {
  Matrix l(m.rows(), m.cols());
  for (std::size_t k = 0; k < m.size(); ++k) {
    const double v = m.values()[k];
    if (!(v > 0.0) || !std::isfinite(v))
      throw Error("sinkhorn_normalize: entry " + std::to_string(k / m.cols()) + "," +
                  std::to_string(k % m.cols()) + " is not a positive finite number");
    l.values()[k] = std::log(v);
  }
  detail::log_sinkhorn_inplace(l, iterations, nullptr);
  for (double& v : l.values()) v = std::exp(v);
  return l;
}

/// exp(sinkhorn(log_alpha)) recorded on the tape. The backward pass replays
/// the normalization in reverse, rebuilding each intermediate log-matrix
/// from log_alpha and the stored offset vectors, so only O(iterations * N)
/// extra memory is kept.
inline Var sinkhorn(Tape& t, Var log_alpha, std::size_t iterations) {
  if (iterations == 0) throw Error("sinkhorn: iterations must be >= 1");
  Matrix l = t.value(log_alpha);
  auto trace = std::make_shared<detail::SinkhornTrace>();
  detail::log_sinkhorn_inplace(l, iterations, trace.get());
  for (double& v : l.values()) v = std::exp(v);
  return t.record(std::move(l), [log_alpha, trace](Tape& tp, std::size_t self) {
    const Matrix& p = tp.value(Var{self});
    const Matrix& l0 = tp.value(log_alpha);
    const std::size_t n = p.rows(), m = p.cols();
    Matrix g = tp.grad_ref(self);
    for (std::size_t k = 0; k < g.size(); ++k) g.values()[k] *= p.values()[k];

    const std::size_t iters = trace->row_offsets.size();
    std::vector<double> acc_row(n, 0.0), acc_col(m, 0.0);
    for (std::size_t it = 0; it < iters; ++it) {
      for (std::size_t i = 0; i < n; ++i) acc_row[i] += trace->row_offsets[it][i];
      for (std::size_t j = 0; j < m; ++j) acc_col[j] += trace->col_offsets[it][j];
    }
    std::vector<double> reduce;
    for (std::size_t it = iters; it-- > 0;) {
      // Column step: output is l0 - acc_row - acc_col.
      reduce.assign(m, 0.0);
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < m; ++j) reduce[j] += g(i, j);
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < m; ++j) g(i, j) -= std::exp(l0(i, j) - acc_row[i] - acc_col[j]) * reduce[j];
      for (std::size_t j = 0; j < m; ++j) acc_col[j] -= trace->col_offsets[it][j];
      // Row step: output is l0 - acc_row - acc_col (columns already rolled back).
      reduce.assign(n, 0.0);
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < m; ++j) reduce[i] += g(i, j);
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < m; ++j) g(i, j) -= std::exp(l0(i, j) - acc_row[i] - acc_col[j]) * reduce[i];
      for (std::size_t i = 0; i < n; ++i) acc_row[i] -= trace->row_offsets[it][i];
    }
    tp.accumulate(log_alpha, g);
  });
}

// ---------------------------------------------------------------------------
// Gumbel-Sinkhorn

struct SinkhornParams {
  Matrix logits;  // N x N learnable
  double tau = 1.0;
  std::size_t iterations = 20;
  double noise_scale = 1.0;
};

/// N x N i.i.d. Gumbel(0, 1) draws, -log(-log(u)).
inline Matrix gumbel_noise(std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  Matrix g(n, n);
  for (double& v : g.values()) v = standard_gumbel(rng);
  return g;
}

inline void check_sinkhorn_params(const SinkhornParams& p) {
  if (p.logits.rows() != p.logits.cols() || p.logits.empty()) throw Error("gumbel_sinkhorn: logits must be square");
  if (!all_finite(p.logits.values())) throw Error("gumbel_sinkhorn: non-finite logits");
  if (!(p.tau > 0.0)) throw Error("gumbel_sinkhorn: temperature must be positive");
  if (p.iterations == 0) throw Error("gumbel_sinkhorn: iterations must be >= 1");
  if (p.noise_scale < 0.0) throw Error("gumbel_sinkhorn: noise scale must be non-negative");
}

/// sinkhorn((logits + noise_scale * noise) / tau) with `logits` a tape variable.
inline Var gumbel_sinkhorn(Tape& t, Var logits, const Matrix& noise, double tau, double noise_scale,
                           std::size_t iterations) {
  if (!(tau > 0.0)) throw Error("gumbel_sinkhorn: temperature must be positive");
  Var perturbed = logits;
  if (noise_scale != 0.0) perturbed = add(t, logits, scale(t, t.constant(noise), noise_scale));
  return sinkhorn(t, scale(t, perturbed, 1.0 / tau), iterations);
}

inline Matrix gumbel_sinkhorn(const SinkhornParams& p, std::uint64_t seed) {
  check_sinkhorn_params(p);
  Tape t;
  const Matrix noise = p.noise_scale != 0.0 ? gumbel_noise(p.logits.rows(), seed) : Matrix(p.logits.rows(), p.logits.cols());
  Var out = gumbel_sinkhorn(t, t.variable(p.logits), noise, p.tau, p.noise_scale, p.iterations);
  return t.value(out);
}

// ---------------------------------------------------------------------------
// Low-rank "kissing" factorization

inline constexpr std::array<std::uint64_t, 24> kKissingNumbers = {
    2,    6,    12,   24,   40,    72,    126,   240,   306,   500,   582,    840,
    1130, 1582, 2564, 4320, 5346, 7398, 10668, 17400, 27720, 49896, 93150, 196560};

/// Smallest dimension whose (best known) kissing number is at least n.
inline std::size_t min_rank_for(std::size_t n) {
  if (n == 0) throw Error("min_rank_for: n must be >= 1");
  for (std::size_t m = 0; m < kKissingNumbers.size(); ++m)
    if (kKissingNumbers[m] >= n) return m + 1;
  throw Error("min_rank_for: n = " + std::to_string(n) +
              " exceeds the kissing-number table (max 196560 at dimension 24); pass the rank explicitly");
}

struct KissingParams {
  Matrix v;  // N x M
  Matrix w;  // N x M
  double scale = 10.0;
};

inline Var kissing_permutation(Tape& t, Var v, Var w, Var scale) {
  Var sim = matmul_nt(t, row_normalize(t, v), row_normalize(t, w));
  return softmax_rows(t, mul_scalar(t, sim, scale));
}

/// softmax_rows(scale * normalize(V) * normalize(W)^T)
inline Matrix kissing_permutation(const KissingParams& p) {
  if (p.v.cols() == 0 || !p.v.same_shape(p.w)) throw Error("kissing_permutation: V and W must both be N x M, M >= 1");
  Tape t;
  Var out = kissing_permutation(t, t.variable(p.v), t.variable(p.w), t.variable(Matrix(1, 1, p.scale)));
  return t.value(out);
}

// ---------------------------------------------------------------------------
// Parameter accounting

inline std::uint64_t sinkhorn_parameter_count(std::uint64_t n) { return n * n; }
inline std::uint64_t kissing_parameter_count(std::uint64_t n, std::uint64_t m) { return 2 * n * m; }
inline std::uint64_t softsort_parameter_count(std::uint64_t n) { return n; }

// ---------------------------------------------------------------------------
// Training

/// Outcome shared by every method. perm[cell] is the original row placed at
/// grid cell `cell` (row-major).
struct SortOutcome {
  HardPermutation perm;
  Validity validity;
  LossBreakdown final_loss;
  std::vector<LossBreakdown> history;
  std::uint64_t parameter_count = 0;
  bool repaired = false;
};

namespace detail {

/// Loss on a materialized P and dL/dP.
inline GridObjective::Evaluation evaluate_materialized(const Matrix& p, const Matrix& x, const GridObjective& obj,
                                                       Matrix& grad_p) {
  auto e = obj.evaluate(matmul(p, x), column_sums(p));
  grad_p = matmul_nt(e.grad_y, x);
  for (std::size_t i = 0; i < grad_p.rows(); ++i)
    for (std::size_t j = 0; j < grad_p.cols(); ++j) grad_p(i, j) += e.grad_colsum[j];
  return e;
}

inline double geometric(double start, double end, double frac) {
  if (frac <= 0.0) return start;
  if (frac >= 1.0) return end;
  return start * std::pow(end / start, frac);
}

}  // namespace detail

struct SinkhornTrainOptions {
  std::size_t steps = 300;
  std::size_t iterations = 20;
  std::size_t final_iterations = 100;
  double tau_start = 1.0;
  double tau_end = 0.03;
  double noise_start = 1.0;
  double noise_end = 0.0;
  double init_std = 0.01;
  AdamOptions adam{.lr = 0.1};
  LossWeights weights{};
  std::uint64_t seed = 0;
  std::size_t history_every = 1;
};

/// Gumbel-Sinkhorn trained on the grid objective. The hard result is the row
/// argmax of the noise-free matrix at the final temperature; it is reported
/// as-is, never repaired.
inline SortOutcome train_gumbel_sinkhorn(const Matrix& x, const GridShape& g, const SinkhornTrainOptions& o) {
  const std::size_t n = x.rows();
  check_grid(g, n);
  const GridObjective obj(x, grid_neighbors(g), mean_pairwise_distance(x, o.seed), o.weights);
  Rng rng(mix_seed(o.seed));
  Matrix logits(n, n);
  for (double& v : logits.values()) v = o.init_std * standard_normal(rng);
  Adam adam(logits.size(), o.adam);
  SortOutcome out;
  out.parameter_count = sinkhorn_parameter_count(n);
  Matrix grad_p;
  for (std::size_t step = 0; step < o.steps; ++step) {
    const double frac = o.steps > 1 ? static_cast<double>(step) / static_cast<double>(o.steps - 1) : 1.0;
    const double tau = detail::geometric(o.tau_start, o.tau_end, frac);
    const double noise_scale = o.noise_start + (o.noise_end - o.noise_start) * frac;
    Matrix noise = noise_scale != 0.0 ? gumbel_noise(n, mix_seed(o.seed + 1 + step)) : Matrix(n, n);
    Tape t;
    Var lv = t.variable(logits);
    Var p = gumbel_sinkhorn(t, lv, noise, tau, noise_scale, o.iterations);
    auto e = detail::evaluate_materialized(t.value(p), x, obj, grad_p);
    t.backward(p, grad_p);
    const Matrix gl = t.grad(lv);
    adam.step(logits.values(), gl.values());
    if (o.history_every && (step % o.history_every == 0 || step + 1 == o.steps)) out.history.push_back(e.loss);
  }
  Tape t;
  Var p = sinkhorn(t, scale(t, t.variable(logits), 1.0 / o.tau_end), o.final_iterations);
  Matrix unused;
  out.final_loss = detail::evaluate_materialized(t.value(p), x, obj, unused).loss;
  out.perm = harden(t.value(p));
  out.validity = is_valid(out.perm);
  return out;
}

struct KissingTrainOptions {
  std::size_t steps = 300;
  std::size_t rank = 0;  // 0 selects min_rank_for(N)
  double init_scale = 10.0;
  AdamOptions adam{.lr = 0.01};
  LossWeights weights{};
  std::uint64_t seed = 0;
  std::size_t history_every = 1;
};

/// Low-rank factorization trained on the grid objective; V, W and the
/// softmax scale are learned. Invalid hardenings are reported, not repaired.
inline SortOutcome train_kissing(const Matrix& x, const GridShape& g, const KissingTrainOptions& o) {
  const std::size_t n = x.rows();
  check_grid(g, n);
  const std::size_t m = o.rank ? o.rank : min_rank_for(n);
  const GridObjective obj(x, grid_neighbors(g), mean_pairwise_distance(x, o.seed), o.weights);
  Rng rng(mix_seed(o.seed));
  KissingParams params{Matrix(n, m), Matrix(n, m), o.init_scale};
  for (double& v : params.v.values()) v = standard_normal(rng);
  for (double& v : params.w.values()) v = standard_normal(rng);
  Adam adam_v(params.v.size(), o.adam), adam_w(params.w.size(), o.adam), adam_s(1, o.adam);
  SortOutcome out;
  out.parameter_count = kissing_parameter_count(n, m);
  Matrix grad_p;
  auto forward = [&](Tape& t, Var& v, Var& w, Var& s) {
    v = t.variable(params.v);
    w = t.variable(params.w);
    s = t.variable(Matrix(1, 1, params.scale));
    return kissing_permutation(t, v, w, s);
  };
  for (std::size_t step = 0; step < o.steps; ++step) {
    Tape t;
    Var v, w, s;
    Var p = forward(t, v, w, s);
    auto e = detail::evaluate_materialized(t.value(p), x, obj, grad_p);
    t.backward(p, grad_p);
    const Matrix gv = t.grad(v), gw = t.grad(w), gs = t.grad(s);
    adam_v.step(params.v.values(), gv.values());
    adam_w.step(params.w.values(), gw.values());
    std::array<double, 1> sc{params.scale};
    adam_s.step(sc, gs.values());
    params.scale = sc[0];
    if (o.history_every && (step % o.history_every == 0 || step + 1 == o.steps)) out.history.push_back(e.loss);
  }
  Tape t;
  Var v, w, s;
  Var p = forward(t, v, w, s);
  Matrix unused;
  out.final_loss = detail::evaluate_materialized(t.value(p), x, obj, unused).loss;
  out.perm = harden(t.value(p));
  out.validity = is_valid(out.perm);
  return out;
}

}  // namespace permsort
