#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "permsort/baselines.hpp"
#include "permsort/numkernel.hpp"
#include "permsort/objective.hpp"
#include "permsort/permutation.hpp"
#include "permsort/tape.hpp"

namespace permsort {

struct GradCheckResult {
  std::string operation;
  std::size_t dimension = 0;  // number of checked coordinates
  double max_rel_error = 0.0;
};

namespace detail {

inline Matrix random_matrix(std::size_t r, std::size_t c, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Matrix m(r, c);
  for (double& v : m.values()) v = lo + (hi - lo) * uniform01(rng);
  return m;
}

/// f(x) = sum(probe .* op(x)) where op is built on a fresh tape from the
/// variable holding x (reshaped to rows x cols).
inline DifferentiableFn tape_probe(std::size_t rows, std::size_t cols, Matrix probe,
                                   std::function<Var(Tape&, Var)> op) {
  return [=](std::span<const double> x) {
    Tape t;
    Matrix m(rows, cols);
    std::copy(x.begin(), x.end(), m.values().begin());
    Var in = t.variable(std::move(m));
    Var out = op(t, in);
    const Matrix& y = t.value(out);
    double value = 0.0;
    for (std::size_t k = 0; k < y.size(); ++k) value += probe.values()[k] * y.values()[k];
    t.backward(out, probe);
    const Matrix g = t.grad(in);
    return ValueAndGrad{value, std::vector<double>(g.values().begin(), g.values().end())};
  };
}

inline std::vector<double> flat(const Matrix& m) { return {m.values().begin(), m.values().end()}; }

/// Distinct, well separated weights so that small perturbations keep the sort order.
inline std::vector<double> separated_weights(std::size_t n, Rng& rng) {
  std::vector<double> w(n);
  for (std::size_t k = 0; k < n; ++k) w[k] = (static_cast<double>(k) + 0.2 + 0.6 * uniform01(rng)) / n;
  for (std::size_t i = n; i > 1; --i) std::swap(w[i - 1], w[uniform_index(rng, i)]);
  return w;
}

}  // namespace detail

/// Central finite-difference check of every differentiable operation on
/// small random inputs (N <= 8, D <= 3).
inline std::vector<GradCheckResult> run_gradcheck_suite(std::uint64_t seed = 7, double h = 1e-5) {
  using detail::flat;
  using detail::random_matrix;
  using detail::tape_probe;
  Rng rng(seed);
  std::vector<GradCheckResult> results;
  auto check = [&](std::string name, const DifferentiableFn& f, const std::vector<double>& x) {
    results.push_back({std::move(name), x.size(), grad_check(f, x, h)});
  };

  const std::size_t n = 6, d = 3;
  const GridShape grid{2, 3};
  const Matrix x = random_matrix(n, d, rng, 0.0, 1.0);

  {
    const Matrix a = random_matrix(4, 5, rng, -2.0, 2.0);
    check("softmax_rows", tape_probe(4, 5, random_matrix(4, 5, rng), [](Tape& t, Var v) { return softmax_rows(t, v); }),
          flat(a));
  }
  {
    const Matrix other = random_matrix(4, 1, rng);
    check("pairwise_abs_distance",
          tape_probe(5, 1, random_matrix(5, 4, rng),
                     [other](Tape& t, Var v) { return abs_distance(t, v, t.constant(other)); }),
          flat(random_matrix(5, 1, rng)));
  }
  {
    const Matrix b = random_matrix(4, 3, rng);
    check("matmul",
          tape_probe(3, 4, random_matrix(3, 3, rng), [b](Tape& t, Var v) { return matmul(t, v, t.constant(b)); }),
          flat(random_matrix(3, 4, rng)));
  }
  {
    check("row_normalize",
          tape_probe(4, 3, random_matrix(4, 3, rng), [](Tape& t, Var v) { return row_normalize(t, v); }),
          flat(random_matrix(4, 3, rng, 0.5, 1.5)));
  }
  {
    const double tau = 0.3;
    check("softsort",
          tape_probe(n, 1, random_matrix(n, n, rng), [tau](Tape& t, Var v) { return softsort(t, v, tau); }),
          detail::separated_weights(n, rng));
  }
  {
    const Matrix probe_y = random_matrix(n, d, rng);
    const std::vector<double> probe_c = flat(random_matrix(n, 1, rng));
    const double tau = 0.2;
    auto f = [&, probe_y, probe_c, tau](std::span<const double> w) {
      const SoftSortView view(w, tau, 4);
      const auto fwd = apply_soft_rowwise(view, x);
      double value = 0.0;
      for (std::size_t k = 0; k < fwd.y.size(); ++k) value += probe_y.values()[k] * fwd.y.values()[k];
      for (std::size_t k = 0; k < n; ++k) value += probe_c[k] * fwd.colsum[k];
      return ValueAndGrad{value, apply_soft_rowwise_backward(view, x, probe_y, probe_c).w};
    };
    check("apply_soft_rowwise (weights)", f, detail::separated_weights(n, rng));
    const std::vector<double> w = detail::separated_weights(n, rng);
    auto fx = [&, probe_y, w, tau](std::span<const double> xv) {
      Matrix xm(n, d);
      std::copy(xv.begin(), xv.end(), xm.values().begin());
      const SoftSortView view(w, tau, 4);
      const auto fwd = apply_soft_rowwise(view, xm);
      double value = 0.0;
      for (std::size_t k = 0; k < fwd.y.size(); ++k) value += probe_y.values()[k] * fwd.y.values()[k];
      return ValueAndGrad{value, flat(apply_soft_rowwise_backward(view, xm, probe_y, std::vector<double>(n, 0.0)).x)};
    };
    check("apply_soft_rowwise (inputs)", fx, flat(x));
  }
  {
    check("sinkhorn",
          tape_probe(5, 5, random_matrix(5, 5, rng), [](Tape& t, Var v) { return sinkhorn(t, v, 10); }),
          flat(random_matrix(5, 5, rng, -2.0, 2.0)));
  }
  {
    const Matrix noise = gumbel_noise(n, seed);
    check("gumbel_sinkhorn",
          tape_probe(n, n, random_matrix(n, n, rng),
                     [noise](Tape& t, Var v) { return gumbel_sinkhorn(t, v, noise, 0.5, 0.7, 20); }),
          flat(random_matrix(n, n, rng)));
  }
  {
    const std::size_t m = 3;
    const Matrix wfac = random_matrix(n, m, rng);
    const Matrix probe = random_matrix(n, n, rng);
    check("kissing_permutation (V)",
          tape_probe(n, m, probe,
                     [wfac](Tape& t, Var v) {
                       return kissing_permutation(t, v, t.constant(wfac), t.constant(Matrix(1, 1, 4.0)));
                     }),
          flat(random_matrix(n, m, rng)));
    const Matrix vfac = random_matrix(n, m, rng);
    check("kissing_permutation (scale)",
          tape_probe(1, 1, probe,
                     [vfac, wfac](Tape& t, Var s) {
                       return kissing_permutation(t, t.constant(vfac), t.constant(wfac), s);
                     }),
          {3.0});
  }
  {
    const auto pairs = grid_neighbors(grid);
    auto f = [pairs](std::span<const double> yv) {
      Matrix y(6, 3), g;
      std::copy(yv.begin(), yv.end(), y.values().begin());
      const double v = neighborhood_loss(y, pairs, 0.7, &g);
      return ValueAndGrad{v, flat(g)};
    };
    check("neighborhood_loss", f, flat(random_matrix(n, d, rng)));
  }
  {
    auto f = [](std::span<const double> c) {
      std::vector<double> g;
      const double v = stochastic_constraint_loss(c, &g);
      return ValueAndGrad{v, g};
    };
    check("stochastic_constraint_loss", f, flat(random_matrix(n, 1, rng, 0.0, 2.0)));
  }
  {
    const double sx = global_std(x);
    auto f = [sx](std::span<const double> yv) {
      Matrix y(6, 3), g;
      std::copy(yv.begin(), yv.end(), y.values().begin());
      const double v = std_loss(sx, y, &g);
      return ValueAndGrad{v, flat(g)};
    };
    Matrix y = random_matrix(n, d, rng, 0.3, 0.7);  // sigma_y < sigma_x, away from the kink
    check("std_loss", f, flat(y));
  }
  {
    const GridObjective obj(x, grid_neighbors(grid), mean_pairwise_distance(x, seed));
    auto f = [&obj, &x](std::span<const double> w) {
      auto l = softsort_loss(w, 0.25, x, obj, 4);
      return ValueAndGrad{l.loss.total, l.grad_w};
    };
    check("total_loss (streaming)", f, detail::separated_weights(n, rng));
  }
  return results;
}

}  // namespace permsort
