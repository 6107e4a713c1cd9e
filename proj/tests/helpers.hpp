#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "permsort/matrix.hpp"
#include "permsort/numkernel.hpp"

namespace testutil {

using permsort::Matrix;
using permsort::Rng;

inline Matrix random_matrix(std::size_t r, std::size_t c, Rng& rng, double lo = 0.0, double hi = 1.0) {
  Matrix m(r, c);
  for (double& v : m.values()) v = lo + (hi - lo) * permsort::uniform01(rng);
  return m;
}

inline std::vector<double> random_vector(std::size_t n, Rng& rng, double lo = 0.0, double hi = 1.0) {
  std::vector<double> v(n);
  for (double& x : v) x = lo + (hi - lo) * permsort::uniform01(rng);
  return v;
}

inline std::vector<std::size_t> random_perm(std::size_t n, Rng& rng) {
  std::vector<std::size_t> p(n);
  std::iota(p.begin(), p.end(), 0);
  for (std::size_t i = n; i > 1; --i) std::swap(p[i - 1], p[permsort::uniform_index(rng, i)]);
  return p;
}

// Plain triple loop, the reference for every faster product.
inline Matrix naive_matmul(const Matrix& a, const Matrix& b) {
  Matrix out(a.rows(), b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < b.cols(); ++j) {
      double s = 0.0;
      for (std::size_t k = 0; k < a.cols(); ++k) s += a(i, k) * b(k, j);
      out(i, j) = s;
    }
  return out;
}

inline std::vector<double> flat(const Matrix& m) { return {m.values().begin(), m.values().end()}; }

}  // namespace testutil
