#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "permsort/matrix.hpp"

namespace permsort {

// ---------------------------------------------------------------------------
// Softmax and distances

/// Row-wise softmax with per-row max subtraction.
inline Matrix softmax_rows(const Matrix& m) {
  Matrix out(m.rows(), m.cols());
  for (std::size_t i = 0; i < m.rows(); ++i) {
    auto in = m.row(i);
    if (!all_finite(in)) throw Error("softmax_rows: non-finite value in row " + std::to_string(i));
    if (in.empty()) continue;
    const double mx = *std::max_element(in.begin(), in.end());
    auto o = out.row(i);
    double sum = 0.0;
    for (std::size_t j = 0; j < in.size(); ++j) {
      o[j] = std::exp(in[j] - mx);
      sum += o[j];
    }
    const double inv = 1.0 / sum;
    for (double& v : o) v *= inv;
  }
  return out;
}

/// Vector-Jacobian product of softmax_rows: given y = softmax_rows(x) and
/// dL/dy, returns dL/dx.
inline Matrix softmax_rows_backward(const Matrix& y, const Matrix& grad_y) {
  if (!y.same_shape(grad_y)) throw Error("softmax_rows_backward: shape mismatch");
  Matrix gx(y.rows(), y.cols());
  for (std::size_t i = 0; i < y.rows(); ++i) {
    auto yr = y.row(i);
    auto gr = grad_y.row(i);
    double dot = 0.0;
    for (std::size_t j = 0; j < yr.size(); ++j) dot += yr[j] * gr[j];
    auto o = gx.row(i);
    for (std::size_t j = 0; j < yr.size(); ++j) o[j] = yr[j] * (gr[j] - dot);
  }
  return gx;
}

/// out(i, j) = |a[i] - b[j]|
inline Matrix pairwise_abs_distance(std::span<const double> a, std::span<const double> b) {
  Matrix out(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    auto o = out.row(i);
    for (std::size_t j = 0; j < b.size(); ++j) o[j] = std::abs(a[i] - b[j]);
  }
  return out;
}

inline double sign(double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); }

// ---------------------------------------------------------------------------
// Adam

struct AdamOptions {
  double lr = 0.005;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Adam with bias correction. Moments are sized at construction and the
/// step counter advances by exactly one per update.
class Adam {
 public:
  Adam() = default;
  Adam(std::size_t n, AdamOptions options = {}) : options_(options), m_(n, 0.0), v_(n, 0.0) {}

  void step(std::span<double> params, std::span<const double> grads) {
    if (params.size() != m_.size() || grads.size() != m_.size())
      throw Error("Adam::step: shape mismatch (state " + std::to_string(m_.size()) + ", params " +
                  std::to_string(params.size()) + ", grads " + std::to_string(grads.size()) + ")");
    ++step_;
    const double b1 = options_.beta1, b2 = options_.beta2;
    const double c1 = 1.0 - std::pow(b1, static_cast<double>(step_));
    const double c2 = 1.0 - std::pow(b2, static_cast<double>(step_));
    for (std::size_t k = 0; k < params.size(); ++k) {
      const double g = grads[k];
      m_[k] = b1 * m_[k] + (1.0 - b1) * g;
      v_[k] = b2 * v_[k] + (1.0 - b2) * g * g;
      const double mhat = m_[k] / c1;
      const double vhat = v_[k] / c2;
      params[k] -= options_.lr * mhat / (std::sqrt(vhat) + options_.eps);
    }
  }

  std::uint64_t steps() const noexcept { return step_; }
  const AdamOptions& options() const noexcept { return options_; }
  std::span<const double> first_moment() const noexcept { return m_; }
  std::span<const double> second_moment() const noexcept { return v_; }

 private:
  AdamOptions options_{};
  std::uint64_t step_ = 0;
  std::vector<double> m_;
  std::vector<double> v_;
};

// ---------------------------------------------------------------------------
// Finite-difference gradient check

struct ValueAndGrad {
  double value = 0.0;
  std::vector<double> grad;
};

using DifferentiableFn = std::function<ValueAndGrad(std::span<const double>)>;

/// Max over coordinates of |analytic - central difference| / max(1, |central difference|).
inline double grad_check(const DifferentiableFn& f, std::span<const double> x, double h = 1e-5) {
  std::vector<double> point(x.begin(), x.end());
  const ValueAndGrad at = f(point);
  if (!std::isfinite(at.value)) throw Error("grad_check: f(x) is not finite");
  if (at.grad.size() != point.size())
    throw Error("grad_check: analytic gradient has " + std::to_string(at.grad.size()) +
                " entries, expected " + std::to_string(point.size()));
  double worst = 0.0;
  for (std::size_t k = 0; k < point.size(); ++k) {
    const double saved = point[k];
    point[k] = saved + h;
    const double up = f(point).value;
    point[k] = saved - h;
    const double down = f(point).value;
    point[k] = saved;
    if (!std::isfinite(up) || !std::isfinite(down))
      throw Error("grad_check: f is not finite near coordinate " + std::to_string(k));
    const double numeric = (up - down) / (2.0 * h);
    worst = std::max(worst, std::abs(at.grad[k] - numeric) / std::max(1.0, std::abs(numeric)));
  }
  return worst;
}

// ---------------------------------------------------------------------------
// Seeded randomness

using Rng = std::mt19937_64;

/// Uniform in [0, 1).
inline double uniform01(Rng& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

/// Uniform in the open interval (0, 1).
inline double uniform_open01(Rng& rng) { return (static_cast<double>(rng() >> 11) + 0.5) * 0x1.0p-53; }

inline double standard_gumbel(Rng& rng) { return -std::log(-std::log(uniform_open01(rng))); }

inline double standard_normal(Rng& rng) {
  // Box-Muller; spelled out so draws do not depend on the standard library's distribution.
  const double u1 = uniform_open01(rng);
  const double u2 = uniform01(rng);
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * 3.14159265358979323846 * u2);
}

inline std::size_t uniform_index(Rng& rng, std::size_t n) { return static_cast<std::size_t>(uniform01(rng) * n); }

/// splitmix64 finalizer, used to derive independent seeds.
inline std::uint64_t mix_seed(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

}  // namespace permsort
