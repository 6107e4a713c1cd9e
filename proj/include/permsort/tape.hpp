#pragma once

#include <functional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "permsort/numkernel.hpp"

namespace permsort {

/// Reverse-mode gradient tape over dense matrices.
///
/// Every operation appends a node holding its forward value and a backward
/// rule. `backward` walks the nodes in exact reverse order of recording.
/// Gradients are allocated lazily, so a node that never receives a
/// contribution reports an all-zero gradient.
class Tape {
 public:
  struct Var {
    std::size_t id = 0;
  };

  using BackwardFn = std::function<void(Tape&, std::size_t self)>;

  Var variable(Matrix value) { return record(std::move(value), nullptr); }
  Var constant(Matrix value) { return record(std::move(value), nullptr); }

  /// Appends a node. `backward` reads grad(self) and calls accumulate() on
  /// its inputs.
  Var record(Matrix value, BackwardFn backward) {
    for (double v : value.values())
      if (!std::isfinite(v)) throw Error("Tape: operation produced a non-finite value");
    nodes_.push_back(Node{std::move(value), Matrix{}, std::move(backward)});
    return Var{nodes_.size() - 1};
  }

  const Matrix& value(Var v) const { return nodes_.at(v.id).value; }

  /// Gradient of the last backward() output with respect to v.
  Matrix grad(Var v) const {
    const Node& n = nodes_.at(v.id);
    if (n.grad.empty()) return Matrix(n.value.rows(), n.value.cols());
    return n.grad;
  }

  const Matrix& grad_ref(std::size_t id) {
    Node& n = nodes_.at(id);
    if (n.grad.empty()) n.grad = Matrix(n.value.rows(), n.value.cols());
    return n.grad;
  }

  void accumulate(Var v, const Matrix& g) {
    Node& n = nodes_.at(v.id);
    if (!g.same_shape(n.value))
      throw Error("Tape::accumulate: gradient " + shape_string(g) + " for value " + shape_string(n.value));
    if (n.grad.empty()) {
      n.grad = g;
      return;
    }
    auto dst = n.grad.values();
    auto src = g.values();
    for (std::size_t k = 0; k < dst.size(); ++k) dst[k] += src[k];
  }

  /// Seeds d(output) = seed and propagates to every earlier node.
  void backward(Var output, const Matrix& seed) {
    if (output.id >= nodes_.size()) throw Error("Tape::backward: unknown variable");
    for (auto& n : nodes_) n.grad = Matrix{};
    accumulate(output, seed);
    visited_.clear();
    for (std::size_t id = output.id + 1; id-- > 0;) {
      visited_.push_back(id);
      Node& n = nodes_[id];
      if (n.backward && !n.grad.empty()) n.backward(*this, id);
    }
  }

  /// Scalar (1x1) outputs only.
  void backward(Var output) {
    const Matrix& v = value(output);
    if (v.rows() != 1 || v.cols() != 1) throw Error("Tape::backward: output is not scalar");
    backward(output, Matrix(1, 1, 1.0));
  }

  std::size_t size() const noexcept { return nodes_.size(); }

  /// Node ids in the order the last backward() visited them.
  const std::vector<std::size_t>& visit_order() const noexcept { return visited_; }

 private:
  struct Node {
    Matrix value;
    Matrix grad;
    BackwardFn backward;
  };
  std::vector<Node> nodes_;
  std::vector<std::size_t> visited_;
};

using Var = Tape::Var;

// ---------------------------------------------------------------------------
// Primitive operations with analytic backward rules.

inline Var add(Tape& t, Var a, Var b) {
  const Matrix& av = t.value(a);
  const Matrix& bv = t.value(b);
  if (!av.same_shape(bv)) throw Error("add: shape mismatch");
  Matrix out = av;
  for (std::size_t k = 0; k < out.size(); ++k) out.values()[k] += bv.values()[k];
  return t.record(std::move(out), [a, b](Tape& tp, std::size_t self) {
    const Matrix g = tp.grad_ref(self);
    tp.accumulate(a, g);
    tp.accumulate(b, g);
  });
}

inline Var scale(Tape& t, Var a, double c) {
  Matrix out = t.value(a);
  for (double& v : out.values()) v *= c;
  return t.record(std::move(out), [a, c](Tape& tp, std::size_t self) {
    Matrix g = tp.grad_ref(self);
    for (double& v : g.values()) v *= c;
    tp.accumulate(a, g);
  });
}

/// m * s where s is a learnable 1x1 variable.
inline Var mul_scalar(Tape& t, Var m, Var s) {
  const Matrix& sv = t.value(s);
  if (sv.rows() != 1 || sv.cols() != 1) throw Error("mul_scalar: scalar operand must be 1x1");
  const double c = sv(0, 0);
  Matrix out = t.value(m);
  for (double& v : out.values()) v *= c;
  return t.record(std::move(out), [m, s](Tape& tp, std::size_t self) {
    const Matrix& g = tp.grad_ref(self);
    const Matrix& mv = tp.value(m);
    const double c = tp.value(s)(0, 0);
    Matrix gm = g;
    double gs = 0.0;
    for (std::size_t k = 0; k < g.size(); ++k) {
      gm.values()[k] *= c;
      gs += g.values()[k] * mv.values()[k];
    }
    tp.accumulate(m, gm);
    tp.accumulate(s, Matrix(1, 1, gs));
  });
}

inline Var matmul(Tape& t, Var a, Var b) {
  Matrix out = matmul(t.value(a), t.value(b));
  return t.record(std::move(out), [a, b](Tape& tp, std::size_t self) {
    const Matrix g = tp.grad_ref(self);
    tp.accumulate(a, matmul_nt(g, tp.value(b)));
    tp.accumulate(b, matmul_tn(tp.value(a), g));
  });
}

/// a * b^T
inline Var matmul_nt(Tape& t, Var a, Var b) {
  Matrix out = matmul_nt(t.value(a), t.value(b));
  return t.record(std::move(out), [a, b](Tape& tp, std::size_t self) {
    const Matrix g = tp.grad_ref(self);
    tp.accumulate(a, matmul(g, tp.value(b)));
    tp.accumulate(b, matmul_tn(g, tp.value(a)));
  });
}

inline Var softmax_rows(Tape& t, Var a) {
  Matrix out = softmax_rows(t.value(a));
  return t.record(std::move(out), [a](Tape& tp, std::size_t self) {
    tp.accumulate(a, softmax_rows_backward(tp.value(Var{self}), tp.grad_ref(self)));
  });
}

/// out(i, j) = |a_i - b_j| for column vectors a (n x 1) and b (m x 1).
inline Var abs_distance(Tape& t, Var a, Var b) {
  const Matrix& av = t.value(a);
  const Matrix& bv = t.value(b);
  if (av.cols() != 1 || bv.cols() != 1) throw Error("abs_distance: operands must be column vectors");
  Matrix out = pairwise_abs_distance(av.values(), bv.values());
  return t.record(std::move(out), [a, b](Tape& tp, std::size_t self) {
    const Matrix& g = tp.grad_ref(self);
    const Matrix& av = tp.value(a);
    const Matrix& bv = tp.value(b);
    Matrix ga(av.rows(), 1), gb(bv.rows(), 1);
    for (std::size_t i = 0; i < av.rows(); ++i) {
      for (std::size_t j = 0; j < bv.rows(); ++j) {
        const double s = sign(av(i, 0) - bv(j, 0)) * g(i, j);
        ga(i, 0) += s;
        gb(j, 0) -= s;
      }
    }
    tp.accumulate(a, ga);
    tp.accumulate(b, gb);
  });
}

/// out.row(k) = a.row(index[k])
inline Var gather_rows(Tape& t, Var a, std::vector<std::size_t> index) {
  const Matrix& av = t.value(a);
  Matrix out(index.size(), av.cols());
  for (std::size_t k = 0; k < index.size(); ++k) {
    if (index[k] >= av.rows()) throw Error("gather_rows: index out of range");
    std::copy(av.row(index[k]).begin(), av.row(index[k]).end(), out.row(k).begin());
  }
  return t.record(std::move(out), [a, index = std::move(index)](Tape& tp, std::size_t self) {
    const Matrix& g = tp.grad_ref(self);
    const Matrix& av = tp.value(a);
    Matrix ga(av.rows(), av.cols());
    for (std::size_t k = 0; k < index.size(); ++k) {
      auto dst = ga.row(index[k]);
      auto src = g.row(k);
      for (std::size_t j = 0; j < dst.size(); ++j) dst[j] += src[j];
    }
    tp.accumulate(a, ga);
  });
}

/// Scales every row to unit Euclidean norm. Zero rows are an error.
inline Var row_normalize(Tape& t, Var a) {
  const Matrix& av = t.value(a);
  Matrix out(av.rows(), av.cols());
  for (std::size_t i = 0; i < av.rows(); ++i) {
    double n2 = 0.0;
    for (double v : av.row(i)) n2 += v * v;
    if (n2 == 0.0) throw Error("row_normalize: row " + std::to_string(i) + " is zero");
    const double inv = 1.0 / std::sqrt(n2);
    for (std::size_t j = 0; j < av.cols(); ++j) out(i, j) = av(i, j) * inv;
  }
  return t.record(std::move(out), [a](Tape& tp, std::size_t self) {
    const Matrix& g = tp.grad_ref(self);
    const Matrix& y = tp.value(Var{self});
    const Matrix& av = tp.value(a);
    Matrix ga(av.rows(), av.cols());
    for (std::size_t i = 0; i < av.rows(); ++i) {
      double n2 = 0.0, dot = 0.0;
      for (std::size_t j = 0; j < av.cols(); ++j) {
        n2 += av(i, j) * av(i, j);
        dot += g(i, j) * y(i, j);
      }
      const double inv = 1.0 / std::sqrt(n2);
      for (std::size_t j = 0; j < av.cols(); ++j) ga(i, j) = (g(i, j) - y(i, j) * dot) * inv;
    }
    tp.accumulate(a, ga);
  });
}

/// Sum of all entries, as a 1x1 value.
inline Var sum(Tape& t, Var a) {
  double s = 0.0;
  for (double v : t.value(a).values()) s += v;
  return t.record(Matrix(1, 1, s), [a](Tape& tp, std::size_t self) {
    const double g = tp.grad_ref(self)(0, 0);
    const Matrix& av = tp.value(a);
    tp.accumulate(a, Matrix(av.rows(), av.cols(), g));
  });
}

}  // namespace permsort
