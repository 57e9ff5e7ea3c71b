// Copyright 2026 The PLPCL Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

// Reverse-mode differentiation over whole matrices.
//
// A Tape records each primitive together with its eagerly computed value.
// Nodes are appended in evaluation order, so walking them backwards is a
// valid topological order. Only the primitives the losses and the model
// need are provided; each one has its own finite-difference test.

#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <span>
#include <utility>
#include <vector>

#include "plpcl/error.hpp"
#include "plpcl/matrix.hpp"

namespace plpcl {

class Tape;

/// Handle to a node on a Tape. Cheap to copy; valid while the tape lives.
struct Var {
  Tape* tape = nullptr;
  std::size_t id = 0;

  const Matrix& value() const;
  double scalar() const;
  std::size_t rows() const { return value().rows(); }
  std::size_t cols() const { return value().cols(); }
};

class Tape {
 public:
  using Backward = std::function<void(Tape&, const Matrix& out_grad)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// A differentiable leaf.
  Var param(Matrix value) { return push(std::move(value), true, nullptr); }
  /// A leaf that never receives an adjoint.
  Var constant(Matrix value) { return push(std::move(value), false, nullptr); }

  Var push(Matrix value, bool requires_grad, Backward backward) {
    nodes_.push_back(Node{std::move(value), Matrix{}, std::move(backward), requires_grad});
    return Var{this, nodes_.size() - 1};
  }

  const Matrix& value(std::size_t id) const { return nodes_[id].value; }
  bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }
  std::size_t size() const noexcept { return nodes_.size(); }

  /// Adjoint buffer of a node, allocated as zeros on first use.
  Matrix& grad_buffer(std::size_t id) {
    Node& n = nodes_[id];
    if (n.grad.empty() && !n.value.empty()) n.grad = Matrix(n.value.rows(), n.value.cols());
    return n.grad;
  }

  void accumulate(std::size_t id, const Matrix& g) {
    if (!nodes_[id].requires_grad) return;
    Matrix& buf = grad_buffer(id);
    auto& d = buf.data();
    const auto& s = g.data();
    for (std::size_t i = 0; i < d.size(); ++i) d[i] += s[i];
  }

  /// Adjoint of a node after backward(); zeros if the node was never reached.
  Matrix grad(Var v) const {
    const Node& n = nodes_[v.id];
    if (n.grad.empty()) return Matrix(n.value.rows(), n.value.cols());
    return n.grad;
  }

  /// Seeds d(loss)/d(loss) = 1 and propagates to every recorded node.
  void backward(Var loss) {
    const Matrix& lv = nodes_[loss.id].value;
    if (lv.rows() != 1 || lv.cols() != 1) {
      throw Error(ErrorCode::ShapeMismatch, "backward needs a 1x1 loss, got " + shape_str(lv));
    }
    for (auto& n : nodes_) n.grad = Matrix{};
    if (!nodes_[loss.id].requires_grad) return;
    grad_buffer(loss.id)(0, 0) = 1.0;
    for (std::size_t id = loss.id + 1; id-- > 0;) {
      Node& n = nodes_[id];
      if (!n.backward || n.grad.empty()) continue;
      // The closure may append to nothing but can touch other nodes' grads,
      // so copy the incoming adjoint out of the vector first.
      const Matrix out_grad = n.grad;
      n.backward(*this, out_grad);
    }
  }

 private:
  struct Node {
    Matrix value;
    Matrix grad;
    Backward backward;
    bool requires_grad = false;
  };
  std::vector<Node> nodes_;
};

inline const Matrix& Var::value() const { return tape->value(id); }
inline double Var::scalar() const { return tape->value(id)(0, 0); }

/// Adjoints of `params` for a scalar loss; untouched parameters get zeros.
inline std::vector<Matrix> grad_of(Tape& tape, Var loss, std::span<const Var> params) {
  tape.backward(loss);
  std::vector<Matrix> out;
  out.reserve(params.size());
  for (const Var& p : params) out.push_back(tape.grad(p));
  return out;
}

namespace ad {

namespace detail {
inline bool any_grad(std::initializer_list<Var> vs) {
  for (const Var& v : vs)
    if (v.tape->requires_grad(v.id)) return true;
  return false;
}
}  // namespace detail

inline Var matmul(Var a, Var b) {
  Tape& t = *a.tape;
  Matrix out = plpcl::matmul(a.value(), b.value());
  const std::size_t ia = a.id, ib = b.id;
  return t.push(std::move(out), detail::any_grad({a, b}), [ia, ib](Tape& tp, const Matrix& g) {
    if (tp.requires_grad(ia)) tp.accumulate(ia, matmul_nt(g, tp.value(ib)));
    if (tp.requires_grad(ib)) tp.accumulate(ib, matmul_tn(tp.value(ia), g));
  });
}

/// a * b^T
inline Var matmul_nt(Var a, Var b) {
  Tape& t = *a.tape;
  Matrix out = plpcl::matmul_nt(a.value(), b.value());
  const std::size_t ia = a.id, ib = b.id;
  return t.push(std::move(out), detail::any_grad({a, b}), [ia, ib](Tape& tp, const Matrix& g) {
    if (tp.requires_grad(ia)) tp.accumulate(ia, plpcl::matmul(g, tp.value(ib)));
    if (tp.requires_grad(ib)) tp.accumulate(ib, matmul_tn(g, tp.value(ia)));
  });
}

inline Var transpose(Var a) {
  const std::size_t ia = a.id;
  return a.tape->push(plpcl::transpose(a.value()), detail::any_grad({a}),
                      [ia](Tape& tp, const Matrix& g) { tp.accumulate(ia, plpcl::transpose(g)); });
}

inline Var add(Var a, Var b) {
  require_same_shape(a.value(), b.value(), "add");
  Matrix out = a.value();
  const auto& bd = b.value().data();
  for (std::size_t i = 0; i < bd.size(); ++i) out.data()[i] += bd[i];
  const std::size_t ia = a.id, ib = b.id;
  return a.tape->push(std::move(out), detail::any_grad({a, b}), [ia, ib](Tape& tp, const Matrix& g) {
    tp.accumulate(ia, g);
    tp.accumulate(ib, g);
  });
}

inline Var sub(Var a, Var b) {
  require_same_shape(a.value(), b.value(), "sub");
  Matrix out = a.value();
  const auto& bd = b.value().data();
  for (std::size_t i = 0; i < bd.size(); ++i) out.data()[i] -= bd[i];
  const std::size_t ia = a.id, ib = b.id;
  return a.tape->push(std::move(out), detail::any_grad({a, b}), [ia, ib](Tape& tp, const Matrix& g) {
    tp.accumulate(ia, g);
    if (tp.requires_grad(ib)) {
      Matrix neg = g;
      for (double& v : neg.data()) v = -v;
      tp.accumulate(ib, neg);
    }
  });
}

/// Adds a 1 x cols bias row to every row of a.
inline Var add_row(Var a, Var bias) {
  const Matrix& av = a.value();
  const Matrix& bv = bias.value();
  if (bv.rows() != 1 || bv.cols() != av.cols()) {
    throw Error(ErrorCode::ShapeMismatch, "add_row " + shape_str(av) + " + " + shape_str(bv));
  }
  Matrix out = av;
  for (std::size_t i = 0; i < out.rows(); ++i)
    for (std::size_t j = 0; j < out.cols(); ++j) out(i, j) += bv(0, j);
  const std::size_t ia = a.id, ib = bias.id;
  return a.tape->push(std::move(out), detail::any_grad({a, bias}), [ia, ib](Tape& tp, const Matrix& g) {
    tp.accumulate(ia, g);
    if (tp.requires_grad(ib)) {
      Matrix gb(1, g.cols());
      for (std::size_t i = 0; i < g.rows(); ++i)
        for (std::size_t j = 0; j < g.cols(); ++j) gb(0, j) += g(i, j);
      tp.accumulate(ib, gb);
    }
  });
}

inline Var scale(Var a, double s) {
  Matrix out = a.value();
  for (double& v : out.data()) v *= s;
  const std::size_t ia = a.id;
  return a.tape->push(std::move(out), detail::any_grad({a}), [ia, s](Tape& tp, const Matrix& g) {
    Matrix ga = g;
    for (double& v : ga.data()) v *= s;
    tp.accumulate(ia, ga);
  });
}

/// Elementwise product of two recorded values.
inline Var mul(Var a, Var b) {
  require_same_shape(a.value(), b.value(), "mul");
  Matrix out = a.value();
  const auto& bd = b.value().data();
  for (std::size_t i = 0; i < bd.size(); ++i) out.data()[i] *= bd[i];
  const std::size_t ia = a.id, ib = b.id;
  return a.tape->push(std::move(out), detail::any_grad({a, b}), [ia, ib](Tape& tp, const Matrix& g) {
    if (tp.requires_grad(ia)) {
      Matrix ga = g;
      const auto& bd2 = tp.value(ib).data();
      for (std::size_t i = 0; i < bd2.size(); ++i) ga.data()[i] *= bd2[i];
      tp.accumulate(ia, ga);
    }
    if (tp.requires_grad(ib)) {
      Matrix gb = g;
      const auto& ad2 = tp.value(ia).data();
      for (std::size_t i = 0; i < ad2.size(); ++i) gb.data()[i] *= ad2[i];
      tp.accumulate(ib, gb);
    }
  });
}

/// Elementwise product with a fixed (non-differentiable) mask.
inline Var mul_const(Var a, const Matrix& mask) {
  require_same_shape(a.value(), mask, "mul_const");
  Matrix out = a.value();
  for (std::size_t i = 0; i < mask.size(); ++i) out.data()[i] *= mask.data()[i];
  const std::size_t ia = a.id;
  return a.tape->push(std::move(out), detail::any_grad({a}), [ia, mask](Tape& tp, const Matrix& g) {
    Matrix ga = g;
    for (std::size_t i = 0; i < mask.size(); ++i) ga.data()[i] *= mask.data()[i];
    tp.accumulate(ia, ga);
  });
}

inline Var relu(Var a) {
  Matrix out = a.value();
  for (double& v : out.data()) v = v > 0.0 ? v : 0.0;
  const std::size_t ia = a.id;
  return a.tape->push(std::move(out), detail::any_grad({a}), [ia](Tape& tp, const Matrix& g) {
    Matrix ga = g;
    const auto& x = tp.value(ia).data();
    for (std::size_t i = 0; i < x.size(); ++i)
      if (!(x[i] > 0.0)) ga.data()[i] = 0.0;
    tp.accumulate(ia, ga);
  });
}

inline Var exp(Var a) {
  Matrix out = a.value();
  for (double& v : out.data()) v = std::exp(v);
  const std::size_t ia = a.id;
  const std::size_t self = a.tape->size();
  return a.tape->push(std::move(out), detail::any_grad({a}), [ia, self](Tape& tp, const Matrix& g) {
    Matrix ga = g;
    const auto& y = tp.value(self).data();
    for (std::size_t i = 0; i < y.size(); ++i) ga.data()[i] *= y[i];
    tp.accumulate(ia, ga);
  });
}

/// log(max(a, floor)); the clamped region has zero derivative.
inline Var log_clamped(Var a, double floor) {
  Matrix out = a.value();
  for (double& v : out.data()) v = std::log(std::max(v, floor));
  const std::size_t ia = a.id;
  return a.tape->push(std::move(out), detail::any_grad({a}), [ia, floor](Tape& tp, const Matrix& g) {
    Matrix ga = g;
    const auto& x = tp.value(ia).data();
    for (std::size_t i = 0; i < x.size(); ++i) ga.data()[i] = x[i] > floor ? ga.data()[i] / x[i] : 0.0;
    tp.accumulate(ia, ga);
  });
}

inline Var softmax_rows(Var a) {
  const std::size_t ia = a.id;
  const std::size_t self = a.tape->size();
  return a.tape->push(plpcl::softmax_rows(a.value()), detail::any_grad({a}), [ia, self](Tape& tp, const Matrix& g) {
    const Matrix& y = tp.value(self);
    Matrix ga(y.rows(), y.cols());
    for (std::size_t i = 0; i < y.rows(); ++i) {
      const double gy = dot(g.row(i), y.row(i));
      for (std::size_t j = 0; j < y.cols(); ++j) ga(i, j) = y(i, j) * (g(i, j) - gy);
    }
    tp.accumulate(ia, ga);
  });
}

inline Var l2_normalize_rows(Var a) {
  const Matrix& x = a.value();
  std::vector<double> norms(x.rows());
  for (std::size_t i = 0; i < x.rows(); ++i) norms[i] = row_norm(x, i);
  Matrix out = plpcl::l2_normalize_rows(x);
  const std::size_t ia = a.id;
  const std::size_t self = a.tape->size();
  return a.tape->push(std::move(out), detail::any_grad({a}),
                      [ia, self, norms = std::move(norms)](Tape& tp, const Matrix& g) {
                        const Matrix& y = tp.value(self);
                        Matrix ga(y.rows(), y.cols());
                        for (std::size_t i = 0; i < y.rows(); ++i) {
                          const double gy = dot(g.row(i), y.row(i));
                          for (std::size_t j = 0; j < y.cols(); ++j)
                            ga(i, j) = (g(i, j) - y(i, j) * gy) / norms[i];
                        }
                        tp.accumulate(ia, ga);
                      });
}

inline Var select_rows(Var a, std::vector<std::size_t> idx) {
  Matrix out = plpcl::select_rows(a.value(), idx);
  const std::size_t ia = a.id;
  return a.tape->push(std::move(out), detail::any_grad({a}), [ia, idx = std::move(idx)](Tape& tp, const Matrix& g) {
    Matrix& buf = tp.grad_buffer(ia);
    for (std::size_t i = 0; i < idx.size(); ++i)
      for (std::size_t j = 0; j < g.cols(); ++j) buf(idx[i], j) += g(i, j);
  });
}

inline Var select_cols(Var a, std::vector<std::size_t> idx) {
  Matrix out = plpcl::select_cols(a.value(), idx);
  const std::size_t ia = a.id;
  return a.tape->push(std::move(out), detail::any_grad({a}), [ia, idx = std::move(idx)](Tape& tp, const Matrix& g) {
    Matrix& buf = tp.grad_buffer(ia);
    for (std::size_t i = 0; i < g.rows(); ++i)
      for (std::size_t j = 0; j < idx.size(); ++j) buf(i, idx[j]) += g(i, j);
  });
}

inline Var vstack(Var a, Var b) {
  Matrix out = plpcl::vstack(a.value(), b.value());
  const std::size_t ia = a.id, ib = b.id;
  const std::size_t ra = a.rows();
  return a.tape->push(std::move(out), detail::any_grad({a, b}), [ia, ib, ra](Tape& tp, const Matrix& g) {
    const std::size_t c = g.cols();
    const auto split = static_cast<std::ptrdiff_t>(ra * c);
    if (tp.requires_grad(ia)) tp.accumulate(ia, Matrix(ra, c, std::vector<double>(g.data().begin(), g.data().begin() + split)));
    if (tp.requires_grad(ib)) tp.accumulate(ib, Matrix(g.rows() - ra, c, std::vector<double>(g.data().begin() + split, g.data().end())));
  });
}

/// Per-row log-sum-exp over the entries where mask is nonzero. Returns rows x 1.
inline Var masked_row_logsumexp(Var a, const Matrix& mask) {
  const Matrix& x = a.value();
  require_same_shape(x, mask, "masked_row_logsumexp");
  Matrix out(x.rows(), 1);
  Matrix soft(x.rows(), x.cols());
  for (std::size_t i = 0; i < x.rows(); ++i) {
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < x.cols(); ++j)
      if (mask(i, j) != 0.0) mx = std::max(mx, x(i, j));
    if (!std::isfinite(mx)) {
      throw Error(ErrorCode::EmptyBatch, "logsumexp row " + std::to_string(i) + " has no entries");
    }
    double sum = 0.0;
    for (std::size_t j = 0; j < x.cols(); ++j) {
      if (mask(i, j) == 0.0) continue;
      soft(i, j) = std::exp(x(i, j) - mx);
      sum += soft(i, j);
    }
    for (std::size_t j = 0; j < x.cols(); ++j) soft(i, j) /= sum;
    out(i, 0) = mx + std::log(sum);
  }
  const std::size_t ia = a.id;
  return a.tape->push(std::move(out), detail::any_grad({a}), [ia, soft = std::move(soft)](Tape& tp, const Matrix& g) {
    Matrix ga = soft;
    for (std::size_t i = 0; i < ga.rows(); ++i)
      for (std::size_t j = 0; j < ga.cols(); ++j) ga(i, j) *= g(i, 0);
    tp.accumulate(ia, ga);
  });
}

/// sum_ij weights_ij * a_ij as a 1x1 value.
inline Var weighted_sum(Var a, const Matrix& weights) {
  require_same_shape(a.value(), weights, "weighted_sum");
  double acc = 0.0;
  for (std::size_t i = 0; i < weights.size(); ++i) acc += weights.data()[i] * a.value().data()[i];
  const std::size_t ia = a.id;
  return a.tape->push(Matrix(1, 1, acc), detail::any_grad({a}), [ia, weights](Tape& tp, const Matrix& g) {
    Matrix ga = weights;
    for (double& v : ga.data()) v *= g(0, 0);
    tp.accumulate(ia, ga);
  });
}

inline Var sum(Var a) {
  return weighted_sum(a, Matrix(a.rows(), a.cols(), 1.0));
}

}  // namespace ad
}  // namespace plpcl
