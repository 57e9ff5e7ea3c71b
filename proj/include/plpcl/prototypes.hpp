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

// Per-batch cluster prototypes.
//
// The assignment matrix Ĝ takes a one-hot row for every supervised sample
// (ground truth or reliable pseudo-label) and the cluster head's probability
// row for everything else. Prototypes are the rows of Ĝᵀ F, L2-normalized.
// A cluster that receives no mass in the batch is marked stale and left out
// of the prototype loss for that step.

#include <cstddef>
#include <string>
#include <vector>

#include "plpcl/error.hpp"
#include "plpcl/losses.hpp"
#include "plpcl/matrix.hpp"
#include "plpcl/model.hpp"
#include "plpcl/tape.hpp"

namespace plpcl {

struct PrototypeMatrix {
  Matrix rows;               ///< K x m_f, unit rows; stale rows are all zero
  std::vector<bool> stale;   ///< per cluster

  std::size_t clusters() const { return rows.rows(); }
  std::size_t feature_dim() const { return rows.cols(); }
  std::vector<std::size_t> active() const {
    std::vector<std::size_t> out;
    for (std::size_t c = 0; c < stale.size(); ++c)
      if (!stale[c]) out.push_back(c);
    return out;
  }
};

namespace detail {
/// (soft-row keep mask, one-hot rows) such that Ĝ = G ∘ keep + onehot.
inline std::pair<Matrix, Matrix> assignment_parts(std::size_t n, std::size_t k, const SupervisionMask& mask) {
  if (mask.size() != n) {
    throw Error(ErrorCode::LengthMismatch, "mask has " + std::to_string(mask.size()) + " entries for " + std::to_string(n) + " rows");
  }
  Matrix keep(n, k, 1.0);
  Matrix onehot(n, k);
  for (std::size_t i = 0; i < n; ++i) {
    if (!mask[i].supervised()) continue;
    if (mask[i].cls >= k) {
      throw Error(ErrorCode::LabelOutOfRange, "class " + std::to_string(mask[i].cls) + " >= " + std::to_string(k));
    }
    for (std::size_t c = 0; c < k; ++c) keep(i, c) = 0.0;
    onehot(i, mask[i].cls) = 1.0;
  }
  return {std::move(keep), std::move(onehot)};
}
}  // namespace detail

inline Matrix build_assignment_matrix(const Matrix& g, const SupervisionMask& mask) {
  auto [keep, onehot] = detail::assignment_parts(g.rows(), g.cols(), mask);
  Matrix out = g;
  for (std::size_t i = 0; i < out.size(); ++i) out.data()[i] = out.data()[i] * keep.data()[i] + onehot.data()[i];
  return out;
}

inline Var build_assignment_matrix(Var g, const SupervisionMask& mask) {
  auto [keep, onehot] = detail::assignment_parts(g.rows(), g.cols(), mask);
  return ad::add(ad::mul_const(g, keep), g.tape->constant(std::move(onehot)));
}

namespace detail {
inline PrototypeMatrix normalize_prototypes(const Matrix& raw) {
  PrototypeMatrix pm{Matrix(raw.rows(), raw.cols()), std::vector<bool>(raw.rows(), false)};
  for (std::size_t c = 0; c < raw.rows(); ++c) {
    const double norm = row_norm(raw, c);
    if (!(norm > kNormEps)) {
      pm.stale[c] = true;
      continue;
    }
    for (std::size_t j = 0; j < raw.cols(); ++j) pm.rows(c, j) = raw(c, j) / norm;
  }
  return pm;
}
}  // namespace detail

inline PrototypeMatrix compute_prototypes(const Matrix& g_hat, const Matrix& f) {
  if (g_hat.rows() != f.rows()) {
    throw Error(ErrorCode::ShapeMismatch, "prototypes: " + shape_str(g_hat) + " vs " + shape_str(f));
  }
  return detail::normalize_prototypes(matmul_tn(g_hat, f));
}

/// Differentiable prototypes: the unnormalized Ĝᵀ F on the tape plus the
/// normalized values and stale flags.
struct PrototypeVars {
  Var raw;
  PrototypeMatrix value;
};

inline PrototypeVars compute_prototypes(Var g_hat, Var f) {
  if (g_hat.rows() != f.rows()) {
    throw Error(ErrorCode::ShapeMismatch, "prototypes: " + shape_str(g_hat.value()) + " vs " + shape_str(f.value()));
  }
  Var raw = ad::matmul(ad::transpose(g_hat), f);
  return {raw, detail::normalize_prototypes(raw.value())};
}

struct PrototypePair {
  PrototypeMatrix view;
  PrototypeMatrix view_aug;
  std::vector<std::size_t> active;  ///< clusters non-stale in both views
  Var z;                            ///< |active| x m_f, normalized, on tape
  Var z_aug;
};

/// Prototypes of both views with the same hard rows. `z`/`z_aug` are only
/// meaningful when `active` is nonempty.
inline PrototypePair prototype_pair(const BatchTensors& batch, const SupervisionMask& mask) {
  PrototypeVars a = compute_prototypes(build_assignment_matrix(batch.g, mask), batch.f);
  PrototypeVars b = compute_prototypes(build_assignment_matrix(batch.g_aug, mask), batch.f_aug);
  std::vector<std::size_t> active;
  for (std::size_t c = 0; c < a.value.clusters(); ++c)
    if (!a.value.stale[c] && !b.value.stale[c]) active.push_back(c);
  PrototypePair out{std::move(a.value), std::move(b.value), active, a.raw, b.raw};
  if (!active.empty()) {
    out.z = ad::l2_normalize_rows(ad::select_rows(a.raw, active));
    out.z_aug = ad::l2_normalize_rows(ad::select_rows(b.raw, active));
  }
  return out;
}

}  // namespace plpcl
