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

// Contrastive and classification objectives.
//
// Every loss is recorded on a Tape so one backward pass yields all parameter
// adjoints. The three NT-Xent style objectives (instance, cluster, prototype)
// and the supervised contrastive loss share one kernel: given a pool of unit
// rows X and a positive set P(i) for each anchor,
//
//   loss = mean over anchors with P(i) != {} of
//          logsumexp_{k != i}(x_i . x_k / tau) - mean_{p in P(i)} x_i . x_p / tau
//
// which is the average of -log(exp(s_ip) / sum_{k != i} exp(s_ik)) over the
// positives of each anchor.

#include <array>
#include <cstddef>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "plpcl/error.hpp"
#include "plpcl/matrix.hpp"
#include "plpcl/tape.hpp"

namespace plpcl {

enum class SupervisionKind { Unlabeled, Labeled, ReliablePseudo };

/// Per-sample supervision state. `cls` is meaningful only when supervised.
struct Supervision {
  SupervisionKind kind = SupervisionKind::Unlabeled;
  std::size_t cls = 0;

  static Supervision labeled(std::size_t c) { return {SupervisionKind::Labeled, c}; }
  static Supervision pseudo(std::size_t c) { return {SupervisionKind::ReliablePseudo, c}; }
  static Supervision unlabeled() { return {}; }

  bool supervised() const noexcept { return kind != SupervisionKind::Unlabeled; }
  friend bool operator==(const Supervision&, const Supervision&) = default;
};

using SupervisionMask = std::vector<Supervision>;

enum class LossTerm : std::size_t { Scl = 0, Ce, Ilcl, Clcl, Pcl };
inline constexpr std::size_t kNumLossTerms = 5;
/// Fixed accumulation order.
inline constexpr std::array<LossTerm, kNumLossTerms> kLossTermOrder = {
    LossTerm::Scl, LossTerm::Ce, LossTerm::Ilcl, LossTerm::Clcl, LossTerm::Pcl};

constexpr std::string_view loss_term_name(LossTerm t) {
  switch (t) {
    case LossTerm::Scl: return "scl";
    case LossTerm::Ce: return "ce";
    case LossTerm::Ilcl: return "ilcl";
    case LossTerm::Clcl: return "clcl";
    case LossTerm::Pcl: return "pcl";
  }
  return "?";
}

inline std::optional<LossTerm> parse_loss_term(std::string_view name) {
  for (LossTerm t : kLossTermOrder)
    if (loss_term_name(t) == name) return t;
  return std::nullopt;
}

/// Which rows the supervised contrastive loss contrasts against.
enum class SclPool {
  Paired,  ///< both dropout views, 2N rows
  Single,  ///< the N rows of one view
};

struct LossConfig {
  double tau = 0.5;
  std::array<double, kNumLossTerms> weights = {1.0, 1.0, 1.0, 1.0, 1.0};
  SclPool scl_pool = SclPool::Paired;

  double weight(LossTerm t) const { return weights[static_cast<std::size_t>(t)]; }
  double& weight(LossTerm t) { return weights[static_cast<std::size_t>(t)]; }

  void validate() const {
    if (!(tau > 0.0)) throw Error(ErrorCode::InvalidConfig, "tau must be > 0");
    for (double w : weights)
      if (!(w >= 0.0)) throw Error(ErrorCode::InvalidConfig, "loss weights must be >= 0");
  }
};

/// Positive-set NT-Xent kernel described at the top of this file.
/// Anchors with no positives are skipped; returns 0 when none remain.
inline Var contrastive_nll(Var pool, const std::vector<std::vector<std::size_t>>& positives, double tau) {
  Tape& tape = *pool.tape;
  const std::size_t p = pool.rows();
  std::size_t anchors = 0;
  for (const auto& ps : positives) anchors += ps.empty() ? 0 : 1;
  if (anchors == 0) return tape.constant(Matrix(1, 1, 0.0));

  Var sim = ad::scale(ad::matmul_nt(pool, pool), 1.0 / tau);
  Matrix not_self(p, p, 1.0);
  for (std::size_t i = 0; i < p; ++i) not_self(i, i) = 0.0;
  Var lse = ad::masked_row_logsumexp(sim, not_self);

  const double inv_anchors = 1.0 / static_cast<double>(anchors);
  Matrix anchor_w(p, 1);
  Matrix pos_w(p, p);
  for (std::size_t i = 0; i < p; ++i) {
    const auto& ps = positives[i];
    if (ps.empty()) continue;
    anchor_w(i, 0) = inv_anchors;
    const double w = inv_anchors / static_cast<double>(ps.size());
    for (std::size_t j : ps) pos_w(i, j) += w;
  }
  return ad::sub(ad::weighted_sum(lse, anchor_w), ad::weighted_sum(sim, pos_w));
}

/// NT-Xent over [a; b] where row i of a and row i of b are twins.
inline Var nt_xent(Var a, Var b, double tau) {
  require_same_shape(a.value(), b.value(), "nt_xent");
  const std::size_t n = a.rows();
  std::vector<std::vector<std::size_t>> positives(2 * n);
  for (std::size_t i = 0; i < n; ++i) {
    positives[i] = {i + n};
    positives[i + n] = {i};
  }
  return contrastive_nll(ad::vstack(a, b), positives, tau);
}

namespace detail {
inline std::vector<std::size_t> rows_where(const SupervisionMask& mask, bool supervised) {
  std::vector<std::size_t> idx;
  for (std::size_t i = 0; i < mask.size(); ++i)
    if (mask[i].supervised() == supervised) idx.push_back(i);
  return idx;
}

inline void check_mask(const Matrix& m, const SupervisionMask& mask, const char* what) {
  if (mask.size() != m.rows()) {
    throw Error(ErrorCode::LengthMismatch, std::string(what) + ": mask has " + std::to_string(mask.size()) +
                                               " entries for " + std::to_string(m.rows()) + " rows");
  }
}
}  // namespace detail

/// Supervised contrastive loss over Labeled and ReliablePseudo rows.
///
/// With `f_aug` the pool holds both views (2N rows, a sample's own twin is
/// one of its positives); without it the pool is the N rows of `f`.
inline Var scl_loss(Var f, std::optional<Var> f_aug, const SupervisionMask& mask, double tau) {
  detail::check_mask(f.value(), mask, "scl_loss");
  const auto sup = detail::rows_where(mask, true);
  if (sup.empty()) throw Error(ErrorCode::EmptyBatch, "scl_loss: no supervised samples");

  std::vector<std::size_t> labels;
  labels.reserve(sup.size());
  for (std::size_t i : sup) labels.push_back(mask[i].cls);

  Var pool = ad::select_rows(f, sup);
  if (f_aug) {
    require_same_shape(f.value(), f_aug->value(), "scl_loss");
    pool = ad::vstack(pool, ad::select_rows(*f_aug, sup));
    const std::size_t n = labels.size();
    for (std::size_t i = 0; i < n; ++i) labels.push_back(labels[i]);
  }
  const std::size_t p = labels.size();
  std::vector<std::vector<std::size_t>> positives(p);
  for (std::size_t i = 0; i < p; ++i)
    for (std::size_t j = 0; j < p; ++j)
      if (i != j && labels[i] == labels[j]) positives[i].push_back(j);
  return contrastive_nll(pool, positives, tau);
}

inline Var scl_loss(Var f, Var f_aug, const SupervisionMask& mask, double tau, SclPool pool) {
  return pool == SclPool::Paired ? scl_loss(f, std::optional<Var>(f_aug), mask, tau)
                                 : scl_loss(f, std::nullopt, mask, tau);
}

/// Instance-level NT-Xent over the Unlabeled rows and their dropout twins.
inline Var ilcl_loss(Var f, Var f_aug, const SupervisionMask& mask, double tau) {
  detail::check_mask(f.value(), mask, "ilcl_loss");
  require_same_shape(f.value(), f_aug.value(), "ilcl_loss");
  const auto unl = detail::rows_where(mask, false);
  if (unl.empty()) throw Error(ErrorCode::EmptyBatch, "ilcl_loss: no unlabeled samples");
  return nt_xent(ad::select_rows(f, unl), ad::select_rows(f_aug, unl), tau);
}

/// Cluster-level NT-Xent: each chosen column of G is one cluster
/// representation, L2-normalized before comparison.
inline Var clcl_loss(Var g, Var g_aug, const std::vector<std::size_t>& columns, double tau) {
  require_same_shape(g.value(), g_aug.value(), "clcl_loss");
  if (columns.size() < 2) {
    throw Error(ErrorCode::TooFewClusters, "clcl_loss needs >= 2 columns, got " + std::to_string(columns.size()));
  }
  const auto cluster_rows = [&](Var m) {
    Var t = ad::transpose(ad::select_cols(m, columns));
    for (std::size_t i = 0; i < t.rows(); ++i) {
      if (!(row_norm(t.value(), i) > kNormEps)) {
        throw Error(ErrorCode::ZeroColumn, "clcl_loss: column " + std::to_string(columns[i]) + " is zero");
      }
    }
    return ad::l2_normalize_rows(t);
  };
  return nt_xent(cluster_rows(g), cluster_rows(g_aug), tau);
}

inline constexpr double kLogClamp = 1e-12;

/// Mean of -log G[i, y_i] over supervised rows.
inline Var ce_loss(Var g, const SupervisionMask& mask) {
  detail::check_mask(g.value(), mask, "ce_loss");
  const auto sup = detail::rows_where(mask, true);
  if (sup.empty()) throw Error(ErrorCode::EmptyBatch, "ce_loss: no supervised samples");
  Matrix w(g.rows(), g.cols());
  const double inv = 1.0 / static_cast<double>(sup.size());
  for (std::size_t i : sup) {
    if (mask[i].cls >= g.cols()) {
      throw Error(ErrorCode::LabelOutOfRange, "class " + std::to_string(mask[i].cls) + " >= " + std::to_string(g.cols()));
    }
    w(i, mask[i].cls) = -inv;
  }
  return ad::weighted_sum(ad::log_clamped(g, kLogClamp), w);
}

/// Prototype-level NT-Xent: row c of `protos` and row c of `protos_aug`
/// are the same cluster seen through two dropout views.
inline Var pcl_loss(Var protos, Var protos_aug, double tau) {
  require_same_shape(protos.value(), protos_aug.value(), "pcl_loss");
  if (protos.rows() < 2) {
    throw Error(ErrorCode::TooFewClusters, "pcl_loss needs >= 2 prototypes, got " + std::to_string(protos.rows()));
  }
  return nt_xent(protos, protos_aug, tau);
}

/// Loss terms computed for one batch; an absent term contributes nothing.
struct LossParts {
  std::array<std::optional<Var>, kNumLossTerms> terms;

  std::optional<Var>& operator[](LossTerm t) { return terms[static_cast<std::size_t>(t)]; }
  const std::optional<Var>& operator[](LossTerm t) const { return terms[static_cast<std::size_t>(t)]; }

  double value(LossTerm t) const {
    const auto& v = (*this)[t];
    return v ? v->scalar() : 0.0;
  }
};

/// Weighted sum in the fixed order scl, ce, ilcl, clcl, pcl. Terms that are
/// absent or carry weight 0 are left off the tape entirely.
inline Var total_loss(Tape& tape, const LossParts& parts, const LossConfig& config) {
  std::optional<Var> acc;
  for (LossTerm t : kLossTermOrder) {
    const auto& v = parts[t];
    const double w = config.weight(t);
    if (!v || w == 0.0) continue;
    Var term = w == 1.0 ? *v : ad::scale(*v, w);
    acc = acc ? ad::add(*acc, term) : term;
  }
  return acc ? *acc : tape.constant(Matrix(1, 1, 0.0));
}

}  // namespace plpcl
