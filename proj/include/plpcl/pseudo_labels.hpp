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

#include <cstddef>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "plpcl/error.hpp"
#include "plpcl/losses.hpp"
#include "plpcl/matrix.hpp"

namespace plpcl {

struct PseudoLabel {
  std::size_t index = 0;     ///< row in the source matrix / dataset
  std::size_t cls = 0;       ///< argmax class
  double confidence = 0.0;   ///< probability of that class
  bool reliable = false;     ///< confidence > sigma
};

struct PseudoLabelSet {
  double sigma = 0.99;
  std::vector<PseudoLabel> labels;

  std::size_t reliable_count() const {
    std::size_t n = 0;
    for (const auto& p : labels) n += p.reliable ? 1 : 0;
    return n;
  }
};

/// Pseudo-labels for the given rows of G. The argmax runs over `columns`
/// (all columns when empty), ties going to the lowest column index; a label
/// is reliable when its probability strictly exceeds sigma. The probability
/// is the raw row entry -- mass on columns outside the subset still counts
/// against confidence.
inline PseudoLabelSet select_pseudo_labels(const Matrix& g, std::span<const std::size_t> unlabeled, double sigma,
                                           std::span<const std::size_t> columns = {}) {
  if (!(sigma >= 0.0 && sigma <= 1.0)) throw Error(ErrorCode::InvalidConfig, "sigma must lie in [0, 1]");
  std::vector<std::size_t> all;
  if (columns.empty()) {
    all.resize(g.cols());
    std::iota(all.begin(), all.end(), std::size_t{0});
    columns = all;
  }
  for (std::size_t c : columns)
    if (c >= g.cols()) throw Error(ErrorCode::IndexOutOfRange, "column " + std::to_string(c));
  PseudoLabelSet out;
  out.sigma = sigma;
  out.labels.reserve(unlabeled.size());
  for (std::size_t i : unlabeled) {
    if (i >= g.rows()) throw Error(ErrorCode::IndexOutOfRange, "row " + std::to_string(i) + " >= " + std::to_string(g.rows()));
    const auto row = g.row(i);
    const std::size_t cls = argmax_in(row, columns);
    out.labels.push_back({i, cls, row[cls], row[cls] > sigma});
  }
  return out;
}

/// Merges ground truth (per sample, nullopt when unlabeled) with reliable
/// pseudo-labels into one supervision mask.
inline SupervisionMask refresh_mask(std::span<const std::optional<std::size_t>> truth, const PseudoLabelSet& pseudo) {
  SupervisionMask mask(truth.size());
  for (std::size_t i = 0; i < truth.size(); ++i)
    if (truth[i]) mask[i] = Supervision::labeled(*truth[i]);
  for (const auto& p : pseudo.labels) {
    if (p.index >= truth.size()) throw Error(ErrorCode::IndexOutOfRange, "pseudo-label index " + std::to_string(p.index));
    if (truth[p.index]) {
      throw Error(ErrorCode::ConflictingSupervision, "sample " + std::to_string(p.index) + " has both a label and a pseudo-label");
    }
    if (p.reliable) mask[p.index] = Supervision::pseudo(p.cls);
  }
  return mask;
}

/// Reliable pseudo-label count for each recorded epoch.
inline std::vector<std::size_t> reliability_stats(std::span<const PseudoLabelSet> history) {
  std::vector<std::size_t> out;
  out.reserve(history.size());
  for (const auto& s : history) out.push_back(s.reliable_count());
  return out;
}

}  // namespace plpcl
