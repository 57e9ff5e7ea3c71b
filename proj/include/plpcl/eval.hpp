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

// Clustering metrics and cluster-count estimation.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <map>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "plpcl/error.hpp"
#include "plpcl/matrix.hpp"
#include "plpcl/parallel.hpp"
#include "plpcl/rng.hpp"

namespace plpcl {

struct LabelingPair {
  std::vector<std::size_t> predicted;
  std::vector<std::size_t> truth;

  std::size_t size() const { return truth.size(); }
  void validate() const {
    if (predicted.size() != truth.size()) {
      throw Error(ErrorCode::LengthMismatch, std::to_string(predicted.size()) + " predictions for " +
                                                 std::to_string(truth.size()) + " labels");
    }
  }
};

/// Contingency counts over the distinct ids present on each side.
struct Contingency {
  std::vector<std::size_t> truth_ids;  ///< sorted
  std::vector<std::size_t> pred_ids;   ///< sorted
  std::vector<std::vector<double>> counts;  ///< [truth][pred]

  explicit Contingency(const LabelingPair& pair) {
    pair.validate();
    truth_ids = distinct(pair.truth);
    pred_ids = distinct(pair.predicted);
    counts.assign(truth_ids.size(), std::vector<double>(pred_ids.size(), 0.0));
    for (std::size_t i = 0; i < pair.size(); ++i) counts[index_of(truth_ids, pair.truth[i])][index_of(pred_ids, pair.predicted[i])] += 1.0;
  }

  static std::vector<std::size_t> distinct(std::vector<std::size_t> v) {
    std::sort(v.begin(), v.end());
    v.erase(std::unique(v.begin(), v.end()), v.end());
    return v;
  }
  static std::size_t index_of(const std::vector<std::size_t>& sorted, std::size_t id) {
    return static_cast<std::size_t>(std::lower_bound(sorted.begin(), sorted.end(), id) - sorted.begin());
  }
};

/// Minimum-cost perfect assignment on a square cost matrix (Kuhn-Munkres with
/// potentials, O(n^3)). Returns the column assigned to each row.
inline std::vector<std::size_t> solve_assignment(const std::vector<std::vector<double>>& cost) {
  const std::size_t n = cost.size();
  const double inf = std::numeric_limits<double>::infinity();
  // 1-based potentials; column 0 is a sentinel.
  std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0);
  std::vector<std::size_t> p(n + 1, 0), way(n + 1, 0);
  for (std::size_t i = 1; i <= n; ++i) {
    p[0] = i;
    std::size_t j0 = 0;
    std::vector<double> minv(n + 1, inf);
    std::vector<bool> used(n + 1, false);
    do {
      used[j0] = true;
      const std::size_t i0 = p[j0];
      double delta = inf;
      std::size_t j1 = 0;
      for (std::size_t j = 1; j <= n; ++j) {
        if (used[j]) continue;
        const double cur = cost[i0 - 1][j - 1] - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (std::size_t j = 0; j <= n; ++j) {
        if (used[j]) {
          u[p[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (p[j0] != 0);
    do {
      const std::size_t j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0 != 0);
  }
  std::vector<std::size_t> row_to_col(n, 0);
  for (std::size_t j = 1; j <= n; ++j)
    if (p[j] != 0) row_to_col[p[j] - 1] = j - 1;
  return row_to_col;
}

struct HungarianResult {
  double acc = 0.0;
  std::map<std::size_t, std::size_t> mapping;  ///< predicted cluster -> truth class
};

/// Clustering accuracy under the best one-to-one cluster-to-class mapping.
inline HungarianResult hungarian_accuracy(const LabelingPair& pair) {
  pair.validate();
  if (pair.size() == 0) throw Error(ErrorCode::LengthMismatch, "hungarian_accuracy needs n >= 1");
  const Contingency ct(pair);
  const std::size_t r = ct.truth_ids.size(), c = ct.pred_ids.size();
  const std::size_t n = std::max(r, c);
  // Maximize matches by minimizing their negation; padding costs 0.
  std::vector<std::vector<double>> cost(n, std::vector<double>(n, 0.0));
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) cost[j][i] = -ct.counts[i][j];
  const auto assign = solve_assignment(cost);
  HungarianResult out;
  double matched = 0.0;
  for (std::size_t j = 0; j < c; ++j) {
    const std::size_t i = assign[j];
    if (i >= r) continue;
    out.mapping[ct.pred_ids[j]] = ct.truth_ids[i];
    matched += ct.counts[i][j];
  }
  out.acc = matched / static_cast<double>(pair.size());
  return out;
}

namespace detail {
inline double choose2(double x) { return x * (x - 1.0) / 2.0; }
}  // namespace detail

/// Adjusted Rand index.
inline double ari(const LabelingPair& pair) {
  pair.validate();
  if (pair.size() < 2) throw Error(ErrorCode::TooFewSamples, "ari needs n >= 2");
  const Contingency ct(pair);
  double index = 0.0, sum_a = 0.0, sum_b = 0.0;
  std::vector<double> b(ct.pred_ids.size(), 0.0);
  for (const auto& row : ct.counts) {
    double a = 0.0;
    for (std::size_t j = 0; j < row.size(); ++j) {
      index += detail::choose2(row[j]);
      a += row[j];
      b[j] += row[j];
    }
    sum_a += detail::choose2(a);
  }
  for (double bj : b) sum_b += detail::choose2(bj);
  const double expected = sum_a * sum_b / detail::choose2(static_cast<double>(pair.size()));
  const double max_index = 0.5 * (sum_a + sum_b);
  const double denom = max_index - expected;
  if (denom == 0.0) {
    // Both sides are a single cluster or both are all singletons.
    const bool identical = ct.truth_ids.size() == ct.pred_ids.size() && index == sum_a && index == sum_b;
    return identical ? 1.0 : 0.0;
  }
  return (index - expected) / denom;
}

enum class NmiNorm { Geometric, Arithmetic };

/// Normalized mutual information in nats.
inline double nmi(const LabelingPair& pair, NmiNorm norm = NmiNorm::Geometric) {
  pair.validate();
  if (pair.size() == 0) throw Error(ErrorCode::LengthMismatch, "nmi needs n >= 1");
  const Contingency ct(pair);
  const double n = static_cast<double>(pair.size());
  std::vector<double> a(ct.truth_ids.size(), 0.0), b(ct.pred_ids.size(), 0.0);
  for (std::size_t i = 0; i < a.size(); ++i)
    for (std::size_t j = 0; j < b.size(); ++j) {
      a[i] += ct.counts[i][j];
      b[j] += ct.counts[i][j];
    }
  const auto entropy = [n](const std::vector<double>& m) {
    double h = 0.0;
    for (double x : m)
      if (x > 0.0) h -= (x / n) * std::log(x / n);
    return h;
  };
  const double ht = entropy(a), hp = entropy(b);
  if (ht == 0.0 || hp == 0.0) {
    // A single cluster on either side: only the all-in-one-cluster pair agrees.
    return (a.size() == 1 && b.size() == 1) ? 1.0 : 0.0;
  }
  double mi = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i)
    for (std::size_t j = 0; j < b.size(); ++j) {
      const double nij = ct.counts[i][j];
      if (nij > 0.0) mi += (nij / n) * std::log(n * nij / (a[i] * b[j]));
    }
  const double denom = norm == NmiNorm::Geometric ? std::sqrt(ht * hp) : 0.5 * (ht + hp);
  return std::clamp(mi / denom, 0.0, 1.0);
}

/// Contingency table with columns ordered so column i holds the cluster
/// mapped to truth class i; unmapped clusters follow in ascending id order.
struct ConfusionTable {
  std::vector<std::size_t> truth_ids;
  std::vector<std::size_t> cluster_ids;
  std::vector<std::vector<std::size_t>> counts;  ///< [truth][column]

  void write_csv(std::ostream& os) const {
    os << "truth";
    for (std::size_t c : cluster_ids) os << ',' << c;
    os << '\n';
    for (std::size_t i = 0; i < truth_ids.size(); ++i) {
      os << truth_ids[i];
      for (std::size_t v : counts[i]) os << ',' << v;
      os << '\n';
    }
  }
};

inline ConfusionTable confusion_table(const LabelingPair& pair, const std::map<std::size_t, std::size_t>& mapping) {
  pair.validate();
  if (pair.size() == 0) throw Error(ErrorCode::LengthMismatch, "confusion_table needs n >= 1");
  const Contingency ct(pair);
  ConfusionTable out;
  out.truth_ids = ct.truth_ids;
  std::vector<bool> placed(ct.pred_ids.size(), false);
  for (std::size_t t : ct.truth_ids)
    for (const auto& [pred, truth] : mapping)
      if (truth == t) {
        const std::size_t j = Contingency::index_of(ct.pred_ids, pred);
        if (j < ct.pred_ids.size() && ct.pred_ids[j] == pred && !placed[j]) {
          out.cluster_ids.push_back(pred);
          placed[j] = true;
        }
      }
  for (std::size_t j = 0; j < ct.pred_ids.size(); ++j)
    if (!placed[j]) out.cluster_ids.push_back(ct.pred_ids[j]);
  out.counts.assign(ct.truth_ids.size(), std::vector<std::size_t>(out.cluster_ids.size(), 0));
  for (std::size_t i = 0; i < ct.truth_ids.size(); ++i)
    for (std::size_t c = 0; c < out.cluster_ids.size(); ++c)
      out.counts[i][c] = static_cast<std::size_t>(ct.counts[i][Contingency::index_of(ct.pred_ids, out.cluster_ids[c])]);
  return out;
}

struct MetricsReport {
  double acc = 0.0;
  double ari = 0.0;
  double nmi = 0.0;
  std::optional<std::size_t> k_pred;
  ConfusionTable confusion;

  nlohmann::json to_json() const {
    nlohmann::json j;
    j["acc"] = acc;
    j["ari"] = ari;
    j["nmi"] = nmi;
    j["k_pred"] = k_pred ? nlohmann::json(*k_pred) : nlohmann::json(nullptr);
    return j;
  }
};

inline MetricsReport evaluate(const LabelingPair& pair, NmiNorm norm = NmiNorm::Geometric) {
  MetricsReport r;
  const HungarianResult h = hungarian_accuracy(pair);
  r.acc = h.acc;
  r.ari = pair.size() >= 2 ? ari(pair) : 1.0;
  r.nmi = nmi(pair, norm);
  r.confusion = confusion_table(pair, h.mapping);
  return r;
}

// ---- k-means and cluster-count estimation -----------------------------------

struct KMeansResult {
  Matrix centers;
  std::vector<std::size_t> assignment;
  std::vector<std::size_t> sizes;
  double inertia = 0.0;
};

namespace detail {
inline double sq_dist(std::span<const double> a, std::span<const double> b) {
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    acc += d * d;
  }
  return acc;
}

inline std::size_t sample_index(Rng& rng, std::size_t n) {
  return std::min(n - 1, static_cast<std::size_t>(uniform01(rng) * static_cast<double>(n)));
}

/// k-means++ seeding; falls back to a uniform pick when every point is
/// already covered by an existing center.
inline Matrix seed_centers(const Matrix& x, std::size_t k, Rng& rng) {
  const std::size_t n = x.rows();
  Matrix centers(k, x.cols());
  std::size_t first = sample_index(rng, n);
  std::copy_n(x.row(first).begin(), x.cols(), centers.row(0).begin());
  std::vector<double> d2(n);
  for (std::size_t i = 0; i < n; ++i) d2[i] = sq_dist(x.row(i), centers.row(0));
  for (std::size_t c = 1; c < k; ++c) {
    double total = 0.0;
    for (double v : d2) total += v;
    std::size_t pick = 0;
    if (total > 0.0) {
      const double target = uniform01(rng) * total;
      double run = 0.0;
      pick = n - 1;
      for (std::size_t i = 0; i < n; ++i) {
        run += d2[i];
        if (run > target) {
          pick = i;
          break;
        }
      }
    } else {
      pick = sample_index(rng, n);
    }
    std::copy_n(x.row(pick).begin(), x.cols(), centers.row(c).begin());
    for (std::size_t i = 0; i < n; ++i) d2[i] = std::min(d2[i], sq_dist(x.row(i), centers.row(c)));
  }
  return centers;
}
}  // namespace detail

/// Lloyd iterations from a k-means++ start. Ties go to the lowest center;
/// an empty cluster keeps its previous center.
inline KMeansResult kmeans_once(const Matrix& x, std::size_t k, std::uint64_t seed, std::size_t max_iter) {
  Rng rng(seed);
  KMeansResult r;
  r.centers = detail::seed_centers(x, k, rng);
  const std::size_t n = x.rows(), d = x.cols();
  r.assignment.assign(n, k);
  for (std::size_t it = 0; it < max_iter; ++it) {
    bool changed = false;
    for (std::size_t i = 0; i < n; ++i) {
      std::size_t best = 0;
      double best_d = detail::sq_dist(x.row(i), r.centers.row(0));
      for (std::size_t c = 1; c < k; ++c) {
        const double dd = detail::sq_dist(x.row(i), r.centers.row(c));
        if (dd < best_d) {
          best_d = dd;
          best = c;
        }
      }
      if (r.assignment[i] != best) {
        r.assignment[i] = best;
        changed = true;
      }
    }
    if (!changed) break;
    Matrix sums(k, d);
    std::vector<std::size_t> counts(k, 0);
    for (std::size_t i = 0; i < n; ++i) {
      ++counts[r.assignment[i]];
      auto s = sums.row(r.assignment[i]);
      const auto xi = x.row(i);
      for (std::size_t j = 0; j < d; ++j) s[j] += xi[j];
    }
    for (std::size_t c = 0; c < k; ++c) {
      if (counts[c] == 0) continue;
      for (std::size_t j = 0; j < d; ++j) r.centers(c, j) = sums(c, j) / static_cast<double>(counts[c]);
    }
  }
  r.sizes.assign(k, 0);
  r.inertia = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    ++r.sizes[r.assignment[i]];
    r.inertia += detail::sq_dist(x.row(i), r.centers.row(r.assignment[i]));
  }
  return r;
}

struct KMeansOptions {
  std::uint64_t seed = 0;
  std::size_t max_iter = 100;
  std::size_t restarts = 10;
};

/// Best-of-restarts k-means: lowest inertia, ties to the earliest restart.
/// Restarts run in parallel; the result does not depend on the thread count.
inline KMeansResult kmeans(const Matrix& x, std::size_t k, const KMeansOptions& opt = {}) {
  if (k == 0) throw Error(ErrorCode::InvalidParams, "kmeans needs k >= 1");
  if (x.rows() < k) {
    throw Error(ErrorCode::TooFewSamples, std::to_string(x.rows()) + " points for " + std::to_string(k) + " clusters");
  }
  const std::size_t restarts = std::max<std::size_t>(1, opt.restarts);
  std::vector<KMeansResult> runs(restarts);
  parallel_for(restarts, [&](std::size_t r) { runs[r] = kmeans_once(x, k, mix_seed(opt.seed, r), opt.max_iter); });
  std::size_t best = 0;
  for (std::size_t r = 1; r < restarts; ++r)
    if (runs[r].inertia < runs[best].inertia) best = r;
  return std::move(runs[best]);
}

/// Over-clusters with k_cap centers and counts clusters holding at least
/// rho * n / k_cap points (never fewer than one).
inline std::size_t estimate_k(const Matrix& features, std::size_t k_cap, double rho, std::uint64_t seed = 0) {
  if (k_cap < 2) throw Error(ErrorCode::InvalidParams, "k_cap must be >= 2");
  if (!(rho > 0.0 && rho < 1.0)) throw Error(ErrorCode::InvalidParams, "rho must lie in (0, 1)");
  if (features.rows() < k_cap) {
    throw Error(ErrorCode::TooFewSamples, std::to_string(features.rows()) + " samples for k_cap " + std::to_string(k_cap));
  }
  const KMeansResult km = kmeans(features, k_cap, {seed, 100, 10});
  const double threshold = rho * static_cast<double>(features.rows()) / static_cast<double>(k_cap);
  std::size_t k = 0;
  for (std::size_t s : km.sizes)
    if (static_cast<double>(s) >= threshold) ++k;
  return std::max<std::size_t>(k, 1);
}

}  // namespace plpcl
