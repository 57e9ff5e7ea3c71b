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

// Embedding datasets: JSON-lines IO, known/unknown class splits and a
// Gaussian-mixture generator.
//
// One record per line:
//   {"id": "...", "embedding": [..], "label": "name" | null, "split": "train"|"dev"|"test"}

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <fstream>
#include <istream>
#include <limits>
#include <numeric>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "plpcl/error.hpp"
#include "plpcl/matrix.hpp"
#include "plpcl/rng.hpp"

namespace plpcl {

enum class Split { Train, Dev, Test };

inline const char* split_name(Split s) {
  switch (s) {
    case Split::Train: return "train";
    case Split::Dev: return "dev";
    case Split::Test: return "test";
  }
  return "?";
}

inline std::optional<Split> parse_split(std::string_view s) {
  if (s == "train") return Split::Train;
  if (s == "dev") return Split::Dev;
  if (s == "test") return Split::Test;
  return std::nullopt;
}

enum class Setting { Ood, Open };

inline const char* setting_name(Setting s) { return s == Setting::Ood ? "ood" : "open"; }

inline std::optional<Setting> parse_setting(std::string_view s) {
  if (s == "ood") return Setting::Ood;
  if (s == "open") return Setting::Open;
  return std::nullopt;
}

struct Record {
  std::string id;
  std::vector<double> embedding;
  std::optional<std::string> label;
  Split split = Split::Train;

  friend bool operator==(const Record&, const Record&) = default;
};

struct EmbeddingDataset {
  std::vector<Record> records;
  std::size_t dim = 0;                ///< 0 until the first record is seen
  std::vector<std::string> classes;   ///< sorted label space
  std::vector<bool> unknown;          ///< per class: held out as novel

  std::size_t size() const { return records.size(); }

  std::optional<std::size_t> class_index(const std::string& name) const {
    const auto it = std::lower_bound(classes.begin(), classes.end(), name);
    if (it == classes.end() || *it != name) return std::nullopt;
    return static_cast<std::size_t>(it - classes.begin());
  }

  /// Class ids whose unknown flag equals `want_unknown`, ascending.
  std::vector<std::size_t> classes_where(bool want_unknown) const {
    std::vector<std::size_t> out;
    for (std::size_t c = 0; c < classes.size(); ++c)
      if (unknown[c] == want_unknown) out.push_back(c);
    return out;
  }
  std::vector<std::size_t> known_classes() const { return classes_where(false); }
  std::vector<std::size_t> unknown_classes() const { return classes_where(true); }

  std::vector<std::size_t> indices(Split s) const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < records.size(); ++i)
      if (records[i].split == s) out.push_back(i);
    return out;
  }

  Matrix embeddings(const std::vector<std::size_t>& idx) const {
    Matrix m(idx.size(), dim);
    for (std::size_t r = 0; r < idx.size(); ++r) std::copy(records[idx[r]].embedding.begin(), records[idx[r]].embedding.end(), m.row(r).begin());
    return m;
  }

  friend bool operator==(const EmbeddingDataset&, const EmbeddingDataset&) = default;
};

/// Recomputes the sorted label space from the record labels. Every class
/// starts out known.
inline void rebuild_label_space(EmbeddingDataset& ds) {
  std::vector<std::string> names;
  for (const Record& r : ds.records)
    if (r.label) names.push_back(*r.label);
  std::sort(names.begin(), names.end());
  names.erase(std::unique(names.begin(), names.end()), names.end());
  ds.classes = std::move(names);
  ds.unknown.assign(ds.classes.size(), false);
}

inline EmbeddingDataset read_dataset(std::istream& in) {
  EmbeddingDataset ds;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const std::string where = "line " + std::to_string(lineno);
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      throw Error(ErrorCode::ParseError, where + ": " + e.what());
    }
    Record r;
    try {
      r.id = j.at("id").get<std::string>();
      r.embedding = j.at("embedding").get<std::vector<double>>();
      if (j.contains("label") && !j.at("label").is_null()) r.label = j.at("label").get<std::string>();
      const auto split = parse_split(j.at("split").get<std::string>());
      if (!split) throw Error(ErrorCode::UnknownSplit, where + ": split \"" + j.at("split").get<std::string>() + "\"");
      r.split = *split;
    } catch (const nlohmann::json::exception& e) {
      throw Error(ErrorCode::ParseError, where + ": " + e.what());
    }
    if (r.embedding.empty()) throw Error(ErrorCode::ParseError, where + ": empty embedding");
    for (double v : r.embedding)
      if (!std::isfinite(v)) throw Error(ErrorCode::ParseError, where + ": non-finite embedding value");
    if (ds.dim == 0) {
      ds.dim = r.embedding.size();
    } else if (r.embedding.size() != ds.dim) {
      throw Error(ErrorCode::DimMismatch, where + ": embedding has " + std::to_string(r.embedding.size()) +
                                              " values, expected " + std::to_string(ds.dim));
    }
    ds.records.push_back(std::move(r));
  }
  rebuild_label_space(ds);
  return ds;
}

inline EmbeddingDataset load_dataset(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::IoError, "cannot open " + path);
  return read_dataset(in);
}

inline void write_dataset(std::ostream& out, const EmbeddingDataset& ds) {
  for (const Record& r : ds.records) {
    nlohmann::ordered_json j;
    j["id"] = r.id;
    j["embedding"] = r.embedding;
    j["label"] = r.label ? nlohmann::ordered_json(*r.label) : nlohmann::ordered_json(nullptr);
    j["split"] = split_name(r.split);
    out << j.dump() << '\n';
  }
}

inline void save_dataset(const std::string& path, const EmbeddingDataset& ds) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::IoError, "cannot write " + path);
  write_dataset(out, ds);
  if (!out) throw Error(ErrorCode::IoError, "write failed for " + path);
}

struct SplitSpec {
  double ood_class_ratio = 0.3;
  double labeled_ratio = 1.0;
  Setting setting = Setting::Ood;
  std::uint64_t seed = 0;
};

/// Marks ceil(ood_class_ratio * |classes|) seeded-random classes unknown and
/// strips their training labels. Open setting additionally keeps only
/// round(labeled_ratio * n_c) labels per known class in the training split.
inline EmbeddingDataset apply_split(const EmbeddingDataset& data, const SplitSpec& spec) {
  if (!(spec.ood_class_ratio >= 0.0 && spec.ood_class_ratio <= 1.0) ||
      !(spec.labeled_ratio >= 0.0 && spec.labeled_ratio <= 1.0)) {
    throw Error(ErrorCode::InvalidConfig, "split ratios must lie in [0, 1]");
  }
  const std::size_t n_classes = data.classes.size();
  if (n_classes == 0) throw Error(ErrorCode::NoClasses, "dataset has no labeled classes");
  const auto n_unknown = static_cast<std::size_t>(std::ceil(spec.ood_class_ratio * static_cast<double>(n_classes) - 1e-9));
  if (n_unknown >= n_classes) throw Error(ErrorCode::NoClasses, "no known classes remain after the split");
  if (spec.setting == Setting::Ood && n_unknown == 0) {
    throw Error(ErrorCode::NoClasses, "OOD setting needs at least one unknown class");
  }

  EmbeddingDataset out = data;
  std::vector<std::size_t> order(n_classes);
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(spec.seed);
  shuffle(order.begin(), order.end(), rng);
  out.unknown.assign(n_classes, false);
  for (std::size_t i = 0; i < n_unknown; ++i) out.unknown[order[i]] = true;

  const double labeled_ratio = spec.setting == Setting::Ood ? 1.0 : spec.labeled_ratio;
  std::vector<std::vector<std::size_t>> train_by_class(n_classes);
  for (std::size_t i = 0; i < out.records.size(); ++i) {
    Record& r = out.records[i];
    if (r.split != Split::Train || !r.label) continue;
    const std::size_t c = *out.class_index(*r.label);
    if (out.unknown[c]) {
      r.label.reset();
    } else {
      train_by_class[c].push_back(i);
    }
  }
  if (labeled_ratio < 1.0) {
    for (std::size_t c = 0; c < n_classes; ++c) {
      auto& members = train_by_class[c];
      Rng class_rng(mix_seed(spec.seed, c + 1));
      shuffle(members.begin(), members.end(), class_rng);
      const auto keep = static_cast<std::size_t>(std::llround(labeled_ratio * static_cast<double>(members.size())));
      for (std::size_t k = keep; k < members.size(); ++k) out.records[members[k]].label.reset();
    }
  }
  return out;
}

/// Standard normal draw via Box-Muller on uniform01, so generated files do
/// not depend on the standard library's distribution code.
inline double standard_normal(Rng& rng) {
  double u1 = uniform01(rng);
  while (u1 <= 0.0) u1 = uniform01(rng);
  const double u2 = uniform01(rng);
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * 3.14159265358979323846 * u2);
}

/// Isotropic Gaussian mixture with class means at pairwise distance at least
/// separation * noise_sigma, split 80/10/10 per class.
inline EmbeddingDataset synth_mixture(std::size_t classes, std::size_t dim, std::size_t per_class, double separation,
                                      double noise_sigma, std::uint64_t seed) {
  if (classes < 2 || dim < 2 || per_class < 1 || !(separation > 0.0) || !(noise_sigma > 0.0)) {
    throw Error(ErrorCode::InvalidParams, "synth needs classes >= 2, dim >= 2, per_class >= 1, separation > 0, noise > 0");
  }
  Rng rng(seed);
  Matrix means(classes, dim);
  for (double& v : means.data()) v = standard_normal(rng);
  const double target = separation * noise_sigma;
  if (classes <= dim) {
    // Gram-Schmidt: orthonormal directions at radius target / sqrt(2).
    for (std::size_t c = 0; c < classes; ++c) {
      auto row = means.row(c);
      for (std::size_t p = 0; p < c; ++p) {
        const double proj = dot(row, means.row(p));
        for (std::size_t j = 0; j < dim; ++j) row[j] -= proj * means(p, j);
      }
      const double norm = std::sqrt(dot(row, row));
      for (double& v : row) v /= norm;
    }
    for (double& v : means.data()) v *= target / std::sqrt(2.0);
  } else {
    means = l2_normalize_rows(means);
    double closest = std::numeric_limits<double>::infinity();
    for (std::size_t a = 0; a < classes; ++a)
      for (std::size_t b = a + 1; b < classes; ++b) {
        double d2 = 0.0;
        for (std::size_t j = 0; j < dim; ++j) d2 += (means(a, j) - means(b, j)) * (means(a, j) - means(b, j));
        closest = std::min(closest, std::sqrt(d2));
      }
    for (double& v : means.data()) v *= target / closest;
  }

  const std::size_t width = std::max<std::size_t>(2, std::to_string(classes - 1).size());
  const auto padded = [](std::size_t v, std::size_t w) {
    std::string s = std::to_string(v);
    return std::string(w > s.size() ? w - s.size() : 0, '0') + s;
  };
  const std::size_t n_train = per_class * 8 / 10;
  const std::size_t n_dev = per_class / 10;

  EmbeddingDataset ds;
  ds.dim = dim;
  for (std::size_t c = 0; c < classes; ++c) {
    std::vector<std::size_t> order(per_class);
    std::iota(order.begin(), order.end(), std::size_t{0});
    shuffle(order.begin(), order.end(), rng);
    std::vector<Split> split_of(per_class, Split::Test);
    for (std::size_t k = 0; k < per_class; ++k) {
      if (k < n_train) split_of[order[k]] = Split::Train;
      else if (k < n_train + n_dev) split_of[order[k]] = Split::Dev;
    }
    for (std::size_t i = 0; i < per_class; ++i) {
      Record r;
      r.id = "c" + padded(c, width) + "-" + padded(i, 4);
      r.embedding.resize(dim);
      for (std::size_t j = 0; j < dim; ++j) r.embedding[j] = means(c, j) + noise_sigma * standard_normal(rng);
      r.label = "class_" + padded(c, width);
      r.split = split_of[i];
      ds.records.push_back(std::move(r));
    }
  }
  rebuild_label_space(ds);
  return ds;
}

}  // namespace plpcl
