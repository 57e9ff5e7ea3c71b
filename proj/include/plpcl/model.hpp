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

// Backbone MLP with an instance head f (unit-norm features) and a cluster
// head g (row softmax over all known + novel clusters). Augmented views come
// from inverted dropout on the backbone activations.

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "plpcl/error.hpp"
#include "plpcl/matrix.hpp"
#include "plpcl/rng.hpp"
#include "plpcl/tape.hpp"

namespace plpcl {

struct ModelDims {
  std::size_t input = 0;       ///< d
  std::size_t hidden = 0;      ///< h
  std::size_t feature = 128;   ///< m_f
  std::size_t clusters = 0;    ///< K_total
  std::size_t head_layers = 0; ///< hidden ReLU layers (width h) inside each head

  friend bool operator==(const ModelDims&, const ModelDims&) = default;
};

struct Layer {
  Matrix weight;  ///< fan_in x fan_out
  Matrix bias;    ///< 1 x fan_out
  friend bool operator==(const Layer&, const Layer&) = default;
};

struct LineageEntry {
  std::string stage;
  std::uint64_t seed = 0;
  friend bool operator==(const LineageEntry&, const LineageEntry&) = default;
};

struct ModelParams {
  ModelDims dims;
  std::vector<Layer> backbone;
  std::vector<Layer> head_f;
  std::vector<Layer> head_g;
  std::vector<LineageEntry> lineage;

  /// Weight and bias matrices in a fixed order: backbone, head_f, head_g.
  std::vector<Matrix*> tensors() {
    std::vector<Matrix*> out;
    for (auto* group : {&backbone, &head_f, &head_g})
      for (Layer& l : *group) {
        out.push_back(&l.weight);
        out.push_back(&l.bias);
      }
    return out;
  }
  std::vector<const Matrix*> tensors() const {
    std::vector<const Matrix*> out;
    for (const auto* group : {&backbone, &head_f, &head_g})
      for (const Layer& l : *group) {
        out.push_back(&l.weight);
        out.push_back(&l.bias);
      }
    return out;
  }

  friend bool operator==(const ModelParams&, const ModelParams&) = default;
};

inline ModelParams init_params(const ModelDims& dims, std::uint64_t seed) {
  if (dims.input == 0 || dims.hidden == 0 || dims.feature == 0 || dims.clusters == 0) {
    throw Error(ErrorCode::InvalidDims, "all model dimensions must be >= 1");
  }
  Rng rng(seed);
  const auto make = [&](std::size_t in, std::size_t out) {
    Layer l{Matrix(in, out), Matrix(1, out)};
    const double bound = 1.0 / std::sqrt(static_cast<double>(in));
    for (double& w : l.weight.data()) w = (2.0 * uniform01(rng) - 1.0) * bound;
    return l;
  };
  ModelParams p;
  p.dims = dims;
  p.backbone.push_back(make(dims.input, dims.hidden));
  for (std::size_t i = 0; i < dims.head_layers; ++i) p.head_f.push_back(make(dims.hidden, dims.hidden));
  p.head_f.push_back(make(dims.hidden, dims.feature));
  for (std::size_t i = 0; i < dims.head_layers; ++i) p.head_g.push_back(make(dims.hidden, dims.hidden));
  p.head_g.push_back(make(dims.hidden, dims.clusters));
  p.lineage.push_back({"init", seed});
  return p;
}

/// Tape leaves for every tensor of a ModelParams, in tensors() order.
struct ParamVars {
  std::vector<Var> all;
};

inline ParamVars bind_params(Tape& tape, const ModelParams& params) {
  ParamVars pv;
  for (const Matrix* m : params.tensors()) pv.all.push_back(tape.param(*m));
  return pv;
}

struct ForwardVars {
  Var f;  ///< n x m_f, unit rows
  Var g;  ///< n x K_total, probability rows
};

inline void check_dropout(double p) {
  if (!(p >= 0.0 && p < 1.0)) throw Error(ErrorCode::InvalidDropout, "dropout must lie in [0, 1), got " + std::to_string(p));
}

/// Records one forward pass. Dropout (inverted, rate p) acts on the backbone
/// output with a mask drawn from `seed`; p == 0 leaves activations untouched.
inline ForwardVars forward(Tape& tape, const ModelParams& params, const ParamVars& vars, const Matrix& z,
                           double dropout_p, std::uint64_t seed) {
  check_dropout(dropout_p);
  if (z.cols() != params.dims.input) {
    throw Error(ErrorCode::ShapeMismatch, "input has " + std::to_string(z.cols()) + " columns, model expects " +
                                              std::to_string(params.dims.input));
  }
  std::size_t next = 0;
  const auto linear = [&](Var x) {
    Var w = vars.all[next++];
    Var b = vars.all[next++];
    return ad::add_row(ad::matmul(x, w), b);
  };

  Var h = tape.constant(z);
  for (std::size_t i = 0; i < params.backbone.size(); ++i) h = ad::relu(linear(h));
  if (dropout_p > 0.0) {
    Rng rng(seed);
    Matrix mask(h.rows(), h.cols());
    const double keep_scale = 1.0 / (1.0 - dropout_p);
    for (double& m : mask.data()) m = uniform01(rng) >= dropout_p ? keep_scale : 0.0;
    h = ad::mul_const(h, mask);
  }

  Var f = h;
  for (std::size_t i = 0; i + 1 < params.head_f.size(); ++i) f = ad::relu(linear(f));
  f = ad::l2_normalize_rows(linear(f));

  Var g = h;
  for (std::size_t i = 0; i + 1 < params.head_g.size(); ++i) g = ad::relu(linear(g));
  g = ad::softmax_rows(linear(g));
  return {f, g};
}

/// Non-differentiable forward pass returning (F, G).
inline std::pair<Matrix, Matrix> forward(const ModelParams& params, const Matrix& z, double dropout_p,
                                         std::uint64_t seed) {
  Tape tape;
  const ParamVars vars{[&] {
    std::vector<Var> v;
    for (const Matrix* m : params.tensors()) v.push_back(tape.constant(*m));
    return v;
  }()};
  ForwardVars out = forward(tape, params, vars, z, dropout_p, seed);
  return {out.f.value(), out.g.value()};
}

/// Both dropout views of one batch, recorded on the same tape.
struct BatchTensors {
  Matrix z;
  Var f, g;
  Var f_aug, g_aug;
};

inline std::uint64_t augmented_seed(std::uint64_t seed) { return mix_seed(seed, 0xA5); }

inline BatchTensors augmented_views(Tape& tape, const ModelParams& params, const ParamVars& vars, const Matrix& z,
                                    double dropout_p, std::uint64_t seed) {
  ForwardVars a = forward(tape, params, vars, z, dropout_p, seed);
  ForwardVars b = forward(tape, params, vars, z, dropout_p, augmented_seed(seed));
  return {z, a.f, a.g, b.f, b.g};
}

// ---- checkpoint format -----------------------------------------------------

inline nlohmann::json matrix_to_json(const Matrix& m) {
  auto rows = nlohmann::json::array();
  for (std::size_t i = 0; i < m.rows(); ++i) rows.push_back(std::vector<double>(m.row(i).begin(), m.row(i).end()));
  return rows;
}

inline Matrix matrix_from_json(const nlohmann::json& j, std::size_t rows, std::size_t cols) {
  if (!j.is_array() || j.size() != rows) throw Error(ErrorCode::ParseError, "matrix: expected " + std::to_string(rows) + " rows");
  Matrix m(rows, cols);
  for (std::size_t i = 0; i < rows; ++i) {
    const auto& r = j[i];
    if (!r.is_array() || r.size() != cols) throw Error(ErrorCode::ParseError, "matrix: row " + std::to_string(i) + " width");
    for (std::size_t c = 0; c < cols; ++c) m(i, c) = r[c].get<double>();
  }
  return m;
}

inline nlohmann::json params_to_json(const ModelParams& p) {
  nlohmann::json j;
  j["format"] = "plpcl-checkpoint-v1";
  j["dims"] = {{"input", p.dims.input},
               {"hidden", p.dims.hidden},
               {"feature", p.dims.feature},
               {"clusters", p.dims.clusters},
               {"head_layers", p.dims.head_layers}};
  auto lineage = nlohmann::json::array();
  for (const auto& e : p.lineage) lineage.push_back({{"stage", e.stage}, {"seed", e.seed}});
  j["lineage"] = lineage;
  const auto layers = [](const std::vector<Layer>& ls) {
    auto arr = nlohmann::json::array();
    for (const Layer& l : ls) arr.push_back({{"weight", matrix_to_json(l.weight)}, {"bias", matrix_to_json(l.bias)}});
    return arr;
  };
  j["backbone"] = layers(p.backbone);
  j["head_f"] = layers(p.head_f);
  j["head_g"] = layers(p.head_g);
  return j;
}

inline ModelParams params_from_json(const nlohmann::json& j) {
  try {
    ModelParams p;
    const auto& d = j.at("dims");
    p.dims = {d.at("input").get<std::size_t>(), d.at("hidden").get<std::size_t>(), d.at("feature").get<std::size_t>(),
              d.at("clusters").get<std::size_t>(), d.at("head_layers").get<std::size_t>()};
    for (const auto& e : j.at("lineage")) p.lineage.push_back({e.at("stage").get<std::string>(), e.at("seed").get<std::uint64_t>()});
    // Rebuild the expected layer shapes and read into them.
    ModelParams shape = init_params(p.dims, 0);
    const auto read = [](const nlohmann::json& arr, const std::vector<Layer>& like) {
      if (!arr.is_array() || arr.size() != like.size()) throw Error(ErrorCode::ParseError, "checkpoint: layer count");
      std::vector<Layer> out;
      for (std::size_t i = 0; i < like.size(); ++i) {
        out.push_back({matrix_from_json(arr[i].at("weight"), like[i].weight.rows(), like[i].weight.cols()),
                       matrix_from_json(arr[i].at("bias"), 1, like[i].bias.cols())});
      }
      return out;
    };
    p.backbone = read(j.at("backbone"), shape.backbone);
    p.head_f = read(j.at("head_f"), shape.head_f);
    p.head_g = read(j.at("head_g"), shape.head_g);
    return p;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::ParseError, std::string("checkpoint: ") + e.what());
  }
}

}  // namespace plpcl
