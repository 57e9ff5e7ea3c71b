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

// Two-stage training.
//
// Stage 1 (pretrain) fits the labeled known-class samples with the
// supervised contrastive loss on f and cross-entropy on g. Stage 2 (train)
// repeats, once per epoch: refresh pseudo-labels for the unlabeled pool,
// then for each shuffled batch of labeled + unlabeled samples optimize
//
//   SCL(supervised) + CE(supervised) + ILCL(unsupervised) + CLCL(columns) + PCL
//
// where "supervised" means ground truth or a reliable pseudo-label.
//
// Cluster-head columns are laid out as the known classes in label-space
// order followed by one anonymous column per novel class.

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "plpcl/data.hpp"
#include "plpcl/error.hpp"
#include "plpcl/losses.hpp"
#include "plpcl/matrix.hpp"
#include "plpcl/model.hpp"
#include "plpcl/prototypes.hpp"
#include "plpcl/pseudo_labels.hpp"
#include "plpcl/rng.hpp"
#include "plpcl/tape.hpp"

namespace plpcl {

struct TrainConfig {
  Setting setting = Setting::Ood;
  double sigma = 0.99;
  LossConfig loss;
  double pretrain_lr = 5e-5;
  double train_lr = 3e-4;
  std::size_t epochs_pretrain = 100;
  std::size_t epochs_train = 100;
  std::size_t batch_size = 128;
  double dropout_p = 0.1;
  std::uint64_t seed = 0;
  std::size_t k_ind = 0;  ///< 0: take from the dataset
  std::size_t k_ood = 0;  ///< 0: take from the dataset
  std::size_t hidden = 128;
  std::size_t feature = 128;
  std::size_t head_layers = 0;
  double clip_norm = 5.0;  ///< 0 disables clipping

  void validate() const {
    loss.validate();
    if (!(sigma >= 0.0 && sigma <= 1.0)) throw Error(ErrorCode::InvalidConfig, "sigma must lie in [0, 1]");
    if (!(pretrain_lr > 0.0) || !(train_lr > 0.0)) throw Error(ErrorCode::InvalidConfig, "learning rates must be > 0");
    if (batch_size < 2) throw Error(ErrorCode::InvalidConfig, "batch size must be >= 2");
    if (!(dropout_p >= 0.0 && dropout_p < 1.0)) throw Error(ErrorCode::InvalidDropout, "dropout must lie in [0, 1)");
    if (!(clip_norm >= 0.0)) throw Error(ErrorCode::InvalidConfig, "clip norm must be >= 0");
  }
};

/// Known/novel column layout resolved against a split dataset.
struct ClassLayout {
  std::vector<std::size_t> known;    ///< class ids, column c <-> known[c]
  std::vector<std::size_t> unknown;  ///< class ids of novel classes
  std::size_t k_ind() const { return known.size(); }
  std::size_t k_ood() const { return unknown.size(); }
  std::size_t k_total() const { return known.size() + unknown.size(); }

  std::optional<std::size_t> column_of(std::size_t class_id) const {
    for (std::size_t c = 0; c < known.size(); ++c)
      if (known[c] == class_id) return c;
    return std::nullopt;
  }
};

inline ClassLayout class_layout(const EmbeddingDataset& data, const TrainConfig& cfg) {
  ClassLayout layout{data.known_classes(), data.unknown_classes()};
  if ((cfg.k_ind != 0 && cfg.k_ind != layout.k_ind()) || (cfg.k_ood != 0 && cfg.k_ood != layout.k_ood())) {
    throw Error(ErrorCode::ClassCountMismatch, "config expects " + std::to_string(cfg.k_ind) + "/" + std::to_string(cfg.k_ood) +
                                                   " known/novel classes, data has " + std::to_string(layout.k_ind()) + "/" +
                                                   std::to_string(layout.k_ood()));
  }
  if (layout.k_ind() == 0) throw Error(ErrorCode::NoClasses, "no known classes");
  if (cfg.setting == Setting::Ood && layout.k_ood() == 0) throw Error(ErrorCode::NoClasses, "OOD setting needs novel classes");
  return layout;
}

/// Columns used for cluster-level contrast and prediction: novel columns in
/// the OOD setting, every column in the open setting.
inline std::vector<std::size_t> setting_columns(Setting setting, std::size_t k_ind, std::size_t k_total) {
  std::vector<std::size_t> cols;
  for (std::size_t c = setting == Setting::Ood ? k_ind : 0; c < k_total; ++c) cols.push_back(c);
  return cols;
}

/// Training rows with their embeddings and visible supervision.
struct TrainingView {
  std::vector<std::size_t> rows;                   ///< dataset indices (train split)
  Matrix z;
  std::vector<std::optional<std::size_t>> truth;   ///< column, when labeled
};

inline TrainingView training_view(const EmbeddingDataset& data, const ClassLayout& layout) {
  TrainingView v;
  v.rows = data.indices(Split::Train);
  v.z = data.embeddings(v.rows);
  v.truth.resize(v.rows.size());
  for (std::size_t i = 0; i < v.rows.size(); ++i) {
    const Record& r = data.records[v.rows[i]];
    if (!r.label) continue;
    const auto col = layout.column_of(*data.class_index(*r.label));
    if (!col) throw Error(ErrorCode::LabelOutOfRange, "training label of a novel class: " + *r.label);
    v.truth[i] = col;
  }
  return v;
}

// ---- optimizer ---------------------------------------------------------------

struct AdamState {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::uint64_t step = 0;
  std::vector<Matrix> m;
  std::vector<Matrix> v;

  void init_like(const ModelParams& params) {
    m.clear();
    v.clear();
    for (const Matrix* t : params.tensors()) {
      m.emplace_back(t->rows(), t->cols());
      v.emplace_back(t->rows(), t->cols());
    }
    step = 0;
  }

  void apply(ModelParams& params, const std::vector<Matrix>& grads, double lr) {
    ++step;
    const double c1 = 1.0 - std::pow(beta1, static_cast<double>(step));
    const double c2 = 1.0 - std::pow(beta2, static_cast<double>(step));
    auto tensors = params.tensors();
    for (std::size_t t = 0; t < tensors.size(); ++t) {
      auto& w = tensors[t]->data();
      auto& mt = m[t].data();
      auto& vt = v[t].data();
      const auto& g = grads[t].data();
      for (std::size_t i = 0; i < w.size(); ++i) {
        mt[i] = beta1 * mt[i] + (1.0 - beta1) * g[i];
        vt[i] = beta2 * vt[i] + (1.0 - beta2) * g[i] * g[i];
        w[i] -= lr * (mt[i] / c1) / (std::sqrt(vt[i] / c2) + eps);
      }
    }
  }
};

/// Rescales grads in place so their global L2 norm is at most max_norm.
/// Returns the norm before clipping.
inline double clip_global_norm(std::vector<Matrix>& grads, double max_norm) {
  double sq = 0.0;
  for (const Matrix& g : grads)
    for (double x : g.data()) sq += x * x;
  const double norm = std::sqrt(sq);
  if (max_norm > 0.0 && norm > max_norm) {
    const double s = max_norm / norm;
    for (Matrix& g : grads)
      for (double& x : g.data()) x *= s;
  }
  return norm;
}

// ---- logging -----------------------------------------------------------------

struct EpochLog {
  std::size_t epoch = 0;
  double loss_total = 0.0;
  std::array<double, kNumLossTerms> parts{};
  std::size_t n_reliable = 0;

  nlohmann::ordered_json to_json() const {
    nlohmann::ordered_json j;
    j["epoch"] = epoch;
    j["loss_total"] = loss_total;
    j["loss_scl"] = parts[static_cast<std::size_t>(LossTerm::Scl)];
    j["loss_ce"] = parts[static_cast<std::size_t>(LossTerm::Ce)];
    j["loss_ilcl"] = parts[static_cast<std::size_t>(LossTerm::Ilcl)];
    j["loss_clcl"] = parts[static_cast<std::size_t>(LossTerm::Clcl)];
    j["loss_pcl"] = parts[static_cast<std::size_t>(LossTerm::Pcl)];
    j["n_reliable"] = n_reliable;
    return j;
  }
};

using EpochCallback = std::function<void(const EpochLog&)>;

namespace detail {

inline constexpr std::uint64_t kInitStream = 0;
inline constexpr std::uint64_t kPretrainStream = 1;
inline constexpr std::uint64_t kTrainStream = 2;

inline std::vector<std::vector<std::size_t>> make_batches(std::vector<std::size_t> order, std::size_t batch_size) {
  std::vector<std::vector<std::size_t>> out;
  for (std::size_t start = 0; start < order.size(); start += batch_size) {
    const std::size_t end = std::min(order.size(), start + batch_size);
    out.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(start), order.begin() + static_cast<std::ptrdiff_t>(end));
  }
  return out;
}

template <typename Fn>
std::optional<Var> optional_term(double weight, Fn&& fn) {
  if (weight == 0.0) return std::nullopt;
  try {
    return fn();
  } catch (const Error& e) {
    if (e.code() == ErrorCode::EmptyBatch || e.code() == ErrorCode::TooFewClusters) return std::nullopt;
    throw;
  }
}

struct StepResult {
  bool usable = false;
  double total = 0.0;
  std::array<double, kNumLossTerms> parts{};
};

/// One optimizer step on a batch under a supervision mask. `stage2`
/// enables ILCL/CLCL/PCL; CLCL sees only `clcl_rows` (batch rows without a
/// ground-truth label) restricted to `columns`.
inline StepResult train_step(ModelParams& params, AdamState& adam, const Matrix& z, const SupervisionMask& mask,
                             const std::vector<std::size_t>& columns, const std::vector<std::size_t>& clcl_rows,
                             const TrainConfig& cfg, double lr, std::uint64_t dropout_seed, bool stage2) {
  Tape tape;
  const ParamVars vars = bind_params(tape, params);
  const BatchTensors batch = augmented_views(tape, params, vars, z, cfg.dropout_p, dropout_seed);
  const LossConfig& lc = cfg.loss;

  LossParts parts;
  parts[LossTerm::Scl] = optional_term(lc.weight(LossTerm::Scl),
                                       [&] { return scl_loss(batch.f, batch.f_aug, mask, lc.tau, lc.scl_pool); });
  parts[LossTerm::Ce] = optional_term(lc.weight(LossTerm::Ce), [&] { return ce_loss(batch.g, mask); });
  if (stage2) {
    parts[LossTerm::Ilcl] =
        optional_term(lc.weight(LossTerm::Ilcl), [&] { return ilcl_loss(batch.f, batch.f_aug, mask, lc.tau); });
    parts[LossTerm::Clcl] = optional_term(lc.weight(LossTerm::Clcl), [&] {
      if (clcl_rows.empty()) throw Error(ErrorCode::EmptyBatch, "no unlabeled rows for clcl");
      return clcl_loss(ad::select_rows(batch.g, clcl_rows), ad::select_rows(batch.g_aug, clcl_rows), columns, lc.tau);
    });
    parts[LossTerm::Pcl] = optional_term(lc.weight(LossTerm::Pcl), [&]() -> Var {
      PrototypePair pp = prototype_pair(batch, mask);
      if (pp.active.size() < 2) throw Error(ErrorCode::TooFewClusters, "fewer than two live prototypes");
      return pcl_loss(pp.z, pp.z_aug, lc.tau);
    });
  }

  StepResult r;
  for (LossTerm t : kLossTermOrder) {
    if (parts[t]) r.usable = true;
    r.parts[static_cast<std::size_t>(t)] = parts.value(t);
  }
  if (!r.usable) return r;
  Var total = total_loss(tape, parts, lc);
  r.total = total.scalar();
  if (!std::isfinite(r.total)) throw Error(ErrorCode::InvalidParams, "non-finite training loss");
  std::vector<Matrix> grads = grad_of(tape, total, vars.all);
  clip_global_norm(grads, cfg.clip_norm);
  adam.apply(params, grads, lr);
  return r;
}

inline EpochLog summarize(std::size_t epoch, const std::vector<StepResult>& steps, std::size_t n_reliable) {
  EpochLog log;
  log.epoch = epoch;
  log.n_reliable = n_reliable;
  if (steps.empty()) return log;
  for (const StepResult& s : steps) {
    log.loss_total += s.total;
    for (std::size_t t = 0; t < kNumLossTerms; ++t) log.parts[t] += s.parts[t];
  }
  const double inv = 1.0 / static_cast<double>(steps.size());
  log.loss_total *= inv;
  for (double& p : log.parts) p *= inv;
  return log;
}

}  // namespace detail

/// Stage 1: supervised pretraining on the labeled known-class samples.
inline ModelParams pretrain(const EmbeddingDataset& data, const TrainConfig& cfg, const EpochCallback& on_epoch = {}) {
  cfg.validate();
  const ClassLayout layout = class_layout(data, cfg);
  const TrainingView view = training_view(data, layout);
  std::vector<std::size_t> labeled;
  for (std::size_t i = 0; i < view.truth.size(); ++i)
    if (view.truth[i]) labeled.push_back(i);
  if (labeled.empty()) throw Error(ErrorCode::NoLabeledData, "no labeled training samples");

  const ModelDims dims{data.dim, cfg.hidden, cfg.feature, layout.k_total(), cfg.head_layers};
  ModelParams params = init_params(dims, mix_seed(cfg.seed, detail::kInitStream));
  AdamState adam;
  adam.init_like(params);
  const std::uint64_t stage_seed = mix_seed(cfg.seed, detail::kPretrainStream);

  for (std::size_t epoch = 0; epoch < cfg.epochs_pretrain; ++epoch) {
    const std::uint64_t epoch_seed = mix_seed(stage_seed, epoch);
    std::vector<std::size_t> order = labeled;
    Rng rng(epoch_seed);
    shuffle(order.begin(), order.end(), rng);
    std::vector<detail::StepResult> steps;
    const auto batches = detail::make_batches(std::move(order), cfg.batch_size);
    for (std::size_t b = 0; b < batches.size(); ++b) {
      const auto& batch = batches[b];
      SupervisionMask mask;
      for (std::size_t i : batch) mask.push_back(Supervision::labeled(*view.truth[i]));
      steps.push_back(detail::train_step(params, adam, select_rows(view.z, batch), mask, {}, {}, cfg, cfg.pretrain_lr,
                                         mix_seed(epoch_seed, b + 1), false));
    }
    if (on_epoch) on_epoch(detail::summarize(epoch, steps, 0));
  }
  params.lineage.push_back({"pretrain", cfg.seed});
  return params;
}

/// Everything needed to continue stage 2 exactly where it stopped.
struct TrainState {
  ModelParams params;
  AdamState adam;
  std::size_t epoch = 0;                      ///< next epoch to run
  std::vector<std::size_t> reliable_history;  ///< reliable pseudo-labels per finished epoch
};

inline TrainState start_training(ModelParams params) {
  TrainState s;
  s.adam.init_like(params);
  s.params = std::move(params);
  return s;
}

/// Pseudo-labels for every unlabeled training row from the dropout-free model.
inline PseudoLabelSet refresh_pseudo_labels(const ModelParams& params, const TrainingView& view,
                                            const std::vector<std::size_t>& columns, double sigma) {
  std::vector<std::size_t> unlabeled;
  for (std::size_t i = 0; i < view.truth.size(); ++i)
    if (!view.truth[i]) unlabeled.push_back(i);
  if (unlabeled.empty()) return PseudoLabelSet{sigma, {}};
  const Matrix g = forward(params, view.z, 0.0, 0).second;
  return select_pseudo_labels(g, unlabeled, sigma, columns);
}

/// Stage 2 from a saved state, up to cfg.epochs_train epochs in total.
inline void continue_training(TrainState& state, const EmbeddingDataset& data, const TrainConfig& cfg,
                              const EpochCallback& on_epoch = {}) {
  cfg.validate();
  const ClassLayout layout = class_layout(data, cfg);
  if (state.params.dims.input != data.dim || state.params.dims.clusters != layout.k_total()) {
    throw Error(ErrorCode::DimsMismatch, "model expects d=" + std::to_string(state.params.dims.input) + ", K=" +
                                             std::to_string(state.params.dims.clusters) + "; data has d=" +
                                             std::to_string(data.dim) + ", K=" + std::to_string(layout.k_total()));
  }
  const TrainingView view = training_view(data, layout);
  if (view.rows.empty()) throw Error(ErrorCode::EmptyBatch, "no training samples");
  const auto columns = setting_columns(cfg.setting, layout.k_ind(), layout.k_total());
  const std::uint64_t stage_seed = mix_seed(cfg.seed, detail::kTrainStream);

  for (; state.epoch < cfg.epochs_train; ++state.epoch) {
    const std::size_t epoch = state.epoch;
    const PseudoLabelSet pseudo = refresh_pseudo_labels(state.params, view, columns, cfg.sigma);
    const SupervisionMask full_mask = refresh_mask(view.truth, pseudo);

    const std::uint64_t epoch_seed = mix_seed(stage_seed, epoch);
    std::vector<std::size_t> order(view.rows.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng rng(epoch_seed);
    shuffle(order.begin(), order.end(), rng);

    std::vector<detail::StepResult> steps;
    const auto batches = detail::make_batches(std::move(order), cfg.batch_size);
    for (std::size_t b = 0; b < batches.size(); ++b) {
      const auto& batch = batches[b];
      SupervisionMask mask;
      std::vector<std::size_t> unlabeled_rows;
      for (std::size_t k = 0; k < batch.size(); ++k) {
        mask.push_back(full_mask[batch[k]]);
        if (!view.truth[batch[k]]) unlabeled_rows.push_back(k);
      }
      auto step = detail::train_step(state.params, state.adam, select_rows(view.z, batch), mask, columns,
                                     unlabeled_rows, cfg, cfg.train_lr, mix_seed(epoch_seed, b + 1), true);
      if (step.usable) steps.push_back(step);
    }
    if (steps.empty() && cfg.loss.weights != std::array<double, kNumLossTerms>{}) {
      throw Error(ErrorCode::EmptyBatch, "epoch " + std::to_string(epoch) + " had no usable batch");
    }
    state.reliable_history.push_back(pseudo.reliable_count());
    if (on_epoch) on_epoch(detail::summarize(epoch, steps, pseudo.reliable_count()));
  }
}

/// Stage 2: pseudo-label refresh plus semi-supervised and prototypical
/// contrastive learning, starting from pretrained parameters.
inline ModelParams train(const EmbeddingDataset& data, ModelParams params, const TrainConfig& cfg,
                         const EpochCallback& on_epoch = {}) {
  TrainState state = start_training(std::move(params));
  continue_training(state, data, cfg, on_epoch);
  if (cfg.epochs_train > 0) state.params.lineage.push_back({"train", cfg.seed});
  return std::move(state.params);
}

/// Cluster id per row: argmax of the dropout-free cluster head over `columns`.
inline std::vector<std::size_t> predict(const ModelParams& params, const Matrix& z, const std::vector<std::size_t>& columns) {
  if (z.cols() != params.dims.input) {
    throw Error(ErrorCode::DimsMismatch, "input has " + std::to_string(z.cols()) + " columns, model expects " +
                                             std::to_string(params.dims.input));
  }
  const Matrix g = forward(params, z, 0.0, 0).second;
  std::vector<std::size_t> out(z.rows());
  for (std::size_t i = 0; i < z.rows(); ++i) out[i] = argmax_in(g.row(i), columns);
  return out;
}

inline std::vector<std::size_t> predict(const ModelParams& params, const Matrix& z, Setting setting, std::size_t k_ind) {
  return predict(params, z, setting_columns(setting, k_ind, params.dims.clusters));
}

// ---- resumable state -----------------------------------------------------------

inline nlohmann::json train_state_to_json(const TrainState& s) {
  nlohmann::json j;
  j["format"] = "plpcl-train-state-v1";
  j["params"] = params_to_json(s.params);
  j["epoch"] = s.epoch;
  j["reliable_history"] = s.reliable_history;
  j["adam"] = {{"step", s.adam.step}, {"beta1", s.adam.beta1}, {"beta2", s.adam.beta2}, {"eps", s.adam.eps}};
  auto m = nlohmann::json::array(), v = nlohmann::json::array();
  for (const Matrix& x : s.adam.m) m.push_back(matrix_to_json(x));
  for (const Matrix& x : s.adam.v) v.push_back(matrix_to_json(x));
  j["adam"]["m"] = m;
  j["adam"]["v"] = v;
  return j;
}

inline TrainState train_state_from_json(const nlohmann::json& j) {
  try {
    TrainState s;
    s.params = params_from_json(j.at("params"));
    s.epoch = j.at("epoch").get<std::size_t>();
    s.reliable_history = j.at("reliable_history").get<std::vector<std::size_t>>();
    const auto& a = j.at("adam");
    s.adam.step = a.at("step").get<std::uint64_t>();
    s.adam.beta1 = a.at("beta1").get<double>();
    s.adam.beta2 = a.at("beta2").get<double>();
    s.adam.eps = a.at("eps").get<double>();
    const auto tensors = s.params.tensors();
    if (a.at("m").size() != tensors.size() || a.at("v").size() != tensors.size()) {
      throw Error(ErrorCode::ParseError, "train state: moment count");
    }
    for (std::size_t t = 0; t < tensors.size(); ++t) {
      s.adam.m.push_back(matrix_from_json(a.at("m")[t], tensors[t]->rows(), tensors[t]->cols()));
      s.adam.v.push_back(matrix_from_json(a.at("v")[t], tensors[t]->rows(), tensors[t]->cols()));
    }
    return s;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::ParseError, std::string("train state: ") + e.what());
  }
}

}  // namespace plpcl
