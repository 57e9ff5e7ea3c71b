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

#include "cli.hpp"

#include <openssl/evp.h>

#include <cstdint>
#include <fstream>
#include <functional>
#include <iomanip>
#include <limits>
#include <memory>
#include <ostream>
#include <sstream>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "plpcl/plpcl.hpp"

namespace plpcl::cli {

using ojson = nlohmann::ordered_json;

std::optional<std::array<double, kNumLossTerms>> parse_weights(const std::string& text) {
  std::array<double, kNumLossTerms> w;
  w.fill(1.0);
  std::array<bool, kNumLossTerms> seen{};
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    const auto eq = item.find('=');
    if (eq == std::string::npos) return std::nullopt;
    const auto term = parse_loss_term(item.substr(0, eq));
    if (!term) return std::nullopt;
    const auto idx = static_cast<std::size_t>(*term);
    if (seen[idx]) return std::nullopt;
    seen[idx] = true;
    const std::string num = item.substr(eq + 1);
    std::size_t used = 0;
    double v = 0.0;
    try {
      v = std::stod(num, &used);
    } catch (const std::exception&) {
      return std::nullopt;
    }
    if (used != num.size() || !(v >= 0.0) || !std::isfinite(v)) return std::nullopt;
    w[idx] = v;
  }
  return w;
}

std::string sha256_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::IoError, "cannot open " + path);
  std::unique_ptr<EVP_MD_CTX, decltype(&EVP_MD_CTX_free)> ctx(EVP_MD_CTX_new(), EVP_MD_CTX_free);
  if (!ctx || EVP_DigestInit_ex(ctx.get(), EVP_sha256(), nullptr) != 1) throw Error(ErrorCode::IoError, "sha256 init");
  std::vector<char> buf(1 << 16);
  while (in) {
    in.read(buf.data(), static_cast<std::streamsize>(buf.size()));
    if (in.gcount() > 0) EVP_DigestUpdate(ctx.get(), buf.data(), static_cast<std::size_t>(in.gcount()));
  }
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  EVP_DigestFinal_ex(ctx.get(), md, &len);
  std::ostringstream hex;
  for (unsigned int i = 0; i < len; ++i) hex << std::hex << std::setw(2) << std::setfill('0') << int(md[i]);
  return hex.str();
}

namespace {

constexpr std::size_t kMaxCount = std::numeric_limits<std::uint32_t>::max();

// ---- flag groups ------------------------------------------------------------

struct SplitFlags {
  std::string setting = "ood";
  double ood_ratio = 0.3;
  double labeled_ratio = 0.5;
  std::optional<std::uint64_t> split_seed;  // defaults to --seed
};

void add_split_flags(CLI::App& app, SplitFlags& f) {
  app.add_option("--setting", f.setting, "ood | open")->check(CLI::IsMember({"ood", "open"}))->capture_default_str();
  app.add_option("--ood-ratio", f.ood_ratio, "fraction of classes held out as novel")
      ->check(CLI::Range(0.0, 1.0))
      ->capture_default_str();
  app.add_option("--labeled-ratio", f.labeled_ratio, "open setting: labeled fraction per known class")
      ->check(CLI::Range(0.0, 1.0))
      ->capture_default_str();
  app.add_option("--split-seed", f.split_seed, "class/label split seed (default: --seed)");
}

SplitSpec split_spec(const SplitFlags& f, std::uint64_t seed) {
  return {f.ood_ratio, f.labeled_ratio, *parse_setting(f.setting), f.split_seed.value_or(seed)};
}

ojson split_json(const SplitSpec& s) {
  return {{"setting", setting_name(s.setting)},
          {"ood_class_ratio", s.ood_class_ratio},
          {"labeled_ratio", s.labeled_ratio},
          {"seed", s.seed}};
}

struct TrainFlags {
  SplitFlags split;
  std::string data, out, log;
  double sigma = 0.99;
  double tau = 0.5;
  std::optional<std::size_t> epochs;
  std::size_t batch = 128;
  std::optional<double> lr;
  std::uint64_t seed = 0;
  std::string weights;
  double dropout = 0.1;
  std::size_t hidden = 128;
  std::size_t feature = 128;
  std::size_t head_layers = 0;
  double clip = 5.0;
};

const CLI::Validator kWeightsValidator(
    [](std::string& s) { return parse_weights(s) ? std::string() : "expected name=value,... over scl,ce,ilcl,clcl,pcl"; },
    "WEIGHTS");

const CLI::Validator kDropoutValidator(
    [](std::string& s) {
      try {
        const double v = std::stod(s);
        return v >= 0.0 && v < 1.0 ? std::string() : std::string("dropout must lie in [0, 1)");
      } catch (const std::exception&) {
        return std::string("not a number");
      }
    },
    "[0,1)");

void add_train_flags(CLI::App& app, TrainFlags& f) {
  app.add_option("--data", f.data, "JSONL dataset")->required();
  app.add_option("--out", f.out, "checkpoint to write")->required();
  app.add_option("--log", f.log, "per-epoch JSON lines (default: <out>.log.jsonl)");
  add_split_flags(app, f.split);
  app.add_option("--sigma", f.sigma, "pseudo-label confidence threshold")->check(CLI::Range(0.0, 1.0))->capture_default_str();
  app.add_option("--tau", f.tau, "contrastive temperature")->check(CLI::PositiveNumber)->capture_default_str();
  app.add_option("--epochs", f.epochs, "epochs for this stage (default 100)")->check(CLI::Range(std::size_t{0}, kMaxCount));
  app.add_option("--batch", f.batch, "batch size")->check(CLI::Range(std::size_t{2}, kMaxCount))->capture_default_str();
  app.add_option("--lr", f.lr, "learning rate for this stage")->check(CLI::PositiveNumber);
  app.add_option("--seed", f.seed, "run seed")->capture_default_str();
  app.add_option("--weights", f.weights, "loss weights, e.g. scl=1,ce=1,ilcl=1,clcl=1,pcl=0")->check(kWeightsValidator);
  app.add_option("--dropout", f.dropout, "dropout on the backbone output")->check(kDropoutValidator)->capture_default_str();
  app.add_option("--hidden", f.hidden, "backbone width")->check(CLI::Range(std::size_t{1}, kMaxCount))->capture_default_str();
  app.add_option("--feature", f.feature, "instance feature width")->check(CLI::Range(std::size_t{1}, kMaxCount))->capture_default_str();
  app.add_option("--head-layers", f.head_layers, "hidden layers per head")->capture_default_str();
  app.add_option("--clip", f.clip, "global grad-norm clip, 0 disables")->check(CLI::NonNegativeNumber)->capture_default_str();
}

TrainConfig train_config(const TrainFlags& f, bool pretrain_stage) {
  TrainConfig cfg;
  cfg.setting = *parse_setting(f.split.setting);
  cfg.sigma = f.sigma;
  cfg.loss.tau = f.tau;
  if (!f.weights.empty()) cfg.loss.weights = *parse_weights(f.weights);
  cfg.batch_size = f.batch;
  cfg.dropout_p = f.dropout;
  cfg.seed = f.seed;
  cfg.hidden = f.hidden;
  cfg.feature = f.feature;
  cfg.head_layers = f.head_layers;
  cfg.clip_norm = f.clip;
  if (pretrain_stage) {
    if (f.epochs) cfg.epochs_pretrain = *f.epochs;
    if (f.lr) cfg.pretrain_lr = *f.lr;
  } else {
    if (f.epochs) cfg.epochs_train = *f.epochs;
    if (f.lr) cfg.train_lr = *f.lr;
  }
  return cfg;
}

ojson config_json(const TrainConfig& c) {
  ojson w;
  for (LossTerm t : kLossTermOrder) w[std::string(loss_term_name(t))] = c.loss.weight(t);
  return {{"setting", setting_name(c.setting)},
          {"sigma", c.sigma},
          {"tau", c.loss.tau},
          {"weights", w},
          {"scl_pool", c.loss.scl_pool == SclPool::Paired ? "paired" : "single"},
          {"pretrain_lr", c.pretrain_lr},
          {"train_lr", c.train_lr},
          {"epochs_pretrain", c.epochs_pretrain},
          {"epochs_train", c.epochs_train},
          {"batch_size", c.batch_size},
          {"dropout", c.dropout_p},
          {"seed", c.seed},
          {"hidden", c.hidden},
          {"feature", c.feature},
          {"head_layers", c.head_layers},
          {"clip_norm", c.clip_norm}};
}

// Keys whose value differs from the built-in defaults.
std::vector<std::string> deviations(const ojson& resolved, const ojson& defaults) {
  std::vector<std::string> out;
  for (const auto& [k, v] : resolved.items())
    if (k != "seed" && defaults.contains(k) && defaults[k] != v) out.push_back(k);
  return out;
}

// ---- file helpers -----------------------------------------------------------

std::ofstream open_out(const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::IoError, "cannot write " + path);
  return out;
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out = open_out(path);
  out << text;
  if (!out) throw Error(ErrorCode::IoError, "write failed for " + path);
}

nlohmann::json read_json(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::IoError, "cannot open " + path);
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw Error(ErrorCode::ParseError, path + ": " + e.what());
  }
}

struct Input {
  std::string role, path;
};

void write_manifest(const std::string& path, const std::string& command, const ojson& config, std::uint64_t seed,
                    const std::vector<Input>& inputs, const std::vector<std::string>& devs = {}) {
  ojson in = ojson::object();
  for (const Input& i : inputs) in[i.role] = {{"path", i.path}, {"sha256", sha256_file(i.path)}};
  ojson m;
  m["tool"] = "plpcl";
  m["version"] = kVersion;
  m["command"] = command;
  m["seed"] = seed;
  m["config"] = config;
  m["inputs"] = in;
  m["deviations_from_defaults"] = devs;
  write_text(path, m.dump(2) + "\n");
}

EmbeddingDataset load_split(const std::string& path, const SplitSpec& spec) { return apply_split(load_dataset(path), spec); }

ModelParams load_checkpoint(const std::string& path) { return params_from_json(read_json(path)); }

// ---- commands ---------------------------------------------------------------

struct SynthFlags {
  std::size_t classes = 0, dim = 64, per_class = 200;
  double separation = 6.0, noise = 1.0;
  std::uint64_t seed = 0;
  std::string out;
};

int cmd_synth(const SynthFlags& f, std::ostream& out) {
  const EmbeddingDataset ds = synth_mixture(f.classes, f.dim, f.per_class, f.separation, f.noise, f.seed);
  save_dataset(f.out, ds);
  const ojson cfg = {{"classes", f.classes}, {"dim", f.dim},     {"per_class", f.per_class},
                     {"separation", f.separation}, {"noise", f.noise}, {"seed", f.seed}};
  write_manifest(f.out + ".manifest.json", "synth", cfg, f.seed, {});
  out << "wrote " << ds.size() << " records (" << f.classes << " classes, d=" << f.dim << ") to " << f.out << '\n';
  return kOk;
}

EpochCallback log_writer(std::ofstream& log) {
  return [&log](const EpochLog& l) { log << l.to_json().dump() << '\n'; };
}

std::string log_path(const TrainFlags& f) { return f.log.empty() ? f.out + ".log.jsonl" : f.log; }

int cmd_pretrain(const TrainFlags& f, std::ostream& out) {
  const TrainConfig cfg = train_config(f, true);
  const SplitSpec spec = split_spec(f.split, f.seed);
  const EmbeddingDataset data = load_split(f.data, spec);
  std::ofstream log = open_out(log_path(f));
  const ModelParams params = pretrain(data, cfg, log_writer(log));
  write_text(f.out, params_to_json(params).dump() + "\n");

  ojson c = config_json(cfg);
  const auto devs = deviations(c, config_json(TrainConfig{}));
  c["split"] = split_json(spec);
  write_manifest(f.out + ".manifest.json", "pretrain", c, f.seed, {{"data", f.data}}, devs);
  out << "pretrained " << cfg.epochs_pretrain << " epochs -> " << f.out << '\n';
  return kOk;
}

int cmd_train(const TrainFlags& f, const std::string& init, const std::string& resume, const std::string& state_out,
              std::ostream& out) {
  const TrainConfig cfg = train_config(f, false);
  const SplitSpec spec = split_spec(f.split, f.seed);
  const EmbeddingDataset data = load_split(f.data, spec);
  TrainState state =
      resume.empty() ? start_training(load_checkpoint(init)) : train_state_from_json(read_json(resume));
  std::ofstream log = open_out(log_path(f));
  continue_training(state, data, cfg, log_writer(log));
  ModelParams params = state.params;
  if (cfg.epochs_train > 0) params.lineage.push_back({"train", cfg.seed});
  write_text(f.out, params_to_json(params).dump() + "\n");
  if (!state_out.empty()) write_text(state_out, train_state_to_json(state).dump() + "\n");

  ojson c = config_json(cfg);
  const auto devs = deviations(c, config_json(TrainConfig{}));
  c["split"] = split_json(spec);
  std::vector<Input> inputs{{"data", f.data}};
  inputs.push_back(resume.empty() ? Input{"init", init} : Input{"resume", resume});
  write_manifest(f.out + ".manifest.json", "train", c, f.seed, inputs, devs);
  out << "trained to epoch " << state.epoch << " -> " << f.out << '\n';
  return kOk;
}

struct EvalFlags {
  SplitFlags split;
  std::string data, checkpoint, metrics, confusion;
  std::uint64_t seed = 0;
};

void add_eval_flags(CLI::App& app, EvalFlags& f) {
  app.add_option("--data", f.data, "JSONL dataset")->required();
  app.add_option("--checkpoint", f.checkpoint, "trained checkpoint")->required();
  app.add_option("--seed", f.seed, "seed the split was made with")->capture_default_str();
  add_split_flags(app, f.split);
}

// Test rows under evaluation: novel-class rows (ood) or every row (open).
struct EvalRows {
  std::vector<std::size_t> index;
  std::vector<std::size_t> truth;
};

EvalRows evaluation_rows(const EmbeddingDataset& data, Setting setting) {
  EvalRows r;
  for (std::size_t i : data.indices(Split::Test)) {
    const Record& rec = data.records[i];
    if (!rec.label) continue;
    const std::size_t c = *data.class_index(*rec.label);
    if (setting == Setting::Ood && !data.unknown[c]) continue;
    r.index.push_back(i);
    r.truth.push_back(c);
  }
  return r;
}

// Checkpoint must match the data's width and the split's column count.
ClassLayout check_compatible(const ModelParams& params, const EmbeddingDataset& data, Setting setting) {
  TrainConfig cfg;
  cfg.setting = setting;
  const ClassLayout layout = class_layout(data, cfg);
  if (params.dims.input != data.dim || params.dims.clusters != layout.k_total()) {
    throw Error(ErrorCode::DimsMismatch, "checkpoint expects d=" + std::to_string(params.dims.input) + ", K=" +
                                             std::to_string(params.dims.clusters) + "; data has d=" +
                                             std::to_string(data.dim) + ", K=" + std::to_string(layout.k_total()));
  }
  return layout;
}

int cmd_eval(const EvalFlags& f, std::ostream& out) {
  const SplitSpec spec = split_spec(f.split, f.seed);
  const EmbeddingDataset data = load_split(f.data, spec);
  const ModelParams params = load_checkpoint(f.checkpoint);
  const ClassLayout layout = check_compatible(params, data, spec.setting);
  const EvalRows rows = evaluation_rows(data, spec.setting);
  const auto pred = predict(params, data.embeddings(rows.index), spec.setting, layout.k_ind());
  const MetricsReport report = evaluate({pred, rows.truth});
  const std::string text = report.to_json().dump();
  out << text << '\n';
  if (!f.metrics.empty()) {
    write_text(f.metrics, text + "\n");
    ojson c = {{"split", split_json(spec)}, {"rows", rows.index.size()}};
    write_manifest(f.metrics + ".manifest.json", "eval", c, f.seed, {{"data", f.data}, {"checkpoint", f.checkpoint}});
  }
  if (!f.confusion.empty()) {
    std::ostringstream csv;
    const ConfusionTable& ct = report.confusion;
    csv << "truth";
    for (std::size_t c : ct.cluster_ids) csv << ",cluster_" << c;
    csv << '\n';
    for (std::size_t i = 0; i < ct.truth_ids.size(); ++i) {
      csv << data.classes[ct.truth_ids[i]];
      for (std::size_t v : ct.counts[i]) csv << ',' << v;
      csv << '\n';
    }
    write_text(f.confusion, csv.str());
  }
  return kOk;
}

int cmd_estimate_k(const EvalFlags& f, std::size_t k_cap, double rho, const std::string& out_path, std::ostream& out) {
  const SplitSpec spec = split_spec(f.split, f.seed);
  const EmbeddingDataset data = load_split(f.data, spec);
  const ModelParams params = load_checkpoint(f.checkpoint);
  check_compatible(params, data, spec.setting);
  const EvalRows rows = evaluation_rows(data, spec.setting);
  const Matrix features = forward(params, data.embeddings(rows.index), 0.0, 0).first;
  if (k_cap == 0) k_cap = 2 * params.dims.clusters;
  const std::size_t k = estimate_k(features, k_cap, rho);  // fixed k-means seed; --seed only picks the split
  ojson j;
  j["k_pred"] = k;
  out << j.dump() << '\n';
  if (!out_path.empty()) {
    write_text(out_path, j.dump() + "\n");
    ojson c = {{"split", split_json(spec)}, {"k_cap", k_cap}, {"rho", rho}, {"rows", rows.index.size()}};
    write_manifest(out_path + ".manifest.json", "estimate-k", c, f.seed, {{"data", f.data}, {"checkpoint", f.checkpoint}});
  }
  return kOk;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Pseudo-label enhanced prototypical contrastive clustering over precomputed embeddings", "plpcl"};
  app.set_version_flag("--version", kVersion);
  app.require_subcommand(1);

  SynthFlags synth;
  CLI::App* c_synth = app.add_subcommand("synth", "generate a Gaussian-mixture embedding dataset");
  c_synth->add_option("--classes", synth.classes, "number of classes")->required()->check(CLI::Range(std::size_t{2}, kMaxCount));
  c_synth->add_option("--dim", synth.dim, "embedding width")->check(CLI::Range(std::size_t{2}, kMaxCount))->capture_default_str();
  c_synth->add_option("--per-class", synth.per_class, "samples per class")->check(CLI::Range(std::size_t{1}, kMaxCount))->capture_default_str();
  c_synth->add_option("--separation", synth.separation, "mean gap in noise units")->check(CLI::PositiveNumber)->capture_default_str();
  c_synth->add_option("--noise", synth.noise, "isotropic noise sigma")->check(CLI::PositiveNumber)->capture_default_str();
  c_synth->add_option("--seed", synth.seed, "generator seed")->capture_default_str();
  c_synth->add_option("--out", synth.out, "output JSONL")->required();

  TrainFlags pre;
  CLI::App* c_pre = app.add_subcommand("pretrain", "stage 1: supervised pretraining on labeled known classes");
  add_train_flags(*c_pre, pre);

  TrainFlags tr;
  std::string init, resume, state_out;
  CLI::App* c_train = app.add_subcommand("train", "stage 2: pseudo-labels + contrastive + prototypical training");
  add_train_flags(*c_train, tr);
  auto* o_init = c_train->add_option("--init", init, "pretrained checkpoint");
  auto* o_resume = c_train->add_option("--resume", resume, "saved training state to continue from");
  o_init->excludes(o_resume);
  c_train->add_option("--state-out", state_out, "also write the resumable training state here");

  EvalFlags ev;
  CLI::App* c_eval = app.add_subcommand("eval", "cluster the test split and score it");
  add_eval_flags(*c_eval, ev);
  c_eval->add_option("--metrics", ev.metrics, "metrics JSON to write");
  c_eval->add_option("--confusion", ev.confusion, "confusion CSV to write");

  EvalFlags ek;
  std::size_t k_cap = 0;
  double rho = 0.9;
  std::string k_out;
  CLI::App* c_k = app.add_subcommand("estimate-k", "estimate the number of clusters from instance features");
  add_eval_flags(*c_k, ek);
  c_k->add_option("--k-cap", k_cap, "over-clustering size (default: 2 x head width)")->check(CLI::Range(std::size_t{2}, kMaxCount));
  c_k->add_option("--rho", rho, "kept-cluster size fraction")
      ->check(CLI::Validator(
          [](std::string& s) {
            try {
              const double v = std::stod(s);
              return v > 0.0 && v < 1.0 ? std::string() : std::string("rho must lie in (0, 1)");
            } catch (const std::exception&) {
              return std::string("not a number");
            }
          },
          "(0,1)"))
      ->capture_default_str();
  c_k->add_option("--out", k_out, "k_pred JSON to write");

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
    if (c_train->parsed() && init.empty() && resume.empty()) {
      throw CLI::RequiredError("train needs --init or --resume");
    }
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kOk : kUsageError;
  }

  try {
    if (c_synth->parsed()) return cmd_synth(synth, out);
    if (c_pre->parsed()) return cmd_pretrain(pre, out);
    if (c_train->parsed()) return cmd_train(tr, init, resume, state_out, out);
    if (c_eval->parsed()) return cmd_eval(ev, out);
    if (c_k->parsed()) return cmd_estimate_k(ek, k_cap, rho, k_out, out);
  } catch (const Error& e) {
    err << "error: " << e.what() << '\n';  // what() leads with the error name
    return kRuntimeError;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kRuntimeError;
  }
  return kUsageError;
}

}  // namespace plpcl::cli
