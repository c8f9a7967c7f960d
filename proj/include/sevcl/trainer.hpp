/**
 * Copyright 2026 The Sevcl Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 * http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */
#pragma once

// Training regimes: unconditional pretraining of the base model, standard LoRA
// fine-tuning over the whole training split, and the three-stage severity
// curriculum (D1 = mild, D2 = mild + moderate, D3 = all) with the learning
// rate decayed by a constant factor at each stage.

#include <cmath>
#include <cstdint>
#include <functional>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "sevcl/autodiff.hpp"
#include "sevcl/checkpoint.hpp"
#include "sevcl/dataset.hpp"
#include "sevcl/errors.hpp"
#include "sevcl/lora.hpp"
#include "sevcl/rng.hpp"
#include "sevcl/tiny_lm.hpp"

namespace sevcl {

enum class TrainMode : std::uint8_t { kBaseline, kStandard, kCurriculum };

inline constexpr std::string_view to_string(TrainMode m) {
  switch (m) {
    case TrainMode::kBaseline: return "baseline";
    case TrainMode::kStandard: return "standard";
    case TrainMode::kCurriculum: return "curriculum";
  }
  return "baseline";
}

inline std::optional<TrainMode> parse_train_mode(std::string_view s) {
  if (s == "baseline") return TrainMode::kBaseline;
  if (s == "standard") return TrainMode::kStandard;
  if (s == "curriculum") return TrainMode::kCurriculum;
  return std::nullopt;
}

struct TrainConfig {
  double base_lr = 3e-4;
  double stage_decay = 0.5;  // gamma
  std::size_t epochs_per_stage = 3;
  std::size_t batch_size = 16;
  std::uint64_t seed = 0;
  TrainMode mode = TrainMode::kCurriculum;
  std::size_t pretrain_epochs = 3;
  double pretrain_lr = 1e-3;
  bool skip_empty_stages = false;
  LoraConfig lora;
  ad::AdamConfig adam;

  void validate() const {
    if (!(base_lr > 0.0)) fail(ErrorKind::kInvalidArgument, "base_lr must be positive");
    if (!(stage_decay > 0.0 && stage_decay <= 1.0)) {
      fail(ErrorKind::kInvalidArgument, "stage_decay must lie in (0, 1]");
    }
    if (epochs_per_stage < 1) fail(ErrorKind::kInvalidArgument, "epochs_per_stage must be >= 1");
    if (batch_size < 1) fail(ErrorKind::kInvalidArgument, "batch_size must be >= 1");
    if (!(pretrain_lr > 0.0)) fail(ErrorKind::kInvalidArgument, "pretrain_lr must be positive");
    lora.validate();
  }
};

/// base_lr * gamma^(k - 1) for stage k in {1, 2, 3}.
inline double stage_lr(double base_lr, double gamma, int k) {
  if (k < 1 || k > 3) fail(ErrorKind::kInvalidArgument, "stage must be 1, 2 or 3");
  return base_lr * std::pow(gamma, k - 1);
}

struct Presentation {
  int stage = 0;
  std::size_t epoch = 0;
  RecordId id = 0;
  std::optional<Severity> severity;
};

struct EpochLog {
  int stage = 0;
  std::size_t epoch = 0;  // within the stage, from 0
  double lr = 0.0;
  double mean_loss = 0.0;
  std::size_t presentations = 0;
};

struct StagePlan {
  int stage = 1;
  std::vector<RecordId> ids;
  double lr = 0.0;
  std::size_t epochs = 0;
};

struct TrainRunState {
  TrainMode mode = TrainMode::kStandard;
  std::size_t stage_index = 0;     // position in the plan
  std::size_t epoch_in_stage = 0;  // completed epochs of the current stage
  std::vector<EpochLog> epochs;
  std::vector<std::pair<int, double>> stage_lrs;
  std::vector<Presentation> presentations;
  std::vector<std::string> stage_checkpoints;
  std::size_t total_presentations = 0;
  Rng rng;
  ad::AdamState adam;
};

namespace train_detail {

/// Encodes each record once; records whose answer cannot fit are skipped.
inline std::map<RecordId, EncodedPair> encode_records(const std::vector<QaRecord>& records, const Vocab& vocab,
                                                      std::size_t context_len) {
  std::map<RecordId, EncodedPair> out;
  for (const auto& r : records) {
    auto e = encode_pair(vocab, r, context_len);
    if (!e) {
      std::cerr << "warning: record " << r.id << " does not fit the context; skipped\n";
      continue;
    }
    out.emplace(r.id, std::move(*e));
  }
  return out;
}

inline std::vector<StagePlan> curriculum_plan(const StagePartition& p, const TrainConfig& cfg) {
  std::vector<StagePlan> plan;
  for (int k = 1; k <= 3; ++k) {
    const auto& ids = p.stage(k);
    if (ids.empty()) {
      if (!cfg.skip_empty_stages) fail(ErrorKind::kEmptyStage, "stage " + std::to_string(k) + " is empty");
      std::cerr << "warning: stage " << k << " is empty; skipped\n";
      continue;
    }
    plan.push_back({k, ids, stage_lr(cfg.base_lr, cfg.stage_decay, k), cfg.epochs_per_stage});
  }
  return plan;
}

inline std::vector<StagePlan> standard_plan(const std::vector<QaRecord>& records, const TrainConfig& cfg) {
  StagePlan s;
  s.stage = 1;
  for (const auto& r : records) s.ids.push_back(r.id);
  std::sort(s.ids.begin(), s.ids.end());
  s.lr = cfg.base_lr;
  s.epochs = 3 * cfg.epochs_per_stage;
  return {s};
}

}  // namespace train_detail

// ---------------------------------------------------------------------------
// Pretraining

struct PretrainResult {
  Model model;
  std::vector<double> epoch_losses;  // mean batch loss per epoch
  double initial_loss = 0.0;         // full-corpus loss before the first update
  double final_loss = 0.0;           // full-corpus loss after the last update
};

/// Trains every parameter of a freshly initialized model as an unconditional
/// language model over `lines`. Zero epochs returns the initialization.
inline PretrainResult pretrain(const ModelConfig& model_cfg, const TrainConfig& cfg, const Vocab& vocab,
                               const std::vector<std::string>& lines) {
  cfg.validate();
  PretrainResult result;
  result.model = Model::init(model_cfg);
  std::vector<EncodedPair> seqs;
  for (const auto& line : lines) {
    if (auto e = encode_text(vocab, line, model_cfg.context_len)) seqs.push_back(std::move(*e));
  }
  if (seqs.empty()) {
    if (cfg.pretrain_epochs > 0) fail(ErrorKind::kEmptyCorpus, "pretraining corpus is empty");
    return result;
  }
  result.initial_loss = mean_masked_nll(result.model, seqs, cfg.batch_size);
  if (cfg.pretrain_epochs == 0) {
    result.final_loss = result.initial_loss;
    return result;
  }
  Model& model = result.model;
  std::vector<ad::Tensor> params = model.parameters();
  ad::AdamState adam;
  Rng rng(derive_seed(cfg.seed, "pretrain_shuffle"));
  std::vector<std::size_t> order(seqs.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  for (std::size_t epoch = 0; epoch < cfg.pretrain_epochs; ++epoch) {
    rng.shuffle(order);
    double sum = 0.0;
    std::size_t batches = 0;
    for (std::size_t i = 0; i < order.size(); i += cfg.batch_size) {
      std::vector<EncodedPair> chunk;
      for (std::size_t j = i; j < std::min(order.size(), i + cfg.batch_size); ++j) chunk.push_back(seqs[order[j]]);
      Batch b = make_batch(chunk);
      ad::Graph g;
      ad::Tensor l = loss(g, model, b);
      g.backward(l);
      ad::adam_step(params, adam, cfg.pretrain_lr, cfg.adam);
      model.zero_grad();
      sum += l.item();
      ++batches;
    }
    result.epoch_losses.push_back(sum / static_cast<double>(batches));
  }
  result.final_loss = mean_masked_nll(model, seqs, cfg.batch_size);
  return result;
}

// ---------------------------------------------------------------------------
// Fine-tuning

/// One fine-tuning run over a stage plan. Stages run in order; each stage
/// continues from the parameters the previous stage left behind and starts a
/// fresh Adam state at its own learning rate. The run can be stopped at any
/// epoch boundary, saved, and resumed bit-exactly.
class FinetuneRun {
 public:
  using StageHook = std::function<void(const StagePlan&, const FinetuneRun&)>;

  FinetuneRun(AdaptedModel model, Vocab vocab, std::vector<QaRecord> records, std::vector<StagePlan> plan,
              TrainConfig cfg)
      : model_(std::move(model)),
        vocab_(std::move(vocab)),
        records_(std::move(records)),
        plan_(std::move(plan)),
        cfg_(std::move(cfg)) {
    cfg_.validate();
    state_.mode = cfg_.mode;
    state_.rng = Rng(derive_seed(cfg_.seed, "finetune_shuffle"));
    encoded_ = train_detail::encode_records(records_, vocab_, model_.base.config.context_len);
    for (const auto& r : records_) severity_[r.id] = r.severity;
    params_ = trainable_parameters(model_);
  }

  StageHook on_stage_begin;
  StageHook on_stage_end;

  bool finished() const { return state_.stage_index >= plan_.size(); }
  const AdaptedModel& model() const { return model_; }
  const TrainRunState& state() const { return state_; }
  const std::vector<StagePlan>& plan() const { return plan_; }
  const TrainConfig& config() const { return cfg_; }
  const Vocab& vocab() const { return vocab_; }
  void add_stage_checkpoint(std::string path) { state_.stage_checkpoints.push_back(std::move(path)); }

  /// Runs one epoch of the current stage. Returns false once the plan is done.
  bool run_epoch() {
    if (finished()) return false;
    const StagePlan& stage = plan_[state_.stage_index];
    if (state_.epoch_in_stage == 0) {
      state_.adam = ad::AdamState{};
      state_.stage_lrs.emplace_back(stage.stage, stage.lr);
      if (on_stage_begin) on_stage_begin(stage, *this);
    }
    std::vector<RecordId> order;
    for (RecordId id : stage.ids) {
      if (encoded_.count(id)) order.push_back(id);
    }
    if (order.empty()) fail(ErrorKind::kEmptyStage, "stage " + std::to_string(stage.stage) + " has no usable records");
    state_.rng.shuffle(order);
    double sum = 0.0;
    std::size_t batches = 0;
    for (std::size_t i = 0; i < order.size(); i += cfg_.batch_size) {
      std::vector<EncodedPair> chunk;
      for (std::size_t j = i; j < std::min(order.size(), i + cfg_.batch_size); ++j) {
        chunk.push_back(encoded_.at(order[j]));
        state_.presentations.push_back({stage.stage, state_.epoch_in_stage, order[j], severity_[order[j]]});
      }
      Batch b = make_batch(chunk);
      ad::Graph g;
      ad::Tensor l = model_.loss(g, b);
      if (!std::isfinite(l.item())) fail(ErrorKind::kNonFiniteGradient, "non-finite training loss");
      g.backward(l);
      ad::adam_step(params_, state_.adam, stage.lr, cfg_.adam);
      for (auto& p : params_) p.zero_grad();
      sum += l.item();
      ++batches;
    }
    state_.total_presentations += order.size();
    state_.epochs.push_back({stage.stage, state_.epoch_in_stage, stage.lr, sum / static_cast<double>(batches),
                             order.size()});
    if (++state_.epoch_in_stage == stage.epochs) {
      if (on_stage_end) on_stage_end(stage, *this);
      state_.epoch_in_stage = 0;
      ++state_.stage_index;
    }
    return !finished();
  }

  /// Runs to completion, or for at most `max_epochs` epochs.
  void run(std::optional<std::size_t> max_epochs = std::nullopt) {
    std::size_t done = 0;
    while (!finished() && (!max_epochs || done < *max_epochs)) {
      run_epoch();
      ++done;
    }
  }

  // ---- resumable state ----

  void save_state(const std::string& path) const {
    nlohmann::json plan = nlohmann::json::array();
    for (const auto& s : plan_) plan.push_back({{"stage", s.stage}, {"ids", s.ids}, {"lr", s.lr}, {"epochs", s.epochs}});
    nlohmann::json epochs = nlohmann::json::array();
    for (const auto& e : state_.epochs) {
      epochs.push_back({{"stage", e.stage}, {"epoch", e.epoch}, {"lr", e.lr}, {"mean_loss", e.mean_loss},
                        {"presentations", e.presentations}});
    }
    nlohmann::json pres = nlohmann::json::array();
    for (const auto& p : state_.presentations) pres.push_back({p.stage, p.epoch, p.id});
    nlohmann::json header{
        {"kind", "train_state"},
        {"mode", std::string(to_string(state_.mode))},
        {"model_config", to_json(model_.base.config)},
        {"lora_config", to_json(model_.config)},
        {"vocab", to_json(vocab_)},
        {"plan", plan},
        {"stage_index", state_.stage_index},
        {"epoch_in_stage", state_.epoch_in_stage},
        {"epochs", epochs},
        {"stage_lrs", state_.stage_lrs},
        {"presentations", pres},
        {"stage_checkpoints", state_.stage_checkpoints},
        {"total_presentations", state_.total_presentations},
        {"rng", state_.rng.state()},
        {"adam_step", state_.adam.step},
        {"base_params_fnv1a64", parameter_hash(model_.base)},
    };
    std::vector<NamedTensor> tensors;
    for (const auto& t : model_.base.parameters()) tensors.push_back({"base." + t.name(), t});
    for (const auto& t : params_) tensors.push_back({t.name(), t});
    if (!state_.adam.m.empty()) {
      for (std::size_t i = 0; i < params_.size(); ++i) {
        const auto& shape = params_[i].shape();
        tensors.push_back({"adam.m." + params_[i].name(), ad::Tensor::from(shape, state_.adam.m[i])});
        tensors.push_back({"adam.v." + params_[i].name(), ad::Tensor::from(shape, state_.adam.v[i])});
      }
    }
    write_file(path, serialize_container(std::move(header), tensors));
  }

  /// Restores a run saved by save_state(). `records` must be the same
  /// training records the run was created with.
  static FinetuneRun resume(const std::string& path, std::vector<QaRecord> records, TrainConfig cfg) {
    const Container c = read_container(path);
    const auto& h = c.header;
    if (h.value("kind", std::string()) != "train_state") {
      fail(ErrorKind::kCorruptFile, path + ": not a training state");
    }
    Model base = Model::init(model_config_from_json(h.at("model_config")));
    assign_parameters(base, c, "base.");
    AdaptedModel adapted = attach(base, lora_config_from_json(h.at("lora_config")));
    for (auto& t : trainable_parameters(adapted)) {
      ad::Tensor handle = t;
      const ad::Tensor& src = c.at(t.name());
      std::copy(src.data().begin(), src.data().end(), handle.mutable_data().begin());
    }
    std::vector<StagePlan> plan;
    for (const auto& s : h.at("plan")) {
      plan.push_back({s.at("stage").get<int>(), s.at("ids").get<std::vector<RecordId>>(), s.at("lr").get<double>(),
                      s.at("epochs").get<std::size_t>()});
    }
    cfg.mode = parse_train_mode(h.at("mode").get<std::string>()).value_or(cfg.mode);
    FinetuneRun run(std::move(adapted), vocab_from_json(h.at("vocab")), std::move(records), std::move(plan), cfg);
    auto& st = run.state_;
    st.stage_index = h.at("stage_index").get<std::size_t>();
    st.epoch_in_stage = h.at("epoch_in_stage").get<std::size_t>();
    for (const auto& e : h.at("epochs")) {
      st.epochs.push_back({e.at("stage").get<int>(), e.at("epoch").get<std::size_t>(), e.at("lr").get<double>(),
                           e.at("mean_loss").get<double>(), e.at("presentations").get<std::size_t>()});
    }
    st.stage_lrs = h.at("stage_lrs").get<std::vector<std::pair<int, double>>>();
    for (const auto& p : h.at("presentations")) {
      const auto id = p.at(2).get<RecordId>();
      st.presentations.push_back({p.at(0).get<int>(), p.at(1).get<std::size_t>(), id, run.severity_[id]});
    }
    st.stage_checkpoints = h.at("stage_checkpoints").get<std::vector<std::string>>();
    st.total_presentations = h.at("total_presentations").get<std::size_t>();
    st.rng.set_state(h.at("rng").get<std::string>());
    st.adam.step = h.at("adam_step").get<std::uint64_t>();
    if (c.header.at("tensors").size() > run.params_.size() + run.model_.base.parameters().size()) {
      for (const auto& t : run.params_) {
        const ad::Tensor& m = c.at("adam.m." + t.name());
        const ad::Tensor& v = c.at("adam.v." + t.name());
        st.adam.m.emplace_back(m.data().begin(), m.data().end());
        st.adam.v.emplace_back(v.data().begin(), v.data().end());
      }
    }
    return run;
  }

 private:
  AdaptedModel model_;
  Vocab vocab_;
  std::vector<QaRecord> records_;
  std::vector<StagePlan> plan_;
  TrainConfig cfg_;
  TrainRunState state_;
  std::map<RecordId, EncodedPair> encoded_;
  std::map<RecordId, std::optional<Severity>> severity_;
  std::vector<ad::Tensor> params_;
};

/// All training records, uniformly shuffled, for 3 * epochs_per_stage epochs at
/// base_lr; the epoch budget matches the three curriculum stages combined.
/// Severity labels are ignored.
inline FinetuneRun make_standard_run(const Model& base, const Vocab& vocab, const std::vector<QaRecord>& records,
                                     TrainConfig cfg) {
  cfg.mode = TrainMode::kStandard;
  LoraConfig lora = cfg.lora;
  lora.seed = derive_seed(cfg.seed, "lora");
  return FinetuneRun(attach(base, lora), vocab, records, train_detail::standard_plan(records, cfg), cfg);
}

/// Stage k trains on D_k for epochs_per_stage epochs at stage_lr(base_lr,
/// gamma, k).
inline FinetuneRun make_curriculum_run(const Model& base, const Vocab& vocab, const StagePartition& partition,
                                       const std::vector<QaRecord>& records, TrainConfig cfg) {
  cfg.mode = TrainMode::kCurriculum;
  LoraConfig lora = cfg.lora;
  lora.seed = derive_seed(cfg.seed, "lora");
  return FinetuneRun(attach(base, lora), vocab, records, train_detail::curriculum_plan(partition, cfg), cfg);
}

inline AdaptedModel finetune_standard(const Model& base, const Vocab& vocab, const std::vector<QaRecord>& records,
                                      const TrainConfig& cfg) {
  FinetuneRun run = make_standard_run(base, vocab, records, cfg);
  run.run();
  return run.model();
}

inline AdaptedModel finetune_curriculum(const Model& base, const Vocab& vocab, const StagePartition& partition,
                                        const std::vector<QaRecord>& records, const TrainConfig& cfg) {
  FinetuneRun run = make_curriculum_run(base, vocab, partition, records, cfg);
  run.run();
  return run.model();
}

}  // namespace sevcl
