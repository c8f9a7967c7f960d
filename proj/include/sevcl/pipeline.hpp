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

// End-to-end orchestration shared by the command-line tool and the acceptance
// suite: data preparation, base-model pretraining, and one training regime
// per call, all driven by a single RunConfig and its seed.

#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "sevcl/dataset.hpp"
#include "sevcl/eval.hpp"
#include "sevcl/lora.hpp"
#include "sevcl/rng.hpp"
#include "sevcl/run_config.hpp"
#include "sevcl/severity.hpp"
#include "sevcl/tiny_lm.hpp"
#include "sevcl/trainer.hpp"

namespace sevcl {

// Seeds for each component derive from the run seed and these names.
//   "train_eval_split"  stratified train/eval split
//   "model"             base-model initialization (ModelConfig::seed)
//   "pretrain_shuffle"  pretraining batch order (from TrainConfig::seed)
//   "lora"              adapter initialization
//   "finetune_shuffle"  fine-tuning batch order

struct PreparedData {
  std::vector<QaRecord> train;
  std::vector<QaRecord> eval;
  Vocab vocab;
  SeverityStats annotation;  // labels added to previously unlabeled records
};

/// Labels records that lack one, splits off the evaluation set (unless one is
/// supplied) and builds the vocabulary from the training split.
inline PreparedData prepare_data(std::vector<QaRecord> records, const RunConfig& cfg, const Lexicon& lexicon,
                                 std::optional<std::vector<QaRecord>> eval_records = std::nullopt) {
  if (records.empty()) fail(ErrorKind::kEmptyCorpus, "training data is empty");
  PreparedData out;
  for (auto& r : records) {
    if (!r.severity) {
      r.severity = classify(r.question, lexicon);
      ++out.annotation.unlabeled;
    }
  }
  if (eval_records) {
    out.train = std::move(records);
    out.eval = std::move(*eval_records);
  } else {
    Split split = train_eval_split(records, cfg.train_fraction, derive_seed(cfg.seed, "train_eval_split"));
    out.train = std::move(split.train);
    out.eval = std::move(split.eval);
  }
  out.vocab = build_vocab(out.train);
  return out;
}

inline std::vector<std::string> pretrain_lines(const std::vector<QaRecord>& train, const std::string& corpus) {
  std::vector<std::string> lines;
  for (const auto& r : train) {
    lines.push_back(r.question);
    if (corpus == "questions_answers") lines.push_back(r.answer);
  }
  return lines;
}

inline ModelConfig model_config_for(const RunConfig& cfg, const Vocab& vocab) {
  ModelConfig mc = cfg.model;
  mc.vocab_size = vocab.size();
  mc.seed = derive_seed(cfg.seed, "model");
  return mc;
}

inline TrainConfig train_config_for(const RunConfig& cfg, TrainMode mode) {
  TrainConfig tc = cfg.train;
  tc.seed = cfg.seed;
  tc.mode = mode;
  return tc;
}

inline PretrainResult pretrain_base(const RunConfig& cfg, const PreparedData& data) {
  return pretrain(model_config_for(cfg, data.vocab), train_config_for(cfg, TrainMode::kBaseline), data.vocab,
                  pretrain_lines(data.train, cfg.pretrain_corpus));
}

/// Builds the fine-tuning run for `mode` (standard or curriculum).
inline FinetuneRun make_run(TrainMode mode, const Model& base, const PreparedData& data, const RunConfig& cfg) {
  const TrainConfig tc = train_config_for(cfg, mode);
  if (mode == TrainMode::kCurriculum) {
    return make_curriculum_run(base, data.vocab, stage_split(data.train), data.train, tc);
  }
  if (mode == TrainMode::kStandard) return make_standard_run(base, data.vocab, data.train, tc);
  fail(ErrorKind::kInvalidArgument, "baseline mode has no fine-tuning run");
}

struct ModeResult {
  EvalReport report;
  std::vector<EpochLog> epochs;
  std::vector<std::pair<int, double>> stage_lrs;
  std::vector<Presentation> presentations;
};

/// Trains `mode` from `base` and evaluates it on the prepared eval split.
inline ModeResult run_mode(TrainMode mode, const Model& base, const PreparedData& data, const RunConfig& cfg,
                           const std::string& run_label) {
  ModeResult out;
  if (mode == TrainMode::kBaseline) {
    out.report = evaluate(base, data.vocab, data.eval, cfg.decode);
  } else {
    FinetuneRun run = make_run(mode, base, data, cfg);
    run.run();
    out.report = evaluate(run.model(), data.vocab, data.eval, cfg.decode);
    out.report.train_presentations = run.state().total_presentations;
    out.epochs = run.state().epochs;
    out.stage_lrs = run.state().stage_lrs;
    out.presentations = run.state().presentations;
  }
  out.report.mode = std::string(to_string(mode));
  out.report.run = run_label;
  return out;
}

}  // namespace sevcl
