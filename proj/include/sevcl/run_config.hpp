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

// Resolved settings for a pipeline run. Values are layered: built-in
// defaults, then a JSON config file, then SEVCL_* environment variables, then
// explicit `section.key=value` overrides from the command line.

#include <cctype>
#include <cstdint>
#include <cstdlib>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "sevcl/errors.hpp"
#include "sevcl/lora.hpp"
#include "sevcl/tiny_lm.hpp"
#include "sevcl/trainer.hpp"

namespace sevcl {

struct RunConfig {
  std::uint64_t seed = 0;
  ModelConfig model;  // vocab_size and seed are filled in from the data and `seed`
  TrainConfig train;
  double train_fraction = 0.9;
  // Lines the base model is pretrained on: "questions" or "questions_answers"
  // (each question and each answer as its own line).
  std::string pretrain_corpus = "questions";
  DecodeConfig decode;

  void validate() const {
    train.validate();
    if (!(train_fraction > 0.0 && train_fraction < 1.0)) {
      fail(ErrorKind::kInvalidArgument, "split.train_fraction must lie in (0, 1)");
    }
    if (pretrain_corpus != "questions" && pretrain_corpus != "questions_answers") {
      fail(ErrorKind::kInvalidArgument, "train.pretrain_corpus must be questions or questions_answers");
    }
    if (decode.max_new_tokens < 1) fail(ErrorKind::kInvalidArgument, "decode.max_new_tokens must be >= 1");
    ModelConfig probe = model;
    probe.vocab_size = Vocab::kReserved + 1;
    probe.validate();
  }
};

inline nlohmann::ordered_json to_json(const RunConfig& c) {
  nlohmann::ordered_json j;
  j["seed"] = c.seed;
  j["model"] = {{"embed_dim", c.model.embed_dim},
                {"n_layers", c.model.n_layers},
                {"n_heads", c.model.n_heads},
                {"context_len", c.model.context_len},
                {"mlp_ratio", c.model.mlp_ratio}};
  j["train"] = {{"base_lr", c.train.base_lr},
                {"stage_decay", c.train.stage_decay},
                {"epochs_per_stage", c.train.epochs_per_stage},
                {"batch_size", c.train.batch_size},
                {"pretrain_epochs", c.train.pretrain_epochs},
                {"pretrain_lr", c.train.pretrain_lr},
                {"pretrain_corpus", c.pretrain_corpus},
                {"skip_empty_stages", c.train.skip_empty_stages}};
  j["adam"] = {{"beta1", c.train.adam.beta1},
               {"beta2", c.train.adam.beta2},
               {"eps", c.train.adam.eps},
               {"clip_norm", c.train.adam.clip_norm}};
  j["lora"] = {{"rank", c.train.lora.rank}, {"alpha", c.train.lora.alpha}, {"targets", c.train.lora.targets}};
  j["split"] = {{"train_fraction", c.train_fraction}};
  j["decode"] = {{"max_new_tokens", c.decode.max_new_tokens}};
  return j;
}

inline RunConfig run_config_from_json(const nlohmann::json& j) {
  RunConfig c;
  auto get = [&](const char* section, const char* key, auto& field) {
    using T = std::remove_reference_t<decltype(field)>;
    try {
      field = j.at(section).at(key).get<T>();
    } catch (const nlohmann::json::exception&) {
      fail(ErrorKind::kInvalidArgument, std::string("config value ") + section + "." + key + " has the wrong type");
    }
  };
  try {
    c.seed = j.at("seed").get<std::uint64_t>();
  } catch (const nlohmann::json::exception&) {
    fail(ErrorKind::kInvalidArgument, "config value seed must be a non-negative integer");
  }
  get("model", "embed_dim", c.model.embed_dim);
  get("model", "n_layers", c.model.n_layers);
  get("model", "n_heads", c.model.n_heads);
  get("model", "context_len", c.model.context_len);
  get("model", "mlp_ratio", c.model.mlp_ratio);
  get("train", "base_lr", c.train.base_lr);
  get("train", "stage_decay", c.train.stage_decay);
  get("train", "epochs_per_stage", c.train.epochs_per_stage);
  get("train", "batch_size", c.train.batch_size);
  get("train", "pretrain_epochs", c.train.pretrain_epochs);
  get("train", "pretrain_lr", c.train.pretrain_lr);
  get("train", "pretrain_corpus", c.pretrain_corpus);
  get("train", "skip_empty_stages", c.train.skip_empty_stages);
  get("adam", "beta1", c.train.adam.beta1);
  get("adam", "beta2", c.train.adam.beta2);
  get("adam", "eps", c.train.adam.eps);
  get("adam", "clip_norm", c.train.adam.clip_norm);
  get("lora", "rank", c.train.lora.rank);
  get("lora", "alpha", c.train.lora.alpha);
  get("lora", "targets", c.train.lora.targets);
  get("split", "train_fraction", c.train_fraction);
  get("decode", "max_new_tokens", c.decode.max_new_tokens);
  c.train.seed = c.seed;
  return c;
}

namespace config_detail {

/// Replaces the leaf at `path` ("section.key" or "seed"), parsing `text`
/// according to the type already stored there.
inline void set_value(nlohmann::ordered_json& doc, const std::string& path, const std::string& text) {
  const auto dot = path.find('.');
  nlohmann::ordered_json* slot = nullptr;
  if (dot == std::string::npos) {
    if (doc.contains(path) && !doc[path].is_object()) slot = &doc[path];
  } else {
    const std::string section = path.substr(0, dot);
    const std::string key = path.substr(dot + 1);
    if (doc.contains(section) && doc[section].is_object() && doc[section].contains(key)) slot = &doc[section][key];
  }
  if (slot == nullptr) fail(ErrorKind::kInvalidArgument, "unknown config key '" + path + "'");
  try {
    if (slot->is_array()) {
      std::vector<std::string> items;
      std::stringstream ss(text);
      for (std::string item; std::getline(ss, item, ',');) {
        if (!item.empty()) items.push_back(item);
      }
      *slot = items;
    } else if (slot->is_string()) {
      *slot = text;
    } else if (slot->is_boolean()) {
      if (text == "true" || text == "1") *slot = true;
      else if (text == "false" || text == "0") *slot = false;
      else throw std::invalid_argument(text);
    } else if (slot->is_number_unsigned()) {
      if (text.empty() || text.front() == '-') throw std::invalid_argument(text);
      std::size_t used = 0;
      *slot = std::stoull(text, &used);
      if (used != text.size()) throw std::invalid_argument(text);
    } else {
      std::size_t used = 0;
      *slot = std::stod(text, &used);
      if (used != text.size()) throw std::invalid_argument(text);
    }
  } catch (const std::logic_error&) {
    fail(ErrorKind::kInvalidArgument, "cannot parse '" + text + "' for config key '" + path + "'");
  }
}

inline void merge(nlohmann::ordered_json& doc, const nlohmann::json& file, const std::string& prefix = "") {
  for (const auto& [key, value] : file.items()) {
    const std::string path = prefix.empty() ? key : prefix + "." + key;
    if (prefix.empty() && value.is_object()) {
      if (!doc.contains(key) || !doc[key].is_object()) fail(ErrorKind::kInvalidArgument, "unknown config section '" + key + "'");
      merge(doc, value, key);
      continue;
    }
    const auto dot = path.find('.');
    const bool known = dot == std::string::npos
                           ? doc.contains(path) && !doc[path].is_object()
                           : doc[path.substr(0, dot)].contains(path.substr(dot + 1));
    if (!known) fail(ErrorKind::kInvalidArgument, "unknown config key '" + path + "'");
    auto& slot = dot == std::string::npos ? doc[path] : doc[path.substr(0, dot)][path.substr(dot + 1)];
    slot = value;
  }
}

inline std::string env_name(const std::string& path) {
  std::string out = "SEVCL_";
  for (char c : path) out += c == '.' ? '_' : static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
  return out;
}

}  // namespace config_detail

/// Resolves defaults < file < environment < overrides. `overrides` holds
/// "section.key=value" strings.
inline RunConfig resolve_run_config(const std::string& config_path, const std::vector<std::string>& overrides,
                                    bool read_environment = true) {
  nlohmann::ordered_json doc = to_json(RunConfig{});
  if (!config_path.empty()) {
    std::ifstream in(config_path);
    if (!in) fail(ErrorKind::kIo, "cannot open config '" + config_path + "'");
    nlohmann::json file;
    try {
      file = nlohmann::json::parse(in);
    } catch (const nlohmann::json::parse_error& e) {
      fail(ErrorKind::kParse, config_path + ": " + e.what());
    }
    if (!file.is_object()) fail(ErrorKind::kParse, config_path + ": expected a JSON object");
    config_detail::merge(doc, file);
  }
  if (read_environment) {
    std::vector<std::string> paths;
    for (const auto& [key, value] : doc.items()) {
      if (value.is_object()) {
        for (const auto& [sub, unused] : value.items()) paths.push_back(key + "." + sub);
      } else {
        paths.push_back(key);
      }
    }
    for (const auto& path : paths) {
      if (const char* v = std::getenv(config_detail::env_name(path).c_str())) config_detail::set_value(doc, path, v);
    }
  }
  for (const auto& o : overrides) {
    const auto eq = o.find('=');
    if (eq == std::string::npos) fail(ErrorKind::kInvalidArgument, "override '" + o + "' is not key=value");
    config_detail::set_value(doc, o.substr(0, eq), o.substr(eq + 1));
  }
  RunConfig c = run_config_from_json(doc);
  c.validate();
  return c;
}

}  // namespace sevcl
