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

// Checkpoint container:
//
//   u64 little-endian  header length in bytes
//   header             UTF-8 JSON object
//   payload            raw little-endian IEEE-754 doubles, tensors back to back
//                      in the order listed under header["tensors"]
//
// The header carries "format_version", a "kind" tag ("model", "adapter" or
// "train_state"), a "tensors" list of {name, shape}, and "payload_fnv1a64",
// the FNV-1a hash of the payload bytes used to detect corruption.

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "sevcl/autodiff.hpp"
#include "sevcl/errors.hpp"
#include "sevcl/lora.hpp"
#include "sevcl/rng.hpp"
#include "sevcl/tiny_lm.hpp"

namespace sevcl {

inline constexpr int kCheckpointVersion = 1;

struct NamedTensor {
  std::string name;
  ad::Tensor tensor;
};

struct Container {
  nlohmann::json header;
  std::vector<NamedTensor> tensors;

  const ad::Tensor& at(const std::string& name) const {
    for (const auto& t : tensors) {
      if (t.name == name) return t.tensor;
    }
    fail(ErrorKind::kCorruptFile, "checkpoint has no tensor '" + name + "'");
  }
};

namespace ckpt_detail {

inline std::uint64_t to_le(std::uint64_t v) {
  if constexpr (std::endian::native == std::endian::big) {
    std::uint64_t r = 0;
    for (int i = 0; i < 8; ++i) r |= ((v >> (8 * i)) & 0xFF) << (8 * (7 - i));
    return r;
  }
  return v;
}

inline void put_u64(std::string& out, std::uint64_t v) {
  v = to_le(v);
  char bytes[8];
  std::memcpy(bytes, &v, 8);
  out.append(bytes, 8);
}

inline std::uint64_t get_u64(const char* p) {
  std::uint64_t v;
  std::memcpy(&v, p, 8);
  return to_le(v);
}

inline std::string hex64(std::uint64_t v) {
  std::ostringstream out;
  out << std::hex;
  out.width(16);
  out.fill('0');
  out << v;
  return out.str();
}

}  // namespace ckpt_detail

inline std::string serialize_container(nlohmann::json header, const std::vector<NamedTensor>& tensors) {
  std::string payload;
  nlohmann::json listing = nlohmann::json::array();
  for (const auto& [name, tensor] : tensors) {
    listing.push_back({{"name", name}, {"shape", tensor.shape()}});
    for (double v : tensor.data()) ckpt_detail::put_u64(payload, std::bit_cast<std::uint64_t>(v));
  }
  header["format_version"] = kCheckpointVersion;
  header["tensors"] = std::move(listing);
  header["payload_bytes"] = payload.size();
  header["payload_fnv1a64"] = ckpt_detail::hex64(fnv1a64(payload));
  const std::string head = header.dump();
  std::string out;
  ckpt_detail::put_u64(out, head.size());
  out += head;
  out += payload;
  return out;
}

inline Container parse_container(const std::string& bytes) {
  if (bytes.size() < 8) fail(ErrorKind::kCorruptFile, "truncated header length");
  const std::uint64_t head_len = ckpt_detail::get_u64(bytes.data());
  if (head_len > bytes.size() - 8) fail(ErrorKind::kCorruptFile, "truncated header");
  Container c;
  try {
    c.header = nlohmann::json::parse(bytes.substr(8, head_len));
  } catch (const nlohmann::json::parse_error& e) {
    fail(ErrorKind::kCorruptFile, std::string("unreadable header: ") + e.what());
  }
  if (!c.header.is_object() || !c.header.contains("format_version")) {
    fail(ErrorKind::kCorruptFile, "header is missing format_version");
  }
  if (c.header.at("format_version") != kCheckpointVersion) {
    fail(ErrorKind::kVersionMismatch, "checkpoint version " + c.header.at("format_version").dump() +
                                          ", expected " + std::to_string(kCheckpointVersion));
  }
  const std::string payload = bytes.substr(8 + head_len);
  if (payload.size() != c.header.value("payload_bytes", std::uint64_t{0}) ||
      ckpt_detail::hex64(fnv1a64(payload)) != c.header.value("payload_fnv1a64", std::string())) {
    fail(ErrorKind::kCorruptFile, "payload checksum mismatch");
  }
  std::size_t offset = 0;
  for (const auto& entry : c.header.at("tensors")) {
    const auto shape = entry.at("shape").get<ad::Shape>();
    const std::size_t n = ad::numel(shape);
    if (offset + n * 8 > payload.size()) fail(ErrorKind::kCorruptFile, "payload shorter than tensor list");
    std::vector<double> values(n);
    for (std::size_t i = 0; i < n; ++i) {
      values[i] = std::bit_cast<double>(ckpt_detail::get_u64(payload.data() + offset + i * 8));
    }
    offset += n * 8;
    c.tensors.push_back({entry.at("name").get<std::string>(), ad::Tensor::from(shape, std::move(values))});
  }
  if (offset != payload.size()) fail(ErrorKind::kCorruptFile, "trailing payload bytes");
  return c;
}

inline void write_file(const std::string& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorKind::kIo, "cannot write '" + path + "'");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) fail(ErrorKind::kIo, "short write to '" + path + "'");
}

inline std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::kIo, "cannot open '" + path + "'");
  return std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

inline Container read_container(const std::string& path) {
  try {
    return parse_container(read_file(path));
  } catch (const Error& e) {
    if (e.kind() == ErrorKind::kIo) throw;
    throw Error(e.kind(), path + ": " + std::string(e.what()).substr(to_string(e.kind()).size() + 2));
  }
}

// ---------------------------------------------------------------------------
// Model / adapter helpers

inline nlohmann::json to_json(const ModelConfig& c) {
  return {{"vocab_size", c.vocab_size}, {"embed_dim", c.embed_dim}, {"n_layers", c.n_layers},
          {"n_heads", c.n_heads},       {"context_len", c.context_len}, {"mlp_ratio", c.mlp_ratio},
          {"seed", c.seed}};
}

inline ModelConfig model_config_from_json(const nlohmann::json& j) {
  ModelConfig c;
  c.vocab_size = j.at("vocab_size").get<std::size_t>();
  c.embed_dim = j.at("embed_dim").get<std::size_t>();
  c.n_layers = j.at("n_layers").get<std::size_t>();
  c.n_heads = j.at("n_heads").get<std::size_t>();
  c.context_len = j.at("context_len").get<std::size_t>();
  c.mlp_ratio = j.at("mlp_ratio").get<std::size_t>();
  c.seed = j.at("seed").get<std::uint64_t>();
  return c;
}

inline nlohmann::json to_json(const LoraConfig& c) {
  return {{"rank", c.rank}, {"alpha", c.alpha}, {"targets", c.targets}, {"seed", c.seed}};
}

inline LoraConfig lora_config_from_json(const nlohmann::json& j) {
  LoraConfig c;
  c.rank = j.at("rank").get<std::size_t>();
  c.alpha = j.at("alpha").get<double>();
  c.targets = j.at("targets").get<std::vector<std::string>>();
  c.seed = j.at("seed").get<std::uint64_t>();
  return c;
}

inline nlohmann::json to_json(const Vocab& v) {
  nlohmann::json cps = nlohmann::json::array();
  for (char32_t cp : v.codepoints()) cps.push_back(static_cast<std::uint32_t>(cp));
  return cps;
}

inline Vocab vocab_from_json(const nlohmann::json& j) {
  std::vector<char32_t> cps;
  for (const auto& v : j) cps.push_back(static_cast<char32_t>(v.get<std::uint32_t>()));
  return Vocab(std::move(cps));
}

/// Hash of all parameter bytes in canonical order; ties adapters to their base.
inline std::string parameter_hash(const Model& m) {
  std::uint64_t h = 0xCBF29CE484222325ULL;
  for (const auto& t : m.parameters()) {
    const auto* bytes = reinterpret_cast<const char*>(t.data().data());
    h = fnv1a64(std::string_view(bytes, t.numel() * sizeof(double)), h);
  }
  return ckpt_detail::hex64(h);
}

inline std::vector<NamedTensor> named_parameters(const Model& m) {
  std::vector<NamedTensor> out;
  for (const auto& t : m.parameters()) out.push_back({t.name(), t});
  return out;
}

/// Copies values from `source` into `target` by canonical name and shape.
inline void assign_parameters(Model& target, const Container& source, const std::string& prefix = "") {
  for (auto& t : target.parameters()) {
    const ad::Tensor& src = source.at(prefix + t.name());
    if (src.shape() != t.shape()) {
      fail(ErrorKind::kCorruptFile, "shape mismatch for '" + t.name() + "'");
    }
    ad::Tensor handle = t;
    std::copy(src.data().begin(), src.data().end(), handle.mutable_data().begin());
  }
}

struct ModelCheckpoint {
  Model model;
  Vocab vocab;
  nlohmann::json provenance;
};

inline void save_model(const std::string& path, const Model& model, const Vocab& vocab,
                       const nlohmann::json& provenance = nlohmann::json::object()) {
  nlohmann::json header{{"kind", "model"},
                        {"model_config", to_json(model.config)},
                        {"vocab", to_json(vocab)},
                        {"provenance", provenance}};
  write_file(path, serialize_container(std::move(header), named_parameters(model)));
}

inline ModelCheckpoint model_from_container(const Container& c) {
  ModelCheckpoint out;
  out.model = Model::init(model_config_from_json(c.header.at("model_config")));
  assign_parameters(out.model, c);
  out.vocab = vocab_from_json(c.header.at("vocab"));
  out.provenance = c.header.value("provenance", nlohmann::json::object());
  return out;
}

inline ModelCheckpoint load_model(const std::string& path) {
  const Container c = read_container(path);
  if (c.header.value("kind", std::string()) != "model") {
    fail(ErrorKind::kCorruptFile, path + ": not a model checkpoint");
  }
  return model_from_container(c);
}

/// Adapter-only file; `base_path` is recorded so the pair can be recombined.
inline void save_adapter(const std::string& path, const AdaptedModel& adapted, const Vocab& vocab,
                         const std::string& base_path,
                         const nlohmann::json& provenance = nlohmann::json::object()) {
  nlohmann::json header{{"kind", "adapter"},
                        {"adapter_only", true},
                        {"lora_config", to_json(adapted.config)},
                        {"model_config", to_json(adapted.base.config)},
                        {"vocab", to_json(vocab)},
                        {"base", {{"path", base_path}, {"params_fnv1a64", parameter_hash(adapted.base)}}},
                        {"provenance", provenance}};
  std::vector<NamedTensor> tensors;
  for (const auto& t : trainable_parameters(adapted)) tensors.push_back({t.name(), t});
  write_file(path, serialize_container(std::move(header), tensors));
}

struct AdapterCheckpoint {
  AdaptedModel model;
  Vocab vocab;
  nlohmann::json provenance;
};

/// Loads adapters onto `base`. Throws MissingBase when no base is supplied and
/// the recorded base path cannot be read, or when the base does not match.
inline AdapterCheckpoint load_adapter(const std::string& path, const Model* base = nullptr) {
  const Container c = read_container(path);
  if (c.header.value("kind", std::string()) != "adapter") {
    fail(ErrorKind::kCorruptFile, path + ": not an adapter checkpoint");
  }
  const auto& base_info = c.header.at("base");
  std::optional<ModelCheckpoint> loaded_base;
  if (base == nullptr) {
    const std::string base_path = base_info.value("path", std::string());
    std::ifstream probe(base_path, std::ios::binary);
    if (base_path.empty() || !probe) {
      fail(ErrorKind::kMissingBase, path + ": base checkpoint '" + base_path + "' is not available");
    }
    loaded_base = load_model(base_path);
    base = &loaded_base->model;
  }
  if (parameter_hash(*base) != base_info.value("params_fnv1a64", std::string())) {
    fail(ErrorKind::kMissingBase, path + ": supplied base does not match the adapter's base");
  }
  AdapterCheckpoint out;
  out.model = attach(*base, lora_config_from_json(c.header.at("lora_config")));
  for (auto& t : trainable_parameters(out.model)) {
    const ad::Tensor& src = c.at(t.name());
    if (src.shape() != t.shape()) fail(ErrorKind::kCorruptFile, "shape mismatch for '" + t.name() + "'");
    ad::Tensor handle = t;
    std::copy(src.data().begin(), src.data().end(), handle.mutable_data().begin());
  }
  out.vocab = vocab_from_json(c.header.at("vocab"));
  out.provenance = c.header.value("provenance", nlohmann::json::object());
  return out;
}

}  // namespace sevcl
