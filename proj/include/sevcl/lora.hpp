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

// Low-rank adapters on attention projections. The base model is frozen; each
// adapted projection computes x W^T + (alpha / r) (x A^T) B^T.

#include <cstdint>
#include <string>
#include <vector>

#include "sevcl/autodiff.hpp"
#include "sevcl/errors.hpp"
#include "sevcl/rng.hpp"
#include "sevcl/tiny_lm.hpp"

namespace sevcl {

struct LoraConfig {
  std::size_t rank = 4;
  double alpha = 8.0;
  // "q", "k", "v", "o" apply to every layer; "<layer>.<proj>" (e.g. "1.v")
  // targets one layer.
  std::vector<std::string> targets{"q", "v"};
  std::uint64_t seed = 0;

  double scaling() const { return alpha / static_cast<double>(rank); }

  void validate() const {
    if (rank < 1) fail(ErrorKind::kInvalidArgument, "LoRA rank must be >= 1");
    if (!(alpha > 0.0)) fail(ErrorKind::kInvalidArgument, "LoRA alpha must be positive");
  }

  friend bool operator==(const LoraConfig&, const LoraConfig&) = default;
};

struct AdaptedModel {
  Model base;  // frozen
  LoraConfig config;
  AdapterMap adapters;

  ad::Tensor forward(ad::Graph& g, const Batch& batch) const { return sevcl::forward(g, base, batch, &adapters); }
  ad::Tensor loss(ad::Graph& g, const Batch& batch) const { return sevcl::loss(g, base, batch, &adapters); }
};

namespace lora_detail {

inline std::optional<Projection> parse_projection(std::string_view s) {
  if (s == "q") return Projection::kQ;
  if (s == "k") return Projection::kK;
  if (s == "v") return Projection::kV;
  if (s == "o") return Projection::kO;
  return std::nullopt;
}

inline std::vector<std::pair<std::size_t, Projection>> resolve_targets(const LoraConfig& cfg,
                                                                       std::size_t n_layers) {
  std::vector<std::pair<std::size_t, Projection>> out;
  for (const auto& target : cfg.targets) {
    const auto dot = target.find('.');
    if (dot == std::string::npos) {
      auto p = parse_projection(target);
      if (!p) fail(ErrorKind::kUnknownTarget, "'" + target + "'");
      for (std::size_t l = 0; l < n_layers; ++l) out.emplace_back(l, *p);
      continue;
    }
    auto p = parse_projection(std::string_view(target).substr(dot + 1));
    std::size_t layer = 0;
    try {
      std::size_t used = 0;
      layer = std::stoul(target.substr(0, dot), &used);
      if (used != dot) p.reset();
    } catch (const std::exception&) {
      p.reset();
    }
    if (!p || layer >= n_layers) fail(ErrorKind::kUnknownTarget, "'" + target + "'");
    out.emplace_back(layer, *p);
  }
  return out;
}

}  // namespace lora_detail

/// Wraps a copy of `model` with zero-initialized B so the adapted forward
/// equals the base forward exactly. A ~ N(0, 0.02^2) from the config seed.
inline AdaptedModel attach(const Model& model, const LoraConfig& cfg) {
  cfg.validate();
  AdaptedModel adapted;
  adapted.base = model.clone();
  adapted.base.set_trainable(false);
  adapted.config = cfg;
  Rng rng(derive_seed(cfg.seed, "lora_init"));
  for (const auto& key : lora_detail::resolve_targets(cfg, model.layers.size())) {
    if (adapted.adapters.count(key)) continue;
    const ad::Tensor& w = adapted.base.layers[key.first].projection(key.second);
    const std::size_t d_out = w.dim(0);
    const std::size_t d_in = w.dim(1);
    std::vector<double> a(cfg.rank * d_in);
    for (double& x : a) x = 0.02 * rng.normal();
    const std::string name = "lora.layers." + std::to_string(key.first) + "." + std::string(to_string(key.second));
    LowRankDelta delta;
    delta.a = ad::Tensor::from({cfg.rank, d_in}, std::move(a), true).named(name + ".a");
    delta.b = ad::Tensor::zeros({d_out, cfg.rank}, true).named(name + ".b");
    delta.scaling = cfg.scaling();
    adapted.adapters.emplace(key, std::move(delta));
  }
  return adapted;
}

/// A and B tensors in (layer, projection) order; the only tensors an
/// optimizer may touch.
inline std::vector<ad::Tensor> trainable_parameters(const AdaptedModel& adapted) {
  std::vector<ad::Tensor> out;
  for (const auto& [key, delta] : adapted.adapters) {
    out.push_back(delta.a);
    out.push_back(delta.b);
  }
  return out;
}

inline std::size_t trainable_count(const AdaptedModel& adapted) {
  std::size_t n = 0;
  for (const auto& t : trainable_parameters(adapted)) n += t.numel();
  return n;
}

/// Plain model with W + scaling * B * A baked into every adapted projection.
inline Model merge(const AdaptedModel& adapted) {
  Model merged = adapted.base.clone();
  for (const auto& [key, delta] : adapted.adapters) {
    ad::Tensor& w = merged.layers[key.first].projection(key.second);
    const std::size_t d_out = w.dim(0);
    const std::size_t d_in = w.dim(1);
    std::vector<double> ba(d_out * d_in);
    ad::kernels::gemm(false, false, d_out, d_in, adapted.config.rank, delta.b.data().data(),
                      delta.a.data().data(), ba.data(), false);
    auto wd = w.mutable_data();
    for (std::size_t i = 0; i < wd.size(); ++i) wd[i] += delta.scaling * ba[i];
  }
  return merged;
}

}  // namespace sevcl
