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
#include <gtest/gtest.h>

#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <unistd.h>

#include "sevcl/checkpoint.hpp"
#include "sevcl/lora.hpp"
#include "support/oracles.hpp"

namespace {

using namespace sevcl;
namespace fs = std::filesystem;

ErrorKind kind_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.kind();
  }
  ADD_FAILURE() << "no sevcl::Error thrown";
  return ErrorKind::kInvalidArgument;
}

struct Fixture {
  Vocab vocab{std::vector<char32_t>{U'a', U'b', U'c', U' '}};
  Model base;
  std::vector<EncodedPair> pairs;
  Batch batch;

  explicit Fixture(std::uint64_t seed = 1, std::size_t d = 16) {
    ModelConfig c;
    c.vocab_size = vocab.size();
    c.embed_dim = d;
    c.context_len = 16;
    c.seed = seed;
    base = Model::init(c);
    pairs = {*encode_pair(vocab, "abc", "ba", 16), *encode_pair(vocab, "c a", "cab", 16)};
    batch = make_batch(pairs);
  }
};

std::vector<double> logits(const Model& m, const Batch& b, const AdapterMap* ad = nullptr) {
  ad::Graph g(false);
  const auto t = forward(g, m, b, ad);
  return {t.data().begin(), t.data().end()};
}

void randomize_b(AdaptedModel& a, std::uint64_t seed) {
  Rng rng(seed);
  for (auto& [key, delta] : a.adapters) {
    ad::Tensor h = delta.b;
    for (double& x : h.mutable_data()) x = 0.1 * rng.normal();
  }
}

std::string bytes_of(const Model& m) {
  std::string out;
  for (const auto& t : m.parameters()) {
    out.append(reinterpret_cast<const char*>(t.data().data()), t.numel() * sizeof(double));
  }
  return out;
}

TEST(Lora, AttachIsTransparent) {
  Fixture f;
  const AdaptedModel a = attach(f.base, LoraConfig{});
  const auto plain = logits(f.base, f.batch);
  const auto adapted = logits(a.base, f.batch, &a.adapters);
  ASSERT_EQ(plain.size(), adapted.size());
  EXPECT_EQ(std::memcmp(plain.data(), adapted.data(), plain.size() * sizeof(double)), 0);
}

TEST(Lora, DefaultTrainableCount) {
  ModelConfig c;
  c.vocab_size = 40;
  const AdaptedModel a = attach(Model::init(c), LoraConfig{});
  // rank 4 on q and v of two 64-wide layers: 4 adapters x 4 x (64 + 64).
  EXPECT_EQ(trainable_count(a), 4u * 4u * (64u + 64u));
  EXPECT_EQ(trainable_count(a), 2048u);
  EXPECT_EQ(a.adapters.size(), 4u);
}

TEST(Lora, TargetSelection) {
  Fixture f;
  LoraConfig cfg;
  cfg.targets = {"1.v", "o", "1.v"};
  const AdaptedModel a = attach(f.base, cfg);
  EXPECT_EQ(a.adapters.size(), 3u);
  EXPECT_TRUE(a.adapters.count({1, Projection::kV}));
  EXPECT_TRUE(a.adapters.count({0, Projection::kO}));
  for (const char* bad : {"x", "2.q", "a.q", "1.z", "1x.q"}) {
    cfg.targets = {bad};
    EXPECT_EQ(kind_of([&] { attach(f.base, cfg); }), ErrorKind::kUnknownTarget) << bad;
  }
  cfg = LoraConfig{};
  cfg.rank = 0;
  EXPECT_EQ(kind_of([&] { attach(f.base, cfg); }), ErrorKind::kInvalidArgument);
}

TEST(Lora, MergeMatchesAdaptedForward) {
  for (std::uint64_t seed : {1, 2, 3}) {
    Fixture f(seed);
    LoraConfig cfg;
    cfg.targets = {"q", "k", "v", "o"};
    cfg.rank = 3;
    cfg.alpha = 5.0;
    AdaptedModel a = attach(f.base, cfg);
    randomize_b(a, seed + 100);
    const auto adapted = logits(a.base, f.batch, &a.adapters);
    const auto merged = logits(merge(a), f.batch);
    double worst = 0;
    for (std::size_t i = 0; i < adapted.size(); ++i) worst = std::max(worst, std::abs(adapted[i] - merged[i]));
    EXPECT_LE(worst, 1e-10);
    EXPECT_GT(std::abs(adapted[0] - logits(f.base, f.batch)[0]), 0.0);
  }
}

TEST(Lora, MergeWeightsMatchExplicitProduct) {
  Fixture f(4, 8);
  AdaptedModel a = attach(f.base, LoraConfig{});
  randomize_b(a, 9);
  const Model merged = merge(a);
  const auto& delta = a.adapters.at({0, Projection::kQ});
  const auto W = f.base.layers[0].wq.data();
  const auto M = merged.layers[0].wq.data();
  for (std::size_t i = 0; i < 8; ++i)
    for (std::size_t j = 0; j < 8; ++j) {
      double ba = 0;
      for (std::size_t r = 0; r < 4; ++r) ba += delta.b.data()[i * 4 + r] * delta.a.data()[r * 8 + j];
      EXPECT_NEAR(M[i * 8 + j], W[i * 8 + j] + 2.0 * ba, 1e-15);
    }
}

TEST(Lora, AdapterGradientsMatchFiniteDifferences) {
  Fixture f(5, 8);
  LoraConfig cfg;
  cfg.targets = {"q", "k", "v", "o"};
  cfg.rank = 2;
  AdaptedModel a = attach(f.base, cfg);
  randomize_b(a, 11);
  const auto r = oracle::grad_check(trainable_parameters(a), [&](ad::Graph& g) { return a.loss(g, f.batch); });
  EXPECT_TRUE(r.passes()) << r.max_rel;
}

TEST(Lora, BaseStaysByteIdenticalThroughTraining) {
  Fixture f;
  AdaptedModel a = attach(f.base, LoraConfig{});
  const std::string before = bytes_of(a.base);
  EXPECT_EQ(before, bytes_of(f.base));
  auto params = trainable_parameters(a);
  ad::AdamState state;
  double first = 0, last = 0;
  for (int step = 0; step < 100; ++step) {
    for (auto& p : params) p.zero_grad();
    ad::Graph g;
    auto l = a.loss(g, f.batch);
    (step == 0 ? first : last) = l.item();
    g.backward(l);
    ad::adam_step(params, state, 1e-2);
  }
  EXPECT_EQ(bytes_of(a.base), before);
  for (const auto& t : a.base.parameters()) EXPECT_FALSE(t.has_grad()) << t.name();
  EXPECT_LT(last, first);
}

class CheckpointTest : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() / ("sevcl_ckpt_" + std::to_string(::getpid()));
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }
  std::string path(const std::string& name) const { return (dir_ / name).string(); }

  fs::path dir_;
};

TEST_F(CheckpointTest, ModelRoundTripIsBitExact) {
  Fixture f;
  save_model(path("m.ckpt"), f.base, f.vocab, {{"note", "x"}});
  const ModelCheckpoint back = load_model(path("m.ckpt"));
  EXPECT_TRUE(parameters_equal(back.model, f.base));
  EXPECT_EQ(back.model.config, f.base.config);
  EXPECT_EQ(back.vocab, f.vocab);
  EXPECT_EQ(back.provenance.at("note"), "x");
}

TEST_F(CheckpointTest, AdapterRoundTripAndBaseChecks) {
  Fixture f;
  save_model(path("base.ckpt"), f.base, f.vocab);
  AdaptedModel a = attach(f.base, LoraConfig{});
  randomize_b(a, 3);
  save_adapter(path("a.ckpt"), a, f.vocab, path("base.ckpt"));
  const AdapterCheckpoint viaPath = load_adapter(path("a.ckpt"));
  const AdapterCheckpoint viaBase = load_adapter(path("a.ckpt"), &f.base);
  for (const auto* loaded : {&viaPath, &viaBase}) {
    EXPECT_TRUE(parameters_equal(merge(loaded->model), merge(a)));
    EXPECT_EQ(loaded->model.config, a.config);
  }
  Fixture other(99);
  EXPECT_EQ(kind_of([&] { load_adapter(path("a.ckpt"), &other.base); }), ErrorKind::kMissingBase);
  fs::remove(path("base.ckpt"));
  EXPECT_EQ(kind_of([&] { load_adapter(path("a.ckpt")); }), ErrorKind::kMissingBase);
}

TEST_F(CheckpointTest, CorruptionAndVersionDetected) {
  Fixture f;
  save_model(path("m.ckpt"), f.base, f.vocab);
  std::string bytes = read_file(path("m.ckpt"));

  std::string flipped = bytes;
  flipped[flipped.size() - 3] ^= 0x40;
  write_file(path("flip.ckpt"), flipped);
  EXPECT_EQ(kind_of([&] { load_model(path("flip.ckpt")); }), ErrorKind::kCorruptFile);

  write_file(path("trunc.ckpt"), bytes.substr(0, bytes.size() / 2));
  EXPECT_EQ(kind_of([&] { load_model(path("trunc.ckpt")); }), ErrorKind::kCorruptFile);

  write_file(path("tiny.ckpt"), "abc");
  EXPECT_EQ(kind_of([&] { load_model(path("tiny.ckpt")); }), ErrorKind::kCorruptFile);

  const std::string key = "\"format_version\":1";
  const auto at = bytes.find(key);
  ASSERT_NE(at, std::string::npos);
  std::string bumped = bytes;
  bumped[at + key.size() - 1] = '7';
  write_file(path("v7.ckpt"), bumped);
  EXPECT_EQ(kind_of([&] { load_model(path("v7.ckpt")); }), ErrorKind::kVersionMismatch);

  EXPECT_EQ(kind_of([&] { load_model(path("absent.ckpt")); }), ErrorKind::kIo);

  AdaptedModel a = attach(f.base, LoraConfig{});
  save_adapter(path("a.ckpt"), a, f.vocab, path("m.ckpt"));
  EXPECT_EQ(kind_of([&] { load_model(path("a.ckpt")); }), ErrorKind::kCorruptFile);
}

}  // namespace
