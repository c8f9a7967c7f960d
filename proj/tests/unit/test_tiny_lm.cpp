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

#include <cmath>
#include <cstring>
#include <functional>

#include "sevcl/dataset.hpp"
#include "sevcl/tiny_lm.hpp"
#include "support/oracles.hpp"

namespace {

using namespace sevcl;

ErrorKind kind_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.kind();
  }
  ADD_FAILURE() << "no sevcl::Error thrown";
  return ErrorKind::kInvalidArgument;
}

Vocab abc_vocab() { return Vocab(std::vector<char32_t>{U'c', U'a', U'b', U' ', U'a'}); }

ModelConfig small_config(std::size_t vocab_size, std::uint64_t seed = 0) {
  ModelConfig c;
  c.vocab_size = vocab_size;
  c.embed_dim = 8;
  c.n_layers = 2;
  c.n_heads = 2;
  c.context_len = 12;
  c.mlp_ratio = 2;
  c.seed = seed;
  return c;
}

std::vector<double> logits_of(const Model& m, const Batch& b) {
  ad::Graph g(false);
  const auto t = forward(g, m, b);
  return {t.data().begin(), t.data().end()};
}

TEST(Vocab, SpecialsFirstThenSortedCodepoints) {
  const Vocab v = abc_vocab();
  EXPECT_EQ(v.size(), 9u);
  EXPECT_EQ(v.id_of(U' '), 5u);
  EXPECT_EQ(v.id_of(U'a'), 6u);
  EXPECT_EQ(v.id_of(U'c'), 8u);
  EXPECT_EQ(v.id_of(U'z'), Vocab::kUnk);
  const std::vector<TokenId> ids{Vocab::kBos, 6, 5, Vocab::kUnk, 8, Vocab::kEos};
  EXPECT_EQ(v.decode(ids), "a c");
  EXPECT_EQ(v.encode("cab"), (std::vector<TokenId>{8, 6, 7}));
}

TEST(Vocab, BuiltFromNormalizedCorpus) {
  QaRecord r;
  r.question = "أَ";
  r.answer = "ة";
  const Vocab v = build_vocab({r});
  // Folded forms only: alef and ha.
  EXPECT_EQ(v.codepoints(), (std::vector<char32_t>{U'ا', U'ه'}));
  EXPECT_EQ(kind_of([] { build_vocab({}); }), ErrorKind::kEmptyCorpus);
}

TEST(Encoding, PairLayoutAndMask) {
  const Vocab v = abc_vocab();
  const auto e = encode_pair(v, "ab", "c", 16);
  ASSERT_TRUE(e.has_value());
  EXPECT_EQ(e->ids, (std::vector<TokenId>{Vocab::kBos, 6, 7, Vocab::kSep, 8, Vocab::kEos}));
  EXPECT_EQ(e->loss_mask, (std::vector<double>{0, 0, 0, 1, 1, 0}));
}

TEST(Encoding, LongQuestionCutFromTheLeftAndLongAnswerSkipped) {
  const Vocab v = abc_vocab();
  const auto e = encode_pair(v, "abcabc", "ab", 8);
  ASSERT_TRUE(e.has_value());
  EXPECT_EQ(e->ids.size(), 8u);
  // Room for 8 - 2 - 3 = 3 question tokens; the last three survive.
  EXPECT_EQ(v.decode(std::vector<TokenId>(e->ids.begin() + 1, e->ids.begin() + 4)), "abc");
  EXPECT_FALSE(encode_pair(v, "a", "abcabc", 8).has_value());
}

TEST(Encoding, BatchShiftsAndPads) {
  const Vocab v = abc_vocab();
  const std::vector<EncodedPair> pairs{*encode_pair(v, "a", "b", 16), *encode_pair(v, "abc", "ab", 16)};
  const Batch b = make_batch(pairs);
  EXPECT_EQ(b.batch, 2u);
  EXPECT_EQ(b.seq, 7u);
  EXPECT_EQ(b.inputs[0], Vocab::kBos);
  EXPECT_EQ(b.targets[0], v.id_of(U'a'));
  EXPECT_EQ(b.mask[2], 1.0);  // <sep> predicts 'b'
  EXPECT_EQ(b.mask[4], 0.0);  // padding
  EXPECT_EQ(b.inputs[4], Vocab::kPad);
}

TEST(Model, ParameterCountFormula) {
  ModelConfig c;
  c.vocab_size = 50;
  const Model m = Model::init(c);
  const std::size_t d = 64, h = 256, V = 50, T = 128;
  const std::size_t per_layer = 4 * d + 4 * d * d + 2 * h * d + h + d;
  EXPECT_EQ(m.parameter_count(), 2 * V * d + T * d + 2 * per_layer + 2 * d);
}

TEST(Model, InitialLossNearLogV) {
  const Vocab v = abc_vocab();
  ModelConfig c = small_config(v.size(), 3);
  c.embed_dim = 16;
  const Model m = Model::init(c);
  const std::vector<EncodedPair> pairs{*encode_pair(v, "abc", "cab", 12), *encode_pair(v, "b", "a c", 12)};
  ad::Graph g(false);
  EXPECT_NEAR(loss(g, m, make_batch(pairs)).item(), std::log(9.0), 0.05);
}

TEST(Model, LossEqualsScalarOracleOverLogits) {
  const Vocab v = abc_vocab();
  const Model m = Model::init(small_config(v.size(), 4));
  const std::vector<EncodedPair> pairs{*encode_pair(v, "ab", "ca", 12), *encode_pair(v, "c", "b", 12)};
  const Batch b = make_batch(pairs);
  const auto logits = logits_of(m, b);
  const std::size_t V = v.size();
  double total = 0, count = 0;
  for (std::size_t r = 0; r < b.rows(); ++r) {
    if (b.mask[r] == 0) continue;
    double z = 0;
    for (std::size_t j = 0; j < V; ++j) z += std::exp(logits[r * V + j]);
    total += std::log(z) - logits[r * V + b.targets[r]];
    count += 1;
  }
  ad::Graph g(false);
  EXPECT_NEAR(loss(g, m, b).item(), total / count, 1e-12);
  EXPECT_NEAR(mean_masked_nll(m, pairs, 1), total / count, 1e-12);
}

TEST(Model, CausalityFutureTokensDoNotLeak) {
  const Vocab v = abc_vocab();
  const Model m = Model::init(small_config(v.size(), 5));
  auto e1 = *encode_pair(v, "abca", "bc", 12);
  auto e2 = e1;
  const std::size_t cut = 3;
  for (std::size_t t = cut; t < e2.ids.size(); ++t) e2.ids[t] = (e2.ids[t] == 6 ? 7 : 6);
  const auto l1 = logits_of(m, make_batch(std::vector<EncodedPair>{e1}));
  const auto l2 = logits_of(m, make_batch(std::vector<EncodedPair>{e2}));
  const std::size_t V = v.size();
  for (std::size_t i = 0; i < cut * V; ++i) ASSERT_EQ(l1[i], l2[i]) << i;
  bool later_differs = false;
  for (std::size_t i = cut * V; i < l1.size(); ++i) later_differs = later_differs || l1[i] != l2[i];
  EXPECT_TRUE(later_differs);
}

TEST(Model, PaddingDoesNotChangeRealPositions) {
  const Vocab v = abc_vocab();
  const Model m = Model::init(small_config(v.size(), 6));
  const auto shortp = *encode_pair(v, "a", "b", 12);
  const auto longp = *encode_pair(v, "abcab", "cc", 12);
  const auto alone = logits_of(m, make_batch(std::vector<EncodedPair>{shortp}));
  const auto both = logits_of(m, make_batch(std::vector<EncodedPair>{shortp, longp}));
  for (std::size_t i = 0; i < alone.size(); ++i) EXPECT_NEAR(alone[i], both[i], 1e-12);
}

TEST(Model, ContextOverflowRejected) {
  const Vocab v = abc_vocab();
  const Model m = Model::init(small_config(v.size()));
  EncodedPair p;
  p.ids.assign(14, 6);
  p.loss_mask.assign(14, 1.0);
  ad::Graph g(false);
  EXPECT_EQ(kind_of([&] { forward(g, m, make_batch(std::vector<EncodedPair>{p})); }), ErrorKind::kContextOverflow);
}

TEST(Model, FullLossGradientMatchesFiniteDifferences) {
  const Vocab v = abc_vocab();
  for (std::uint64_t seed = 1; seed <= 2; ++seed) {
    ModelConfig c = small_config(v.size(), seed);
    c.context_len = 8;
    Model m = Model::init(c);
    // Push weights away from the tiny init so every path carries signal.
    for (auto& t : m.parameters()) {
      ad::Tensor h = t;
      for (double& x : h.mutable_data()) x *= 10.0;
    }
    const std::vector<EncodedPair> pairs{*encode_pair(v, "ab", "c", 8), *encode_pair(v, "c", "ab", 8)};
    const Batch b = make_batch(pairs);
    const auto r = oracle::grad_check(m.parameters(), [&](ad::Graph& g) { return loss(g, m, b); });
    EXPECT_TRUE(r.passes()) << "seed " << seed << " max " << r.max_rel << " tight " << r.tight_fraction();
  }
}

TEST(Decoder, StepLogitsMatchBatchedForward) {
  const Vocab v = abc_vocab();
  const Model m = Model::init(small_config(v.size(), 7));
  const auto e = *encode_pair(v, "abc", "ca", 12);
  const auto full = logits_of(m, make_batch(std::vector<EncodedPair>{e}));
  Decoder dec(m);
  const std::size_t V = v.size();
  for (std::size_t t = 0; t + 1 < e.ids.size(); ++t) {
    const auto step = dec.step(e.ids[t]);
    for (std::size_t j = 0; j < V; ++j) ASSERT_NEAR(step[j], full[t * V + j], 1e-12);
  }
}

TEST(Generate, GreedyIsDeterministicAndBounded) {
  const Vocab v = abc_vocab();
  const Model m = Model::init(small_config(v.size(), 8));
  DecodeConfig cfg;
  cfg.max_new_tokens = 5;
  const std::string a = generate(m, "ab", v, cfg);
  EXPECT_EQ(generate(m, "ab", v, cfg), a);
  EXPECT_LE(utf8::decode(a).size(), 5u);
  cfg.mode = DecodeConfig::Mode::kTopK;
  cfg.seed = 3;
  EXPECT_EQ(generate(m, "ab", v, cfg), generate(m, "ab", v, cfg));
}

TEST(Generate, StopsAtEos) {
  const Vocab v = abc_vocab();
  Model m = Model::init(small_config(v.size(), 9));
  // Collapse the final layer norm to its bias and point only the <eos> row at it.
  for (double& x : m.final_gain.mutable_data()) x = 0.0;
  for (double& x : m.final_bias.mutable_data()) x = 1.0;
  for (double& x : m.output.mutable_data()) x = 0.0;
  for (std::size_t j = 0; j < 8; ++j) m.output.mutable_data()[Vocab::kEos * 8 + j] = 1.0;
  EXPECT_EQ(generate(m, "abc", v), "");
  // Pointing 'a' instead produces exactly max_new_tokens copies.
  for (std::size_t j = 0; j < 8; ++j) {
    m.output.mutable_data()[Vocab::kEos * 8 + j] = 0.0;
    m.output.mutable_data()[6 * 8 + j] = 1.0;
  }
  DecodeConfig cfg;
  cfg.max_new_tokens = 4;
  EXPECT_EQ(generate(m, "abc", v, cfg), "aaaa");
}

TEST(Generate, OverlongQuestionRejected) {
  const Vocab v = abc_vocab();
  const Model m = Model::init(small_config(v.size()));
  EXPECT_EQ(kind_of([&] { generate(m, "abcabcabcabc", v); }), ErrorKind::kContextOverflow);
}

TEST(Training, OneRecordOverfits) {
  const Vocab v = abc_vocab();
  ModelConfig c = small_config(v.size(), 10);
  c.embed_dim = 16;
  Model m = Model::init(c);
  const std::vector<EncodedPair> pairs{*encode_pair(v, "ab", "cab", 12)};
  const Batch b = make_batch(pairs);
  auto params = m.parameters();
  ad::AdamState state;
  double last = 0;
  for (int step = 0; step < 300; ++step) {
    m.zero_grad();
    ad::Graph g;
    auto l = loss(g, m, b);
    last = l.item();
    g.backward(l);
    ad::adam_step(params, state, 1e-2);
  }
  EXPECT_LT(last, 0.05);
  EXPECT_EQ(generate(m, "ab", v), "cab");
}

}  // namespace
