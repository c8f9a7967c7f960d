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
#include <functional>
#include <random>

#include "sevcl/dataset.hpp"
#include "sevcl/eval.hpp"
#include "sevcl/lora.hpp"
#include "support/oracles.hpp"

namespace {

using namespace sevcl;
using Tokens = std::vector<std::string>;

ErrorKind kind_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.kind();
  }
  ADD_FAILURE() << "no sevcl::Error thrown";
  return ErrorKind::kInvalidArgument;
}

TEST(TokenF1, WorkedExamples) {
  EXPECT_DOUBLE_EQ(token_f1({"a", "b"}, {"a", "b"}), 1.0);
  EXPECT_DOUBLE_EQ(token_f1({"a", "b"}, {"c"}), 0.0);
  EXPECT_NEAR(token_f1({"a", "b", "c"}, {"a", "c", "d", "e"}), 4.0 / 7.0, 1e-15);
  EXPECT_DOUBLE_EQ(token_f1({}, {}), 1.0);
  EXPECT_DOUBLE_EQ(token_f1({}, {"a"}), 0.0);
  // Clipping: a repeated candidate token only counts as often as the reference has it.
  EXPECT_NEAR(token_f1({"a", "a", "a"}, {"a", "b"}), 2.0 * (1.0 / 3.0) * 0.5 / (1.0 / 3.0 + 0.5), 1e-15);
}

TEST(LcsF1, WorkedExamples) {
  EXPECT_DOUBLE_EQ(lcs_f1({"x", "y"}, {"x", "y"}), 1.0);
  EXPECT_EQ(lcs_length({"a", "c", "d"}, {"a", "b", "c", "d"}), 3u);
  EXPECT_NEAR(lcs_f1({"a", "c", "d"}, {"a", "b", "c", "d"}), 6.0 / 7.0, 1e-15);
  EXPECT_NEAR(lcs_f1({"c", "b", "a"}, {"a", "b", "c"}), 1.0 / 3.0, 1e-15);
  EXPECT_DOUBLE_EQ(lcs_f1({}, {"a"}), 0.0);
  EXPECT_DOUBLE_EQ(lcs_f1({"a"}, {}), 0.0);
}

TEST(Metrics, AgreeWithOraclesOnRandomLists) {
  std::mt19937_64 gen(2024);
  const Tokens alphabet{"a", "b", "c", "d", "e"};
  for (int trial = 0; trial < 1000; ++trial) {
    Tokens x(gen() % 8), y(gen() % 8);
    for (auto& t : x) t = alphabet[gen() % alphabet.size()];
    for (auto& t : y) t = alphabet[gen() % alphabet.size()];
    const double tf = token_f1(x, y);
    ASSERT_NEAR(tf, oracle::oracle_token_f1(x, y), 1e-12);
    ASSERT_EQ(lcs_length(x, y), oracle::oracle_lcs(x, y));
    const double lf = lcs_f1(x, y);
    ASSERT_GE(tf, 0.0);
    ASSERT_LE(tf, 1.0);
    ASSERT_GE(lf, 0.0);
    ASSERT_LE(lf, 1.0);
    ASSERT_EQ(token_f1(x, x), 1.0);
    ASSERT_EQ(lcs_f1(y, y), 1.0);
  }
}

// Token-to-token lookup model: every block is zeroed, so the final layer norm
// sees the one-hot token embedding and the output row for the successor of
// token i points at coordinate i.
Model lookup_model(const Vocab& vocab, const std::map<TokenId, TokenId>& next, double margin) {
  ModelConfig c;
  c.vocab_size = vocab.size();
  c.embed_dim = 8;
  c.n_layers = 1;
  c.n_heads = 2;
  c.context_len = 16;
  Model m = Model::init(c);
  for (auto& t : m.parameters()) {
    ad::Tensor h = t;
    for (double& x : h.mutable_data()) x = 0.0;
  }
  for (double& x : m.final_gain.mutable_data()) x = 1.0;
  for (std::size_t i = 0; i < vocab.size(); ++i) m.token_embedding.mutable_data()[i * 8 + i] = 1.0;
  const double peak = (7.0 / 8.0) / std::sqrt(7.0 / 64.0 + 1e-5);
  for (auto [from, to] : next) m.output.mutable_data()[to * 8 + from] = margin / peak;
  return m;
}

TEST(Perplexity, ForcedAnswerTokensGiveOne) {
  const Vocab v(std::vector<char32_t>{U'a', U'b', U'c'});
  QaRecord r;
  r.question = "c";
  r.answer = "ab";
  const std::map<TokenId, TokenId> next{{Vocab::kSep, v.id_of(U'a')}, {v.id_of(U'a'), v.id_of(U'b')},
                                        {v.id_of(U'b'), Vocab::kEos}};
  const Model m = lookup_model(v, next, 1000.0);
  EXPECT_NEAR(perplexity(m, v, {r}), 1.0, 1e-6);
  EXPECT_EQ(generate(m, "c", v), "ab");
}

TEST(Perplexity, FreshModelNearVocabularySize) {
  const auto records = synth_generate(5, 1);
  const Vocab v = build_vocab(records);
  ModelConfig c;
  c.vocab_size = v.size();
  const Model m = Model::init(c);
  const double ppl = perplexity(m, v, records);
  EXPECT_NEAR(ppl / static_cast<double>(v.size()), 1.0, 0.15);
}

TEST(Perplexity, EqualsExpOfScalarOracle) {
  const auto records = synth_generate(2, 3);
  const Vocab v = build_vocab(records);
  ModelConfig c;
  c.vocab_size = v.size();
  c.embed_dim = 16;
  c.seed = 2;
  const Model m = Model::init(c);
  double total = 0, count = 0;
  for (const auto& r : records) {
    const auto e = *encode_pair(v, r, c.context_len);
    const Batch b = make_batch(std::vector<EncodedPair>{e});
    ad::Graph g(false);
    const auto lt = forward(g, m, b);
    const auto L = lt.data();
    for (std::size_t t = 0; t < b.seq; ++t) {
      if (b.mask[t] == 0) continue;
      double z = 0;
      for (std::size_t j = 0; j < v.size(); ++j) z += std::exp(L[t * v.size() + j]);
      total += std::log(z) - L[t * v.size() + b.targets[t]];
      count += 1;
    }
  }
  EXPECT_NEAR(perplexity(m, v, records), std::exp(total / count), 1e-9);
  EXPECT_EQ(kind_of([&] { perplexity(m, v, {}); }), ErrorKind::kEmptyEvalSet);
}

TEST(Evaluate, AggregatesAndTiers) {
  const auto records = synth_generate(3, 7);
  const Vocab v = build_vocab(records);
  ModelConfig c;
  c.vocab_size = v.size();
  c.embed_dim = 16;
  const Model m = Model::init(c);
  DecodeConfig dc;
  dc.max_new_tokens = 12;
  const EvalReport rep = evaluate(m, v, records, dc);
  ASSERT_EQ(rep.records.size(), records.size());
  double tok = 0, lcs = 0;
  std::size_t counted = 0;
  for (const auto& s : rep.records) {
    tok += s.token_f1;
    lcs += s.lcs_f1;
  }
  EXPECT_NEAR(rep.token_f1, tok / records.size(), 1e-15);
  EXPECT_NEAR(rep.lcs_f1, lcs / records.size(), 1e-15);
  for (const auto& [name, t] : rep.tiers) counted += t.count;
  EXPECT_EQ(counted, records.size());
  EXPECT_EQ(rep.tiers.size(), 3u);
  EXPECT_GE(rep.perplexity, 1.0);
  EXPECT_EQ(rep.eval_set_hash, eval_set_hash(records));
  const EvalReport again = evaluate(m, v, records, dc);
  EXPECT_EQ(to_json(again).dump(), to_json(rep).dump());
  EXPECT_EQ(kind_of([&] { evaluate(m, v, {}, dc); }), ErrorKind::kEmptyEvalSet);
}

TEST(Evaluate, AdaptedModelMatchesMergedModel) {
  const auto records = synth_generate(2, 8);
  const Vocab v = build_vocab(records);
  ModelConfig c;
  c.vocab_size = v.size();
  c.embed_dim = 16;
  AdaptedModel a = attach(Model::init(c), LoraConfig{});
  Rng rng(1);
  for (auto& [k, d] : a.adapters) {
    ad::Tensor h = d.b;
    for (double& x : h.mutable_data()) x = 0.2 * rng.normal();
  }
  DecodeConfig dc;
  dc.max_new_tokens = 8;
  const EvalReport ra = evaluate(a, v, records, dc);
  const EvalReport rm = evaluate(merge(a), v, records, dc);
  EXPECT_NEAR(ra.perplexity, rm.perplexity, 1e-9);
  EXPECT_EQ(ra.token_f1, rm.token_f1);
}

TEST(Report, JsonRoundTrip) {
  EvalReport r;
  r.mode = "standard";
  r.run = "seed3";
  r.token_f1 = 0.25;
  r.lcs_f1 = 0.2;
  r.perplexity = 3.5;
  r.eval_set_hash = "00ff";
  r.train_presentations = 90;
  r.tiers["mild"] = {2, 0.5, 0.4};
  r.records.push_back({4, Severity::kMild, "x y", "x z", 0.5, 0.5});
  const EvalReport back = eval_report_from_json(to_json(r));
  EXPECT_EQ(to_json(back).dump(), to_json(r).dump());
}

EvalReport fake(const std::string& mode, const std::string& run, double f1, const std::string& hash = "h") {
  EvalReport r;
  r.mode = mode;
  r.run = run;
  r.token_f1 = f1;
  r.lcs_f1 = f1 / 2;
  r.perplexity = 2.0;
  r.eval_set_hash = hash;
  return r;
}

TEST(Compare, DeltaFormatting) {
  EXPECT_EQ(format_delta(63.21 - 54.04), "+9.17");
  EXPECT_EQ(format_delta(-1.234), "-1.23");
  EXPECT_EQ(format_delta(0.0), "+0.00");
  EXPECT_EQ(format_delta(-0.001), "+0.00");
  const Comparison c = compare_report({fake("baseline", "r", 0.5404), fake("curriculum", "r", 0.6321)});
  ASSERT_EQ(c.rows.size(), 1u);
  EXPECT_NEAR(*c.rows[0].delta_vs_baseline, 9.17, 1e-9);
  EXPECT_NE(c.table.find("+9.17"), std::string::npos);
}

TEST(Compare, IdenticalScoresGiveZeroDeltas) {
  const Comparison c =
      compare_report({fake("baseline", "r", 0.3), fake("standard", "r", 0.3), fake("curriculum", "r", 0.3)});
  EXPECT_EQ(*c.rows[0].delta_vs_baseline, 0.0);
  EXPECT_EQ(*c.rows[0].delta_vs_standard, 0.0);
}

TEST(Compare, ColumnOrderAndMedianRow) {
  std::vector<EvalReport> reports;
  const double cur[] = {0.30, 0.10, 0.20};
  for (int s = 0; s < 3; ++s) {
    const std::string run = "seed" + std::to_string(s);
    reports.push_back(fake("curriculum", run, cur[s]));
    reports.push_back(fake("baseline", run, 0.05));
    reports.push_back(fake("standard", run, 0.15));
  }
  const Comparison c = compare_report(reports);
  ASSERT_TRUE(c.median.has_value());
  EXPECT_NEAR(*c.median->token_f1[2], 20.0, 1e-12);
  const auto base = c.table.find("Baseline");
  const auto stdc = c.table.find("Standard Fine-Tuning");
  const auto curc = c.table.find("Curriculum Learning");
  ASSERT_NE(base, std::string::npos);
  EXPECT_LT(base, stdc);
  EXPECT_LT(stdc, curc);
  EXPECT_NE(c.table.find("median"), std::string::npos);
  EXPECT_EQ(c.csv.substr(0, c.csv.find('\n')), "mode,metric,value,tier,run");
  EXPECT_EQ(c.summary.at("runs").size(), 3u);
}

TEST(Compare, RejectsMismatchedOrTooFewReports) {
  EXPECT_EQ(kind_of([] { compare_report({fake("baseline", "r", 0.1), fake("standard", "r", 0.2, "other")}); }),
            ErrorKind::kEvalSetMismatch);
  EXPECT_EQ(kind_of([] { compare_report({fake("baseline", "r", 0.1)}); }), ErrorKind::kInvalidArgument);
  EXPECT_EQ(kind_of([] { compare_report({fake("baseline", "r", 0.1), fake("baseline", "r", 0.2)}); }),
            ErrorKind::kInvalidArgument);
}

}  // namespace
