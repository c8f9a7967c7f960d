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

// Codepoint tokenizer and a small pre-LN decoder-only transformer that models
// P(answer | question) autoregressively, with the loss restricted to answer
// positions.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <iostream>
#include <limits>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "sevcl/arabic_text.hpp"
#include "sevcl/autodiff.hpp"
#include "sevcl/dataset.hpp"
#include "sevcl/errors.hpp"
#include "sevcl/rng.hpp"
#include "sevcl/utf8.hpp"

namespace sevcl {

using TokenId = std::size_t;

// ---------------------------------------------------------------------------
// Vocabulary

class Vocab {
 public:
  static constexpr TokenId kPad = 0;
  static constexpr TokenId kBos = 1;
  static constexpr TokenId kSep = 2;
  static constexpr TokenId kEos = 3;
  static constexpr TokenId kUnk = 4;
  static constexpr TokenId kReserved = 5;

  Vocab() = default;

  explicit Vocab(std::vector<char32_t> codepoints) : codepoints_(std::move(codepoints)) {
    std::sort(codepoints_.begin(), codepoints_.end());
    codepoints_.erase(std::unique(codepoints_.begin(), codepoints_.end()), codepoints_.end());
    for (std::size_t i = 0; i < codepoints_.size(); ++i) index_[codepoints_[i]] = kReserved + i;
  }

  std::size_t size() const { return kReserved + codepoints_.size(); }
  const std::vector<char32_t>& codepoints() const { return codepoints_; }

  static bool is_special(TokenId id) { return id < kReserved; }

  TokenId id_of(char32_t cp) const {
    auto it = index_.find(cp);
    return it == index_.end() ? kUnk : it->second;
  }

  std::vector<TokenId> encode(std::string_view text) const {
    std::vector<TokenId> ids;
    for (char32_t cp : utf8::decode(text)) ids.push_back(id_of(cp));
    return ids;
  }

  /// Special tokens (including <unk>) are dropped.
  std::string decode(std::span<const TokenId> ids) const {
    std::u32string out;
    for (TokenId id : ids) {
      if (is_special(id) || id >= size()) continue;
      out.push_back(codepoints_[id - kReserved]);
    }
    return utf8::encode(out);
  }

  friend bool operator==(const Vocab& a, const Vocab& b) { return a.codepoints_ == b.codepoints_; }

 private:
  std::vector<char32_t> codepoints_;
  std::map<char32_t, TokenId> index_;
};

/// Covers every codepoint of the normalized questions and answers.
inline Vocab build_vocab(const std::vector<QaRecord>& corpus) {
  if (corpus.empty()) fail(ErrorKind::kEmptyCorpus, "cannot build a vocabulary from an empty corpus");
  std::vector<char32_t> cps;
  for (const auto& r : corpus) {
    for (const auto* text : {&r.question, &r.answer}) {
      for (char32_t cp : utf8::decode(arabic::normalize(*text))) cps.push_back(cp);
    }
  }
  return Vocab(std::move(cps));
}

// ---------------------------------------------------------------------------
// Model

struct ModelConfig {
  std::size_t vocab_size = 0;
  std::size_t embed_dim = 64;
  std::size_t n_layers = 2;
  std::size_t n_heads = 2;
  std::size_t context_len = 128;
  std::size_t mlp_ratio = 4;
  std::uint64_t seed = 0;

  void validate() const {
    if (vocab_size <= Vocab::kReserved) fail(ErrorKind::kInvalidArgument, "vocab_size too small");
    if (embed_dim == 0 || n_heads == 0 || embed_dim % n_heads != 0) {
      fail(ErrorKind::kInvalidArgument, "embed_dim must be a positive multiple of n_heads");
    }
    if (context_len < 8) fail(ErrorKind::kInvalidArgument, "context_len must be >= 8");
    if (n_layers == 0 || mlp_ratio == 0) fail(ErrorKind::kInvalidArgument, "n_layers and mlp_ratio must be >= 1");
  }

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

enum class Projection : std::uint8_t { kQ, kK, kV, kO };

inline constexpr std::string_view to_string(Projection p) {
  switch (p) {
    case Projection::kQ: return "q";
    case Projection::kK: return "k";
    case Projection::kV: return "v";
    case Projection::kO: return "o";
  }
  return "q";
}

struct LayerParams {
  ad::Tensor ln1_gain, ln1_bias;
  ad::Tensor wq, wk, wv, wo;  // (d_out x d_in)
  ad::Tensor ln2_gain, ln2_bias;
  ad::Tensor mlp_in, mlp_in_bias;    // (hidden x d), (hidden)
  ad::Tensor mlp_out, mlp_out_bias;  // (d x hidden), (d)

  const ad::Tensor& projection(Projection p) const {
    switch (p) {
      case Projection::kQ: return wq;
      case Projection::kK: return wk;
      case Projection::kV: return wv;
      case Projection::kO: return wo;
    }
    return wq;
  }
  ad::Tensor& projection(Projection p) {
    return const_cast<ad::Tensor&>(std::as_const(*this).projection(p));
  }
};

class Model {
 public:
  ModelConfig config;
  ad::Tensor token_embedding;     // (V x d)
  ad::Tensor position_embedding;  // (context_len x d)
  std::vector<LayerParams> layers;
  ad::Tensor final_gain, final_bias;
  ad::Tensor output;  // (V x d)

  /// Weights ~ N(0, 0.02^2), biases 0, layer-norm gains 1.
  static Model init(const ModelConfig& cfg) {
    cfg.validate();
    Rng rng(derive_seed(cfg.seed, "model_init"));
    const std::size_t d = cfg.embed_dim;
    const std::size_t hidden = d * cfg.mlp_ratio;
    auto normal = [&](ad::Shape shape, std::string name) {
      std::vector<double> values(ad::numel(shape));
      for (double& v : values) v = 0.02 * rng.normal();
      return ad::Tensor::from(std::move(shape), std::move(values), true).named(std::move(name));
    };
    auto constant = [](ad::Shape shape, double value, std::string name) {
      const std::size_t n = ad::numel(shape);
      return ad::Tensor::from(std::move(shape), std::vector<double>(n, value), true).named(std::move(name));
    };
    Model m;
    m.config = cfg;
    m.token_embedding = normal({cfg.vocab_size, d}, "token_embedding");
    m.position_embedding = normal({cfg.context_len, d}, "position_embedding");
    for (std::size_t l = 0; l < cfg.n_layers; ++l) {
      const std::string p = "layers." + std::to_string(l) + ".";
      LayerParams L;
      L.ln1_gain = constant({d}, 1.0, p + "ln1.gain");
      L.ln1_bias = constant({d}, 0.0, p + "ln1.bias");
      L.wq = normal({d, d}, p + "attn.q");
      L.wk = normal({d, d}, p + "attn.k");
      L.wv = normal({d, d}, p + "attn.v");
      L.wo = normal({d, d}, p + "attn.o");
      L.ln2_gain = constant({d}, 1.0, p + "ln2.gain");
      L.ln2_bias = constant({d}, 0.0, p + "ln2.bias");
      L.mlp_in = normal({hidden, d}, p + "mlp.in.weight");
      L.mlp_in_bias = constant({hidden}, 0.0, p + "mlp.in.bias");
      L.mlp_out = normal({d, hidden}, p + "mlp.out.weight");
      L.mlp_out_bias = constant({d}, 0.0, p + "mlp.out.bias");
      m.layers.push_back(std::move(L));
    }
    m.final_gain = constant({d}, 1.0, "final_ln.gain");
    m.final_bias = constant({d}, 0.0, "final_ln.bias");
    m.output = normal({cfg.vocab_size, d}, "output");
    return m;
  }

  /// Handles in canonical checkpoint order: embeddings, then each layer's
  /// ln1 gain/bias, q, k, v, o, ln2 gain/bias, mlp in weight/bias, mlp out
  /// weight/bias, then the final layer norm and the output projection.
  std::vector<ad::Tensor> parameters() const {
    std::vector<ad::Tensor> out{token_embedding, position_embedding};
    for (const auto& L : layers) {
      for (const auto* t : {&L.ln1_gain, &L.ln1_bias, &L.wq, &L.wk, &L.wv, &L.wo, &L.ln2_gain,
                            &L.ln2_bias, &L.mlp_in, &L.mlp_in_bias, &L.mlp_out, &L.mlp_out_bias}) {
        out.push_back(*t);
      }
    }
    out.push_back(final_gain);
    out.push_back(final_bias);
    out.push_back(output);
    return out;
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& t : parameters()) n += t.numel();
    return n;
  }

  /// Deep copy with independent storage.
  Model clone() const {
    Model m = *this;
    auto copy = [](ad::Tensor& t) { t = t.clone(); };
    copy(m.token_embedding);
    copy(m.position_embedding);
    for (auto& L : m.layers) {
      for (auto* t : {&L.ln1_gain, &L.ln1_bias, &L.wq, &L.wk, &L.wv, &L.wo, &L.ln2_gain, &L.ln2_bias,
                      &L.mlp_in, &L.mlp_in_bias, &L.mlp_out, &L.mlp_out_bias}) {
        copy(*t);
      }
    }
    copy(m.final_gain);
    copy(m.final_bias);
    copy(m.output);
    return m;
  }

  void set_trainable(bool flag) {
    for (auto& t : parameters()) {
      ad::Tensor handle = t;
      handle.set_requires_grad(flag);
    }
  }

  void zero_grad() {
    for (auto& t : parameters()) {
      ad::Tensor handle = t;
      handle.zero_grad();
    }
  }
};

inline bool parameters_equal(const Model& a, const Model& b) {
  const auto pa = a.parameters();
  const auto pb = b.parameters();
  if (pa.size() != pb.size()) return false;
  for (std::size_t i = 0; i < pa.size(); ++i) {
    if (pa[i].shape() != pb[i].shape()) return false;
    if (!std::equal(pa[i].data().begin(), pa[i].data().end(), pb[i].data().begin())) return false;
  }
  return true;
}

/// Low-rank update attached to one projection: W_eff = W + scaling * B * A.
struct LowRankDelta {
  ad::Tensor a;  // (r x d_in)
  ad::Tensor b;  // (d_out x r)
  double scaling = 1.0;
};

using AdapterMap = std::map<std::pair<std::size_t, Projection>, LowRankDelta>;

// ---------------------------------------------------------------------------
// Sequence encoding

/// <bos> q <sep> a <eos>. loss_mask[t] is 1 when position t predicts an answer
/// token or <eos>.
struct EncodedPair {
  std::vector<TokenId> ids;
  std::vector<double> loss_mask;
};

/// Encodes normalized question and answer. When the sequence exceeds
/// `context_len` the question is cut from its left end; if even an empty
/// question would not fit, the record is skipped (nullopt).
inline std::optional<EncodedPair> encode_pair(const Vocab& vocab, std::string_view question,
                                              std::string_view answer, std::size_t context_len) {
  std::vector<TokenId> q = vocab.encode(arabic::normalize(question));
  const std::vector<TokenId> a = vocab.encode(arabic::normalize(answer));
  if (a.size() + 3 > context_len) return std::nullopt;
  const std::size_t q_room = context_len - a.size() - 3;
  if (q.size() > q_room) q.erase(q.begin(), q.begin() + static_cast<std::ptrdiff_t>(q.size() - q_room));
  EncodedPair e;
  e.ids.push_back(Vocab::kBos);
  e.ids.insert(e.ids.end(), q.begin(), q.end());
  e.ids.push_back(Vocab::kSep);
  e.ids.insert(e.ids.end(), a.begin(), a.end());
  e.ids.push_back(Vocab::kEos);
  e.loss_mask.assign(e.ids.size(), 0.0);
  // position of <sep> predicts the first answer token; the last answer token
  // predicts <eos>
  const std::size_t sep = 1 + q.size();
  for (std::size_t t = sep; t + 1 < e.ids.size(); ++t) e.loss_mask[t] = 1.0;
  return e;
}

inline std::optional<EncodedPair> encode_pair(const Vocab& vocab, const QaRecord& r,
                                              std::size_t context_len) {
  return encode_pair(vocab, r.question, r.answer, context_len);
}

/// Unconditional line for pretraining: <bos> text <eos>, every position
/// trained. Over-long lines keep their beginning.
inline std::optional<EncodedPair> encode_text(const Vocab& vocab, std::string_view text,
                                              std::size_t context_len) {
  std::vector<TokenId> body = vocab.encode(arabic::normalize(text));
  if (body.empty()) return std::nullopt;
  if (body.size() + 2 > context_len) body.resize(context_len - 2);
  EncodedPair e;
  e.ids.push_back(Vocab::kBos);
  e.ids.insert(e.ids.end(), body.begin(), body.end());
  e.ids.push_back(Vocab::kEos);
  e.loss_mask.assign(e.ids.size(), 1.0);
  e.loss_mask.back() = 0.0;
  return e;
}

/// Right-padded batch of shifted sequences: inputs are ids[0..n-1), targets
/// ids[1..n). Padding rows carry mask 0; causality keeps them from influencing
/// real positions.
struct Batch {
  std::size_t batch = 0;
  std::size_t seq = 0;
  std::vector<TokenId> inputs;
  std::vector<TokenId> targets;
  std::vector<double> mask;

  std::size_t rows() const { return batch * seq; }
};

inline Batch make_batch(std::span<const EncodedPair> pairs) {
  Batch b;
  b.batch = pairs.size();
  for (const auto& p : pairs) b.seq = std::max(b.seq, p.ids.size() - 1);
  b.inputs.assign(b.rows(), Vocab::kPad);
  b.targets.assign(b.rows(), Vocab::kPad);
  b.mask.assign(b.rows(), 0.0);
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    const auto& p = pairs[i];
    for (std::size_t t = 0; t + 1 < p.ids.size(); ++t) {
      b.inputs[i * b.seq + t] = p.ids[t];
      b.targets[i * b.seq + t] = p.ids[t + 1];
      b.mask[i * b.seq + t] = p.loss_mask[t];
    }
  }
  return b;
}

// ---------------------------------------------------------------------------
// Forward and loss

namespace lm_detail {

inline ad::Tensor project(ad::Graph& g, const ad::Tensor& x, const ad::Tensor& w,
                          const LowRankDelta* delta) {
  ad::Tensor y = g.matmul(x, w, false, true);
  if (delta != nullptr) {
    ad::Tensor low = g.matmul(g.matmul(x, delta->a, false, true), delta->b, false, true);
    y = g.add(y, g.scale(low, delta->scaling));
  }
  return y;
}

}  // namespace lm_detail

/// Logits of shape (batch*seq, V). Position t sees only inputs at <= t.
inline ad::Tensor forward(ad::Graph& g, const Model& model, const Batch& batch,
                          const AdapterMap* adapters = nullptr) {
  const auto& cfg = model.config;
  if (batch.seq > cfg.context_len) {
    fail(ErrorKind::kContextOverflow, "sequence length " + std::to_string(batch.seq) +
                                          " exceeds context " + std::to_string(cfg.context_len));
  }
  if (batch.inputs.size() != batch.rows()) {
    fail(ErrorKind::kShapeMismatch, "batch inputs do not match batch x seq");
  }
  std::vector<std::size_t> positions(batch.rows());
  for (std::size_t i = 0; i < batch.rows(); ++i) positions[i] = i % batch.seq;
  ad::Tensor x = g.add(g.embedding_gather(model.token_embedding, batch.inputs),
                       g.embedding_gather(model.position_embedding, positions));
  auto delta = [&](std::size_t layer, Projection p) -> const LowRankDelta* {
    if (adapters == nullptr) return nullptr;
    auto it = adapters->find({layer, p});
    return it == adapters->end() ? nullptr : &it->second;
  };
  for (std::size_t l = 0; l < model.layers.size(); ++l) {
    const LayerParams& L = model.layers[l];
    ad::Tensor h = g.layer_norm_rows(x, L.ln1_gain, L.ln1_bias);
    ad::Tensor q = lm_detail::project(g, h, L.wq, delta(l, Projection::kQ));
    ad::Tensor k = lm_detail::project(g, h, L.wk, delta(l, Projection::kK));
    ad::Tensor v = lm_detail::project(g, h, L.wv, delta(l, Projection::kV));
    ad::Tensor att = g.causal_attention(q, k, v, batch.batch, batch.seq, cfg.n_heads);
    x = g.add(x, lm_detail::project(g, att, L.wo, delta(l, Projection::kO)));
    ad::Tensor h2 = g.layer_norm_rows(x, L.ln2_gain, L.ln2_bias);
    ad::Tensor m = g.gelu(g.add(g.matmul(h2, L.mlp_in, false, true), L.mlp_in_bias));
    x = g.add(x, g.add(g.matmul(m, L.mlp_out, false, true), L.mlp_out_bias));
  }
  x = g.layer_norm_rows(x, model.final_gain, model.final_bias);
  return g.matmul(x, model.output, false, true);
}

/// Mean masked NLL over the active positions of the whole batch.
inline ad::Tensor loss(ad::Graph& g, const Model& model, const Batch& batch,
                       const AdapterMap* adapters = nullptr) {
  ad::Tensor logits = forward(g, model, batch, adapters);
  return g.cross_entropy_masked(logits, batch.targets, batch.mask);
}

/// Token-weighted mean masked NLL over `seqs`, evaluated without a tape.
inline double mean_masked_nll(const Model& model, const std::vector<EncodedPair>& seqs, std::size_t batch_size,
                               const AdapterMap* adapters = nullptr) {
  double nll = 0.0;
  double count = 0.0;
  for (std::size_t i = 0; i < seqs.size(); i += batch_size) {
    const std::size_t n = std::min(batch_size, seqs.size() - i);
    Batch b = make_batch(std::span(seqs).subspan(i, n));
    ad::Graph g(false);
    double active = 0.0;
    for (double m : b.mask) active += m;
    nll += loss(g, model, b, adapters).item() * active;
    count += active;
  }
  return count > 0.0 ? nll / count : 0.0;
}

// ---------------------------------------------------------------------------
// Incremental decoding

/// Single-sequence decoder with a key/value cache. Mirrors forward() on a plain
/// (adapter-free) model one position at a time.
class Decoder {
 public:
  explicit Decoder(const Model& model) : model_(model) {
    for (const auto& L : model.layers) {
      Transposed t;
      t.q = transpose(L.wq);
      t.k = transpose(L.wk);
      t.v = transpose(L.wv);
      t.o = transpose(L.wo);
      t.mlp_in = transpose(L.mlp_in);
      t.mlp_out = transpose(L.mlp_out);
      layers_.push_back(std::move(t));
    }
    output_ = transpose(model.output);
    reset();
  }

  void reset() {
    length_ = 0;
    keys_.assign(model_.layers.size(), {});
    values_.assign(model_.layers.size(), {});
  }

  std::size_t length() const { return length_; }

  /// Appends one token and returns the next-token logits.
  std::vector<double> step(TokenId id) {
    const auto& cfg = model_.config;
    const std::size_t d = cfg.embed_dim;
    if (length_ >= cfg.context_len) fail(ErrorKind::kContextOverflow, "decoder context is full");
    if (id >= cfg.vocab_size) fail(ErrorKind::kShapeMismatch, "token id out of range");
    std::vector<double> x(d);
    const double* te = model_.token_embedding.data().data() + id * d;
    const double* pe = model_.position_embedding.data().data() + length_ * d;
    for (std::size_t j = 0; j < d; ++j) x[j] = te[j] + pe[j];
    const std::size_t hd = d / cfg.n_heads;
    const double sc = 1.0 / std::sqrt(static_cast<double>(hd));
    std::vector<double> h(d), q(d), k(d), v(d), att(d), proj(d);
    const std::size_t hidden = d * cfg.mlp_ratio;
    std::vector<double> m(hidden);
    for (std::size_t l = 0; l < model_.layers.size(); ++l) {
      const LayerParams& L = model_.layers[l];
      layer_norm(x, L.ln1_gain, L.ln1_bias, h);
      const Transposed& T = layers_[l];
      linear(h, T.q, q);
      linear(h, T.k, k);
      linear(h, T.v, v);
      keys_[l].insert(keys_[l].end(), k.begin(), k.end());
      values_[l].insert(values_[l].end(), v.begin(), v.end());
      const std::size_t n = length_ + 1;
      std::fill(att.begin(), att.end(), 0.0);
      std::vector<double> p(n);
      for (std::size_t hh = 0; hh < cfg.n_heads; ++hh) {
        const std::size_t col = hh * hd;
        double mx = -std::numeric_limits<double>::infinity();
        for (std::size_t j = 0; j < n; ++j) {
          const double* kj = keys_[l].data() + j * d + col;
          double s = 0.0;
          for (std::size_t c = 0; c < hd; ++c) s += q[col + c] * kj[c];
          p[j] = s * sc;
          mx = std::max(mx, p[j]);
        }
        double sum = 0.0;
        for (std::size_t j = 0; j < n; ++j) {
          p[j] = std::exp(p[j] - mx);
          sum += p[j];
        }
        for (std::size_t j = 0; j < n; ++j) {
          p[j] /= sum;
          const double* vj = values_[l].data() + j * d + col;
          for (std::size_t c = 0; c < hd; ++c) att[col + c] += p[j] * vj[c];
        }
      }
      linear(att, T.o, proj);
      for (std::size_t j = 0; j < d; ++j) x[j] += proj[j];
      layer_norm(x, L.ln2_gain, L.ln2_bias, h);
      linear(h, T.mlp_in, m);
      for (std::size_t j = 0; j < hidden; ++j) m[j] = ad::kernels::gelu(m[j] + L.mlp_in_bias.data()[j]);
      linear(m, T.mlp_out, proj);
      for (std::size_t j = 0; j < d; ++j) x[j] += proj[j] + L.mlp_out_bias.data()[j];
    }
    layer_norm(x, model_.final_gain, model_.final_bias, h);
    std::vector<double> logits(cfg.vocab_size);
    linear(h, output_, logits);
    ++length_;
    return logits;
  }

 private:
  // Weights stored (d_in x d_out) so a row vector times the matrix runs the
  // same accumulation order as the batched forward.
  struct Transposed {
    std::vector<double> q, k, v, o, mlp_in, mlp_out;
  };

  static std::vector<double> transpose(const ad::Tensor& w) {
    const std::size_t rows = w.dim(0);
    const std::size_t cols = w.dim(1);
    std::vector<double> t(rows * cols);
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = 0; c < cols; ++c) t[c * rows + r] = w.data()[r * cols + c];
    return t;
  }

  static void linear(const std::vector<double>& in, const std::vector<double>& wt, std::vector<double>& out) {
    ad::kernels::gemm(false, false, 1, out.size(), in.size(), in.data(), wt.data(), out.data(), false);
  }

  static void layer_norm(const std::vector<double>& x, const ad::Tensor& gain, const ad::Tensor& bias,
                         std::vector<double>& out) {
    const std::size_t w = x.size();
    double mean = 0.0;
    for (double v : x) mean += v;
    mean /= static_cast<double>(w);
    double var = 0.0;
    for (double v : x) var += (v - mean) * (v - mean);
    var /= static_cast<double>(w);
    const double rs = 1.0 / std::sqrt(var + 1e-5);
    for (std::size_t j = 0; j < w; ++j) out[j] = (x[j] - mean) * rs * gain.data()[j] + bias.data()[j];
  }

  const Model& model_;
  std::vector<Transposed> layers_;
  std::vector<double> output_;
  std::size_t length_ = 0;
  std::vector<std::vector<double>> keys_;
  std::vector<std::vector<double>> values_;
};

// ---------------------------------------------------------------------------
// Generation

struct DecodeConfig {
  enum class Mode { kGreedy, kTopK };
  Mode mode = Mode::kGreedy;
  std::size_t max_new_tokens = 64;
  std::size_t top_k = 8;
  double temperature = 1.0;
  std::uint64_t seed = 0;
};

namespace lm_detail {

inline TokenId argmax(const std::vector<double>& logits) {
  return static_cast<TokenId>(std::max_element(logits.begin(), logits.end()) - logits.begin());
}

inline TokenId sample_top_k(const std::vector<double>& logits, std::size_t k, double temperature, Rng& rng) {
  std::vector<TokenId> order(logits.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  k = std::clamp<std::size_t>(k, 1, order.size());
  std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k), order.end(),
                    [&](TokenId a, TokenId b) { return logits[a] > logits[b] || (logits[a] == logits[b] && a < b); });
  const double t = temperature > 0.0 ? temperature : 1.0;
  std::vector<double> w(k);
  double sum = 0.0;
  for (std::size_t i = 0; i < k; ++i) {
    w[i] = std::exp((logits[order[i]] - logits[order[0]]) / t);
    sum += w[i];
  }
  double u = rng.uniform() * sum;
  for (std::size_t i = 0; i < k; ++i) {
    u -= w[i];
    if (u < 0.0) return order[i];
  }
  return order[k - 1];
}

}  // namespace lm_detail

/// Feeds <bos> question <sep> and decodes until <eos>, `max_new_tokens`, or a
/// full context. Returns the decoded answer without special tokens.
inline std::string generate(const Model& model, std::string_view question, const Vocab& vocab,
                            const DecodeConfig& cfg = {}) {
  if (cfg.max_new_tokens < 1) fail(ErrorKind::kInvalidArgument, "max_new_tokens must be >= 1");
  const std::vector<TokenId> q = vocab.encode(arabic::normalize(question));
  if (q.size() + 2 > model.config.context_len) {
    fail(ErrorKind::kContextOverflow, "question of " + std::to_string(q.size()) +
                                          " tokens exceeds context " + std::to_string(model.config.context_len));
  }
  Decoder dec(model);
  std::vector<double> logits = dec.step(Vocab::kBos);
  for (TokenId id : q) logits = dec.step(id);
  logits = dec.step(Vocab::kSep);
  Rng rng(derive_seed(cfg.seed, "generate"));
  std::vector<TokenId> out;
  for (std::size_t i = 0; i < cfg.max_new_tokens; ++i) {
    const TokenId next = cfg.mode == DecodeConfig::Mode::kGreedy
                             ? lm_detail::argmax(logits)
                             : lm_detail::sample_top_k(logits, cfg.top_k, cfg.temperature, rng);
    if (next == Vocab::kEos) break;
    out.push_back(next);
    if (dec.length() >= model.config.context_len) break;
    logits = dec.step(next);
  }
  return vocab.decode(out);
}

}  // namespace sevcl
