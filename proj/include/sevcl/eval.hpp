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

// Answer scoring (token F1, LCS F1, perplexity) and the side-by-side
// comparison of baseline, standard fine-tuning and curriculum runs.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "sevcl/arabic_text.hpp"
#include "sevcl/dataset.hpp"
#include "sevcl/errors.hpp"
#include "sevcl/lora.hpp"
#include "sevcl/rng.hpp"
#include "sevcl/severity.hpp"
#include "sevcl/tiny_lm.hpp"

namespace sevcl {

/// Unigram overlap F1 with multiset clipping. Two empty lists score 1.
inline double token_f1(const std::vector<std::string>& cand, const std::vector<std::string>& ref) {
  if (cand.empty() && ref.empty()) return 1.0;
  if (cand.empty() || ref.empty()) return 0.0;
  std::unordered_map<std::string, std::size_t> counts;
  for (const auto& t : ref) ++counts[t];
  std::size_t overlap = 0;
  for (const auto& t : cand) {
    auto it = counts.find(t);
    if (it != counts.end() && it->second > 0) {
      --it->second;
      ++overlap;
    }
  }
  if (overlap == 0) return 0.0;
  const double p = static_cast<double>(overlap) / static_cast<double>(cand.size());
  const double r = static_cast<double>(overlap) / static_cast<double>(ref.size());
  return 2.0 * p * r / (p + r);
}

inline std::size_t lcs_length(const std::vector<std::string>& a, const std::vector<std::string>& b) {
  std::vector<std::size_t> row(b.size() + 1, 0);
  for (const auto& x : a) {
    std::size_t diag = 0;
    for (std::size_t j = 1; j <= b.size(); ++j) {
      const std::size_t up = row[j];
      row[j] = x == b[j - 1] ? diag + 1 : std::max(row[j], row[j - 1]);
      diag = up;
    }
  }
  return row[b.size()];
}

/// F1 of LCS precision and recall. Two empty lists score 1.
inline double lcs_f1(const std::vector<std::string>& cand, const std::vector<std::string>& ref) {
  if (cand.empty() && ref.empty()) return 1.0;
  if (cand.empty() || ref.empty()) return 0.0;
  const auto l = static_cast<double>(lcs_length(cand, ref));
  if (l == 0.0) return 0.0;
  const double p = l / static_cast<double>(cand.size());
  const double r = l / static_cast<double>(ref.size());
  return 2.0 * p * r / (p + r);
}

/// exp of the mean masked NLL over every answer token of `records`.
inline double perplexity(const Model& model, const Vocab& vocab, const std::vector<QaRecord>& records,
                         const AdapterMap* adapters = nullptr, std::size_t batch_size = 16) {
  std::vector<EncodedPair> seqs;
  for (const auto& r : records) {
    if (auto e = encode_pair(vocab, r, model.config.context_len)) seqs.push_back(std::move(*e));
  }
  if (seqs.empty()) fail(ErrorKind::kEmptyEvalSet, "no evaluable records");
  return std::exp(mean_masked_nll(model, seqs, batch_size, adapters));
}

/// Order-sensitive hash of the (question, answer, label) triples.
inline std::string eval_set_hash(const std::vector<QaRecord>& records) {
  std::uint64_t h = 0xCBF29CE484222325ULL;
  for (const auto& r : records) {
    h = fnv1a64(r.question, h);
    h = fnv1a64(std::string_view("\x1f", 1), h);
    h = fnv1a64(r.answer, h);
    h = fnv1a64(r.severity ? to_string(*r.severity) : std::string_view("-"), h);
    h = fnv1a64(std::string_view("\x1e", 1), h);
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

struct RecordScore {
  RecordId id = 0;
  std::optional<Severity> severity;
  std::string generated;
  std::string reference;
  double token_f1 = 0.0;
  double lcs_f1 = 0.0;
};

struct TierScore {
  std::size_t count = 0;
  double token_f1 = 0.0;
  double lcs_f1 = 0.0;
};

struct EvalReport {
  std::string mode;
  std::string run;
  std::vector<RecordScore> records;
  double token_f1 = 0.0;
  double lcs_f1 = 0.0;
  double perplexity = 0.0;
  std::map<std::string, TierScore> tiers;  // "mild", "moderate", "critical", "unlabeled"
  std::string eval_set_hash;
  std::size_t train_presentations = 0;
  nlohmann::json provenance = nlohmann::json::object();
};

namespace eval_detail {

inline EvalReport score(const Model& decoder_model, const Vocab& vocab, const std::vector<QaRecord>& records,
                        const DecodeConfig& decode, double ppl) {
  EvalReport rep;
  rep.eval_set_hash = eval_set_hash(records);
  rep.perplexity = ppl;
  double sum_tok = 0.0;
  double sum_lcs = 0.0;
  for (const auto& r : records) {
    RecordScore s;
    s.id = r.id;
    s.severity = r.severity;
    s.reference = r.answer;
    s.generated = generate(decoder_model, r.question, vocab, decode);
    const auto cand = arabic::tokenize_whitespace(arabic::normalize(s.generated));
    const auto ref = arabic::tokenize_whitespace(arabic::normalize(s.reference));
    s.token_f1 = token_f1(cand, ref);
    s.lcs_f1 = lcs_f1(cand, ref);
    sum_tok += s.token_f1;
    sum_lcs += s.lcs_f1;
    TierScore& t = rep.tiers[r.severity ? std::string(to_string(*r.severity)) : "unlabeled"];
    ++t.count;
    t.token_f1 += s.token_f1;
    t.lcs_f1 += s.lcs_f1;
    rep.records.push_back(std::move(s));
  }
  const auto n = static_cast<double>(records.size());
  rep.token_f1 = sum_tok / n;
  rep.lcs_f1 = sum_lcs / n;
  for (auto& [name, t] : rep.tiers) {
    t.token_f1 /= static_cast<double>(t.count);
    t.lcs_f1 /= static_cast<double>(t.count);
  }
  return rep;
}

}  // namespace eval_detail

/// Greedy-decodes an answer for every record and scores it against the
/// reference on normalized, whitespace-split tokens.
inline EvalReport evaluate(const Model& model, const Vocab& vocab, const std::vector<QaRecord>& records,
                           const DecodeConfig& decode = {}) {
  if (records.empty()) fail(ErrorKind::kEmptyEvalSet, "evaluation set is empty");
  return eval_detail::score(model, vocab, records, decode, perplexity(model, vocab, records));
}

/// Perplexity runs through the adapters; generation uses the merged weights.
inline EvalReport evaluate(const AdaptedModel& model, const Vocab& vocab, const std::vector<QaRecord>& records,
                           const DecodeConfig& decode = {}) {
  if (records.empty()) fail(ErrorKind::kEmptyEvalSet, "evaluation set is empty");
  const double ppl = perplexity(model.base, vocab, records, &model.adapters);
  return eval_detail::score(merge(model), vocab, records, decode, ppl);
}

inline nlohmann::ordered_json to_json(const EvalReport& rep, bool with_records = true) {
  nlohmann::ordered_json j;
  j["kind"] = "eval_report";
  j["mode"] = rep.mode;
  j["run"] = rep.run;
  j["primary_metric"] = "token_f1";
  j["token_f1"] = rep.token_f1;
  j["lcs_f1"] = rep.lcs_f1;
  j["perplexity"] = rep.perplexity;
  j["eval_set_hash"] = rep.eval_set_hash;
  j["train_presentations"] = rep.train_presentations;
  nlohmann::ordered_json tiers = nlohmann::ordered_json::object();
  for (const auto& [name, t] : rep.tiers) {
    tiers[name] = {{"count", t.count}, {"token_f1", t.token_f1}, {"lcs_f1", t.lcs_f1}};
  }
  j["tiers"] = tiers;
  j["provenance"] = rep.provenance;
  if (with_records) {
    nlohmann::ordered_json recs = nlohmann::ordered_json::array();
    for (const auto& s : rep.records) {
      nlohmann::ordered_json o;
      o["id"] = s.id;
      o["severity"] = s.severity ? nlohmann::ordered_json(std::string(to_string(*s.severity))) : nullptr;
      o["generated"] = s.generated;
      o["reference"] = s.reference;
      o["token_f1"] = s.token_f1;
      o["lcs_f1"] = s.lcs_f1;
      recs.push_back(std::move(o));
    }
    j["records"] = recs;
  }
  return j;
}

inline EvalReport eval_report_from_json(const nlohmann::json& j) {
  if (j.value("kind", std::string()) != "eval_report") fail(ErrorKind::kParse, "not an eval report");
  EvalReport rep;
  rep.mode = j.at("mode").get<std::string>();
  rep.run = j.value("run", std::string());
  rep.token_f1 = j.at("token_f1").get<double>();
  rep.lcs_f1 = j.at("lcs_f1").get<double>();
  rep.perplexity = j.at("perplexity").get<double>();
  rep.eval_set_hash = j.at("eval_set_hash").get<std::string>();
  rep.train_presentations = j.value("train_presentations", std::size_t{0});
  for (const auto& [name, t] : j.at("tiers").items()) {
    rep.tiers[name] = {t.at("count").get<std::size_t>(), t.at("token_f1").get<double>(),
                       t.at("lcs_f1").get<double>()};
  }
  rep.provenance = j.value("provenance", nlohmann::json::object());
  if (j.contains("records")) {
    for (const auto& o : j.at("records")) {
      RecordScore s;
      s.id = o.at("id").get<RecordId>();
      if (!o.at("severity").is_null()) s.severity = parse_severity(o.at("severity").get<std::string>());
      s.generated = o.at("generated").get<std::string>();
      s.reference = o.at("reference").get<std::string>();
      s.token_f1 = o.at("token_f1").get<double>();
      s.lcs_f1 = o.at("lcs_f1").get<double>();
      rep.records.push_back(std::move(s));
    }
  }
  return rep;
}

// ---------------------------------------------------------------------------
// Comparison

inline constexpr std::array<std::string_view, 3> kReportModes{"baseline", "standard", "curriculum"};
inline constexpr std::array<std::string_view, 3> kReportColumns{"Baseline", "Standard Fine-Tuning",
                                                                "Curriculum Learning"};

/// "+9.17" style signed difference with two decimals.
inline std::string format_delta(double value) {
  if (std::abs(value) < 0.005) value = 0.0;
  char buf[32];
  std::snprintf(buf, sizeof buf, "%+.2f", value);
  return buf;
}

inline std::string format_score(double value) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", value);
  return buf;
}

struct ComparisonRow {
  std::string run;
  std::array<std::optional<double>, 3> token_f1;  // percent, by kReportModes
  std::array<std::optional<double>, 3> lcs_f1;
  std::array<std::optional<double>, 3> perplexity;
  std::array<std::size_t, 3> presentations{};
  std::optional<double> delta_vs_baseline;  // token F1 points
  std::optional<double> delta_vs_standard;
};

struct Comparison {
  std::string eval_set_hash;
  std::vector<ComparisonRow> rows;
  std::optional<ComparisonRow> median;  // present with more than one run
  std::string table;
  nlohmann::ordered_json summary;
  std::string csv;
};

namespace eval_detail {

inline std::optional<double> median(std::vector<double> v) {
  if (v.empty()) return std::nullopt;
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

inline void fill_deltas(ComparisonRow& row) {
  const auto& t = row.token_f1;
  if (t[2] && t[0]) row.delta_vs_baseline = *t[2] - *t[0];
  if (t[2] && t[1]) row.delta_vs_standard = *t[2] - *t[1];
}

inline std::string cell(const std::optional<double>& v) { return v ? format_score(*v) : "-"; }
inline std::string delta_cell(const std::optional<double>& v) { return v ? format_delta(*v) : "-"; }

inline std::string pad(const std::string& s, std::size_t width) {
  std::size_t cps = 0;
  for (unsigned char c : s) cps += (c & 0xC0) != 0x80;
  return s + std::string(width > cps ? width - cps : 0, ' ');
}

inline std::string render(const std::vector<const ComparisonRow*>& rows) {
  const std::vector<std::string> head{"Run", std::string(kReportColumns[0]), std::string(kReportColumns[1]),
                                      std::string(kReportColumns[2]), "Cur-Base", "Cur-Std"};
  std::vector<std::vector<std::string>> cells{head};
  for (const ComparisonRow* r : rows) {
    cells.push_back({r->run, cell(r->token_f1[0]), cell(r->token_f1[1]), cell(r->token_f1[2]),
                     delta_cell(r->delta_vs_baseline), delta_cell(r->delta_vs_standard)});
  }
  std::vector<std::size_t> width(head.size(), 0);
  for (const auto& line : cells) {
    for (std::size_t i = 0; i < line.size(); ++i) width[i] = std::max(width[i], pad(line[i], 0).size());
  }
  std::ostringstream out;
  out << "token_f1 (%), greedy decoding, normalized tokens\n";
  for (std::size_t li = 0; li < cells.size(); ++li) {
    for (std::size_t i = 0; i < cells[li].size(); ++i) {
      out << (i ? " | " : "") << pad(cells[li][i], width[i]);
    }
    out << "\n";
    if (li == 0) {
      for (std::size_t i = 0; i < width.size(); ++i) out << (i ? "-+-" : "") << std::string(width[i], '-');
      out << "\n";
    }
  }
  return out.str();
}

}  // namespace eval_detail

/// Groups reports by run label and lays the three modes side by side. All
/// reports must share one evaluation set.
inline Comparison compare_report(const std::vector<EvalReport>& reports) {
  if (reports.size() < 2) fail(ErrorKind::kInvalidArgument, "comparison needs at least two reports");
  Comparison cmp;
  cmp.eval_set_hash = reports.front().eval_set_hash;
  for (const auto& r : reports) {
    if (r.eval_set_hash != cmp.eval_set_hash) {
      fail(ErrorKind::kEvalSetMismatch, "report '" + r.run + "/" + r.mode + "' was scored on a different eval set");
    }
  }
  std::vector<std::string> order;
  std::map<std::string, ComparisonRow> by_run;
  for (const auto& r : reports) {
    const auto it = std::find(kReportModes.begin(), kReportModes.end(), r.mode);
    if (it == kReportModes.end()) fail(ErrorKind::kInvalidArgument, "unknown report mode '" + r.mode + "'");
    const auto m = static_cast<std::size_t>(it - kReportModes.begin());
    if (!by_run.count(r.run)) order.push_back(r.run);
    ComparisonRow& row = by_run[r.run];
    row.run = r.run;
    if (row.token_f1[m]) fail(ErrorKind::kInvalidArgument, "duplicate report for '" + r.run + "/" + r.mode + "'");
    row.token_f1[m] = 100.0 * r.token_f1;
    row.lcs_f1[m] = 100.0 * r.lcs_f1;
    row.perplexity[m] = r.perplexity;
    row.presentations[m] = r.train_presentations;
  }
  for (const auto& name : order) {
    ComparisonRow row = by_run.at(name);
    eval_detail::fill_deltas(row);
    cmp.rows.push_back(std::move(row));
  }
  std::vector<const ComparisonRow*> shown;
  for (const auto& row : cmp.rows) shown.push_back(&row);
  if (cmp.rows.size() > 1) {
    ComparisonRow med;
    med.run = "median";
    for (std::size_t m = 0; m < 3; ++m) {
      std::vector<double> tok, lcs, ppl;
      for (const auto& row : cmp.rows) {
        if (row.token_f1[m]) {
          tok.push_back(*row.token_f1[m]);
          lcs.push_back(*row.lcs_f1[m]);
          ppl.push_back(*row.perplexity[m]);
        }
      }
      med.token_f1[m] = eval_detail::median(tok);
      med.lcs_f1[m] = eval_detail::median(lcs);
      med.perplexity[m] = eval_detail::median(ppl);
    }
    eval_detail::fill_deltas(med);
    cmp.median = med;
    shown.push_back(&*cmp.median);
  }
  cmp.table = eval_detail::render(shown);

  auto opt = [](const std::optional<double>& v) { return v ? nlohmann::ordered_json(*v) : nlohmann::ordered_json(); };
  auto row_json = [&](const ComparisonRow& row) {
    nlohmann::ordered_json j;
    j["run"] = row.run;
    for (std::size_t m = 0; m < 3; ++m) {
      j[std::string(kReportModes[m])] = {{"token_f1", opt(row.token_f1[m])},
                                         {"lcs_f1", opt(row.lcs_f1[m])},
                                         {"perplexity", opt(row.perplexity[m])},
                                         {"train_presentations", row.presentations[m]}};
    }
    j["delta_curriculum_vs_baseline"] = opt(row.delta_vs_baseline);
    j["delta_curriculum_vs_standard"] = opt(row.delta_vs_standard);
    return j;
  };
  cmp.summary["kind"] = "comparison";
  cmp.summary["primary_metric"] = "token_f1";
  cmp.summary["units"] = "percent";
  cmp.summary["columns"] = kReportColumns;
  cmp.summary["eval_set_hash"] = cmp.eval_set_hash;
  cmp.summary["runs"] = nlohmann::ordered_json::array();
  for (const auto& row : cmp.rows) cmp.summary["runs"].push_back(row_json(row));
  if (cmp.median) cmp.summary["median"] = row_json(*cmp.median);

  std::ostringstream csv;
  csv << "mode,metric,value,tier,run\n";
  for (const auto& r : reports) {
    csv << r.mode << ",token_f1," << r.token_f1 << ",all," << r.run << "\n";
    csv << r.mode << ",lcs_f1," << r.lcs_f1 << ",all," << r.run << "\n";
    csv << r.mode << ",perplexity," << r.perplexity << ",all," << r.run << "\n";
    for (const auto& [tier, t] : r.tiers) {
      csv << r.mode << ",token_f1," << t.token_f1 << "," << tier << "," << r.run << "\n";
      csv << r.mode << ",lcs_f1," << t.lcs_f1 << "," << tier << "," << r.run << "\n";
    }
  }
  cmp.csv = csv.str();
  return cmp;
}

}  // namespace sevcl
