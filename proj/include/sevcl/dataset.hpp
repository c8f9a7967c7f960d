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

// Question/answer records: JSONL I/O, annotation, nested stage partitioning,
// stratified train/eval splitting and a templated synthetic corpus.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "sevcl/arabic_text.hpp"
#include "sevcl/errors.hpp"
#include "sevcl/rng.hpp"
#include "sevcl/severity.hpp"

namespace sevcl {

using RecordId = std::uint64_t;

struct QaRecord {
  RecordId id = 0;
  std::string question;
  std::string answer;
  std::optional<Severity> severity;

  friend bool operator==(const QaRecord&, const QaRecord&) = default;
};

struct SeverityStats {
  std::size_t mild = 0;
  std::size_t moderate = 0;
  std::size_t critical = 0;
  std::size_t total = 0;  // labeled records; always mild + moderate + critical
  std::size_t unlabeled = 0;

  std::size_t count(Severity s) const {
    switch (s) {
      case Severity::kMild: return mild;
      case Severity::kModerate: return moderate;
      case Severity::kCritical: return critical;
    }
    return 0;
  }

  friend bool operator==(const SeverityStats&, const SeverityStats&) = default;
};

inline SeverityStats stats(const std::vector<QaRecord>& records) {
  SeverityStats s;
  for (const auto& r : records) {
    if (!r.severity) {
      ++s.unlabeled;
      continue;
    }
    switch (*r.severity) {
      case Severity::kMild: ++s.mild; break;
      case Severity::kModerate: ++s.moderate; break;
      case Severity::kCritical: ++s.critical; break;
    }
    ++s.total;
  }
  return s;
}

// ---------------------------------------------------------------------------
// JSONL

inline QaRecord record_from_json(const nlohmann::json& obj, RecordId id, std::size_t line_no) {
  auto where = [&] { return "line " + std::to_string(line_no); };
  if (!obj.is_object()) {
    fail(ErrorKind::kParse, where() + ": expected a JSON object");
  }
  QaRecord r;
  r.id = id;
  for (const char* key : {"question", "answer"}) {
    if (!obj.contains(key) || !obj.at(key).is_string()) {
      fail(ErrorKind::kParse, where() + ": missing string field '" + key + "'");
    }
  }
  r.question = obj.at("question").get<std::string>();
  r.answer = obj.at("answer").get<std::string>();
  if (obj.contains("severity") && !obj.at("severity").is_null()) {
    const auto& sev = obj.at("severity");
    std::optional<Severity> parsed;
    if (sev.is_string()) parsed = parse_severity(sev.get<std::string>());
    if (!parsed) {
      fail(ErrorKind::kParse, where() + ": unknown severity " + sev.dump());
    }
    r.severity = parsed;
  }
  return r;
}

inline nlohmann::ordered_json record_to_json(const QaRecord& r) {
  nlohmann::ordered_json obj;
  obj["question"] = r.question;
  obj["answer"] = r.answer;
  if (r.severity) {
    obj["severity"] = std::string(to_string(*r.severity));
  }
  return obj;
}

inline std::vector<QaRecord> parse_jsonl(std::istream& in) {
  std::vector<QaRecord> records;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") == std::string::npos) continue;
    nlohmann::json obj;
    try {
      obj = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      fail(ErrorKind::kParse, "line " + std::to_string(line_no) + ": " + e.what());
    }
    records.push_back(record_from_json(obj, records.size(), line_no));
  }
  return records;
}

inline std::vector<QaRecord> load_jsonl(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    fail(ErrorKind::kIo, "cannot open '" + path + "'");
  }
  try {
    return parse_jsonl(in);
  } catch (const Error& e) {
    throw Error(e.kind(), path + ": " + std::string(e.what()).substr(to_string(e.kind()).size() + 2));
  }
}

inline void write_jsonl(std::ostream& out, const std::vector<QaRecord>& records) {
  for (const auto& r : records) {
    out << record_to_json(r).dump() << '\n';
  }
}

inline void write_jsonl(const std::vector<QaRecord>& records, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) {
    fail(ErrorKind::kIo, "cannot write '" + path + "'");
  }
  write_jsonl(out, records);
}

// ---------------------------------------------------------------------------
// Annotation

/// Labels every record from its question. Existing labels survive only when
/// `keep_existing` is set.
inline SeverityStats annotate_dataset(std::vector<QaRecord>& records, const Lexicon& lexicon,
                                      bool keep_existing = false) {
  for (auto& r : records) {
    if (keep_existing && r.severity) continue;
    r.severity = classify(r.question, lexicon);
  }
  return stats(records);
}

// ---------------------------------------------------------------------------
// Stage partition

struct StagePartition {
  std::vector<RecordId> d1;  // mild
  std::vector<RecordId> d2;  // mild + moderate
  std::vector<RecordId> d3;  // everything

  const std::vector<RecordId>& stage(int k) const {
    switch (k) {
      case 1: return d1;
      case 2: return d2;
      default: return d3;
    }
  }
};

/// Cumulative severity stages. Ids are sorted ascending within each stage.
inline StagePartition stage_split(const std::vector<QaRecord>& records) {
  StagePartition p;
  for (const auto& r : records) {
    if (!r.severity) {
      fail(ErrorKind::kMissingLabel, "record " + std::to_string(r.id) + " has no severity label");
    }
    if (*r.severity == Severity::kMild) p.d1.push_back(r.id);
    if (*r.severity <= Severity::kModerate) p.d2.push_back(r.id);
    p.d3.push_back(r.id);
  }
  for (auto* v : {&p.d1, &p.d2, &p.d3}) std::sort(v->begin(), v->end());
  return p;
}

// ---------------------------------------------------------------------------
// Train/eval split

struct Split {
  std::vector<QaRecord> train;
  std::vector<QaRecord> eval;
};

/// Stratified by label (unlabeled records form their own stratum). Each stratum
/// is shuffled with a seeded RNG and cut at floor(n * train_fraction); both
/// outputs keep the input order.
inline Split train_eval_split(const std::vector<QaRecord>& records, double train_fraction,
                              std::uint64_t seed) {
  if (!(train_fraction > 0.0 && train_fraction < 1.0)) {
    fail(ErrorKind::kInvalidArgument, "train_fraction must lie in (0, 1)");
  }
  std::map<int, std::vector<std::size_t>> strata;
  for (std::size_t i = 0; i < records.size(); ++i) {
    const int key = records[i].severity ? static_cast<int>(*records[i].severity) : -1;
    strata[key].push_back(i);
  }
  std::vector<bool> in_train(records.size(), false);
  Rng rng(derive_seed(seed, "train_eval_split"));
  for (auto& [key, indices] : strata) {
    if (indices.size() < 2) {
      std::cerr << "warning: stratum '"
                << (key < 0 ? std::string("unlabeled") : std::string(to_string(static_cast<Severity>(key))))
                << "' has fewer than 2 records; all go to train\n";
      for (std::size_t i : indices) in_train[i] = true;
      continue;
    }
    rng.shuffle(indices);
    const auto n_train = static_cast<std::size_t>(
        std::floor(static_cast<double>(indices.size()) * train_fraction));
    for (std::size_t j = 0; j < n_train; ++j) in_train[indices[j]] = true;
  }
  Split split;
  for (std::size_t i = 0; i < records.size(); ++i) {
    (in_train[i] ? split.train : split.eval).push_back(records[i]);
  }
  return split;
}

inline std::vector<QaRecord> select(const std::vector<QaRecord>& records,
                                    const std::vector<RecordId>& ids) {
  std::map<RecordId, const QaRecord*> by_id;
  for (const auto& r : records) by_id[r.id] = &r;
  std::vector<QaRecord> out;
  out.reserve(ids.size());
  for (RecordId id : ids) {
    auto it = by_id.find(id);
    if (it == by_id.end()) {
      fail(ErrorKind::kInvalidArgument, "unknown record id " + std::to_string(id));
    }
    out.push_back(*it->second);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Synthetic corpus

namespace synth_detail {

inline const std::vector<std::string>& openers() {
  static const std::vector<std::string> v{"عندي", "أعاني من", "لدي", "ابني عنده", "أمي عندها"};
  return v;
}

inline const std::vector<std::string>& durations() {
  static const std::vector<std::string> v{"", "منذ يومين", "منذ أسبوع", "من الصباح"};
  return v;
}

// The question type selects which of the tier's answers applies, so the reply
// is a function of (tier, question type) and fully learnable.
inline const std::vector<std::string>& asks() {
  static const std::vector<std::string> v{"ما العلاج؟", "ماذا أفعل؟", "هل هو خطير؟"};
  return v;
}

inline const std::array<std::vector<std::string>, 3>& answers() {
  static const std::array<std::vector<std::string>, 3> v{{
      {"استخدم مسكن خفيف وارتح", "اشرب سوائل دافئة ونم جيدا", "لا داعي للقلق فالأمر بسيط"},
      {"تحتاج كشف وتحليل عند الطبيب", "راجع الطبيب خلال يومين", "الأمر يحتاج متابعة طبية"},
      {"اتصل بالإسعاف حالا", "توجه للطوارئ فورا", "نعم هذه حالة طارئة وخطيرة"},
  }};
  return v;
}

inline const std::vector<std::string_view>& symptoms(Severity s) {
  static const auto make = [](const auto& arr) {
    return std::vector<std::string_view>(arr.begin(), arr.end());
  };
  static const std::array<std::vector<std::string_view>, 3> v{
      make(kDefaultLexicon.mild), make(kDefaultLexicon.moderate), make(kDefaultLexicon.critical)};
  return v[tier_index(s)];
}

}  // namespace synth_detail

/// Templated corpus with `n_per_tier` records per severity tier, tier-major
/// order, labels attached. Every question re-classifies to its tier under the
/// default lexicon.
inline std::vector<QaRecord> synth_generate(std::size_t n_per_tier, std::uint64_t seed) {
  using namespace synth_detail;
  if (n_per_tier < 1) {
    fail(ErrorKind::kInvalidArgument, "n_per_tier must be >= 1");
  }
  Rng rng(derive_seed(seed, "synth"));
  const Lexicon& lexicon = default_lexicon();
  std::vector<QaRecord> out;
  out.reserve(3 * n_per_tier);
  for (Severity tier : kAllSeverities) {
    const auto& pool = symptoms(tier);
    for (std::size_t i = 0; i < n_per_tier; ++i) {
      QaRecord r;
      // Redraw in the (not expected) case the template words shift the label.
      for (;;) {
        const std::string& opener = rng.pick(openers());
        const std::string_view symptom = pool[static_cast<std::size_t>(rng.below(pool.size()))];
        const std::string& duration = rng.pick(durations());
        const auto ask = static_cast<std::size_t>(rng.below(asks().size()));
        std::string q = opener + " " + std::string(symptom);
        if (!duration.empty()) q += " " + duration;
        q += " " + asks()[ask];
        if (classify(q, lexicon) == tier) {
          r.question = std::move(q);
          r.answer = answers()[tier_index(tier)][ask];
          break;
        }
      }
      r.id = out.size();
      r.severity = tier;
      out.push_back(std::move(r));
    }
  }
  return out;
}

}  // namespace sevcl
