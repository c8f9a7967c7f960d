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

// Rule-based severity annotation: normalized token-contiguous keyword matching
// over three tiers, resolved to the highest matched tier (Mild by default).

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <fstream>
#include <iostream>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "sevcl/arabic_text.hpp"
#include "sevcl/default_lexicon.hpp"
#include "sevcl/errors.hpp"

namespace sevcl {

enum class Severity : std::uint8_t { kMild = 0, kModerate = 1, kCritical = 2 };

inline constexpr std::array<Severity, 3> kAllSeverities{Severity::kMild, Severity::kModerate,
                                                        Severity::kCritical};

inline constexpr std::string_view to_string(Severity s) {
  switch (s) {
    case Severity::kMild: return "mild";
    case Severity::kModerate: return "moderate";
    case Severity::kCritical: return "critical";
  }
  return "mild";
}

inline std::optional<Severity> parse_severity(std::string_view text) {
  if (text == "mild") return Severity::kMild;
  if (text == "moderate") return Severity::kModerate;
  if (text == "critical") return Severity::kCritical;
  return std::nullopt;
}

inline constexpr std::size_t tier_index(Severity s) { return static_cast<std::size_t>(s); }

using Phrase = std::vector<std::string>;

class Lexicon {
 public:
  Lexicon() = default;

  /// Normalizes, tokenizes and deduplicates the given phrases. Throws
  /// DuplicateAcrossTiers when a folded phrase lands in two tiers.
  static Lexicon from_phrases(const std::vector<std::string>& critical,
                              const std::vector<std::string>& moderate,
                              const std::vector<std::string>& mild) {
    Lexicon lexicon;
    lexicon.add_tier(Severity::kCritical, critical);
    lexicon.add_tier(Severity::kModerate, moderate);
    lexicon.add_tier(Severity::kMild, mild);
    for (Severity s : kAllSeverities) {
      if (lexicon.tier(s).empty()) {
        std::cerr << "warning: lexicon tier '" << to_string(s) << "' is empty\n";
      }
    }
    return lexicon;
  }

  const std::vector<Phrase>& tier(Severity s) const { return tiers_[tier_index(s)]; }

  std::size_t size() const {
    return tiers_[0].size() + tiers_[1].size() + tiers_[2].size();
  }

 private:
  void add_tier(Severity severity, const std::vector<std::string>& phrases) {
    auto& tier = tiers_[tier_index(severity)];
    for (const auto& raw : phrases) {
      Phrase phrase = arabic::tokenize_whitespace(arabic::normalize(raw));
      if (phrase.empty()) {
        continue;
      }
      if (std::find(tier.begin(), tier.end(), phrase) != tier.end()) {
        continue;
      }
      for (Severity other : kAllSeverities) {
        if (other == severity) continue;
        const auto& o = tiers_[tier_index(other)];
        if (std::find(o.begin(), o.end(), phrase) != o.end()) {
          fail(ErrorKind::kDuplicateAcrossTiers,
               "'" + arabic::join_tokens(phrase) + "' appears in tiers " +
                   std::string(to_string(other)) + " and " + std::string(to_string(severity)));
        }
      }
      tier.push_back(std::move(phrase));
    }
  }

  std::array<std::vector<Phrase>, 3> tiers_;
};

inline Lexicon lexicon_from_json(const nlohmann::json& doc) {
  if (!doc.is_object()) {
    fail(ErrorKind::kParse, "lexicon document must be a JSON object");
  }
  auto read_tier = [&](const char* key) {
    if (!doc.contains(key) || !doc.at(key).is_array()) {
      fail(ErrorKind::kParse, std::string("lexicon is missing array '") + key + "'");
    }
    std::vector<std::string> out;
    for (const auto& item : doc.at(key)) {
      if (!item.is_string()) {
        fail(ErrorKind::kParse, std::string("non-string phrase in tier '") + key + "'");
      }
      out.push_back(item.get<std::string>());
    }
    return out;
  };
  return Lexicon::from_phrases(read_tier("critical"), read_tier("moderate"), read_tier("mild"));
}

inline Lexicon load_lexicon_text(std::string_view text) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    fail(ErrorKind::kParse, std::string("lexicon: ") + e.what());
  }
  return lexicon_from_json(doc);
}

inline Lexicon load_lexicon(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    fail(ErrorKind::kIo, "cannot open lexicon '" + path + "'");
  }
  std::stringstream buffer;
  buffer << in.rdbuf();
  return load_lexicon_text(buffer.str());
}

inline nlohmann::json default_lexicon_json() {
  nlohmann::json doc;
  auto tier = [](const auto& source) {
    nlohmann::json arr = nlohmann::json::array();
    for (auto phrase : source) arr.push_back(std::string(phrase));
    return arr;
  };
  doc["critical"] = tier(kDefaultLexicon.critical);
  doc["moderate"] = tier(kDefaultLexicon.moderate);
  doc["mild"] = tier(kDefaultLexicon.mild);
  return doc;
}

inline const Lexicon& default_lexicon() {
  static const Lexicon lexicon = lexicon_from_json(default_lexicon_json());
  return lexicon;
}

struct KeywordMatch {
  Phrase phrase;
  Severity tier;
  std::size_t offset;  // token index of the first phrase token
};

struct MatchResult {
  std::vector<KeywordMatch> matches;
  Severity resolved = Severity::kMild;
};

inline MatchResult match_keywords(const std::vector<std::string>& tokens, const Lexicon& lexicon) {
  MatchResult result;
  for (Severity s : kAllSeverities) {
    for (const Phrase& phrase : lexicon.tier(s)) {
      if (phrase.size() > tokens.size()) continue;
      for (std::size_t i = 0; i + phrase.size() <= tokens.size(); ++i) {
        if (std::equal(phrase.begin(), phrase.end(), tokens.begin() + static_cast<std::ptrdiff_t>(i))) {
          result.matches.push_back({phrase, s, i});
          result.resolved = std::max(result.resolved, s);
        }
      }
    }
  }
  return result;
}

inline Severity classify(std::string_view question, const Lexicon& lexicon) {
  return match_keywords(arabic::tokenize_whitespace(arabic::normalize(question)), lexicon).resolved;
}

}  // namespace sevcl
