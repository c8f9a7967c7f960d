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

// Arabic text normalization: NFC, diacritic/tatweel removal, letter folding,
// punctuation removal and whitespace collapse. Every function here is pure and
// total over valid Unicode input.

#include <unicode/normalizer2.h>
#include <unicode/uchar.h>
#include <unicode/unistr.h>

#include <string>
#include <string_view>
#include <vector>

#include "sevcl/utf8.hpp"

namespace sevcl::arabic {

inline constexpr char32_t kTatweel = U'ـ';

// Harakat, tanween, shadda, sukun, the extended mark block U+0653..U+065F,
// superscript alef and tatweel.
inline constexpr bool is_diacritic(char32_t cp) {
  return (cp >= 0x064B && cp <= 0x065F) || cp == 0x0670 || cp == kTatweel;
}

inline constexpr char32_t fold_letter(char32_t cp) {
  switch (cp) {
    case U'آ':  // alef with madda
    case U'أ':  // alef with hamza above
    case U'إ':  // alef with hamza below
    case U'ٱ':  // alef wasla
      return U'ا';
    case U'ى':  // alef maqsura
      return U'ي';
    case U'ة':  // ta marbuta
      return U'ه';
    case U'ؤ':  // waw with hamza
      return U'و';
    case U'ئ':  // ya with hamza
      return U'ي';
    default:
      return cp;
  }
}

inline bool is_punctuation(char32_t cp) {
  if (cp == U'،' || cp == U'؛' || cp == U'؟') {
    return true;
  }
  return (U_GET_GC_MASK(static_cast<UChar32>(cp)) & U_GC_P_MASK) != 0;
}

inline bool is_space(char32_t cp) {
  return u_isUWhiteSpace(static_cast<UChar32>(cp)) != 0;
}

inline std::string nfc(std::string_view text) {
  UErrorCode status = U_ZERO_ERROR;
  const icu::Normalizer2* normalizer = icu::Normalizer2::getNFCInstance(status);
  if (U_FAILURE(status)) {
    return std::string(text);
  }
  icu::UnicodeString source = icu::UnicodeString::fromUTF8(
      icu::StringPiece(text.data(), static_cast<int32_t>(text.size())));
  icu::UnicodeString composed = normalizer->normalize(source, status);
  if (U_FAILURE(status)) {
    return std::string(text);
  }
  std::string out;
  composed.toUTF8String(out);
  return out;
}

inline std::string strip_diacritics(std::string_view text) {
  std::u32string cps = utf8::decode(text);
  std::erase_if(cps, is_diacritic);
  return utf8::encode(cps);
}

inline std::string normalize_letters(std::string_view text) {
  std::u32string cps = utf8::decode(text);
  for (char32_t& cp : cps) {
    cp = fold_letter(cp);
  }
  return utf8::encode(cps);
}

inline std::string strip_punctuation(std::string_view text) {
  std::u32string cps = utf8::decode(text);
  for (char32_t& cp : cps) {
    if (is_punctuation(cp)) {
      cp = U' ';
    }
  }
  return utf8::encode(cps);
}

inline std::string collapse_whitespace(std::string_view text) {
  std::u32string out;
  bool pending_space = false;
  for (char32_t cp : utf8::decode(text)) {
    if (is_space(cp)) {
      pending_space = !out.empty();
      continue;
    }
    if (pending_space) {
      out.push_back(U' ');
      pending_space = false;
    }
    out.push_back(cp);
  }
  return utf8::encode(out);
}

namespace detail {

inline std::string normalize_once(std::string_view text) {
  std::string s = nfc(text);
  s = strip_diacritics(s);
  s = normalize_letters(s);
  s = strip_punctuation(s);
  return collapse_whitespace(s);
}

}  // namespace detail

/// Full normalization pipeline. Removing a starter such as tatweel can leave a
/// base letter adjacent to a combining mark that NFC would compose, so the pass
/// is repeated until it reaches a fixed point; that makes the result idempotent.
inline std::string normalize(std::string_view text) {
  std::string current = detail::normalize_once(text);
  for (int i = 0; i < 8; ++i) {
    std::string next = detail::normalize_once(current);
    if (next == current) {
      break;
    }
    current = std::move(next);
  }
  return current;
}

/// Splits a normalized string on single spaces.
inline std::vector<std::string> tokenize_whitespace(std::string_view normalized) {
  std::vector<std::string> tokens;
  std::size_t start = 0;
  while (start < normalized.size()) {
    std::size_t end = normalized.find(' ', start);
    if (end == std::string_view::npos) {
      end = normalized.size();
    }
    if (end > start) {
      tokens.emplace_back(normalized.substr(start, end - start));
    }
    start = end + 1;
  }
  return tokens;
}

inline std::string join_tokens(const std::vector<std::string>& tokens) {
  std::string out;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (i > 0) {
      out.push_back(' ');
    }
    out += tokens[i];
  }
  return out;
}

}  // namespace sevcl::arabic
