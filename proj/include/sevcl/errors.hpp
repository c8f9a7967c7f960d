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

#include <stdexcept>
#include <string>
#include <string_view>

namespace sevcl {

enum class ErrorKind {
  kParse,
  kIo,
  kInvalidArgument,
  kDuplicateAcrossTiers,
  kMissingLabel,
  kShapeMismatch,
  kAllMasked,
  kAlreadyConsumed,
  kNonScalarLoss,
  kNonFiniteGradient,
  kEmptyCorpus,
  kContextOverflow,
  kUnknownTarget,
  kEmptyStage,
  kVersionMismatch,
  kCorruptFile,
  kMissingBase,
  kEmptyEvalSet,
  kEvalSetMismatch,
};

inline constexpr std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::kParse: return "ParseError";
    case ErrorKind::kIo: return "IoError";
    case ErrorKind::kInvalidArgument: return "InvalidArgument";
    case ErrorKind::kDuplicateAcrossTiers: return "DuplicateAcrossTiers";
    case ErrorKind::kMissingLabel: return "MissingLabel";
    case ErrorKind::kShapeMismatch: return "ShapeMismatch";
    case ErrorKind::kAllMasked: return "AllMasked";
    case ErrorKind::kAlreadyConsumed: return "AlreadyConsumed";
    case ErrorKind::kNonScalarLoss: return "NonScalarLoss";
    case ErrorKind::kNonFiniteGradient: return "NonFiniteGradient";
    case ErrorKind::kEmptyCorpus: return "EmptyCorpus";
    case ErrorKind::kContextOverflow: return "ContextOverflow";
    case ErrorKind::kUnknownTarget: return "UnknownTarget";
    case ErrorKind::kEmptyStage: return "EmptyStage";
    case ErrorKind::kVersionMismatch: return "VersionMismatch";
    case ErrorKind::kCorruptFile: return "CorruptFile";
    case ErrorKind::kMissingBase: return "MissingBase";
    case ErrorKind::kEmptyEvalSet: return "EmptyEvalSet";
    case ErrorKind::kEvalSetMismatch: return "EvalSetMismatch";
  }
  return "Error";
}

// All library failures are reported through this one exception type; `kind()`
// lets callers branch without parsing the message.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(std::string(to_string(kind)) + ": " + message), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& message) {
  throw Error(kind, message);
}

}  // namespace sevcl
