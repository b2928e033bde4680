// Copyright 2026 The CRG Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace crg {

enum class ErrorCode {
  // treebank
  UnbalancedBrackets,
  EmptyNode,
  BadLabel,
  UnexpectedToken,
  // crg-graph
  DuplicateCaptionId,
  UnknownConcept,
  SchemaMismatch,
  Io,
  // compdiv
  EmptyPool,
  KTooLarge,
  // tensor-autodiff
  ShapeMismatch,
  NonFinite,
  NonScalarLoss,
  // composer-net
  UnknownWord,
  ArityMismatch,
  // training-eval
  BatchTooSmall,
  MissingFeatures,
  InvalidConfig,
};

inline std::string_view error_code_name(ErrorCode code) {
  switch (code) {
    case ErrorCode::UnbalancedBrackets: return "UnbalancedBrackets";
    case ErrorCode::EmptyNode: return "EmptyNode";
    case ErrorCode::BadLabel: return "BadLabel";
    case ErrorCode::UnexpectedToken: return "UnexpectedToken";
    case ErrorCode::DuplicateCaptionId: return "DuplicateCaptionId";
    case ErrorCode::UnknownConcept: return "UnknownConcept";
    case ErrorCode::SchemaMismatch: return "SchemaMismatch";
    case ErrorCode::Io: return "Io";
    case ErrorCode::EmptyPool: return "EmptyPool";
    case ErrorCode::KTooLarge: return "KTooLarge";
    case ErrorCode::ShapeMismatch: return "ShapeMismatch";
    case ErrorCode::NonFinite: return "NonFinite";
    case ErrorCode::NonScalarLoss: return "NonScalarLoss";
    case ErrorCode::UnknownWord: return "UnknownWord";
    case ErrorCode::ArityMismatch: return "ArityMismatch";
    case ErrorCode::BatchTooSmall: return "BatchTooSmall";
    case ErrorCode::MissingFeatures: return "MissingFeatures";
    case ErrorCode::InvalidConfig: return "InvalidConfig";
  }
  return "Unknown";
}

/// Every failure raised by the library carries one of the codes above.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(error_code_name(code)) + ": " + what),
        code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace crg
