// Copyright 2026 The PLPCL Authors.
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

namespace plpcl {

enum class ErrorCode {
  ZeroRow,
  ZeroColumn,
  ShapeMismatch,
  InvalidDims,
  InvalidDropout,
  EmptyBatch,
  TooFewClusters,
  LabelOutOfRange,
  IndexOutOfRange,
  ConflictingSupervision,
  NoLabeledData,
  ClassCountMismatch,
  DimsMismatch,
  LengthMismatch,
  TooFewSamples,
  ParseError,
  DimMismatch,
  UnknownSplit,
  NoClasses,
  InvalidParams,
  InvalidConfig,
  IoError,
};

constexpr std::string_view error_name(ErrorCode code) {
  switch (code) {
    case ErrorCode::ZeroRow: return "ZeroRow";
    case ErrorCode::ZeroColumn: return "ZeroColumn";
    case ErrorCode::ShapeMismatch: return "ShapeMismatch";
    case ErrorCode::InvalidDims: return "InvalidDims";
    case ErrorCode::InvalidDropout: return "InvalidDropout";
    case ErrorCode::EmptyBatch: return "EmptyBatch";
    case ErrorCode::TooFewClusters: return "TooFewClusters";
    case ErrorCode::LabelOutOfRange: return "LabelOutOfRange";
    case ErrorCode::IndexOutOfRange: return "IndexOutOfRange";
    case ErrorCode::ConflictingSupervision: return "ConflictingSupervision";
    case ErrorCode::NoLabeledData: return "NoLabeledData";
    case ErrorCode::ClassCountMismatch: return "ClassCountMismatch";
    case ErrorCode::DimsMismatch: return "DimsMismatch";
    case ErrorCode::LengthMismatch: return "LengthMismatch";
    case ErrorCode::TooFewSamples: return "TooFewSamples";
    case ErrorCode::ParseError: return "ParseError";
    case ErrorCode::DimMismatch: return "DimMismatch";
    case ErrorCode::UnknownSplit: return "UnknownSplit";
    case ErrorCode::NoClasses: return "NoClasses";
    case ErrorCode::InvalidParams: return "InvalidParams";
    case ErrorCode::InvalidConfig: return "InvalidConfig";
    case ErrorCode::IoError: return "IoError";
  }
  return "Unknown";
}

/// Every failure raised by the library carries one of the codes above so the
/// CLI can report the error name verbatim.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& detail)
      : std::runtime_error(std::string(error_name(code)) + ": " + detail),
        code_(code) {}

  ErrorCode code() const noexcept { return code_; }
  std::string_view name() const noexcept { return error_name(code_); }

 private:
  ErrorCode code_;
};

}  // namespace plpcl
