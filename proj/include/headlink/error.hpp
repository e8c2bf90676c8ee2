// Copyright 2026 The Headlink Authors.
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

namespace headlink {

enum class ErrorCode {
  InvalidShape,
  NonFiniteInput,
  InvalidArgument,
  FormatError,
  MissingStream,
  InsufficientSamples,
  EmptyGraph,
  UnknownHead,
  SelectionInfeasible,
  PlanMismatch,
};

std::string_view to_string(ErrorCode code);

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what),
        code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

inline std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::InvalidShape: return "InvalidShape";
    case ErrorCode::NonFiniteInput: return "NonFiniteInput";
    case ErrorCode::InvalidArgument: return "InvalidArgument";
    case ErrorCode::FormatError: return "FormatError";
    case ErrorCode::MissingStream: return "MissingStream";
    case ErrorCode::InsufficientSamples: return "InsufficientSamples";
    case ErrorCode::EmptyGraph: return "EmptyGraph";
    case ErrorCode::UnknownHead: return "UnknownHead";
    case ErrorCode::SelectionInfeasible: return "SelectionInfeasible";
    case ErrorCode::PlanMismatch: return "PlanMismatch";
  }
  return "Unknown";
}

}  // namespace headlink
