/*
 Copyright 2026 The tightening Authors

 Licensed under the Apache License, Version 2.0 (the "License");
 you may not use this file except in compliance with the License.
 You may obtain a copy of the License at

      https://www.apache.org/licenses/LICENSE-2.0

 Unless required by applicable law or agreed to in writing, software
 distributed under the License is distributed on an "AS IS" BASIS,
 WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 See the License for the specific language governing permissions and
 limitations under the License.
*/

#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace tightening {

enum class ErrorKind {
  domain,
  shape,
  validation,
  model,
  selection_infeasible,
  infeasible_tightening,
  certification,
  propagation,
  accuracy,
  schedule,
  inward_control,
  interval_repair,
  parse,
  mismatch,
};

inline std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::domain: return "domain";
    case ErrorKind::shape: return "shape";
    case ErrorKind::validation: return "validation";
    case ErrorKind::model: return "model";
    case ErrorKind::selection_infeasible: return "selection-infeasible";
    case ErrorKind::infeasible_tightening: return "infeasible-tightening";
    case ErrorKind::certification: return "certification";
    case ErrorKind::propagation: return "propagation";
    case ErrorKind::accuracy: return "accuracy";
    case ErrorKind::schedule: return "schedule";
    case ErrorKind::inward_control: return "inward-control";
    case ErrorKind::interval_repair: return "interval-repair";
    case ErrorKind::parse: return "parse";
    case ErrorKind::mismatch: return "mismatch";
  }
  return "unknown";
}

/// Every failure raised by the library. `witness` carries a short
/// human-readable description of the offending sample when one exists.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what, std::string witness = {})
      : std::runtime_error(std::string(to_string(kind)) + ": " + what),
        kind_(kind),
        witness_(std::move(witness)) {}

  ErrorKind kind() const noexcept { return kind_; }
  const std::string& witness() const noexcept { return witness_; }

 private:
  ErrorKind kind_;
  std::string witness_;
};

}  // namespace tightening
