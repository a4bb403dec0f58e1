// Copyright 2026 The fashionmt Authors
// SPDX-License-Identifier: Apache-2.0

#include "fashionmt/error.hpp"

namespace fashionmt {

const char* error_kind_name(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::kShapeMismatch: return "shape_mismatch";
    case ErrorKind::kInvalidAxis: return "invalid_axis";
    case ErrorKind::kInvalidArgument: return "invalid_argument";
    case ErrorKind::kTapeState: return "tape_state";
    case ErrorKind::kNonFinite: return "non_finite";
    case ErrorKind::kUnknownTask: return "unknown_task";
    case ErrorKind::kMissingTeacher: return "missing_teacher";
    case ErrorKind::kConfigSchema: return "config_schema";
    case ErrorKind::kIo: return "io";
    case ErrorKind::kFormat: return "format";
    case ErrorKind::kInfeasible: return "infeasible";
    case ErrorKind::kFrozen: return "frozen";
    case ErrorKind::kPartialBuffer: return "partial_buffer";
    case ErrorKind::kUnknownGroup: return "unknown_group";
    case ErrorKind::kDegenerateGradient: return "degenerate_gradient";
  }
  return "unknown";
}

int error_exit_code(ErrorKind kind) {
  return 10 + static_cast<int>(kind);
}

}  // namespace fashionmt
