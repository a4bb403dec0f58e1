// Copyright 2026 The fashionmt Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <stdexcept>
#include <string>

namespace fashionmt {

// Machine-parseable failure classes. The CLI prints the class name on the
// single error line and maps each one to a distinct exit code.
enum class ErrorKind {
  kShapeMismatch,
  kInvalidAxis,
  kInvalidArgument,
  kTapeState,
  kNonFinite,
  kUnknownTask,
  kMissingTeacher,
  kConfigSchema,
  kIo,
  kFormat,
  kInfeasible,
  kFrozen,
  kPartialBuffer,
  kUnknownGroup,
  kDegenerateGradient,
};

const char* error_kind_name(ErrorKind kind);
int error_exit_code(ErrorKind kind);

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(what), kind_(kind) {}

  ErrorKind kind() const { return kind_; }

 private:
  ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& what) {
  throw Error(kind, what);
}

}  // namespace fashionmt
