#pragma once

#include <stdexcept>
#include <string>

namespace gcseg {

// Exit-code taxonomy shared by the CLI: 0 ok, 2 usage, 3 format, 4 inconsistent
// state, 5 numeric failure.
enum class ErrorClass { usage = 2, format = 3, inconsistent_state = 4, numeric = 5 };

class Error : public std::runtime_error {
public:
  Error(ErrorClass cls, const std::string& what) : std::runtime_error(what), cls_(cls) {}

  ErrorClass error_class() const noexcept { return cls_; }
  int exit_code() const noexcept { return static_cast<int>(cls_); }

  const char* class_name() const noexcept {
    switch (cls_) {
      case ErrorClass::usage: return "usage";
      case ErrorClass::format: return "format";
      case ErrorClass::inconsistent_state: return "inconsistent-state";
      case ErrorClass::numeric: return "numeric";
    }
    return "unknown";
  }

private:
  ErrorClass cls_;
};

struct InvalidArgument : Error {
  explicit InvalidArgument(const std::string& w) : Error(ErrorClass::usage, w) {}
};

struct FormatError : Error {
  FormatError(const std::string& w, long long offset = -1)
      : Error(ErrorClass::format,
              offset >= 0 ? w + " (at byte offset " + std::to_string(offset) + ")" : w),
        byte_offset(offset) {}
  long long byte_offset;
};

struct IoError : Error {
  explicit IoError(const std::string& w) : Error(ErrorClass::format, w) {}
};

struct CorruptCheckpoint : Error {
  explicit CorruptCheckpoint(const std::string& w) : Error(ErrorClass::format, w) {}
};

struct InconsistentState : Error {
  explicit InconsistentState(const std::string& w) : Error(ErrorClass::inconsistent_state, w) {}
};

struct NumericError : Error {
  explicit NumericError(const std::string& w) : Error(ErrorClass::numeric, w) {}
};

// Surface metrics are undefined on an empty mask; callers report them as missing.
struct UndefinedMetric : Error {
  explicit UndefinedMetric(const std::string& w) : Error(ErrorClass::numeric, w) {}
};

}  // namespace gcseg
