#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace mvae {

// Every failure the toolkit reports maps onto one of these categories. The
// CLI turns the category into its process exit code.
enum class ErrorCategory : int {
  InvalidArgument = 2,
  Io = 3,
  Format = 4,
  UnsupportedFormat = 5,
  Decode = 6,
  Config = 7,
  Verification = 8,
  UnfillableBlock = 9,
  Numerical = 10,
  UnsupportedShape = 11,
};

inline const char* category_name(ErrorCategory c) {
  switch (c) {
    case ErrorCategory::InvalidArgument: return "invalid-argument";
    case ErrorCategory::Io: return "io";
    case ErrorCategory::Format: return "format";
    case ErrorCategory::UnsupportedFormat: return "unsupported-format";
    case ErrorCategory::Decode: return "decode";
    case ErrorCategory::Config: return "config";
    case ErrorCategory::Verification: return "verification";
    case ErrorCategory::UnfillableBlock: return "unfillable-block";
    case ErrorCategory::Numerical: return "numerical";
    case ErrorCategory::UnsupportedShape: return "unsupported-shape";
  }
  return "unknown";
}

class Error : public std::runtime_error {
 public:
  Error(ErrorCategory category, const std::string& what)
      : std::runtime_error(what), category_(category) {}

  ErrorCategory category() const noexcept { return category_; }
  int exit_code() const noexcept { return static_cast<int>(category_); }

 private:
  ErrorCategory category_;
};

struct InvalidArgument : Error {
  explicit InvalidArgument(const std::string& w) : Error(ErrorCategory::InvalidArgument, w) {}
};

struct IoError : Error {
  explicit IoError(const std::string& w) : Error(ErrorCategory::Io, w) {}
};

// Malformed file contents. `line` is 1-based, 0 when not line-oriented.
struct FormatError : Error {
  FormatError(const std::string& w, std::size_t line = 0)
      : Error(ErrorCategory::Format, line ? "line " + std::to_string(line) + ": " + w : w),
        line(line) {}
  std::size_t line;
};

struct UnsupportedFormat : Error {
  explicit UnsupportedFormat(const std::string& w) : Error(ErrorCategory::UnsupportedFormat, w) {}
};

struct DecodeError : Error {
  DecodeError(const std::string& w, std::size_t offset)
      : Error(ErrorCategory::Decode, "offset " + std::to_string(offset) + ": " + w),
        offset(offset) {}
  std::size_t offset;
};

struct ConfigError : Error {
  explicit ConfigError(const std::string& w) : Error(ErrorCategory::Config, w) {}
};

struct VerificationFailure : Error {
  explicit VerificationFailure(const std::string& w) : Error(ErrorCategory::Verification, w) {}
};

struct UnfillableBlock : Error {
  explicit UnfillableBlock(std::size_t block_size)
      : Error(ErrorCategory::UnfillableBlock,
              "no semantic NOP sequence of " + std::to_string(block_size) + " bytes"),
        block_size(block_size) {}
  std::size_t block_size;
};

struct NumericalFailure : Error {
  NumericalFailure(const std::string& w, std::size_t step)
      : Error(ErrorCategory::Numerical, "step " + std::to_string(step) + ": " + w), step(step) {}
  std::size_t step;
};

struct UnsupportedShape : Error {
  explicit UnsupportedShape(const std::string& w) : Error(ErrorCategory::UnsupportedShape, w) {}
};

}  // namespace mvae
