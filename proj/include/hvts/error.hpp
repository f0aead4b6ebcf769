#pragma once

#include <stdexcept>
#include <string>

namespace hvts {

// Error taxonomy shared by the library and the command line tool.  Each
// category maps to a distinct process exit code in the CLI.
enum class ErrorCategory {
  Usage,      // bad flags or arguments
  Input,      // missing, truncated or corrupt input files
  Shape,      // tensor or model shape incompatibilities
  Numerical,  // NaN/Inf or invalid numeric configuration
  Io,         // filesystem failures on output paths
  Internal,   // invariant violations (bugs)
};

class Error : public std::runtime_error {
 public:
  Error(ErrorCategory category, const std::string& message)
      : std::runtime_error(message), category_(category) {}

  ErrorCategory category() const { return category_; }

  static const char* category_name(ErrorCategory c) {
    switch (c) {
      case ErrorCategory::Usage: return "usage";
      case ErrorCategory::Input: return "input";
      case ErrorCategory::Shape: return "shape";
      case ErrorCategory::Numerical: return "numerical";
      case ErrorCategory::Io: return "io";
      case ErrorCategory::Internal: return "internal";
    }
    return "unknown";
  }

  static int exit_code(ErrorCategory c) {
    switch (c) {
      case ErrorCategory::Usage: return 2;
      case ErrorCategory::Input: return 3;
      case ErrorCategory::Shape: return 4;
      case ErrorCategory::Numerical: return 5;
      case ErrorCategory::Io: return 6;
      case ErrorCategory::Internal: return 10;
    }
    return 10;
  }

 private:
  ErrorCategory category_;
};

}  // namespace hvts
