#pragma once

#include <stdexcept>
#include <string>

namespace dsct {

enum class ErrorCategory {
    config,         // bad configuration, schema violation, invalid argument
    io,             // file not found, short read, bad magic
    dimension,      // operand shape mismatch
    numeric,        // degenerate geometry, divergence, budget exceeded
    nonconvergence, // iteration budget exhausted before tolerance
};

inline const char* to_string(ErrorCategory c) {
    switch (c) {
    case ErrorCategory::config: return "config";
    case ErrorCategory::io: return "io";
    case ErrorCategory::dimension: return "dimension";
    case ErrorCategory::numeric: return "numeric";
    case ErrorCategory::nonconvergence: return "nonconvergence";
    }
    return "unknown";
}

class Error : public std::runtime_error {
  public:
    Error(ErrorCategory category, const std::string& message)
        : std::runtime_error(message), category_(category) {}

    ErrorCategory category() const { return category_; }

  private:
    ErrorCategory category_;
};

} // namespace dsct
