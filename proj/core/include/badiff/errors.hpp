#pragma once
#include <stdexcept>
#include <string>

namespace badiff {

// Shape/precondition violations map to std::invalid_argument.

// Malformed files, bad streams, version mismatches.
struct format_error : std::runtime_error {
  explicit format_error(const std::string& msg) : std::runtime_error(msg) {}
};

// NaN/Inf encountered, diverging optimization.
struct numeric_error : std::runtime_error {
  explicit numeric_error(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace badiff
