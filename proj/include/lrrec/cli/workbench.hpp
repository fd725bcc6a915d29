#pragma once

#include <exception>

namespace lrrec::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitValidation = 2;
inline constexpr int kExitBackend = 3;
inline constexpr int kExitNumeric = 4;
inline constexpr int kExitOther = 1;

// Maps an error category to the process exit code. Missing prerequisites
// count as validation errors.
int exit_code_for(const std::exception& e);

// Parses arguments, runs one stage and returns the exit code. Never throws.
int run(int argc, const char* const* argv);

}  // namespace lrrec::cli
