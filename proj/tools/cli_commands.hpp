#pragma once

#include <ostream>

namespace groundfuse::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitValidation = 1;
inline constexpr int kExitUsage = 2;

/// Parses and runs one subcommand. Diagnostics go to `err`.
int run(int argc, const char* const* argv, std::ostream& err);

}  // namespace groundfuse::cli
