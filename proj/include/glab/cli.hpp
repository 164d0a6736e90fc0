// glab command-line entry point: world, train, sample, eval, sweep, repro.
#pragma once

#include <string>
#include <vector>

namespace glab::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;
inline constexpr int kExitValidation = 2;
inline constexpr int kExitNumerical = 3;

// Parses and runs one command; errors are reported on stderr and mapped to exit codes.
int run_cli(int argc, const char* const* argv);
int run_cli(const std::vector<std::string>& args);  // args exclude the program name

}  // namespace glab::cli
