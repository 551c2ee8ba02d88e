#pragma once

#include <string>
#include <vector>

namespace gfp::cli {

enum ExitCode : int {
  kOk = 0,
  kFailure = 1,
  kUsage = 2,
  kIo = 3,
  kFormat = 4,
  kNumerical = 5,
};

// Parses and runs one subcommand; logs go to stderr. Never throws.
int run(const std::vector<std::string>& args);
int run(int argc, const char* const* argv);

}  // namespace gfp::cli
