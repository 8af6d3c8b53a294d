#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace strug::cli {

constexpr int kExitOk = 0;
constexpr int kExitDataError = 1;
constexpr int kExitUsage = 2;

/// Environment variable naming the default --config file.
constexpr const char* kConfigEnv = "STRUG_CONFIG";

/// Runs one subcommand. `args` excludes the program name.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace strug::cli
