#pragma once

#include <string>
#include <vector>

namespace tokensieve::cli {

inline constexpr const char* kToolVersion = "0.3.0";

// Runs one subcommand. Returns the process exit status: 0 on success, 1 on a
// failed stage, 2 on usage errors and missing or unreadable inputs.
int run(const std::vector<std::string>& args);

}  // namespace tokensieve::cli
