#pragma once

#include <string>
#include <vector>

namespace phrasal::cli {

// Exit codes: 0 success, 1 runtime failure, 2 usage error (bad flags,
// missing inputs, conflicting options).
inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;
inline constexpr int kExitUsage = 2;

int run(int argc, const char* const* argv);
// argv without the program name.
int run(const std::vector<std::string>& args);

}  // namespace phrasal::cli
