#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace glyphforge {

inline constexpr const char* kToolVersion = "0.1.0";

/// Exit statuses shared by every subcommand.
enum ExitCode : int { kExitOk = 0, kExitData = 1, kExitUsage = 2 };

/// Runs `glyphforge <subcommand> ...` with args excluding the program name.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace glyphforge
