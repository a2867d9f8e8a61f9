#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace menet {

enum ExitCode : int { kExitOk = 0, kExitUsage = 1, kExitData = 2, kExitNumeric = 3 };

/// Entry point of the `menet` tool. args excludes the program name.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

/// Reads a flat key=value file; '#' starts a comment line. Each entry becomes
/// a "--key=value" token. Throws ConfigError on malformed lines.
std::vector<std::pair<std::string, std::string>> read_config_file(const std::string& path);

}  // namespace menet
