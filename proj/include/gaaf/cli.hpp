#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace gaaf::cli {

enum ExitCode : int { kOk = 0, kUsage = 1, kData = 2, kNumerical = 3 };

/// Parses and runs one subcommand. `args` excludes the program name.
/// Results go to `out`, diagnostics and usage errors to `err`.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

int run(int argc, const char* const* argv);

}  // namespace gaaf::cli
