// Command-line front end: synth, train, eval, grid, predict, stream.
#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace tpose {

inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;
inline constexpr int kExitUsage = 2;

/// Parses `args` (without the program name) and runs the subcommand.
/// Stream mode reads from `in`. Returns the process exit code.
int run_cli(const std::vector<std::string>& args, std::istream& in, std::ostream& out, std::ostream& err);

}  // namespace tpose
