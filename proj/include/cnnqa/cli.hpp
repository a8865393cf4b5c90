#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace cnnqa {

inline constexpr int kExitOk = 0;
inline constexpr int kExitRuntime = 1;
inline constexpr int kExitUsage = 2;

/// Entry point of the `cnnqa` tool. `args` excludes the program name.
/// Subcommands: synth, train, eval, predict, gradcheck.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace cnnqa
