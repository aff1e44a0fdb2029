#pragma once

#include <iosfwd>

namespace advx::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitValidation = 1;
inline constexpr int kExitRuntime = 2;

// Entry point for the `advx` driver. Subcommands: train, attack, eval,
// transfer, sweep, leak. Every subcommand resolves its configuration (defaults,
// then --config file, then flags), writes <out>/config.txt and only then starts
// work. Returns one of the exit codes above.
int run(int argc, const char* const argv[], std::ostream& out, std::ostream& err);

}  // namespace advx::cli
