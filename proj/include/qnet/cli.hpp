#pragma once

namespace qnet::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;
inline constexpr int kExitUsage = 2;

/// Entry point of the qnet command-line tool. Subcommands: plan, simulate,
/// distill, sweep, histogram, export.
int run(int argc, char** argv);

}  // namespace qnet::cli
