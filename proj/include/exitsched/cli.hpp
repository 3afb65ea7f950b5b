#pragma once

namespace exitsched::cli {

/// Exit codes of the command-line tool.
inline constexpr int kOk = 0;
inline constexpr int kInternal = 1;
inline constexpr int kBadUsage = 2;
inline constexpr int kDataInvalid = 3;
inline constexpr int kInfeasibleBudget = 4;

/// Entry point of the `exitsched` binary. Errors go to stderr as a single JSON line
/// {"error", "code", "message"}.
int run(int argc, const char* const* argv);

}  // namespace exitsched::cli
