#pragma once

#include <cstdint>
#include <ostream>
#include <string>
#include <string_view>

namespace nmrc::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitSolverFailure = 1;
inline constexpr int kExitUsage = 2;

/// 64-bit FNV-1a of a canonical config string, as 16 hex digits.
std::string config_hash(std::string_view canonical);

/// Runs one subcommand. JSON summaries go to `out`, diagnostics and usage
/// text to `err`; CSV/JSON/PGM artifacts are written under --out-dir.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace nmrc::cli
