#pragma once

/**
 * Command-line front end: train / advantages / verify-theorem / analyze.
 * Exit codes: 0 success, 1 usage error, 2 data or verification error,
 * 3 internal failure.
 */

namespace epgrpo {

inline constexpr int kExitSuccess = 0;
inline constexpr int kExitUsage = 1;
inline constexpr int kExitData = 2;
inline constexpr int kExitInternal = 3;

int run_cli(int argc, const char* const* argv);

}  // namespace epgrpo
