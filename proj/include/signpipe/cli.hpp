// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <ostream>

namespace signpipe {

inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;
inline constexpr int kExitUsage = 2;

/// The `signpipe` command line. Settings resolve as flags, then SIGNPIPE_*
/// environment variables, then the JSON file named by --config. Data goes to
/// `out`, diagnostics to `err`. Returns the process exit code.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

} // namespace signpipe
