// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <iosfwd>

namespace gatekd {

/// Exit codes of the command-line entry point.
enum ExitCode : int { kExitOk = 0, kExitFailure = 1, kExitUsage = 2 };

/// Parses argv and runs one verb: gen-data, distill, ablate, compare-gating,
/// gate-stats or verify. Failures print one JSON object on `err`.
int dispatch(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace gatekd
