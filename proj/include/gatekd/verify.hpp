// SPDX-License-Identifier: Apache-2.0
#pragma once

// Self-check suite behind `gatekd verify`: entropy against a long-double
// reference, gate identities, finite-difference gradients, degenerate-config
// equivalences, generator oracles and run determinism. Small sizes, so it
// finishes in seconds on a fresh checkout.

#include <string>
#include <vector>

namespace gatekd {

struct CheckResult {
  std::string name;
  bool passed = false;
  std::string detail;
};

std::vector<CheckResult> run_invariant_suite();

}  // namespace gatekd
