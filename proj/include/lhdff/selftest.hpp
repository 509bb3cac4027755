#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace lhdff {

struct SelfTestOptions {
  // deliberately feeds the gradient comparator a corrupted gradient so the
  // reporting path itself can be exercised
  bool corrupt_fixture = false;
};

struct SelfTestResult {
  struct Check {
    std::string name;
    bool passed = false;
    std::string detail;
  };
  std::vector<Check> checks;

  bool all_passed() const {
    for (const auto& c : checks)
      if (!c.passed) return false;
    return true;
  }
};

// Quick in-process battery: gradient checks, fusion identities, shape
// contracts, metric oracles. Prints one line per check.
SelfTestResult run_selftest(std::ostream& log, const SelfTestOptions& opts = {});

}  // namespace lhdff
