#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace richunet {

struct SuiteResult {
  std::string name;
  bool passed = false;
  std::string detail;
};

/// Runs the built-in invariant suites, printing one line per suite.
std::vector<SuiteResult> run_selftest(std::ostream& out);

}  // namespace richunet
