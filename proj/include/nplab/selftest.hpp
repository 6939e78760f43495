#pragma once

// Fast named checks behind `nplab selftest`.

#include <ostream>
#include <string>
#include <vector>

namespace nplab {

struct SelftestCheck {
  std::string name;
  bool passed = false;
  std::string detail;
  double seconds = 0.0;
};

struct SelftestReport {
  std::vector<SelftestCheck> checks;
  double seconds = 0.0;

  bool ok() const;
  const SelftestCheck* find(const std::string& name) const;
};

struct SelftestOptions {
  // Runs every check with the output sigma floor at this value instead of 0.1.
  double sigma_floor = 0.1;
};

// Runs all checks, printing one PASS/FAIL line per check to `log` if given.
SelftestReport run_selftest(const SelftestOptions& opts = {}, std::ostream* log = nullptr);

}  // namespace nplab
