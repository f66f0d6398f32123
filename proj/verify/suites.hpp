#pragma once

#include <string>
#include <vector>

namespace fdy::verify {

struct CheckResult {
  std::string name;
  double value = 0.0;      // worst observed error (or the measured quantity)
  double tolerance = 0.0;
  bool pass = false;
  std::string detail;
};

struct SuiteReport {
  std::string suite;
  std::vector<CheckResult> checks;

  bool passed() const;
  /// One `PASS|FAIL suite name value tol detail` line per check.
  std::string text() const;
};

SuiteReport equivalence_suite(int seeds = 20);
SuiteReport gradcheck_suite(int seeds = 10);
SuiteReport psds_suite(int datasets = 120);
SuiteReport median_suite();

std::vector<std::string> suite_names();
/// Runs one named suite, or every suite for "all"; unknown names throw ConfigError.
std::vector<SuiteReport> run_suites(const std::string& name);

}  // namespace fdy::verify
