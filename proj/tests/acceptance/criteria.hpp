#pragma once

#include <string>
#include <vector>

// Release acceptance checks. Each criterion is a self-contained procedure
// that measures the shipped pipeline against a pinned threshold and reports
// one line. They are exposed as a library so both the test runner and the
// `verify` subcommand execute the identical checks.
namespace bdt::accept {

struct CriterionResult {
  std::string name;
  bool passed = false;
  std::string detail;  // measured numbers backing the verdict
};

struct Criterion {
  const char* name;
  CriterionResult (*run)();
};

// All criteria in their canonical execution order. The training-based ones
// write their artifacts (datasets, checkpoints) into artifact_dir() so later
// criteria and reruns can reuse them instead of retraining.
const std::vector<Criterion>& criteria();

// Runs the criterion with the given name. Throws std::invalid_argument for
// an unknown name.
CriterionResult run_named(const std::string& name);

// $BDT_ACCEPT_DIR when set, otherwise a fixed directory under the system
// temp path. Created on demand.
std::string artifact_dir();

// "ACCEPTANCE <name>: PASS (...)" on one line.
void print_result(const CriterionResult& r);

}  // namespace bdt::accept
