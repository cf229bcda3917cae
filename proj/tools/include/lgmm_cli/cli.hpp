#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace lgmm::cli {

/// Process exit statuses; every failure class has its own code.
enum ExitCode : int {
  kOk = 0,
  kFailure = 1,
  kUsage = 2,
  kShape = 3,
  kContract = 4,
  kFormat = 5,
  kValidation = 6,
  kConfig = 7,
  kIo = 8,
  kNumeric = 9,
  kLookup = 10,
  kGradCheckFailed = 11,
};

/// Runs one command. `args` excludes the program name. Normal output goes to
/// `out`; diagnostics are a single line on `err`.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace lgmm::cli
