// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace rofkit::cli {

enum ExitStatus : int {
  kSuccess = 0,
  kUsageError = 1,
  kInputError = 2,
  kValidationError = 3,
};

// Runs one subcommand. `args` excludes the program name. Tabular output
// without --output goes to `out`; diagnostics go to `err`.
int run(const std::vector<std::string> &args, std::ostream &out, std::ostream &err);

} // namespace rofkit::cli
