#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace spmim::cli {

enum ExitCode { kOk = 0, kUsage = 1, kDataOrConfig = 2, kNumerical = 3 };

// Runs one CLI invocation; argv[0] is the program name.
int run(const std::vector<std::string>& argv, std::ostream& out, std::ostream& err);

}  // namespace spmim::cli
