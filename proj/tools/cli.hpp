#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace treematch::cli {

// Runs one CLI invocation (without the program name). Returns the process
// exit code: 0 success, 1 runtime failure (one-line JSON on `err`),
// 2 usage error.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace treematch::cli
