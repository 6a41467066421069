#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace ssdnet::cli {

/// Runs one command line (args excludes the program name). Returns the
/// process exit code; errors are reported on `err`.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace ssdnet::cli
