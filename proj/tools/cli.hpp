#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace hvt::cli {

/// Runs the `hvt` command line. Returns the process exit code: 0 on success,
/// 1 for usage, configuration and input errors, 2 for anything else.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

} // namespace hvt::cli
