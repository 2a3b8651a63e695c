#pragma once

#include <exception>
#include <iosfwd>

namespace tmae {

/// Runs one `tmae` command line. Returns the process exit code:
/// 0 success, 2 config error, 3 data error, 4 training error, 1 otherwise.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

int exit_code(const std::exception& e);

}  // namespace tmae
