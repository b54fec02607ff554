#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace dipole {

// Entry point behind the `dipole` executable. Returns the process exit code;
// reports go to `out`, diagnostics to `err`.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace dipole
