#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace ergwalk {

namespace exit_code {
inline constexpr int ok = 0;
inline constexpr int config_error = 2;
inline constexpr int indeterminate = 3;  // --strict and an undetermined verdict
inline constexpr int divergence = 4;
}  // namespace exit_code

// Entry point of the ergwalk tool. The report JSON goes to `out`, diagnostics
// to `err`; with --out DIR the report and CSV series are also written there.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace ergwalk
