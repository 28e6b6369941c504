#pragma once

#include <iosfwd>

namespace fasn {

/// Entry point of the `fasn` tool: synth, train, predict, evaluate, compare.
/// Returns the process exit code; normal output goes to `out`, diagnostics to `err`.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace fasn
