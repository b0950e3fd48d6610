#pragma once

#include <iosfwd>

namespace uavfed {

/// Exit codes of the command-line driver.
enum ExitCode : int { kExitOk = 0, kExitUsage = 1, kExitValidation = 2, kExitRuntime = 3 };

/// Entry point of the `uavfed` tool: subcommands train, eval, localize and plot.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace uavfed
