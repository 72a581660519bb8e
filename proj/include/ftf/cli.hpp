#pragma once

#include <string>
#include <vector>

namespace ftf {

/// Exit codes of the ftf command.
enum ExitCode : int { kExitOk = 0, kExitConfig = 2, kExitContract = 3, kExitDegenerate = 4 };

/// Entry point of the `ftf` command; returns the process exit code.
int run_cli(const std::vector<std::string>& args);

}  // namespace ftf
