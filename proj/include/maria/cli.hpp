#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace maria {

/// Exit codes of the command-line tool.
enum ExitCode : int {
  kExitOk = 0,
  kExitCheckFailed = 1,
  kExitConfig = 2,
  kExitIo = 3,
};

/// Runs one subcommand (gen-data, train, eval, ablate, gradcheck). `args`
/// excludes the program name.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

/// Settings used by `gradcheck` when no config file is given.
std::string tiny_gradcheck_config();

}  // namespace maria
