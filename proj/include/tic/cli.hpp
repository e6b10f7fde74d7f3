#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace tic {

enum ExitCode : int {
  kExitPass = 0,
  kExitFail = 1,
  kExitInput = 2,
  kExitNotConverged = 3,
  kExitInconclusive = 4,
};

// Entry point of ticctl; args excludes the program name.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace tic
