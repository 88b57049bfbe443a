#pragma once

#include <ostream>

namespace metaqa {

enum ExitCode : int { kExitOk = 0, kExitUsage = 1, kExitData = 2, kExitNumeric = 3 };

// Runs one subcommand. Results go to files or `out`, logs and errors to `err`.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace metaqa
