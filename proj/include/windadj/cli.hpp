#pragma once

namespace windadj {

/// Entry point for the command-line tool.  Subcommands: fit, adjust,
/// validate, kl, energy.  Exit codes: 0 success, 2 configuration error,
/// 3 data error, 4 numerical failure.
int run_cli(int argc, const char* const* argv);

}  // namespace windadj
