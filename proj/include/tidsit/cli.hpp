#pragma once

#include <string>
#include <vector>

namespace tidsit {

/// Runs one subcommand (train | eval | ablate | predict | synth | gradcheck)
/// and returns the process exit status: 0 success, 2 config/usage, 3 data,
/// 4 numeric, 5 io.
int run_cli(const std::vector<std::string>& args);
int run_cli(int argc, char** argv);

}  // namespace tidsit
