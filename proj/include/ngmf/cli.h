#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace ngmf {

inline constexpr int kExitOk = 0;
inline constexpr int kExitDataError = 1;
inline constexpr int kExitConfigError = 2;

// Runs one command line (args[0] is the program name). Verbs: tokenize,
// train-vocab, ngrams, pretrain, finetune, stats. Returns the exit code.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace ngmf
