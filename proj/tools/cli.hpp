#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace nestedg::cli {

// Exit codes by error class.
inline constexpr int kExitOk = 0;
inline constexpr int kExitInternal = 1;
inline constexpr int kExitInput = 2;
inline constexpr int kExitModel = 3;
inline constexpr int kExitInference = 4;
inline constexpr int kExitStudy = 5;

/// Runs the command line `args` (args[0] is the program name). Progress and
/// results go to `out`; errors go to `err` as "error: <Class>: message".
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

/// Lower-case hex SHA-256 of `bytes`.
std::string sha256_hex(const std::string& bytes);

}  // namespace nestedg::cli
