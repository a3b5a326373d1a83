#pragma once

#include <string>
#include <vector>

namespace drio::cli {

inline constexpr const char* kToolVersion = "0.1.0";

/// Entry point of the `drio` binary. Returns the process exit status:
/// 0 success, 1 invalid input or usage, 2 runtime failure.
int run(int argc, char** argv);
int run(const std::vector<std::string>& args);  // args[0] is the program name

/// --threads resolution: DRIO_THREADS, when set to a positive integer, wins.
std::size_t resolve_threads(std::size_t flag_value);

}  // namespace drio::cli
