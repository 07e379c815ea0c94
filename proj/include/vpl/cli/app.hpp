#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace vpl::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;
inline constexpr int kExitUsage = 2;

/// Runs one command line (without the program name). Exit codes: 0 success,
/// 1 runtime failure, 2 usage or configuration error.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

/// Checkpoint path of run `index` out of `count` seeds: `path` itself for a
/// single run, "<stem>.s<index><ext>" otherwise.
std::string seed_path(const std::string& path, std::size_t index, std::size_t count);

/// VPL_THREADS when set (>= 1), else the hardware concurrency.
std::size_t thread_cap();

}  // namespace vpl::cli
