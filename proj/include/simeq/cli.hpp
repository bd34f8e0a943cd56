// SPDX-License-Identifier: Apache-2.0
//
// `simeq` command line: gen, train, complete, eval, audit.
//
// Exit codes: 0 success, 2 usage or input error, 3 numerical failure,
// 4 threshold gate failed, 1 anything else.
#pragma once

#include <nlohmann/json.hpp>

#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

namespace simeq {

inline constexpr const char* kToolVersion = "0.1.0";

enum ExitCode : int {
  kExitOk = 0,
  kExitFailure = 1,
  kExitUsage = 2,
  kExitNumerical = 3,
  kExitThreshold = 4,
};

/// args excludes the program name.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

/// SHA-256 of a file, or of the sorted "relative-path sha\n" listing of a
/// directory's regular files (run_manifest.json excluded).
std::string digest_path(const std::filesystem::path& path);

/// --threads default: SIMEQ_THREADS when set to a positive integer, else 1.
std::size_t default_threads();

}  // namespace simeq
