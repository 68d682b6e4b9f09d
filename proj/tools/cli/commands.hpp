// Copyright 2026 The neurodiff Authors
// SPDX-License-Identifier: Apache-2.0

#ifndef NEURODIFF_TOOLS_COMMANDS_HPP_
#define NEURODIFF_TOOLS_COMMANDS_HPP_

#include <filesystem>
#include <ostream>
#include <string>
#include <vector>

#include "neurodiff/errors.hpp"

namespace neurodiff::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitInternal = 1;
inline constexpr int kExitConfig = 2;
inline constexpr int kExitData = 3;
inline constexpr int kExitNumeric = 4;

int exit_code(ErrorKind kind);

/// One-line, machine-parsable error record:
/// `error code=<n> kind=<kind> message="<escaped>"`.
std::string error_line(int code, const std::string& kind, const std::string& message);

/// Parses `args` (without the program name) and runs the command.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

// Output layout under the run directory.
std::filesystem::path train_dir(const std::filesystem::path& out, const std::string& subject);
std::filesystem::path final_checkpoint(const std::filesystem::path& out,
                                       const std::string& subject);
std::filesystem::path generated_dir(const std::filesystem::path& out, const std::string& subject);
std::filesystem::path reports_dir(const std::filesystem::path& out);
std::filesystem::path topo_dir(const std::filesystem::path& out);

}  // namespace neurodiff::cli

#endif  // NEURODIFF_TOOLS_COMMANDS_HPP_
