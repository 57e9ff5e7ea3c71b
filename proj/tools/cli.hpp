// Copyright 2026 The PLPCL Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

// Command-line front end: synth, pretrain, train, eval, estimate-k.
// Exit codes: 0 ok, 1 runtime/data error, 2 usage error.

#include <array>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "plpcl/losses.hpp"

namespace plpcl::cli {

inline constexpr const char* kVersion = "0.3.0";

enum ExitCode : int { kOk = 0, kRuntimeError = 1, kUsageError = 2 };

/// Runs one command. args excludes the program name.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

/// Parses "scl=1,ce=0.5" into full weights (unnamed terms default to 1).
/// Returns nullopt on unknown names, duplicates, or non-numeric values.
std::optional<std::array<double, kNumLossTerms>> parse_weights(const std::string& text);

/// Hex SHA-256 of a file's bytes. Throws Error(IoError) when unreadable.
std::string sha256_file(const std::string& path);

}  // namespace plpcl::cli
