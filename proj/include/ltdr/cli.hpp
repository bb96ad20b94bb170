// Copyright 2026 The LTDR Authors. All Rights Reserved.
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

// `ltdr` subcommands. Exit codes are a stable contract:
//   0 success, 1 acceptance failure (also bad config or usage),
//   2 non-finite numerics, 3 I/O failure.

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>

namespace ltdr {

enum ExitCode : int {
  kExitOk = 0,
  kExitFailure = 1,
  kExitNumeric = 2,
  kExitIo = 3,
};

struct CliInvocation {
  std::string command;  // train | ablate | stats | gradcheck
  std::optional<std::filesystem::path> config_path;
  std::filesystem::path output_dir = "out";
  std::optional<std::filesystem::path> router_log;  // stats only
  std::optional<std::uint64_t> seed;
  bool force = false;
  int verbosity = 0;
};

// Writes trace.csv, stats/*.csv, router_log.jsonl and run_meta.json.
int command_train(const CliInvocation& inv, std::ostream& out, std::ostream& err);
// Writes ablation.csv, ablation_summary.csv, ablation_load.csv and run_meta.json.
int command_ablate(const CliInvocation& inv, std::ostream& out, std::ostream& err);
// Recomputes statistics from a router log; writes stats CSVs when --out is given.
int command_stats(const CliInvocation& inv, std::ostream& out, std::ostream& err);
int command_gradcheck(const CliInvocation& inv, std::ostream& out, std::ostream& err);

// Parses argv and dispatches.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace ltdr
