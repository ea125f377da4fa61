// Copyright 2026 The kmft Authors
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

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "kmft/kmeans.hpp"
#include "kmft/simcluster.hpp"

namespace kmft {

enum class RunMethod : std::uint8_t { kSequential, kCenters, kSamples };

std::string_view to_string(RunMethod m);
/// "sequential", "centers" or "samples". Throws UsageError otherwise.
RunMethod parse_run_method(std::string_view s);

/// Parses RANK@ITER[:phase]. Phases: compute, barrier (default), checkpoint,
/// checkpoint-local, checkpoint-transfer, checkpoint-inflight,
/// checkpoint-wait, checkpoint-commit. Throws UsageError.
sim::KillEvent parse_fail_spec(std::string_view spec);
std::string format_fail_spec(const sim::KillEvent& e);

struct RunConfig {
  std::size_t n = 10000;
  std::size_t d = 10;
  std::size_t k = 10;
  std::size_t procs = 2;
  std::size_t spares = 1;
  RunMethod method = RunMethod::kCenters;
  std::uint64_t interval = 10;
  std::size_t max_iters = 100;
  bool force_iters = false;
  std::uint64_t seed = 1;
  std::vector<sim::KillEvent> fails;
  sim::SchedMode mode = sim::SchedMode::kDeterministic;
  sim::Ticks timeout_ticks = 1000;
  // Checkpointing and recovery; only meaningful with procs >= 2.
  bool fault_tolerance = true;
  bool eager_commit = true;
  std::filesystem::path out;

  /// Throws ConfigError.
  void validate() const;
  /// Readable identifier echoing every parameter that affects results.
  std::string config_id() const;
};

struct ReportRow {
  std::string config_id;
  std::string method;
  std::size_t procs = 0;
  std::size_t k = 0;
  std::size_t n = 0;
  std::size_t d = 0;
  std::uint64_t interval = 0;
  std::uint64_t seed = 0;
  std::uint64_t iterations = 0;
  bool converged = false;
  std::size_t recoveries = 0;
  std::uint64_t epochs_committed = 0;
  sim::PhaseLedger ledger;
  double overhead_frac = 0;
  double wall_ms = 0;
  std::string reason;
  double objective = 0;  // summary only, not part of the CSV

  sim::Ticks vt_total() const { return ledger.total(); }
};

/// Checkpoint share of the virtual time; 0 for an empty ledger.
double overhead_fraction(const sim::PhaseLedger& ledger);

std::string_view report_csv_header();
std::string format_report_row(const ReportRow& row);
/// Inverse of format_report_row. Throws FormatError.
ReportRow parse_report_row(std::string_view line);

/// Runs one configuration on `data`. Unrecoverable runs come back with
/// converged = false and a reason.
ReportRow run_experiment(const RunConfig& cfg, const Dataset& data);

/// Appends rows, writing the header first when the file is new or empty.
void append_report(const std::filesystem::path& path, const std::vector<ReportRow>& rows);

/// Fixed-width table for terminals.
std::string summary_table(const std::vector<ReportRow>& rows);

}  // namespace kmft
