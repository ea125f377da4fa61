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
#include <filesystem>
#include <string>
#include <vector>

#include "kmft/experiment.hpp"

namespace kmft {

struct SummaryRow {
  std::string method;
  std::size_t procs = 0;
  std::size_t k = 0;
  std::size_t runs = 0;
  double mean_iterations = 0;
  double mean_vt_total = 0;
  double mean_overhead_frac = 0;
  double mean_wall_ms = 0;
  // Mean virtual time of the smallest procs count with the same method and k,
  // divided by this row's.
  double speedup = 0;
};

/// Reads a report CSV. Throws FormatError naming the bad line.
std::vector<ReportRow> read_report(const std::filesystem::path& path);

/// Groups by (method, procs, k) in sorted order.
std::vector<SummaryRow> summarize(const std::vector<ReportRow>& rows);

std::string summary_csv_header();
std::string format_summary_row(const SummaryRow& row);

/// read_report + summarize, written as CSV to `out`.
std::vector<SummaryRow> report_summary(const std::filesystem::path& in,
                                       const std::filesystem::path& out);

}  // namespace kmft
