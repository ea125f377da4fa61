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

#include "kmft/report.hpp"

#include <fstream>
#include <map>
#include <tuple>

#include <fmt/format.h>

#include "kmft/errors.hpp"

namespace kmft {

std::vector<ReportRow> read_report(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError(fmt::format("cannot open {}", path.string()));
  std::vector<ReportRow> rows;
  std::string line;
  for (std::size_t lineno = 1; std::getline(in, line); ++lineno) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (lineno == 1) {
      if (line != report_csv_header()) {
        throw FormatError(fmt::format("{}:1: unexpected header", path.string()));
      }
      continue;
    }
    if (line.empty()) continue;
    try {
      rows.push_back(parse_report_row(line));
    } catch (const Error& e) {
      throw FormatError(fmt::format("{}:{}: {}", path.string(), lineno, e.what()));
    }
  }
  return rows;
}

std::vector<SummaryRow> summarize(const std::vector<ReportRow>& rows) {
  std::map<std::tuple<std::string, std::size_t, std::size_t>, SummaryRow> groups;
  for (const auto& r : rows) {
    auto& g = groups[{r.method, r.procs, r.k}];
    g.method = r.method;
    g.procs = r.procs;
    g.k = r.k;
    ++g.runs;
    g.mean_iterations += static_cast<double>(r.iterations);
    g.mean_vt_total += static_cast<double>(r.vt_total());
    g.mean_overhead_frac += r.overhead_frac;
    g.mean_wall_ms += r.wall_ms;
  }
  std::vector<SummaryRow> out;
  for (auto& [key, g] : groups) {
    const auto n = static_cast<double>(g.runs);
    g.mean_iterations /= n;
    g.mean_vt_total /= n;
    g.mean_overhead_frac /= n;
    g.mean_wall_ms /= n;
    out.push_back(g);
  }
  // Sorted by (method, procs, k): find each (method, k)'s smallest procs.
  std::map<std::pair<std::string, std::size_t>, double> baseline;
  for (const auto& g : out) baseline.try_emplace({g.method, g.k}, g.mean_vt_total);
  for (auto& g : out) {
    const double base = baseline.at({g.method, g.k});
    g.speedup = g.mean_vt_total > 0 ? base / g.mean_vt_total : 0;
  }
  return out;
}

std::string summary_csv_header() {
  return "method,procs,k,runs,mean_iterations,mean_vt_total,mean_overhead_frac,mean_wall_ms,speedup";
}

std::string format_summary_row(const SummaryRow& r) {
  return fmt::format("{},{},{},{},{},{},{},{:.3f},{}", r.method, r.procs, r.k, r.runs,
                     r.mean_iterations, r.mean_vt_total, r.mean_overhead_frac, r.mean_wall_ms,
                     r.speedup);
}

std::vector<SummaryRow> report_summary(const std::filesystem::path& in,
                                       const std::filesystem::path& out) {
  auto summary = summarize(read_report(in));
  std::ofstream os(out, std::ios::trunc);
  if (!os) throw IoError(fmt::format("cannot open {} for writing", out.string()));
  os << summary_csv_header() << '\n';
  for (const auto& r : summary) os << format_summary_row(r) << '\n';
  if (!os) throw IoError(fmt::format("write to {} failed", out.string()));
  return summary;
}

}  // namespace kmft
