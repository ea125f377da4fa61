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

#include "kmft/experiment.hpp"

#include <algorithm>
#include <charconv>
#include <chrono>
#include <fstream>

#include <fmt/format.h>

#include "kmft/errors.hpp"
#include "kmft/ft_runtime.hpp"

namespace kmft {

using sim::CheckpointStage;
using sim::FailurePhase;
using sim::LedgerPhase;

namespace {

struct PhaseName {
  std::string_view name;
  FailurePhase phase;
  CheckpointStage stage;
};

constexpr PhaseName kPhaseNames[] = {
    {"barrier", FailurePhase::kBeforeBarrier, CheckpointStage::kAny},
    {"compute", FailurePhase::kDuringCompute, CheckpointStage::kAny},
    {"checkpoint", FailurePhase::kDuringCheckpoint, CheckpointStage::kAny},
    {"checkpoint-local", FailurePhase::kDuringCheckpoint, CheckpointStage::kLocalWrite},
    {"checkpoint-transfer", FailurePhase::kDuringCheckpoint, CheckpointStage::kBeforeTransfer},
    {"checkpoint-inflight", FailurePhase::kDuringCheckpoint, CheckpointStage::kInFlight},
    {"checkpoint-wait", FailurePhase::kDuringCheckpoint, CheckpointStage::kBeforeCommitWait},
    {"checkpoint-commit", FailurePhase::kDuringCheckpoint, CheckpointStage::kBeforeCommitBarrier},
};

template <typename T>
bool parse_number(std::string_view s, T& out) {
  const auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
  return ec == std::errc() && p == s.data() + s.size();
}

std::string sanitize(std::string s) {
  std::replace_if(s.begin(), s.end(), [](char c) { return c == ',' || c == '\n' || c == '\r'; }, ';');
  return s;
}

std::vector<std::string_view> split(std::string_view line, char sep) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const std::size_t at = line.find(sep, start);
    out.push_back(line.substr(start, at - start));
    if (at == std::string_view::npos) break;
    start = at + 1;
  }
  return out;
}

ReportRow sequential_row(const RunConfig& cfg, const Dataset& data) {
  KmeansConfig kc{cfg.k, cfg.max_iters, cfg.seed, cfg.force_iters};
  const auto res = run_sequential(data, kc);
  ReportRow row;
  row.iterations = res.iterations;
  row.converged = res.converged;
  sim::CostTable costs;
  costs.timeout = cfg.timeout_ticks;
  row.ledger[LedgerPhase::kCompute] =
      res.iterations * costs.per_coordinate * (data.n() * cfg.k * data.d() + data.n() * data.d());
  row.objective = objective(data, res.centroids, res.table);
  return row;
}

ReportRow parallel_row(const RunConfig& cfg, const Dataset& data) {
  KmeansConfig kc{cfg.k, cfg.max_iters, cfg.seed, cfg.force_iters};
  FtOptions opts;
  opts.method = cfg.method == RunMethod::kCenters ? Method::kCenters : Method::kSamples;
  opts.fault_tolerance = cfg.fault_tolerance && cfg.procs >= 2;
  opts.policy.interval = cfg.interval;
  opts.policy.eager_commit = cfg.eager_commit;
  opts.costs.timeout = cfg.timeout_ticks;
  opts.mode = cfg.mode;
  sim::FailurePlan plan{cfg.fails};
  const auto layout = WorldLayout::initial(cfg.procs, opts.fault_tolerance ? cfg.spares : 0);
  const auto out = run_ft_kmeans(data, kc, opts, layout, plan);
  ReportRow row;
  row.iterations = out.iterations;
  row.converged = out.converged;
  row.recoveries = out.recoveries;
  row.epochs_committed = out.epochs_committed;
  row.ledger = out.critical;
  row.reason = out.reason;
  if (!out.aborted) row.objective = objective(data, out.centroids, out.table);
  return row;
}

}  // namespace

std::string_view to_string(RunMethod m) {
  switch (m) {
    case RunMethod::kSequential:
      return "sequential";
    case RunMethod::kCenters:
      return "centers";
    case RunMethod::kSamples:
      return "samples";
  }
  return "?";
}

RunMethod parse_run_method(std::string_view s) {
  if (s == "sequential") return RunMethod::kSequential;
  if (s == "centers") return RunMethod::kCenters;
  if (s == "samples") return RunMethod::kSamples;
  throw UsageError(fmt::format("unknown method '{}'", s));
}

sim::KillEvent parse_fail_spec(std::string_view spec) {
  const auto at = spec.find('@');
  if (at == std::string_view::npos) throw UsageError(fmt::format("bad --fail '{}': want RANK@ITER[:phase]", spec));
  std::string_view rest = spec.substr(at + 1);
  std::string_view phase = "barrier";
  if (const auto colon = rest.find(':'); colon != std::string_view::npos) {
    phase = rest.substr(colon + 1);
    rest = rest.substr(0, colon);
  }
  sim::KillEvent e;
  if (!parse_number(spec.substr(0, at), e.rank) || !parse_number(rest, e.iteration) ||
      e.iteration == 0) {
    throw UsageError(fmt::format("bad --fail '{}': rank and iteration must be integers, iteration >= 1", spec));
  }
  for (const auto& p : kPhaseNames) {
    if (p.name == phase) {
      e.phase = p.phase;
      e.stage = p.stage;
      return e;
    }
  }
  throw UsageError(fmt::format("bad --fail '{}': unknown phase '{}'", spec, phase));
}

std::string format_fail_spec(const sim::KillEvent& e) {
  for (const auto& p : kPhaseNames) {
    if (p.phase == e.phase && p.stage == e.stage) {
      return fmt::format("{}@{}:{}", e.rank, e.iteration, p.name);
    }
  }
  return fmt::format("{}@{}", e.rank, e.iteration);
}

void RunConfig::validate() const {
  if (n == 0 || d == 0) throw ConfigError("n and d must be >= 1");
  if (k == 0 || k > n) throw ConfigError("k must be in [1, n]");
  if (procs == 0) throw ConfigError("procs must be >= 1");
  if (interval == 0) throw ConfigError("checkpoint interval must be >= 1");
  if (max_iters == 0) throw ConfigError("max iterations must be >= 1");
  if (method == RunMethod::kSequential && procs != 1) {
    throw ConfigError("the sequential method runs on one process");
  }
  if (!fails.empty() && method == RunMethod::kSequential) {
    throw ConfigError("failures need a parallel method");
  }
  sim::FailurePlan{fails}.validate(procs + spares);
}

std::string RunConfig::config_id() const {
  std::string id = fmt::format("{}-n{}-d{}-k{}-p{}-s{}-i{}-m{}{}-seed{}-{}-t{}", to_string(method), n,
                               d, k, procs, spares, interval, max_iters, force_iters ? "f" : "",
                               seed, mode == sim::SchedMode::kDeterministic ? "det" : "conc",
                               timeout_ticks);
  if (!fault_tolerance) id += "-noft";
  if (!eager_commit) id += "-lazy";
  for (const auto& e : fails) id += "-fail" + format_fail_spec(e);
  return id;
}

double overhead_fraction(const sim::PhaseLedger& ledger) {
  const auto total = ledger.total();
  if (total == 0) return 0;
  return static_cast<double>(ledger[LedgerPhase::kCheckpointStart] +
                             ledger[LedgerPhase::kCheckpointCommit]) /
         static_cast<double>(total);
}

std::string_view report_csv_header() {
  return "config_id,method,procs,k,n,d,interval,seed,iterations,converged,recoveries,"
         "epochs_committed,vt_compute,vt_comm,vt_ckpt_start,vt_ckpt_commit,vt_detect,vt_restore,"
         "overhead_frac,wall_ms,reason";
}

std::string format_report_row(const ReportRow& r) {
  const auto& l = r.ledger;
  return fmt::format("{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{:.3f},{}",
                     sanitize(r.config_id), r.method, r.procs, r.k, r.n, r.d, r.interval, r.seed,
                     r.iterations, r.converged ? "true" : "false", r.recoveries,
                     r.epochs_committed, l[LedgerPhase::kCompute], l[LedgerPhase::kComm],
                     l[LedgerPhase::kCheckpointStart], l[LedgerPhase::kCheckpointCommit],
                     l[LedgerPhase::kDetect], l[LedgerPhase::kRestore], r.overhead_frac, r.wall_ms,
                     sanitize(r.reason));
}

ReportRow parse_report_row(std::string_view line) {
  if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
  const auto f = split(line, ',');
  if (f.size() != 21) throw FormatError(fmt::format("expected 21 fields, got {}", f.size()));
  ReportRow r;
  r.config_id = std::string(f[0]);
  r.method = std::string(f[1]);
  parse_run_method(r.method);
  bool ok = parse_number(f[2], r.procs) && parse_number(f[3], r.k) && parse_number(f[4], r.n) &&
            parse_number(f[5], r.d) && parse_number(f[6], r.interval) &&
            parse_number(f[7], r.seed) && parse_number(f[8], r.iterations) &&
            parse_number(f[10], r.recoveries) && parse_number(f[11], r.epochs_committed);
  for (std::size_t p = 0; p < sim::kLedgerPhases; ++p) ok = ok && parse_number(f[12 + p], r.ledger.ticks[p]);
  ok = ok && parse_number(f[18], r.overhead_frac) && parse_number(f[19], r.wall_ms);
  if (!ok) throw FormatError("malformed numeric field");
  if (f[9] == "true") {
    r.converged = true;
  } else if (f[9] != "false") {
    throw FormatError("converged must be true or false");
  }
  if (r.overhead_frac < 0 || r.overhead_frac > 1) throw FormatError("overhead_frac outside [0, 1]");
  r.reason = std::string(f[20]);
  return r;
}

ReportRow run_experiment(const RunConfig& cfg, const Dataset& data) {
  if (data.n() != cfg.n || data.d() != cfg.d) {
    throw ConfigError(fmt::format("dataset is {}x{}, config says {}x{}", data.n(), data.d(), cfg.n, cfg.d));
  }
  cfg.validate();
  const auto t0 = std::chrono::steady_clock::now();
  ReportRow row = cfg.method == RunMethod::kSequential ? sequential_row(cfg, data)
                                                        : parallel_row(cfg, data);
  const auto t1 = std::chrono::steady_clock::now();
  row.wall_ms = std::chrono::duration<double, std::milli>(t1 - t0).count();
  row.config_id = cfg.config_id();
  row.method = std::string(to_string(cfg.method));
  row.procs = cfg.procs;
  row.k = cfg.k;
  row.n = cfg.n;
  row.d = cfg.d;
  row.interval = cfg.interval;
  row.seed = cfg.seed;
  row.overhead_frac = overhead_fraction(row.ledger);
  return row;
}

void append_report(const std::filesystem::path& path, const std::vector<ReportRow>& rows) {
  std::error_code ec;
  const bool fresh = !std::filesystem::exists(path, ec) || std::filesystem::file_size(path, ec) == 0;
  std::ofstream out(path, std::ios::app);
  if (!out) throw IoError(fmt::format("cannot open {} for appending", path.string()));
  if (fresh) out << report_csv_header() << '\n';
  for (const auto& r : rows) out << format_report_row(r) << '\n';
  if (!out) throw IoError(fmt::format("write to {} failed", path.string()));
}

std::string summary_table(const std::vector<ReportRow>& rows) {
  std::string s = fmt::format("{:<10} {:>5} {:>5} {:>6} {:>5} {:>4} {:>6} {:>12} {:>9} {:>10} {:>16}\n",
                              "method", "procs", "k", "iters", "conv", "rec", "epochs", "vt_total",
                              "overhead", "wall_ms", "objective");
  for (const auto& r : rows) {
    s += fmt::format("{:<10} {:>5} {:>5} {:>6} {:>5} {:>4} {:>6} {:>12} {:>9.4f} {:>10.1f} {:>16.6f}\n",
                     r.method, r.procs, r.k, r.iterations, r.converged ? "yes" : "no", r.recoveries,
                     r.epochs_committed, r.vt_total(), r.overhead_frac, r.wall_ms, r.objective);
    if (!r.reason.empty()) s += fmt::format("  reason: {}\n", r.reason);
  }
  return s;
}

}  // namespace kmft
