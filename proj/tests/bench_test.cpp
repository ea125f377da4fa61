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

#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "kmft/dataset_io.hpp"
#include "kmft/errors.hpp"
#include "kmft/experiment.hpp"
#include "kmft/report.hpp"

namespace kmft {
namespace {

namespace fs = std::filesystem;
using sim::CheckpointStage;
using sim::FailurePhase;
using sim::LedgerPhase;

struct TempDir {
  fs::path path;
  TempDir() {
    path = fs::temp_directory_path() /
           ("kmft-bench-" + std::to_string(::testing::UnitTest::GetInstance()->random_seed()) + "-" +
            ::testing::UnitTest::GetInstance()->current_test_info()->name());
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
  fs::path operator/(const char* name) const { return path / name; }
};

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

TEST(DatasetFile, RoundTripAndSize) {
  TempDir tmp;
  const auto g = generate_dataset(1000, 10, 10, 1.0, 5);
  write_dataset(tmp / "a.kmds", g.data);
  EXPECT_EQ(fs::file_size(tmp / "a.kmds"), kDatasetHeaderSize + 1000 * 10 * 8);
  const auto back = read_dataset(tmp / "a.kmds");
  EXPECT_EQ(back.n(), 1000u);
  EXPECT_EQ(back.d(), 10u);
  EXPECT_EQ(back.values(), g.data.values());
  EXPECT_EQ(slurp(tmp / "a.kmds").substr(0, 4), "KMDS");
}

TEST(DatasetFile, SameSeedSameBytes) {
  TempDir tmp;
  write_dataset(tmp / "a", generate_dataset(300, 3, 4, 2.0, 9).data);
  write_dataset(tmp / "b", generate_dataset(300, 3, 4, 2.0, 9).data);
  write_dataset(tmp / "c", generate_dataset(300, 3, 4, 2.0, 10).data);
  EXPECT_EQ(slurp(tmp / "a"), slurp(tmp / "b"));
  EXPECT_NE(slurp(tmp / "a"), slurp(tmp / "c"));
}

TEST(DatasetFile, RejectsDamage) {
  const Bytes good = encode_dataset(Dataset(2, 2, {1, 2, 3, 4}));
  Bytes bad_magic = good;
  bad_magic[0] = std::byte{'X'};
  EXPECT_THROW(decode_dataset(bad_magic), FormatError);
  EXPECT_THROW(decode_dataset(std::span(good).first(good.size() - 8)), FormatError);
  EXPECT_THROW(decode_dataset(std::span(good).first(10)), FormatError);
  EXPECT_THROW(read_dataset("/nonexistent/kmft/data"), IoError);
}

TEST(CsvImport, ParsesAndReportsLine) {
  TempDir tmp;
  {
    std::ofstream(tmp / "ok.csv") << "x,y\n1,2\n3.5,-4\n";
    std::ofstream(tmp / "bad.csv") << "1,2\n3,oops\n";
    std::ofstream(tmp / "ragged.csv") << "1,2\n3\n";
  }
  const auto d = import_csv(tmp / "ok.csv");
  EXPECT_EQ(d.values(), (std::vector<double>{1, 2, 3.5, -4}));
  try {
    import_csv(tmp / "bad.csv");
    FAIL();
  } catch (const FormatError& e) {
    EXPECT_NE(std::string(e.what()).find(":2"), std::string::npos) << e.what();
  }
  EXPECT_THROW(import_csv(tmp / "ragged.csv"), FormatError);
}

TEST(Generator, BlobMeansRecovered) {
  const std::size_t n = 2000, d = 3, blobs = 6;
  const auto g = generate_dataset(n, d, blobs, 0.05, 17);
  // Empirical blob means straight from the labels.
  std::vector<double> mean(blobs * d, 0.0);
  std::vector<std::size_t> count(blobs, 0);
  for (std::size_t i = 0; i < n; ++i) {
    ++count[g.labels[i]];
    for (std::size_t j = 0; j < d; ++j) mean[g.labels[i] * d + j] += g.data.values()[i * d + j];
  }
  for (std::size_t b = 0; b < blobs; ++b) {
    for (std::size_t j = 0; j < d; ++j) mean[b * d + j] /= static_cast<double>(count[b]);
  }
  const auto r = run_sequential(g.data, {blobs, 100, 0, false});
  ASSERT_TRUE(r.converged);
  for (std::size_t i = 0; i < n; ++i) {
    const auto c = r.table.assign[i];
    for (std::size_t j = 0; j < d; ++j) {
      EXPECT_NEAR(r.centroids.center(c)[j], mean[g.labels[i] * d + j], 1e-6);
    }
  }
  // Each blob maps to its own cluster.
  std::set<CenterIndex> used(r.table.assign.begin(), r.table.assign.end());
  EXPECT_EQ(used.size(), blobs);
}

TEST(FailSpec, ParseAndFormat) {
  const auto e = parse_fail_spec("2@7");
  EXPECT_EQ(e.rank, 2u);
  EXPECT_EQ(e.iteration, 7u);
  EXPECT_EQ(e.phase, FailurePhase::kBeforeBarrier);
  const auto c = parse_fail_spec("0@12:checkpoint-inflight");
  EXPECT_EQ(c.phase, FailurePhase::kDuringCheckpoint);
  EXPECT_EQ(c.stage, CheckpointStage::kInFlight);
  EXPECT_EQ(parse_fail_spec("3@1:compute").phase, FailurePhase::kDuringCompute);
  for (const char* s : {"1@4:barrier", "1@4:compute", "1@4:checkpoint", "1@4:checkpoint-commit"}) {
    EXPECT_EQ(format_fail_spec(parse_fail_spec(s)), s);
  }
  for (const char* s : {"", "2", "@7", "2@", "x@7", "2@7:later", "2@0"}) {
    EXPECT_THROW(parse_fail_spec(s), UsageError) << s;
  }
}

ReportRow sample_row() {
  ReportRow r;
  r.config_id = "centers-x";
  r.method = "centers";
  r.procs = 4;
  r.k = 10;
  r.n = 1000;
  r.d = 10;
  r.interval = 10;
  r.seed = 3;
  r.iterations = 42;
  r.converged = true;
  r.recoveries = 1;
  r.epochs_committed = 4;
  r.ledger[LedgerPhase::kCompute] = 9000;
  r.ledger[LedgerPhase::kComm] = 500;
  r.ledger[LedgerPhase::kCheckpointStart] = 300;
  r.ledger[LedgerPhase::kCheckpointCommit] = 200;
  r.ledger[LedgerPhase::kDetect] = 700;
  r.ledger[LedgerPhase::kRestore] = 100;
  r.overhead_frac = overhead_fraction(r.ledger);
  r.wall_ms = 12.5;
  return r;
}

TEST(ReportCsv, HeaderAndRoundTrip) {
  EXPECT_EQ(report_csv_header(),
            "config_id,method,procs,k,n,d,interval,seed,iterations,converged,recoveries,epochs_committed,"
            "vt_compute,vt_comm,vt_ckpt_start,vt_ckpt_commit,vt_detect,vt_restore,overhead_frac,wall_ms,"
            "reason");
  const auto r = sample_row();
  EXPECT_DOUBLE_EQ(r.overhead_frac, 500.0 / 10800.0);
  const auto line = format_report_row(r);
  const auto back = parse_report_row(line);
  EXPECT_EQ(format_report_row(back), line);
  EXPECT_EQ(back.ledger, r.ledger);
  EXPECT_EQ(back.overhead_frac, r.overhead_frac);
  EXPECT_THROW(parse_report_row("a,b,c"), FormatError);
}

TEST(ReportCsv, MalformedRowNamesLine) {
  TempDir tmp;
  append_report(tmp / "r.csv", {sample_row()});
  { std::ofstream(tmp / "r.csv", std::ios::app) << "centers-x,centers,four,10\n"; }
  try {
    read_report(tmp / "r.csv");
    FAIL();
  } catch (const FormatError& e) {
    EXPECT_NE(std::string(e.what()).find(":3:"), std::string::npos) << e.what();
  }
  { std::ofstream(tmp / "h.csv") << "nope\n"; }
  EXPECT_THROW(read_report(tmp / "h.csv"), FormatError);
}

TEST(Summary, SingleRowAggregatesToItself) {
  const auto r = sample_row();
  const auto s = summarize({r});
  ASSERT_EQ(s.size(), 1u);
  EXPECT_EQ(s[0].runs, 1u);
  EXPECT_EQ(s[0].mean_iterations, 42.0);
  EXPECT_EQ(s[0].mean_vt_total, static_cast<double>(r.vt_total()));
  EXPECT_EQ(s[0].mean_overhead_frac, r.overhead_frac);
  EXPECT_EQ(s[0].mean_wall_ms, 12.5);
  EXPECT_EQ(s[0].speedup, 1.0);
}

TEST(Summary, SpeedupAgainstSmallestProcs) {
  auto a = sample_row();
  a.procs = 2;
  a.ledger[LedgerPhase::kCompute] = 20000 - 1800;  // total 20000
  auto b = sample_row();
  b.procs = 4;
  b.ledger[LedgerPhase::kCompute] = 8000 - 1800;  // total 8000
  auto b2 = b;
  b2.ledger[LedgerPhase::kCompute] = 12000 - 1800;  // total 12000
  const auto s = summarize({b, a, b2});
  ASSERT_EQ(s.size(), 2u);
  EXPECT_EQ(s[0].procs, 2u);
  EXPECT_EQ(s[0].speedup, 1.0);
  EXPECT_EQ(s[1].runs, 2u);
  EXPECT_EQ(s[1].mean_vt_total, 10000.0);
  EXPECT_DOUBLE_EQ(s[1].speedup, 2.0);
}

// Small blob workload shared by the end-to-end checks.
struct ExperimentFixture : ::testing::Test {
  RunConfig cfg;
  GeneratedData gen = generate_dataset(1200, 4, 6, 15.0, 2);
  ExperimentFixture() {
    cfg.n = 1200;
    cfg.d = 4;
    cfg.k = 6;
    cfg.procs = 4;
    cfg.interval = 5;
    cfg.seed = 2;
  }
};

TEST_F(ExperimentFixture, SequentialAndCentersAgree) {
  cfg.method = RunMethod::kSequential;
  cfg.procs = 1;
  const auto seq = run_experiment(cfg, gen.data);
  cfg.method = RunMethod::kCenters;
  cfg.procs = 4;
  const auto par = run_experiment(cfg, gen.data);
  EXPECT_EQ(seq.iterations, par.iterations);
  EXPECT_EQ(seq.objective, par.objective);
  EXPECT_TRUE(par.converged);
}

TEST_F(ExperimentFixture, ForcedRunCommitsElevenEpochs) {
  cfg.force_iters = true;
  cfg.max_iters = 550;
  cfg.interval = 50;
  cfg.n = 200;
  const auto small = generate_dataset(200, 4, 6, 15.0, 2);
  for (auto m : {RunMethod::kCenters, RunMethod::kSamples}) {
    cfg.method = m;
    const auto row = run_experiment(cfg, small.data);
    EXPECT_EQ(row.iterations, 550u);
    EXPECT_EQ(row.epochs_committed, 11u);
    EXPECT_FALSE(row.converged);
  }
}

TEST_F(ExperimentFixture, InjectedFailureRecovers) {
  const auto clean = run_experiment(cfg, gen.data);
  cfg.fails = {parse_fail_spec("2@7")};
  const auto row = run_experiment(cfg, gen.data);
  EXPECT_EQ(row.recoveries, 1u);
  EXPECT_TRUE(row.converged);
  EXPECT_EQ(row.iterations, clean.iterations);
  EXPECT_EQ(row.objective, clean.objective);
  EXPECT_GT(row.ledger[LedgerPhase::kRestore], 0u);
  EXPECT_EQ(row.config_id, "centers-n1200-d4-k6-p4-s1-i5-m100-seed2-det-t1000-fail2@7:barrier");
}

TEST_F(ExperimentFixture, AbortedRowKeepsDiagnostics) {
  cfg.fails = {parse_fail_spec("1@3"), parse_fail_spec("2@6")};
  const auto row = run_experiment(cfg, gen.data);
  EXPECT_FALSE(row.converged);
  EXPECT_EQ(row.recoveries, 1u);
  EXPECT_NE(row.reason.find("spares"), std::string::npos) << row.reason;
  EXPECT_GE(row.iterations, 3u);
  EXPECT_GT(row.vt_total(), 0u);
  EXPECT_EQ(parse_report_row(format_report_row(row)).reason, row.reason);
}

TEST_F(ExperimentFixture, DeterministicRowsRepeat) {
  for (auto m : {RunMethod::kSequential, RunMethod::kCenters, RunMethod::kSamples}) {
    cfg.method = m;
    cfg.procs = m == RunMethod::kSequential ? 1 : 4;
    cfg.fails.clear();
    if (m != RunMethod::kSequential) cfg.fails = {parse_fail_spec("1@5:checkpoint")};
    auto a = run_experiment(cfg, gen.data);
    auto b = run_experiment(cfg, gen.data);
    a.wall_ms = b.wall_ms = 0;
    EXPECT_EQ(format_report_row(a), format_report_row(b));
    EXPECT_GE(a.overhead_frac, 0.0);
    EXPECT_LE(a.overhead_frac, 1.0);
    EXPECT_EQ(a.recoveries, m == RunMethod::kSequential ? 0u : 1u);
  }
}

TEST_F(ExperimentFixture, AppendWritesHeaderOnce) {
  TempDir tmp;
  const auto row = run_experiment(cfg, gen.data);
  append_report(tmp / "r.csv", {row});
  append_report(tmp / "r.csv", {row, row});
  const auto rows = read_report(tmp / "r.csv");
  EXPECT_EQ(rows.size(), 3u);
  const auto s = report_summary(tmp / "r.csv", tmp / "s.csv");
  ASSERT_EQ(s.size(), 1u);
  EXPECT_EQ(s[0].runs, 3u);
  const auto text = slurp(tmp / "s.csv");
  EXPECT_EQ(text.substr(0, text.find('\n')), summary_csv_header());
}

TEST(RunConfig, Validates) {
  RunConfig c;
  c.procs = 0;
  EXPECT_THROW(c.validate(), ConfigError);
  c = RunConfig{};
  c.interval = 0;
  EXPECT_THROW(c.validate(), ConfigError);
  c = RunConfig{};
  c.k = c.n + 1;
  EXPECT_THROW(c.validate(), ConfigError);
}

}  // namespace
}  // namespace kmft
