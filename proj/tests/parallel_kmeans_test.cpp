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

#include "kmft/parallel_kmeans.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <map>
#include <mutex>
#include <set>

#include "kmft/errors.hpp"
#include "kmft/ft_runtime.hpp"
#include "test_support.hpp"

namespace kmft {
namespace {

using testing::oracle_lloyd;
using testing::random_instance;

sim::Group group_of(std::size_t p) {
  std::vector<sim::RankId> m;
  for (std::size_t r = 0; r < p; ++r) m.push_back(static_cast<sim::RankId>(r));
  return sim::Group(m, 0);
}

TEST(Partition, BalancedBlocks) {
  BlockPartition b(10, 4);
  EXPECT_EQ((std::vector<std::size_t>{b.size(0), b.size(1), b.size(2), b.size(3)}),
            (std::vector<std::size_t>{3, 3, 2, 2}));
  BlockPartition one(4, 4);
  for (std::size_t p = 0; p < 4; ++p) {
    EXPECT_EQ(one.begin(p), p);
    EXPECT_EQ(one.size(p), 1u);
  }
  EXPECT_THROW(BlockPartition(3, 0), ConfigError);
  EXPECT_THROW(partition_samples(3, group_of(4)), UsageError);
}

TEST(Partition, ExhaustiveCover) {
  for (std::size_t k = 1; k <= 64; ++k) {
    for (std::size_t p = 1; p <= 16; ++p) {
      const auto g = group_of(p);
      const auto own = partition_centers(k, g);
      std::vector<int> hits(k, 0);
      std::size_t lo = k, hi = 0;
      for (std::size_t pos = 0; pos < p; ++pos) {
        const auto mine = own.owned_by(pos);
        lo = std::min(lo, mine.size());
        hi = std::max(hi, mine.size());
        for (std::size_t i = 0; i + 1 < mine.size(); ++i) ASSERT_EQ(mine[i] + 1, mine[i + 1]);
        for (auto c : mine) {
          ++hits.at(c);
          ASSERT_EQ(own.owner(c), g.at(pos));
        }
      }
      for (int h : hits) ASSERT_EQ(h, 1) << "k=" << k << " p=" << p;
      ASSERT_LE(hi - lo, 1u);
    }
  }
}

TEST(TransferMsg, WireFormat) {
  std::vector<TransferMsg> msgs{{3, 1}, {700, 15}};
  const Bytes b = encode_transfers(msgs);
  EXPECT_EQ(b.size(), 2 * kTransferMsgWireSize);
  EXPECT_EQ(decode_transfers(b), msgs);
  EXPECT_THROW(decode_transfers(std::span(b).first(17)), FormatError);
}

TEST(Assemble, RequiresExactlyOnce) {
  std::vector<std::vector<OwnedSample>> ok{{{0, 1}}, {{1, 0}, {2, 1}}};
  auto t = assemble_assignments(3, 2, ok);
  EXPECT_EQ(t.assign, (std::vector<CenterIndex>{1, 0, 1}));
  EXPECT_EQ(t.counts, (std::vector<std::uint64_t>{1, 2}));
  std::vector<std::vector<OwnedSample>> dup{{{0, 1}}, {{0, 0}, {2, 1}}};
  EXPECT_THROW(assemble_assignments(3, 2, dup), UsageError);
  std::vector<std::vector<OwnedSample>> missing{{{0, 1}}};
  EXPECT_THROW(assemble_assignments(3, 2, missing), UsageError);
}

struct RankRecord {
  std::vector<OwnedSample> owned;
  std::vector<double> centroids;
  IterationStatus status;
  IterationStats stats;
};

// Runs a method on P simulated ranks; result[iteration][rank].
std::vector<std::vector<RankRecord>> drive(Method method, const Dataset& data, std::size_t k,
                                           std::size_t procs, std::size_t max_iters,
                                           const std::vector<double>* init = nullptr) {
  sim::ClusterOptions o;
  o.world_size = procs;
  sim::Cluster cluster(o);
  std::mutex mu;
  std::vector<std::vector<RankRecord>> out(max_iters, std::vector<RankRecord>(procs));
  std::size_t done = max_iters;
  cluster.run([&](sim::RankId self) {
    const auto g = group_of(procs);
    RankContext ctx{cluster, self, g};
    auto state = initial_rank_state(data, k, g, g.position_of(self));
    if (init) state.centroids = CentroidSet(k, data.d(), *init);
    for (std::size_t it = 0; it < max_iters; ++it) {
      IterationStats stats;
      const auto status = run_iteration(method, ctx, data, state, &stats);
      std::lock_guard lock(mu);
      out[it][self] = {state.owned, state.centroids.coords(), status, stats};
      if (status == IterationStatus::kConverged) {
        done = std::min(done, it + 1);
        break;
      }
    }
  });
  out.resize(done);
  return out;
}

AssignmentTable table_at(const std::vector<RankRecord>& ranks, std::size_t n, std::size_t k) {
  std::vector<std::vector<OwnedSample>> parts;
  for (const auto& r : ranks) parts.push_back(r.owned);
  return assemble_assignments(n, k, parts);
}

TEST(Method1, HandExample) {
  Dataset data(4, 1, {0, 1, 9, 10});
  const std::vector<double> init{0, 9};
  const auto run = drive(Method::kCenters, data, 2, 2, 1, &init);
  const auto& it1 = run.at(0);
  std::vector<std::uint64_t> r0, r1;
  for (auto s : it1[0].owned) r0.push_back(s.sample);
  for (auto s : it1[1].owned) r1.push_back(s.sample);
  EXPECT_EQ(r0, (std::vector<std::uint64_t>{0, 1}));
  EXPECT_EQ(r1, (std::vector<std::uint64_t>{2, 3}));
  for (const auto& r : it1) EXPECT_EQ(r.centroids, (std::vector<double>{0.5, 9.5}));
}

TEST(Method2, HandExample) {
  Dataset data(4, 1, {0, 1, 9, 10});
  const std::vector<double> init{0, 9};
  const auto run = drive(Method::kSamples, data, 2, 2, 1, &init);
  for (const auto& r : run.at(0)) EXPECT_EQ(r.centroids, (std::vector<double>{0.5, 9.5}));
  EXPECT_EQ(table_at(run.at(0), 4, 2).counts, (std::vector<std::uint64_t>{2, 2}));
}

TEST(SingleRank, BothMethodsEqualSequentialBitwise) {
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    const auto in = random_instance(seed, 200, 5, 10);
    const auto want = oracle_lloyd(in, 60);
    for (auto m : {Method::kCenters, Method::kSamples}) {
      const auto run = drive(m, in.dataset(), in.k, 1, 60);
      ASSERT_EQ(run.size(), want.iterations);
      for (std::size_t it = 0; it < run.size(); ++it) {
        ASSERT_EQ(run[it][0].centroids, want.center_history[it]) << "seed " << seed;
        EXPECT_EQ(run[it][0].stats.transfers_sent, 0u);
      }
    }
  }
}

TEST(Method1, OracleEquivalenceAndOwnership) {
  for (std::uint64_t seed = 1; seed <= 100; ++seed) {
    const auto in = random_instance(seed, 300, 6, 12);
    const std::size_t procs = seed % 2 ? 2 : 4;
    const auto want = oracle_lloyd(in, 100);
    const auto run = drive(Method::kCenters, in.dataset(), in.k, procs, 100);
    ASSERT_EQ(run.size(), want.iterations) << "seed " << seed;
    const auto centers = partition_centers(in.k, group_of(procs));
    for (std::size_t it = 0; it < run.size(); ++it) {
      const auto table = table_at(run[it], in.n, in.k);
      ASSERT_EQ(table.assign, want.assign_history[it]) << "seed " << seed << " it " << it;
      for (std::size_t r = 0; r < procs; ++r) {
        ASSERT_EQ(run[it][r].centroids, want.center_history[it]) << "seed " << seed;
        for (auto s : run[it][r].owned) ASSERT_EQ(centers.owner(s.center), r);
        ASSERT_EQ(run[it][r].status, run[it][0].status);
      }
    }
    std::uint64_t last = 0;
    for (const auto& r : run.back()) last += r.stats.transfers_sent;
    EXPECT_EQ(last, 0u) << "seed " << seed;
  }
}

double rel_err(double a, double b) {
  const double scale = std::max({std::abs(a), std::abs(b), 1.0});
  return std::abs(a - b) / scale;
}

TEST(Method2, OracleEquivalence) {
  for (std::uint64_t seed = 1; seed <= 100; ++seed) {
    const auto in = random_instance(seed, 300, 6, 12);
    const std::size_t procs = std::array<std::size_t, 3>{2, 4, 8}[seed % 3];
    const auto want = oracle_lloyd(in, 100);
    const auto run = drive(Method::kSamples, in.dataset(), in.k, procs, 100);
    ASSERT_EQ(run.size(), want.iterations) << "seed " << seed;
    const auto samples = partition_samples(in.n, group_of(procs));
    for (std::size_t it = 0; it < run.size(); ++it) {
      const auto table = table_at(run[it], in.n, in.k);
      ASSERT_EQ(table.assign, want.assign_history[it]) << "seed " << seed << " it " << it;
      std::uint64_t total = 0;
      for (auto c : table.counts) total += c;
      EXPECT_EQ(total, in.n);
      for (std::size_t r = 0; r < procs; ++r) {
        for (auto s : run[it][r].owned) ASSERT_EQ(samples.owner(s.sample), r);
        ASSERT_EQ(run[it][r].centroids, run[it][0].centroids);
        for (std::size_t j = 0; j < want.center_history[it].size(); ++j) {
          ASSERT_LE(rel_err(run[it][r].centroids[j], want.center_history[it][j]), 1e-9);
        }
      }
    }
  }
}

TEST(Rebuild, RestoresCentroidsFromAssignments) {
  for (auto method : {Method::kCenters, Method::kSamples}) {
    const auto in = random_instance(42, 300, 4, 9);
    const Dataset data = in.dataset();
    sim::ClusterOptions o;
    o.world_size = 3;
    sim::Cluster cluster(o);
    std::vector<bool> same(3, false);
    cluster.run([&](sim::RankId self) {
      const auto g = group_of(3);
      RankContext ctx{cluster, self, g};
      auto state = initial_rank_state(data, in.k, g, self);
      for (int it = 0; it < 3; ++it) run_iteration(method, ctx, data, state);
      const CentroidSet kept = state.centroids;
      state.centroids = CentroidSet(in.k, in.d, std::vector<double>(in.k * in.d, -7.0));
      rebuild_centroids(method, ctx, data, state, kept);
      same[self] = state.centroids == kept;
    });
    for (bool s : same) EXPECT_TRUE(s);
  }
}

TEST(PlainRun, MatchesSequential) {
  const auto in = random_instance(8, 400, 5, 10);
  const auto seq = run_sequential(in.dataset(), {in.k, 100, 0, false});
  for (auto m : {Method::kCenters, Method::kSamples}) {
    const auto out = run_parallel_kmeans(in.dataset(), {in.k, 100, 0, false}, m, 4);
    EXPECT_FALSE(out.aborted);
    EXPECT_EQ(out.iterations, seq.iterations);
    EXPECT_EQ(out.table.assign, seq.table.assign);
    if (m == Method::kCenters) EXPECT_EQ(out.centroids, seq.centroids);
  }
}

}  // namespace
}  // namespace kmft
