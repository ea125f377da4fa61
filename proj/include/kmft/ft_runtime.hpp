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
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "kmft/checkpoint.hpp"
#include "kmft/kmeans.hpp"
#include "kmft/parallel_kmeans.hpp"
#include "kmft/simcluster.hpp"

namespace kmft {

enum class Role : std::uint8_t { kActive, kSpare, kDead };

/// Active compute group plus the idle spare pool. Ranks are numbered
/// 0..world-1; the first `active` ranks start in the group.
struct WorldLayout {
  sim::Group active{{0}, 0};
  std::vector<sim::RankId> spares;
  std::vector<Role> roles;

  static WorldLayout initial(std::size_t active, std::size_t spares);
  std::size_t world_size() const { return roles.size(); }
};

struct RecoveryPlan {
  WorldLayout next;
  // (failed rank, spare that takes its position), in group position order.
  std::vector<std::pair<sim::RankId, sim::RankId>> replacements;
};

/// Steps one and two of recovery: hand each failed position to the next
/// spare and rebuild the group with a new generation. Throws
/// UnrecoverableError when spares run out, or when `need_mirrors` and a
/// failed rank's mirror failed too.
RecoveryPlan plan_recovery(const WorldLayout& layout, const std::vector<sim::RankId>& failed,
                           bool need_mirrors);

/// Barrier-timeout failure detection. Empty when the barrier passes;
/// otherwise the group members the state vector reports as corrupt.
std::vector<sim::RankId> detect_failures(sim::Cluster& cluster, sim::RankId self,
                                         const sim::Group& group, sim::OpTag tag,
                                         std::optional<sim::Ticks> timeout = std::nullopt);

struct FtOptions {
  Method method = Method::kCenters;
  ckpt::CheckpointPolicy policy;
  // Off: a plain parallel run without detection or checkpoints; any rank
  // loss aborts the run.
  bool fault_tolerance = true;
  sim::CostTable costs;
  sim::SchedMode mode = sim::SchedMode::kDeterministic;
  bool trace = false;
  bool record_history = false;
  bool audit = false;
};

struct DetectionRecord {
  std::uint64_t generation = 0;
  std::uint64_t iteration = 0;
  sim::RankId rank = 0;
  std::vector<sim::RankId> failed;
  std::vector<sim::RankId> corrupt;  // full state vector view at detection
};

struct RollbackRecord {
  std::uint64_t generation = 0;  // generation of the rebuilt group
  std::uint64_t failed_at = 0;   // last iteration reached before recovery
  std::uint64_t resumed_from = 0;
  std::optional<std::uint64_t> epoch;
  std::vector<std::pair<sim::RankId, sim::RankId>> replacements;
};

struct RestoreRecord {
  std::uint64_t generation = 0;
  std::uint64_t epoch = 0;
  std::size_t position = 0;
  sim::RankId rank = 0;
  Bytes payload;
};

struct IterationSnapshot {
  CentroidSet centroids;
  AssignmentTable table;
};

struct RunOutcome {
  CentroidSet centroids;
  AssignmentTable table;
  std::uint64_t iterations = 0;
  bool converged = false;
  bool aborted = false;
  std::string reason{};
  std::size_t recoveries = 0;
  std::uint64_t epochs_committed = 0;

  std::vector<sim::PhaseLedger> ledgers{};  // by rank id
  sim::PhaseLedger critical{};              // slowest rank of the final group
  sim::Group final_group{{0}, 0};
  std::vector<sim::RankId> killed{};

  std::vector<DetectionRecord> detections{};
  std::vector<RollbackRecord> rollbacks{};
  // (epoch, position) -> payload bytes at checkpoint start. Audit only.
  std::map<std::pair<std::uint64_t, std::size_t>, std::vector<Bytes>> captured{};
  std::vector<RestoreRecord> restored{};
  // Last execution of every iteration. History only.
  std::map<std::uint64_t, IterationSnapshot> history{};
  std::vector<sim::TraceEvent> trace{};
};

/// Runs the chosen parallel method under checkpointing, failure detection and
/// spare-node recovery. Unrecoverable failures end in an aborted outcome.
RunOutcome run_ft_kmeans(const Dataset& data, const KmeansConfig& cfg, const FtOptions& options,
                         const WorldLayout& layout, const sim::FailurePlan& plan);

/// Plain run of a parallel method on `procs` ranks.
RunOutcome run_parallel_kmeans(const Dataset& data, const KmeansConfig& cfg, Method method,
                               std::size_t procs,
                               sim::SchedMode mode = sim::SchedMode::kDeterministic,
                               bool record_history = false);

}  // namespace kmft
