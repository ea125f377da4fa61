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
#include <span>
#include <utility>
#include <vector>

#include "kmft/kmeans.hpp"
#include "kmft/simcluster.hpp"

namespace kmft {

enum class Method : std::uint8_t {
  kCenters,  // each rank owns a block of centers and the samples assigned to them
  kSamples,  // each rank owns a fixed block of samples
};

enum class IterationStatus : std::uint8_t { kContinue, kConverged };

/// Contiguous balanced blocks of [0, count) in ascending position order. The
/// first count % parts blocks get one extra element.
class BlockPartition {
 public:
  BlockPartition(std::size_t count, std::size_t parts);

  std::size_t count() const { return bounds_.back(); }
  std::size_t parts() const { return bounds_.size() - 1; }
  std::size_t begin(std::size_t part) const { return bounds_.at(part); }
  std::size_t end(std::size_t part) const { return bounds_.at(part + 1); }
  std::size_t size(std::size_t part) const { return end(part) - begin(part); }
  std::size_t part_of(std::size_t index) const;

 private:
  std::vector<std::size_t> bounds_;
};

/// Index -> owning rank, derived from a group's ring order.
class Ownership {
 public:
  Ownership(std::size_t count, const sim::Group& group);

  const BlockPartition& blocks() const { return blocks_; }
  std::size_t owner_position(std::size_t index) const { return blocks_.part_of(index); }
  sim::RankId owner(std::size_t index) const { return members_[owner_position(index)]; }
  std::vector<std::size_t> owned_by(std::size_t position) const;

 private:
  BlockPartition blocks_;
  std::vector<sim::RankId> members_;
};

using CenterOwnership = Ownership;
using SampleOwnership = Ownership;

/// Throws ConfigError on an empty group.
CenterOwnership partition_centers(std::size_t k, const sim::Group& group);
/// Throws ConfigError on an empty group and UsageError when n < group size.
SampleOwnership partition_samples(std::size_t n, const sim::Group& group);

/// Ownership change notice sent to a center's owner. Exactly two unsigned
/// 64-bit integers on the wire.
struct TransferMsg {
  std::uint64_t sample_id = 0;
  std::uint64_t new_center = 0;

  friend bool operator==(const TransferMsg&, const TransferMsg&) = default;
};
inline constexpr std::size_t kTransferMsgWireSize = 16;

Bytes encode_transfers(std::span<const TransferMsg> msgs);
std::vector<TransferMsg> decode_transfers(std::span<const std::byte> bytes);

struct OwnedSample {
  std::uint64_t sample = 0;
  CenterIndex center = kUnassigned;

  friend bool operator==(const OwnedSample&, const OwnedSample&) = default;
};

/// Per-rank algorithm state. `owned` is sorted by sample id.
struct RankKmeansState {
  CentroidSet centroids;
  std::vector<OwnedSample> owned;
  std::uint64_t iteration = 0;
};

/// State before the first iteration: initial centers and the rank's block of
/// samples, unassigned.
RankKmeansState initial_rank_state(const Dataset& data, std::size_t k, const sim::Group& group,
                                   std::size_t position);

struct RankContext {
  sim::Cluster& cluster;
  sim::RankId self;
  const sim::Group& group;
};

struct IterationStats {
  bool changed = false;
  std::uint64_t transfers_sent = 0;
  std::uint64_t transfers_received = 0;
};

// Collective step ids within one iteration.
namespace steps {
inline constexpr std::uint32_t kChanged = 1;
inline constexpr std::uint32_t kSums = 2;
inline constexpr std::uint32_t kCounts = 3;
inline constexpr std::uint32_t kDetect = 10;
inline constexpr std::uint32_t kCommit = 11;
inline constexpr std::uint32_t kDetectAfterCheckpoint = 12;
inline constexpr std::uint32_t kExit = 13;
inline constexpr std::uint32_t kRecoveryDone = 14;
inline constexpr std::uint32_t kRestoreSums = 20;
inline constexpr std::uint32_t kRestoreCounts = 21;
inline constexpr std::uint32_t kCenterBroadcast = 1000;   // + root position
inline constexpr std::uint32_t kRestoreBroadcast = 2000;  // + root position
}  // namespace steps

/// One iteration of the center-splitting method. Advances state.iteration.
/// Peer loss surfaces as Timeout or PeerDead.
IterationStatus method1_iteration(const RankContext& ctx, const Dataset& data,
                                  RankKmeansState& state, IterationStats* stats = nullptr);

/// One iteration of the sample-splitting method. Advances state.iteration.
IterationStatus method2_iteration(const RankContext& ctx, const Dataset& data,
                                  RankKmeansState& state, IterationStats* stats = nullptr);

IterationStatus run_iteration(Method method, const RankContext& ctx, const Dataset& data,
                              RankKmeansState& state, IterationStats* stats = nullptr);

/// Rebuilds state.centroids from the owned assignments (for example after a
/// restore). Clusters without samples take their coordinates from `fallback`.
void rebuild_centroids(Method method, const RankContext& ctx, const Dataset& data,
                       RankKmeansState& state, const CentroidSet& fallback);

/// Joins per-rank owned samples into a global table. Throws UsageError unless
/// every sample is owned exactly once.
AssignmentTable assemble_assignments(std::size_t n, std::size_t k,
                                     std::span<const std::vector<OwnedSample>> per_rank);

}  // namespace kmft
