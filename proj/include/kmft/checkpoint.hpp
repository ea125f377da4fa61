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
#include <span>
#include <vector>

#include "kmft/kmeans.hpp"
#include "kmft/parallel_kmeans.hpp"
#include "kmft/simcluster.hpp"

// In-memory coordinated checkpointing: each rank keeps a local copy of its
// snapshot and mirrors it asynchronously to its left ring neighbour. A
// snapshot becomes a recovery point once a group-wide commit succeeds.
namespace kmft::ckpt {

enum class Topology : std::uint8_t { kRingLeft };

struct CheckpointPolicy {
  Topology topology = Topology::kRingLeft;
  std::uint64_t interval = 1;  // checkpoint every `interval` iterations
  // Commit right after starting. When false, a checkpoint iteration commits
  // the previous snapshot and then starts a new one.
  bool eager_commit = true;

  void validate() const;
};

/// Ring-left mirror: the predecessor in the group's cyclic order.
/// Throws PolicyError for a group of one.
sim::RankId mirror_target(sim::RankId rank, const sim::Group& group);

/// Checkpoint payload. Wire layout, little-endian: epoch u64, iteration u64,
/// count u64, then count pairs of (sample u64, center u64).
struct SnapshotPayload {
  std::uint64_t epoch = 0;
  std::uint64_t iteration = 0;
  std::vector<OwnedSample> entries;

  friend bool operator==(const SnapshotPayload&, const SnapshotPayload&) = default;
};

inline constexpr std::size_t kPayloadHeaderSize = 24;
inline constexpr std::size_t kPayloadEntrySize = 16;

Bytes encode_payload(const SnapshotPayload& payload);
SnapshotPayload decode_payload(std::span<const std::byte> bytes);

enum class SnapshotStatus : std::uint8_t { kStarted, kCommitted };

struct Snapshot {
  std::uint64_t epoch = 0;
  std::uint64_t iteration = 0;
  Bytes payload;
  SnapshotStatus status = SnapshotStatus::kStarted;
};

struct CommittedPoint {
  std::uint64_t epoch = 0;
  std::uint64_t iteration = 0;

  friend bool operator==(const CommittedPoint&, const CommittedPoint&) = default;
};

/// Sizes of the checkpoint segment regions for a given problem shape.
struct SegmentLayout {
  std::size_t max_entries = 0;
  std::size_t k = 0;
  std::size_t d = 0;

  std::size_t slot_size() const { return kPayloadHeaderSize + kPayloadEntrySize * max_entries; }
  std::size_t sidecar_size() const { return k * d * sizeof(double); }
  std::size_t local_offset(std::uint64_t epoch) const { return (epoch % 2) * slot_size(); }
  std::size_t mirror_offset(std::uint64_t epoch) const { return (2 + epoch % 2) * slot_size(); }
  std::size_t sidecar_offset(std::uint64_t epoch) const {
    return 4 * slot_size() + (epoch % 2) * sidecar_size();
  }
  std::size_t total() const { return 4 * slot_size() + 2 * sidecar_size(); }
};

inline constexpr sim::SegmentId kCheckpointSegment = 1;

/// Registers the checkpoint segment on every rank of the world.
void register_segments(sim::Cluster& cluster, const SegmentLayout& layout);

/// Per-rank checkpoint state. Snapshot buffers are double-buffered by epoch
/// parity so that writing epoch e + 1 never touches the copy of epoch e.
class CheckpointStore {
 public:
  CheckpointStore(sim::Cluster& cluster, sim::RankId self, SegmentLayout layout);

  const SegmentLayout& layout() const { return layout_; }
  const std::optional<CommittedPoint>& last_committed() const { return committed_; }
  const std::optional<Snapshot>& started() const { return started_; }
  std::uint64_t next_epoch() const { return next_epoch_; }

  /// Writes the payload locally and starts the asynchronous mirror write.
  /// `centroids` is kept next to the local copy only. Throws SequenceError if
  /// a snapshot is already outstanding or the epoch does not advance.
  sim::Token start(const sim::Group& group, std::uint64_t epoch, std::uint64_t iteration,
                   const Bytes& payload, const CentroidSet& centroids);

  /// Waits for the local mirror write, then joins the group barrier. On OK
  /// the epoch becomes the recovery point. `iteration` is the loop iteration
  /// used for kill points.
  sim::BarrierStatus commit(const sim::Group& group, std::uint64_t epoch, std::uint64_t iteration,
                            std::optional<sim::Ticks> timeout = std::nullopt);

  /// Drops an outstanding snapshot after a failed commit.
  void discard_started();

  Bytes read_local(std::uint64_t epoch) const;
  /// One-sided read of the copy `mirror` holds for its right neighbour.
  Bytes read_mirror(sim::RankId mirror, std::uint64_t epoch) const;
  CentroidSet read_sidecar(std::uint64_t epoch) const;

  /// Makes `payload` this rank's committed local copy (used by a spare that
  /// replaced a failed rank).
  void install(const CommittedPoint& point, const Bytes& payload, const CentroidSet& centroids);
  /// Resets to "nothing committed"; the next epoch will be 1.
  void reset();

  /// Re-sends the committed local copy to the current mirror and waits.
  sim::TransferStatus remirror(const sim::Group& group);

 private:
  void write_local(std::uint64_t epoch, const Bytes& payload, const CentroidSet& centroids,
                   std::uint64_t iteration, bool with_kill_point);

  sim::Cluster& cluster_;
  sim::RankId self_;
  SegmentLayout layout_;
  std::optional<CommittedPoint> committed_;
  std::optional<Snapshot> started_;
  sim::Token token_;
  std::uint64_t next_epoch_ = 1;
};

/// Collects every member's payload for `epoch` by inspecting segments: live
/// ranks from their local copy, dead ranks from their mirror. Throws
/// UnrecoverableError when a rank and its mirror are both dead.
std::map<sim::RankId, Bytes> restore(const sim::Cluster& cluster, const sim::Group& group,
                                     const SegmentLayout& layout, std::uint64_t epoch);

}  // namespace kmft::ckpt
