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

#include "kmft/checkpoint.hpp"

#include <fmt/format.h>

#include "kmft/errors.hpp"

namespace kmft::ckpt {

using sim::CheckpointStage;
using sim::FailurePhase;
using sim::LedgerPhase;

void CheckpointPolicy::validate() const {
  if (interval == 0) throw ConfigError("checkpoint interval must be >= 1");
}

sim::RankId mirror_target(sim::RankId rank, const sim::Group& group) {
  if (group.size() < 2) throw PolicyError("ring mirroring needs at least two ranks");
  const std::size_t pos = group.position_of(rank);
  return group.at((pos + group.size() - 1) % group.size());
}

Bytes encode_payload(const SnapshotPayload& payload) {
  ByteWriter w;
  w.u64(payload.epoch);
  w.u64(payload.iteration);
  w.u64(payload.entries.size());
  for (const auto& e : payload.entries) {
    w.u64(e.sample);
    w.u64(e.center);
  }
  return std::move(w).take();
}

SnapshotPayload decode_payload(std::span<const std::byte> bytes) {
  ByteReader r(bytes);
  SnapshotPayload p;
  p.epoch = r.u64();
  p.iteration = r.u64();
  const std::uint64_t count = r.u64();
  if (count > r.remaining() / kPayloadEntrySize) throw FormatError("payload count exceeds buffer");
  p.entries.resize(count);
  for (auto& e : p.entries) {
    e.sample = r.u64();
    const std::uint64_t c = r.u64();
    if (c > kUnassigned) throw FormatError("payload center out of range");
    e.center = static_cast<CenterIndex>(c);
  }
  return p;
}

void register_segments(sim::Cluster& cluster, const SegmentLayout& layout) {
  for (std::size_t r = 0; r < cluster.world_size(); ++r) {
    cluster.add_segment(static_cast<sim::RankId>(r), kCheckpointSegment, layout.total());
  }
}

namespace {

// Header of a stored copy: returns (epoch, full payload length).
std::pair<std::uint64_t, std::size_t> parse_header(std::span<const std::byte> header,
                                                   std::size_t slot_size) {
  ByteReader r(header);
  const std::uint64_t epoch = r.u64();
  r.u64();
  const std::uint64_t count = r.u64();
  const std::size_t length = kPayloadHeaderSize + kPayloadEntrySize * count;
  if (length > slot_size) throw FormatError("stored snapshot header is corrupt");
  return {epoch, length};
}

}  // namespace

CheckpointStore::CheckpointStore(sim::Cluster& cluster, sim::RankId self, SegmentLayout layout)
    : cluster_(cluster), self_(self), layout_(layout) {}

void CheckpointStore::write_local(std::uint64_t epoch, const Bytes& payload,
                                  const CentroidSet& centroids, std::uint64_t iteration,
                                  bool with_kill_point) {
  if (payload.size() > layout_.slot_size()) throw SegmentError("snapshot payload exceeds its slot");
  const std::size_t offset = layout_.local_offset(epoch);
  const std::size_t half = payload.size() / 2;
  const std::span<const std::byte> bytes(payload);
  cluster_.local_write(self_, kCheckpointSegment, offset, bytes.first(half));
  if (with_kill_point) {
    cluster_.fail_point(self_, iteration, FailurePhase::kDuringCheckpoint, CheckpointStage::kLocalWrite);
  }
  cluster_.local_write(self_, kCheckpointSegment, offset + half, bytes.subspan(half));
  cluster_.local_write(self_, kCheckpointSegment, layout_.sidecar_offset(epoch),
                       doubles_to_bytes(centroids.coords()));
}

sim::Token CheckpointStore::start(const sim::Group& group, std::uint64_t epoch,
                                  std::uint64_t iteration, const Bytes& payload,
                                  const CentroidSet& centroids) {
  if (started_) {
    throw SequenceError(fmt::format("epoch {} is still outstanding", started_->epoch));
  }
  if (committed_ && epoch <= committed_->epoch) {
    throw SequenceError(fmt::format("epoch {} does not follow committed epoch {}", epoch,
                                    committed_->epoch));
  }
  cluster_.set_phase(self_, LedgerPhase::kCheckpointStart);
  write_local(epoch, payload, centroids, iteration, true);
  const auto bw = std::max<sim::Ticks>(1, cluster_.costs().bytes_per_tick);
  cluster_.advance(self_, (payload.size() + bw - 1) / bw);
  cluster_.fail_point(self_, iteration, FailurePhase::kDuringCheckpoint,
                      CheckpointStage::kBeforeTransfer);

  const sim::RankId mirror = mirror_target(self_, group);
  token_ = cluster_.write_remote(self_, mirror, kCheckpointSegment, layout_.mirror_offset(epoch),
                                 payload);
  started_ = Snapshot{epoch, iteration, payload, SnapshotStatus::kStarted};
  next_epoch_ = epoch + 1;
  cluster_.fail_point(self_, iteration, FailurePhase::kDuringCheckpoint, CheckpointStage::kInFlight);
  return token_;
}

sim::BarrierStatus CheckpointStore::commit(const sim::Group& group, std::uint64_t epoch,
                                           std::uint64_t iteration,
                                           std::optional<sim::Ticks> timeout) {
  if (!started_ || started_->epoch != epoch) {
    throw SequenceError(fmt::format("commit of epoch {} without a matching start", epoch));
  }
  cluster_.set_phase(self_, LedgerPhase::kCheckpointCommit);
  cluster_.fail_point(self_, iteration, FailurePhase::kDuringCheckpoint,
                      CheckpointStage::kBeforeCommitWait);
  cluster_.wait(self_, token_);
  cluster_.fail_point(self_, iteration, FailurePhase::kDuringCheckpoint,
                      CheckpointStage::kBeforeCommitBarrier);
  const auto status = cluster_.barrier(self_, group, sim::OpTag{epoch, steps::kCommit}, timeout);
  if (status == sim::BarrierStatus::kOk) {
    committed_ = CommittedPoint{epoch, started_->iteration};
    started_.reset();
  }
  return status;
}

void CheckpointStore::discard_started() {
  if (!started_) return;
  cluster_.wait(self_, token_);
  started_.reset();
  next_epoch_ = committed_ ? committed_->epoch + 1 : 1;
}

Bytes CheckpointStore::read_local(std::uint64_t epoch) const {
  const std::size_t offset = layout_.local_offset(epoch);
  const Bytes header = cluster_.local_read(self_, kCheckpointSegment, offset, kPayloadHeaderSize);
  const auto [stored, length] = parse_header(header, layout_.slot_size());
  if (stored != epoch) {
    throw FormatError(fmt::format("local copy holds epoch {}, wanted {}", stored, epoch));
  }
  return cluster_.local_read(self_, kCheckpointSegment, offset, length);
}

Bytes CheckpointStore::read_mirror(sim::RankId mirror, std::uint64_t epoch) const {
  const std::size_t offset = layout_.mirror_offset(epoch);
  const Bytes header =
      cluster_.read_remote(self_, mirror, kCheckpointSegment, offset, kPayloadHeaderSize);
  const auto [stored, length] = parse_header(header, layout_.slot_size());
  if (stored != epoch) {
    throw FormatError(fmt::format("mirror on rank {} holds epoch {}, wanted {}", mirror, stored, epoch));
  }
  return cluster_.read_remote(self_, mirror, kCheckpointSegment, offset, length);
}

CentroidSet CheckpointStore::read_sidecar(std::uint64_t epoch) const {
  const Bytes raw = cluster_.local_read(self_, kCheckpointSegment, layout_.sidecar_offset(epoch),
                                        layout_.sidecar_size());
  return CentroidSet(layout_.k, layout_.d, bytes_to_doubles(raw));
}

void CheckpointStore::install(const CommittedPoint& point, const Bytes& payload,
                              const CentroidSet& centroids) {
  write_local(point.epoch, payload, centroids, point.iteration, false);
  committed_ = point;
  started_.reset();
  next_epoch_ = point.epoch + 1;
}

void CheckpointStore::reset() {
  committed_.reset();
  started_.reset();
  next_epoch_ = 1;
}

sim::TransferStatus CheckpointStore::remirror(const sim::Group& group) {
  if (!committed_) return sim::TransferStatus::kDelivered;
  const Bytes payload = read_local(committed_->epoch);
  const sim::RankId mirror = mirror_target(self_, group);
  const auto token = cluster_.write_remote(self_, mirror, kCheckpointSegment,
                                           layout_.mirror_offset(committed_->epoch), payload);
  return cluster_.wait(self_, token);
}

std::map<sim::RankId, Bytes> restore(const sim::Cluster& cluster, const sim::Group& group,
                                     const SegmentLayout& layout, std::uint64_t epoch) {
  std::map<sim::RankId, Bytes> out;
  for (sim::RankId r : group.members()) {
    sim::RankId holder = r;
    std::size_t offset = layout.local_offset(epoch);
    if (cluster.health(r) != sim::Health::kHealthy) {
      holder = mirror_target(r, group);
      offset = layout.mirror_offset(epoch);
      if (cluster.health(holder) != sim::Health::kHealthy) {
        throw UnrecoverableError(
            fmt::format("rank {} and its mirror {} are both lost", r, holder));
      }
    }
    const Bytes header = cluster.peek(holder, kCheckpointSegment, offset, kPayloadHeaderSize);
    const auto [stored, length] = parse_header(header, layout.slot_size());
    if (stored != epoch) {
      throw UnrecoverableError(
          fmt::format("copy of rank {} on rank {} holds epoch {}, wanted {}", r, holder, stored, epoch));
    }
    out.emplace(r, cluster.peek(holder, kCheckpointSegment, offset, length));
  }
  return out;
}

}  // namespace kmft::ckpt
