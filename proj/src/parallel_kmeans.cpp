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

#include <algorithm>

#include <fmt/format.h>

#include "kmft/errors.hpp"

namespace kmft {

using sim::LedgerPhase;
using sim::OpTag;
using sim::RankId;

BlockPartition::BlockPartition(std::size_t count, std::size_t parts) {
  if (parts == 0) throw ConfigError("cannot partition over an empty group");
  bounds_.reserve(parts + 1);
  bounds_.push_back(0);
  const std::size_t base = count / parts;
  const std::size_t extra = count % parts;
  for (std::size_t p = 0; p < parts; ++p) bounds_.push_back(bounds_.back() + base + (p < extra ? 1 : 0));
}

std::size_t BlockPartition::part_of(std::size_t index) const {
  if (index >= count()) throw UsageError("index outside partition");
  auto it = std::upper_bound(bounds_.begin(), bounds_.end(), index);
  return static_cast<std::size_t>(it - bounds_.begin()) - 1;
}

Ownership::Ownership(std::size_t count, const sim::Group& group)
    : blocks_(count, group.size()), members_(group.members()) {}

std::vector<std::size_t> Ownership::owned_by(std::size_t position) const {
  std::vector<std::size_t> out;
  for (std::size_t i = blocks_.begin(position); i < blocks_.end(position); ++i) out.push_back(i);
  return out;
}

CenterOwnership partition_centers(std::size_t k, const sim::Group& group) {
  if (k == 0) throw UsageError("k must be >= 1");
  return Ownership(k, group);
}

SampleOwnership partition_samples(std::size_t n, const sim::Group& group) {
  if (n < group.size()) {
    throw UsageError(fmt::format("{} samples cannot cover {} ranks", n, group.size()));
  }
  return Ownership(n, group);
}

Bytes encode_transfers(std::span<const TransferMsg> msgs) {
  ByteWriter w;
  for (const auto& m : msgs) {
    w.u64(m.sample_id);
    w.u64(m.new_center);
  }
  return std::move(w).take();
}

std::vector<TransferMsg> decode_transfers(std::span<const std::byte> bytes) {
  if (bytes.size() % kTransferMsgWireSize != 0) throw FormatError("torn transfer batch");
  ByteReader r(bytes);
  std::vector<TransferMsg> out(bytes.size() / kTransferMsgWireSize);
  for (auto& m : out) {
    m.sample_id = r.u64();
    m.new_center = r.u64();
  }
  return out;
}

RankKmeansState initial_rank_state(const Dataset& data, std::size_t k, const sim::Group& group,
                                   std::size_t position) {
  const auto samples = partition_samples(data.n(), group);
  RankKmeansState state{init_centroids(data, k), {}, 0};
  const auto& blocks = samples.blocks();
  for (std::size_t i = blocks.begin(position); i < blocks.end(position); ++i) {
    state.owned.push_back({i, kUnassigned});
  }
  return state;
}

namespace {

sim::Ticks assign_cost(const sim::Cluster& cluster, std::size_t samples, std::size_t k,
                       std::size_t d) {
  return static_cast<sim::Ticks>(samples * k * d) * cluster.costs().per_coordinate;
}

bool assign_owned(const Dataset& data, RankKmeansState& state) {
  bool changed = false;
  for (auto& s : state.owned) {
    const CenterIndex c = nearest_center(data.row(s.sample), state.centroids);
    if (c != s.center) changed = true;
    s.center = c;
  }
  return changed;
}

bool any_changed(const RankContext& ctx, std::uint64_t iteration, bool changed) {
  const std::uint64_t local = changed ? 1 : 0;
  const auto global = ctx.cluster.reduce_all(ctx.self, ctx.group, OpTag{iteration, steps::kChanged},
                                             std::span(&local, 1), sim::ReduceOp::kOr);
  return global.at(0) != 0;
}

// Sums and counts for centers [first, last) over the owned samples, in
// ascending sample order.
void accumulate(const Dataset& data, const std::vector<OwnedSample>& owned, std::size_t first,
                std::size_t last, std::vector<double>& sums, std::vector<std::uint64_t>& counts) {
  const std::size_t d = data.d();
  sums.assign((last - first) * d, 0.0);
  counts.assign(last - first, 0);
  for (const auto& s : owned) {
    if (s.center == kUnassigned || s.center < first || s.center >= last) continue;
    const std::size_t slot = s.center - first;
    const auto row = data.row(s.sample);
    for (std::size_t j = 0; j < d; ++j) sums[slot * d + j] += row[j];
    ++counts[slot];
  }
}

void apply_means(CentroidSet& centroids, std::size_t first, const std::vector<double>& sums,
                 const std::vector<std::uint64_t>& counts, const CentroidSet* fallback) {
  const std::size_t d = centroids.d();
  for (std::size_t slot = 0; slot < counts.size(); ++slot) {
    auto center = centroids.center(first + slot);
    if (counts[slot] == 0) {
      if (fallback != nullptr) {
        const auto prev = fallback->center(first + slot);
        std::copy(prev.begin(), prev.end(), center.begin());
      }
      continue;
    }
    const double count = static_cast<double>(counts[slot]);
    for (std::size_t j = 0; j < d; ++j) center[j] = sums[slot * d + j] / count;
  }
}

// Every owner broadcasts its block of centers; all ranks end with the full set.
void exchange_center_blocks(const RankContext& ctx, RankKmeansState& state,
                            const CenterOwnership& centers, std::uint64_t iteration,
                            std::uint32_t step_base) {
  const std::size_t d = state.centroids.d();
  const std::size_t me = ctx.group.position_of(ctx.self);
  const auto& blocks = centers.blocks();
  for (std::size_t p = 0; p < ctx.group.size(); ++p) {
    if (blocks.size(p) == 0) continue;
    const auto first = state.centroids.coords().begin() + static_cast<std::ptrdiff_t>(blocks.begin(p) * d);
    Bytes payload;
    if (p == me) payload = doubles_to_bytes(std::span(&*first, blocks.size(p) * d));
    const Bytes got = ctx.cluster.broadcast(ctx.self, ctx.group,
                                            OpTag{iteration, step_base + static_cast<std::uint32_t>(p)},
                                            ctx.group.at(p), std::move(payload));
    if (p == me) continue;
    const auto coords = bytes_to_doubles(got);
    for (std::size_t c = 0; c < blocks.size(p); ++c) {
      auto center = state.centroids.center(blocks.begin(p) + c);
      std::copy_n(coords.begin() + static_cast<std::ptrdiff_t>(c * d), d, center.begin());
    }
  }
}

}  // namespace

IterationStatus method1_iteration(const RankContext& ctx, const Dataset& data,
                                  RankKmeansState& state, IterationStats* stats) {
  auto& cluster = ctx.cluster;
  const std::uint64_t t = state.iteration + 1;
  const std::size_t k = state.centroids.k();
  const std::size_t d = data.d();
  const std::size_t me = ctx.group.position_of(ctx.self);
  const auto centers = partition_centers(k, ctx.group);
  IterationStats local;

  cluster.set_phase(ctx.self, LedgerPhase::kCompute);
  cluster.advance(ctx.self, assign_cost(cluster, state.owned.size(), k, d));
  local.changed = assign_owned(data, state);

  std::vector<std::vector<TransferMsg>> outgoing(ctx.group.size());
  std::vector<OwnedSample> kept;
  kept.reserve(state.owned.size());
  for (const auto& s : state.owned) {
    const std::size_t owner = centers.owner_position(s.center);
    if (owner == me) {
      kept.push_back(s);
    } else {
      outgoing[owner].push_back({s.sample, s.center});
    }
  }

  cluster.set_phase(ctx.self, LedgerPhase::kComm);
  for (std::size_t p = 0; p < ctx.group.size(); ++p) {
    if (p == me) continue;
    if (!outgoing[p].empty()) {
      local.transfers_sent += outgoing[p].size();
      cluster.send(ctx.self, ctx.group.at(p), sim::MsgKind::kTransferBatch,
                   encode_transfers(outgoing[p]), ctx.group.generation());
    }
    cluster.send(ctx.self, ctx.group.at(p), sim::MsgKind::kEndOfBatch, {}, ctx.group.generation());
  }
  for (std::size_t p = 0; p < ctx.group.size(); ++p) {
    if (p == me) continue;
    while (true) {
      sim::Message msg = cluster.recv(ctx.self, ctx.group.at(p), ctx.group.generation());
      if (msg.kind == sim::MsgKind::kEndOfBatch) break;
      if (msg.kind != sim::MsgKind::kTransferBatch) throw FormatError("unexpected message kind");
      for (const auto& m : decode_transfers(msg.body)) {
        if (m.sample_id >= data.n() || m.new_center >= k) throw FormatError("transfer out of range");
        kept.push_back({m.sample_id, static_cast<CenterIndex>(m.new_center)});
        ++local.transfers_received;
      }
    }
  }
  std::sort(kept.begin(), kept.end(),
            [](const OwnedSample& a, const OwnedSample& b) { return a.sample < b.sample; });
  state.owned = std::move(kept);

  const bool changed = any_changed(ctx, t, local.changed);
  state.iteration = t;
  if (stats != nullptr) *stats = local;
  if (!changed) return IterationStatus::kConverged;

  cluster.set_phase(ctx.self, LedgerPhase::kCompute);
  const auto& blocks = centers.blocks();
  std::vector<double> sums;
  std::vector<std::uint64_t> counts;
  accumulate(data, state.owned, blocks.begin(me), blocks.end(me), sums, counts);
  apply_means(state.centroids, blocks.begin(me), sums, counts, nullptr);
  cluster.advance(ctx.self, static_cast<sim::Ticks>((state.owned.size() + blocks.size(me)) * d) *
                                cluster.costs().per_coordinate);

  cluster.set_phase(ctx.self, LedgerPhase::kComm);
  exchange_center_blocks(ctx, state, centers, t, steps::kCenterBroadcast);
  return IterationStatus::kContinue;
}

IterationStatus method2_iteration(const RankContext& ctx, const Dataset& data,
                                  RankKmeansState& state, IterationStats* stats) {
  auto& cluster = ctx.cluster;
  const std::uint64_t t = state.iteration + 1;
  const std::size_t k = state.centroids.k();
  const std::size_t d = data.d();
  IterationStats local;

  cluster.set_phase(ctx.self, LedgerPhase::kCompute);
  cluster.advance(ctx.self, assign_cost(cluster, state.owned.size(), k, d));
  local.changed = assign_owned(data, state);

  cluster.set_phase(ctx.self, LedgerPhase::kComm);
  const bool changed = any_changed(ctx, t, local.changed);
  state.iteration = t;
  if (stats != nullptr) *stats = local;
  if (!changed) return IterationStatus::kConverged;

  cluster.set_phase(ctx.self, LedgerPhase::kCompute);
  std::vector<double> sums;
  std::vector<std::uint64_t> counts;
  accumulate(data, state.owned, 0, k, sums, counts);
  cluster.advance(ctx.self, static_cast<sim::Ticks>(state.owned.size() * d) *
                                cluster.costs().per_coordinate);

  cluster.set_phase(ctx.self, LedgerPhase::kComm);
  const auto global_sums =
      cluster.reduce_all(ctx.self, ctx.group, OpTag{t, steps::kSums}, sums, sim::ReduceOp::kSum);
  const auto global_counts =
      cluster.reduce_all(ctx.self, ctx.group, OpTag{t, steps::kCounts}, counts, sim::ReduceOp::kSum);

  cluster.set_phase(ctx.self, LedgerPhase::kCompute);
  apply_means(state.centroids, 0, global_sums, global_counts, nullptr);
  cluster.advance(ctx.self, static_cast<sim::Ticks>(k * d) * cluster.costs().per_coordinate);
  return IterationStatus::kContinue;
}

IterationStatus run_iteration(Method method, const RankContext& ctx, const Dataset& data,
                              RankKmeansState& state, IterationStats* stats) {
  return method == Method::kCenters ? method1_iteration(ctx, data, state, stats)
                                    : method2_iteration(ctx, data, state, stats);
}

void rebuild_centroids(Method method, const RankContext& ctx, const Dataset& data,
                       RankKmeansState& state, const CentroidSet& fallback) {
  auto& cluster = ctx.cluster;
  const std::size_t k = state.centroids.k();
  const std::size_t d = data.d();
  const std::uint64_t t = state.iteration;
  state.centroids = fallback;
  if (method == Method::kCenters) {
    const std::size_t me = ctx.group.position_of(ctx.self);
    const auto centers = partition_centers(k, ctx.group);
    std::vector<double> sums;
    std::vector<std::uint64_t> counts;
    accumulate(data, state.owned, centers.blocks().begin(me), centers.blocks().end(me), sums, counts);
    apply_means(state.centroids, centers.blocks().begin(me), sums, counts, &fallback);
    cluster.advance(ctx.self, static_cast<sim::Ticks>(state.owned.size() * d) *
                                  cluster.costs().per_coordinate);
    exchange_center_blocks(ctx, state, centers, t, steps::kRestoreBroadcast);
    return;
  }
  std::vector<double> sums;
  std::vector<std::uint64_t> counts;
  accumulate(data, state.owned, 0, k, sums, counts);
  cluster.advance(ctx.self, static_cast<sim::Ticks>(state.owned.size() * d) *
                                cluster.costs().per_coordinate);
  const auto global_sums =
      cluster.reduce_all(ctx.self, ctx.group, OpTag{t, steps::kRestoreSums}, sums, sim::ReduceOp::kSum);
  const auto global_counts = cluster.reduce_all(ctx.self, ctx.group, OpTag{t, steps::kRestoreCounts},
                                                counts, sim::ReduceOp::kSum);
  apply_means(state.centroids, 0, global_sums, global_counts, &fallback);
}

AssignmentTable assemble_assignments(std::size_t n, std::size_t k,
                                     std::span<const std::vector<OwnedSample>> per_rank) {
  AssignmentTable table;
  table.assign.assign(n, kUnassigned);
  std::vector<bool> seen(n, false);
  for (const auto& owned : per_rank) {
    for (const auto& s : owned) {
      if (s.sample >= n) throw UsageError("owned sample out of range");
      if (seen[s.sample]) throw UsageError(fmt::format("sample {} owned twice", s.sample));
      seen[s.sample] = true;
      table.assign[s.sample] = s.center;
    }
  }
  if (std::find(seen.begin(), seen.end(), false) != seen.end()) {
    throw UsageError("some samples have no owner");
  }
  table.counts.assign(k, 0);
  for (CenterIndex c : table.assign) {
    if (c != kUnassigned) ++table.counts.at(c);
  }
  return table;
}

}  // namespace kmft
