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

#include <array>
#include <compare>
#include <condition_variable>
#include <cstddef>
#include <cstdint>
#include <deque>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "kmft/wire.hpp"

// Simulated PGAS-style cluster: rank contexts with private segments, one-sided
// writes, point-to-point messages, collectives with timeouts, a health state
// vector, and scripted crash-stop failures. Time is virtual (ticks).
namespace kmft::sim {

using RankId = std::uint32_t;
using SegmentId = std::uint32_t;
using Ticks = std::uint64_t;

enum class Health : std::uint8_t { kHealthy, kCorrupt };

enum class FailurePhase : std::uint8_t { kBeforeBarrier, kDuringCompute, kDuringCheckpoint };

// Finer kill points inside a checkpoint. kAny fires at the first checkpoint
// kill point the rank reaches in the planned iteration.
enum class CheckpointStage : std::uint8_t {
  kAny,
  kLocalWrite,         // half of the local snapshot buffer written
  kBeforeTransfer,     // local copy complete, mirror write not issued
  kInFlight,           // mirror write issued, not yet completed
  kBeforeCommitWait,   // commit entered, transfer not waited on
  kBeforeCommitBarrier // transfer complete, commit barrier not joined
};

struct KillEvent {
  RankId rank = 0;
  std::uint64_t iteration = 0;
  FailurePhase phase = FailurePhase::kBeforeBarrier;
  CheckpointStage stage = CheckpointStage::kAny;

  friend bool operator==(const KillEvent&, const KillEvent&) = default;
};

struct FailurePlan {
  std::vector<KillEvent> events;

  /// Throws ConfigError for unknown ranks or more than one kill per rank.
  void validate(std::size_t world_size) const;
};

struct CostTable {
  Ticks per_coordinate = 1;  // one arithmetic step on one coordinate
  Ticks latency = 100;
  Ticks bytes_per_tick = 64;
  Ticks barrier = 50;
  Ticks timeout = 1000;

  Ticks transfer(std::size_t bytes) const;
};

enum class SchedMode : std::uint8_t { kDeterministic, kConcurrent };

enum class LedgerPhase : std::uint8_t {
  kCompute,
  kComm,
  kCheckpointStart,
  kCheckpointCommit,
  kDetect,
  kRestore,
};
inline constexpr std::size_t kLedgerPhases = 6;

struct PhaseLedger {
  std::array<Ticks, kLedgerPhases> ticks{};

  Ticks& operator[](LedgerPhase p) { return ticks[static_cast<std::size_t>(p)]; }
  Ticks operator[](LedgerPhase p) const { return ticks[static_cast<std::size_t>(p)]; }
  Ticks total() const;

  friend bool operator==(const PhaseLedger&, const PhaseLedger&) = default;
};

/// Ordered set of ranks taking part in collectives. Position in `members`
/// defines the ring order.
class Group {
 public:
  Group(std::vector<RankId> members, std::uint64_t generation);

  const std::vector<RankId>& members() const { return members_; }
  std::uint64_t generation() const { return generation_; }
  std::size_t size() const { return members_.size(); }
  RankId at(std::size_t position) const { return members_.at(position); }
  bool contains(RankId r) const;
  std::size_t position_of(RankId r) const;

  /// Same positions with new occupants; generation + 1.
  Group rebuilt(std::vector<RankId> members) const;

  friend bool operator==(const Group&, const Group&) = default;

 private:
  std::vector<RankId> members_;
  std::uint64_t generation_;
};

/// Identifies one collective instance within a group generation.
struct OpTag {
  std::uint64_t iteration = 0;
  std::uint32_t step = 0;

  friend auto operator<=>(const OpTag&, const OpTag&) = default;
};

enum class BarrierStatus : std::uint8_t { kOk, kTimeout };

struct StateVector {
  std::vector<Health> states;

  bool healthy(RankId r) const { return states.at(r) == Health::kHealthy; }
  std::vector<RankId> corrupt() const;
};

enum class TransferStatus : std::uint8_t { kPending, kDelivered, kFailed };

struct Token {
  std::uint64_t id = 0;
};

enum class ReduceOp : std::uint8_t { kSum, kOr, kMin };

enum class MsgKind : std::uint32_t { kData, kTransferBatch, kEndOfBatch, kActivation };

struct Message {
  RankId src = 0;
  MsgKind kind = MsgKind::kData;
  Bytes body;
  std::uint64_t generation = 0;  // group generation of the sender
};

struct TraceEvent {
  RankId rank = 0;
  Ticks vtime = 0;
  std::string what;

  friend bool operator==(const TraceEvent&, const TraceEvent&) = default;
};

// Thrown inside a rank context when its scripted kill fires. Not an Error.
struct RankKilled {
  RankId rank;
};

struct ClusterOptions {
  std::size_t world_size = 2;
  FailurePlan plan;
  CostTable costs;
  SchedMode mode = SchedMode::kDeterministic;
  bool trace = true;
};

class Cluster {
 public:
  /// spawn_world. Throws ConfigError for an empty world or an invalid plan.
  explicit Cluster(ClusterOptions options);
  ~Cluster();
  Cluster(const Cluster&) = delete;
  Cluster& operator=(const Cluster&) = delete;

  std::size_t world_size() const { return slots_.size(); }
  const CostTable& costs() const { return options_.costs; }
  SchedMode mode() const { return options_.mode; }

  void add_segment(RankId owner, SegmentId id, std::size_t size);

  /// Runs body(rank) in every rank context and returns when all have exited.
  /// Exceptions other than RankKilled escaping a body are rethrown here.
  void run(const std::function<void(RankId)>& body);

  // Rank-context operations. `self` is the calling rank.

  void local_write(RankId self, SegmentId seg, std::size_t offset, std::span<const std::byte> data);
  Bytes local_read(RankId self, SegmentId seg, std::size_t offset, std::size_t size);

  /// Starts a one-sided write; the bytes land when the token is waited on or
  /// when the writer's clock passes the transfer's completion time.
  Token write_remote(RankId self, RankId dst, SegmentId seg, std::size_t offset,
                     std::span<const std::byte> payload);
  TransferStatus wait(RankId self, Token token);
  Bytes read_remote(RankId self, RankId owner, SegmentId seg, std::size_t offset, std::size_t size);

  void send(RankId self, RankId dst, MsgKind kind, Bytes body, std::uint64_t generation = 0);
  /// FIFO per channel. Messages tagged with an older generation than
  /// `generation` are dropped unread. Throws PeerDead or Timeout.
  Message recv(RankId self, RankId src, std::uint64_t generation = 0);
  /// Idle wait used by spare ranks. Returns nullopt once no active rank is
  /// left to wake this one.
  std::optional<Message> wait_for_activation(RankId self);

  BarrierStatus barrier(RankId self, const Group& group, OpTag tag,
                        std::optional<Ticks> timeout = std::nullopt);
  /// Throws Timeout when a member is lost.
  Bytes broadcast(RankId self, const Group& group, OpTag tag, RankId root, Bytes payload);
  std::vector<double> reduce_all(RankId self, const Group& group, OpTag tag,
                                 std::span<const double> value, ReduceOp op);
  std::vector<std::uint64_t> reduce_all(RankId self, const Group& group, OpTag tag,
                                        std::span<const std::uint64_t> value, ReduceOp op);

  StateVector state_vector(RankId self);

  /// Kill point. Halts the calling context (throws RankKilled) when the plan
  /// schedules a kill here.
  void fail_point(RankId self, std::uint64_t iteration, FailurePhase phase,
                  CheckpointStage stage = CheckpointStage::kAny);

  void advance(RankId self, Ticks ticks);
  void set_phase(RankId self, LedgerPhase phase);
  LedgerPhase phase(RankId self) const;
  Ticks now(RankId self) const;
  void note(RankId self, std::string what);

  // Inspection, safe from any thread.
  PhaseLedger ledger(RankId r) const;
  Health health(RankId r) const;
  std::vector<RankId> killed() const;
  std::vector<TraceEvent> trace() const;
  Bytes peek(RankId owner, SegmentId seg, std::size_t offset, std::size_t size) const;

 private:
  struct Envelope {
    Message msg;
    Ticks arrival = 0;
  };

  struct Slot {
    Health health = Health::kHealthy;
    bool finished = false;
    bool idle = false;
    bool blocked = false;
    std::uint64_t checked_progress = 0;
    Ticks clock = 0;
    LedgerPhase phase = LedgerPhase::kCompute;
    PhaseLedger ledger;
    std::map<SegmentId, Bytes> segments;
    std::map<RankId, std::deque<Envelope>> inbox;
    std::deque<Envelope> activations;
    std::vector<bool> fired;
  };

  struct PendingWrite {
    RankId src = 0;
    RankId dst = 0;
    SegmentId seg = 0;
    std::size_t offset = 0;
    Bytes payload;
    Ticks ready = 0;
    TransferStatus status = TransferStatus::kPending;
  };

  enum class RvKind : std::uint8_t { kBarrier, kBroadcast, kReduceF64, kReduceU64 };

  struct Rendezvous {
    RvKind kind = RvKind::kBarrier;
    std::vector<RankId> members;
    RankId root = 0;
    ReduceOp op = ReduceOp::kSum;
    std::map<std::size_t, Bytes> contributions;
    std::map<std::size_t, Ticks> arrivals;
    bool resolved = false;
    bool ok = false;
    Bytes result;
    Ticks done = 0;
    std::optional<Ticks> timeout;
  };

  using RvKey = std::tuple<std::uint64_t, std::uint64_t, std::uint32_t>;

  struct RvOutcome {
    bool ok = false;
    Bytes result;
  };

  RvOutcome rendezvous(RankId self, const Group& group, OpTag tag, RvKind kind, RankId root,
                       ReduceOp op, Bytes contribution, std::optional<Ticks> timeout);
  bool resolve_pending(Rendezvous& rv, std::uint64_t stall0);
  Bytes combine(const Rendezvous& rv) const;

  // All helpers below expect mu_ to be held.
  void wait_until(std::unique_lock<std::mutex>& lock, RankId self, const std::function<bool()>& pred);
  bool stalled() const;
  void mutated();
  void pass_baton(RankId from);
  void charge(RankId self, Ticks new_clock);
  void deliver_matured(RankId self);
  void deliver(PendingWrite& w);
  void record(RankId self, std::string what);
  Slot& live_slot(RankId self);
  Bytes& segment(RankId owner, SegmentId seg, std::size_t offset, std::size_t size);
  void on_exit(RankId self, bool killed);
  bool any_runnable_besides_idle() const;

  ClusterOptions options_;
  mutable std::mutex mu_;
  std::condition_variable cv_;
  std::vector<std::unique_ptr<std::condition_variable>> rank_cv_;
  std::vector<Slot> slots_;
  std::map<std::uint64_t, PendingWrite> pending_;
  std::uint64_t next_token_ = 1;
  std::map<RvKey, Rendezvous> rendezvous_;
  std::uint64_t progress_ = 0;
  std::uint64_t stall_gen_ = 0;
  std::optional<RankId> baton_;
  std::vector<TraceEvent> trace_;
  std::vector<RankId> killed_;
  bool running_ = false;
};

}  // namespace kmft::sim
