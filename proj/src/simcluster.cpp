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

#include "kmft/simcluster.hpp"

#include <algorithm>
#include <bit>
#include <thread>

#include <fmt/format.h>

#include "kmft/errors.hpp"

namespace kmft::sim {

namespace {

const char* phase_name(FailurePhase p) {
  switch (p) {
    case FailurePhase::kBeforeBarrier: return "before_barrier";
    case FailurePhase::kDuringCompute: return "during_compute";
    case FailurePhase::kDuringCheckpoint: return "during_checkpoint";
  }
  return "?";
}

std::uint64_t log2_rounds(std::size_t members) {
  return std::max<std::uint64_t>(1, std::bit_width(members - 1));
}

}  // namespace

void FailurePlan::validate(std::size_t world_size) const {
  std::vector<bool> seen(world_size, false);
  for (const auto& ev : events) {
    if (ev.rank >= world_size) {
      throw ConfigError(fmt::format("failure plan targets rank {} in a world of {}", ev.rank,
                                    world_size));
    }
    if (seen[ev.rank]) throw ConfigError(fmt::format("rank {} is killed twice", ev.rank));
    seen[ev.rank] = true;
  }
}

Ticks CostTable::transfer(std::size_t bytes) const {
  const Ticks bw = std::max<Ticks>(1, bytes_per_tick);
  return latency + (bytes + bw - 1) / bw;
}

Ticks PhaseLedger::total() const {
  Ticks t = 0;
  for (Ticks x : ticks) t += x;
  return t;
}

Group::Group(std::vector<RankId> members, std::uint64_t generation)
    : members_(std::move(members)), generation_(generation) {
  if (members_.empty()) throw ConfigError("group must not be empty");
  auto sorted = members_;
  std::sort(sorted.begin(), sorted.end());
  if (std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end()) {
    throw ConfigError("group has duplicate members");
  }
}

bool Group::contains(RankId r) const {
  return std::find(members_.begin(), members_.end(), r) != members_.end();
}

std::size_t Group::position_of(RankId r) const {
  auto it = std::find(members_.begin(), members_.end(), r);
  if (it == members_.end()) throw UsageError(fmt::format("rank {} is not a group member", r));
  return static_cast<std::size_t>(it - members_.begin());
}

Group Group::rebuilt(std::vector<RankId> members) const {
  if (members.size() != members_.size()) throw ConfigError("rebuilt group changes size");
  return Group(std::move(members), generation_ + 1);
}

std::vector<RankId> StateVector::corrupt() const {
  std::vector<RankId> out;
  for (std::size_t r = 0; r < states.size(); ++r) {
    if (states[r] == Health::kCorrupt) out.push_back(static_cast<RankId>(r));
  }
  return out;
}

Cluster::Cluster(ClusterOptions options) : options_(std::move(options)) {
  if (options_.world_size == 0) throw ConfigError("world needs at least one rank");
  options_.plan.validate(options_.world_size);
  slots_.resize(options_.world_size);
  for (auto& s : slots_) s.fired.assign(options_.plan.events.size(), false);
  for (std::size_t r = 0; r < options_.world_size; ++r) {
    rank_cv_.push_back(std::make_unique<std::condition_variable>());
  }
}

Cluster::~Cluster() = default;

void Cluster::add_segment(RankId owner, SegmentId id, std::size_t size) {
  std::lock_guard lock(mu_);
  if (owner >= slots_.size()) throw UsageError("segment owner out of range");
  slots_[owner].segments[id] = Bytes(size);
}

void Cluster::run(const std::function<void(RankId)>& body) {
  {
    std::lock_guard lock(mu_);
    if (running_) throw UsageError("cluster is already running");
    running_ = true;
    if (options_.mode == SchedMode::kDeterministic) baton_ = 0;
  }
  std::exception_ptr first_error;
  std::vector<std::thread> threads;
  threads.reserve(slots_.size());
  for (std::size_t i = 0; i < slots_.size(); ++i) {
    const auto r = static_cast<RankId>(i);
    threads.emplace_back([this, r, &body, &first_error] {
      if (options_.mode == SchedMode::kDeterministic) {
        std::unique_lock lock(mu_);
        rank_cv_[r]->wait(lock, [&] { return baton_ == r; });
      }
      bool killed = false;
      std::exception_ptr err;
      try {
        body(r);
      } catch (const RankKilled&) {
        killed = true;
      } catch (...) {
        err = std::current_exception();
      }
      std::lock_guard lock(mu_);
      if (err && !first_error) first_error = err;
      on_exit(r, killed);
    });
  }
  for (auto& t : threads) t.join();
  {
    std::lock_guard lock(mu_);
    running_ = false;
  }
  if (first_error) std::rethrow_exception(first_error);
}

void Cluster::on_exit(RankId self, bool killed) {
  auto& slot = slots_[self];
  slot.finished = true;
  slot.blocked = false;
  record(self, killed ? "exit killed" : "exit");
  mutated();
  if (options_.mode == SchedMode::kDeterministic && baton_ == self) pass_baton(self);
}

void Cluster::mutated() {
  ++progress_;
  if (options_.mode == SchedMode::kConcurrent) cv_.notify_all();
}

bool Cluster::stalled() const {
  std::size_t runnable = 0;
  for (const auto& s : slots_) {
    if (s.health != Health::kHealthy || s.finished) continue;
    if (s.idle && s.activations.empty()) continue;
    if (s.idle || !s.blocked || s.checked_progress != progress_) return false;
    ++runnable;
  }
  return runnable > 0;
}

bool Cluster::any_runnable_besides_idle() const {
  return std::any_of(slots_.begin(), slots_.end(), [](const Slot& s) {
    return s.health == Health::kHealthy && !s.finished && !s.idle;
  });
}

void Cluster::pass_baton(RankId from) {
  const std::size_t n = slots_.size();
  for (std::size_t i = 1; i <= n; ++i) {
    const auto r = static_cast<RankId>((from + i) % n);
    const auto& s = slots_[r];
    if (s.health == Health::kHealthy && !s.finished) {
      baton_ = r;
      rank_cv_[r]->notify_one();
      return;
    }
  }
  baton_.reset();
}

void Cluster::wait_until(std::unique_lock<std::mutex>& lock, RankId self,
                         const std::function<bool()>& pred) {
  auto& slot = slots_[self];
  while (true) {
    if (pred()) {
      slot.blocked = false;
      return;
    }
    slot.blocked = true;
    slot.checked_progress = progress_;
    if (stalled()) {
      // Every runnable rank waits on something no one can provide: time out.
      ++stall_gen_;
      record(self, "stall");
      mutated();
      continue;
    }
    if (options_.mode == SchedMode::kDeterministic) {
      pass_baton(self);
      rank_cv_[self]->wait(lock, [&] { return baton_ == self; });
    } else {
      cv_.wait(lock);
    }
  }
}

Cluster::Slot& Cluster::live_slot(RankId self) {
  if (self >= slots_.size()) throw UsageError("rank out of range");
  auto& s = slots_[self];
  if (s.health != Health::kHealthy) throw UsageError("operation issued by a dead rank");
  return s;
}

void Cluster::charge(RankId self, Ticks new_clock) {
  auto& s = slots_[self];
  if (new_clock > s.clock) {
    s.ledger[s.phase] += new_clock - s.clock;
    s.clock = new_clock;
  }
  deliver_matured(self);
}

void Cluster::deliver(PendingWrite& w) {
  if (w.status != TransferStatus::kPending) return;
  if (slots_[w.dst].health != Health::kHealthy) {
    w.status = TransferStatus::kFailed;
  } else {
    auto& seg = slots_[w.dst].segments.at(w.seg);
    std::copy(w.payload.begin(), w.payload.end(), seg.begin() + static_cast<std::ptrdiff_t>(w.offset));
    w.status = TransferStatus::kDelivered;
  }
  w.payload.clear();
  w.payload.shrink_to_fit();
  mutated();
}

void Cluster::deliver_matured(RankId self) {
  const Ticks now = slots_[self].clock;
  for (auto& [id, w] : pending_) {
    if (w.src == self && w.status == TransferStatus::kPending && w.ready <= now) {
      deliver(w);
      record(self, fmt::format("deliver token {} to {}", id, w.dst));
    }
  }
}

void Cluster::record(RankId self, std::string what) {
  if (!options_.trace) return;
  trace_.push_back({self, slots_[self].clock, std::move(what)});
}

Bytes& Cluster::segment(RankId owner, SegmentId seg, std::size_t offset, std::size_t size) {
  if (owner >= slots_.size()) throw SegmentError("segment owner out of range");
  auto& segs = slots_[owner].segments;
  auto it = segs.find(seg);
  if (it == segs.end()) throw SegmentError(fmt::format("rank {} has no segment {}", owner, seg));
  if (offset > it->second.size() || size > it->second.size() - offset) {
    throw SegmentError(fmt::format("range [{}, {}) outside segment {} of size {}", offset,
                                   offset + size, seg, it->second.size()));
  }
  return it->second;
}

void Cluster::local_write(RankId self, SegmentId seg, std::size_t offset,
                          std::span<const std::byte> data) {
  std::lock_guard lock(mu_);
  live_slot(self);
  auto& bytes = segment(self, seg, offset, data.size());
  std::copy(data.begin(), data.end(), bytes.begin() + static_cast<std::ptrdiff_t>(offset));
}

Bytes Cluster::local_read(RankId self, SegmentId seg, std::size_t offset, std::size_t size) {
  std::lock_guard lock(mu_);
  live_slot(self);
  const auto& bytes = segment(self, seg, offset, size);
  const auto first = bytes.begin() + static_cast<std::ptrdiff_t>(offset);
  return Bytes(first, first + static_cast<std::ptrdiff_t>(size));
}

Token Cluster::write_remote(RankId self, RankId dst, SegmentId seg, std::size_t offset,
                            std::span<const std::byte> payload) {
  std::lock_guard lock(mu_);
  auto& me = live_slot(self);
  segment(dst, seg, offset, payload.size());
  const std::uint64_t id = next_token_++;
  PendingWrite w;
  w.src = self;
  w.dst = dst;
  w.seg = seg;
  w.offset = offset;
  w.payload.assign(payload.begin(), payload.end());
  w.ready = me.clock + options_.costs.transfer(payload.size());
  pending_.emplace(id, std::move(w));
  record(self, fmt::format("write_remote token {} -> {} seg {} off {} len {}", id, dst, seg,
                           offset, payload.size()));
  mutated();
  return Token{id};
}

TransferStatus Cluster::wait(RankId self, Token token) {
  std::lock_guard lock(mu_);
  auto& me = live_slot(self);
  auto it = pending_.find(token.id);
  if (it == pending_.end() || it->second.src != self) throw UsageError("unknown transfer token");
  auto& w = it->second;
  if (w.status == TransferStatus::kPending) {
    charge(self, std::max(me.clock, w.ready));
    deliver(w);
  }
  record(self, fmt::format("wait token {} -> {}", token.id,
                           w.status == TransferStatus::kDelivered ? "delivered" : "failed"));
  return w.status;
}

Bytes Cluster::read_remote(RankId self, RankId owner, SegmentId seg, std::size_t offset,
                           std::size_t size) {
  std::lock_guard lock(mu_);
  auto& me = live_slot(self);
  if (owner >= slots_.size()) throw UsageError("rank out of range");
  if (slots_[owner].health != Health::kHealthy) {
    charge(self, me.clock + options_.costs.timeout);
    throw PeerDead(fmt::format("remote read from dead rank {}", owner));
  }
  const auto& bytes = segment(owner, seg, offset, size);
  const auto first = bytes.begin() + static_cast<std::ptrdiff_t>(offset);
  Bytes out(first, first + static_cast<std::ptrdiff_t>(size));
  charge(self, me.clock + options_.costs.transfer(size));
  record(self, fmt::format("read_remote <- {} seg {} off {} len {}", owner, seg, offset, size));
  return out;
}

void Cluster::send(RankId self, RankId dst, MsgKind kind, Bytes body, std::uint64_t generation) {
  std::lock_guard lock(mu_);
  auto& me = live_slot(self);
  if (dst >= slots_.size() || dst == self) throw UsageError("bad send destination");
  record(self, fmt::format("send -> {} kind {} len {}", dst, static_cast<int>(kind), body.size()));
  if (slots_[dst].health != Health::kHealthy) return;
  const Ticks arrival = me.clock + options_.costs.transfer(body.size());
  Envelope env{Message{self, kind, std::move(body), generation}, arrival};
  if (kind == MsgKind::kActivation) {
    slots_[dst].activations.push_back(std::move(env));
  } else {
    slots_[dst].inbox[self].push_back(std::move(env));
  }
  mutated();
}

Message Cluster::recv(RankId self, RankId src, std::uint64_t generation) {
  std::unique_lock lock(mu_);
  auto& me = live_slot(self);
  if (src >= slots_.size() || src == self) throw UsageError("bad recv source");
  const auto stall0 = stall_gen_;
  auto& queue = me.inbox[src];
  wait_until(lock, self, [&] {
    while (!queue.empty() && queue.front().msg.generation < generation) queue.pop_front();
    return !queue.empty() || slots_[src].health != Health::kHealthy || slots_[src].finished ||
           stall_gen_ != stall0;
  });
  if (!queue.empty()) {
    Envelope env = std::move(queue.front());
    queue.pop_front();
    charge(self, std::max(me.clock, env.arrival));
    record(self, fmt::format("recv <- {} kind {} len {}", src, static_cast<int>(env.msg.kind),
                             env.msg.body.size()));
    return std::move(env.msg);
  }
  charge(self, me.clock + options_.costs.timeout);
  if (slots_[src].health != Health::kHealthy) {
    record(self, fmt::format("recv <- {} peer dead", src));
    throw PeerDead(fmt::format("rank {} is dead", src));
  }
  record(self, fmt::format("recv <- {} timeout", src));
  throw Timeout(fmt::format("recv from rank {} timed out", src));
}

std::optional<Message> Cluster::wait_for_activation(RankId self) {
  std::unique_lock lock(mu_);
  auto& me = live_slot(self);
  me.idle = true;
  mutated();
  wait_until(lock, self, [&] { return !me.activations.empty() || !any_runnable_besides_idle(); });
  me.idle = false;
  if (me.activations.empty()) return std::nullopt;
  Envelope env = std::move(me.activations.front());
  me.activations.pop_front();
  charge(self, std::max(me.clock, env.arrival));
  record(self, fmt::format("activated by {}", env.msg.src));
  mutated();
  return std::move(env.msg);
}

bool Cluster::resolve_pending(Rendezvous& rv, std::uint64_t stall0) {
  if (rv.resolved) return false;
  if (rv.arrivals.size() == rv.members.size()) {
    Ticks latest = 0;
    for (const auto& [pos, t] : rv.arrivals) latest = std::max(latest, t);
    rv.result = combine(rv);
    Ticks cost = options_.costs.barrier;
    if (rv.kind != RvKind::kBarrier) cost += log2_rounds(rv.members.size()) * options_.costs.transfer(rv.result.size());
    rv.done = latest + cost;
    rv.ok = true;
    rv.resolved = true;
    return true;
  }
  // Time out early only once every missing member is gone; a live straggler
  // may still arrive or die, and survivors must see the same corrupt set.
  bool all_gone = true;
  for (std::size_t pos = 0; pos < rv.members.size(); ++pos) {
    if (rv.arrivals.count(pos)) continue;
    const auto& s = slots_[rv.members[pos]];
    if (s.health == Health::kHealthy && !s.finished) all_gone = false;
  }
  if (all_gone || stall_gen_ != stall0) {
    rv.resolved = true;
    return true;
  }
  return false;
}

Bytes Cluster::combine(const Rendezvous& rv) const {
  switch (rv.kind) {
    case RvKind::kBarrier:
      return {};
    case RvKind::kBroadcast: {
      const auto pos = static_cast<std::size_t>(
          std::find(rv.members.begin(), rv.members.end(), rv.root) - rv.members.begin());
      return rv.contributions.at(pos);
    }
    case RvKind::kReduceF64: {
      std::vector<double> acc;
      for (const auto& [pos, bytes] : rv.contributions) {
        auto v = bytes_to_doubles(bytes);
        if (acc.empty()) {
          acc = std::move(v);
          continue;
        }
        for (std::size_t j = 0; j < acc.size(); ++j) {
          acc[j] = rv.op == ReduceOp::kSum ? acc[j] + v[j] : std::min(acc[j], v[j]);
        }
      }
      return doubles_to_bytes(acc);
    }
    case RvKind::kReduceU64: {
      std::vector<std::uint64_t> acc;
      for (const auto& [pos, bytes] : rv.contributions) {
        ByteReader r(bytes);
        std::vector<std::uint64_t> v(bytes.size() / 8);
        for (auto& x : v) x = r.u64();
        if (acc.empty()) {
          acc = std::move(v);
          continue;
        }
        for (std::size_t j = 0; j < acc.size(); ++j) {
          switch (rv.op) {
            case ReduceOp::kSum: acc[j] += v[j]; break;
            case ReduceOp::kOr: acc[j] |= v[j]; break;
            case ReduceOp::kMin: acc[j] = std::min(acc[j], v[j]); break;
          }
        }
      }
      ByteWriter w;
      for (auto x : acc) w.u64(x);
      return std::move(w).take();
    }
  }
  return {};
}

Cluster::RvOutcome Cluster::rendezvous(RankId self, const Group& group, OpTag tag, RvKind kind,
                                       RankId root, ReduceOp op, Bytes contribution,
                                       std::optional<Ticks> timeout) {
  std::unique_lock lock(mu_);
  auto& me = live_slot(self);
  const std::size_t pos = group.position_of(self);
  const RvKey key{group.generation(), tag.iteration, tag.step};
  auto [it, inserted] = rendezvous_.try_emplace(key);
  Rendezvous& rv = it->second;
  if (inserted) {
    rv.kind = kind;
    rv.members = group.members();
    rv.root = root;
    rv.op = op;
    rv.timeout = timeout;
  } else if (rv.kind != kind || rv.members != group.members()) {
    throw UsageError(fmt::format("collective mismatch at tag ({}, {})", tag.iteration, tag.step));
  } else if (kind != RvKind::kBroadcast && !rv.contributions.empty() &&
             rv.contributions.begin()->second.size() != contribution.size()) {
    throw UsageError("collective contributions differ in size");
  }
  const Ticks arrival = me.clock;
  if (!rv.resolved) {
    rv.contributions[pos] = std::move(contribution);
    rv.arrivals[pos] = arrival;
    mutated();
  }
  const auto stall0 = stall_gen_;
  wait_until(lock, self, [&] {
    if (resolve_pending(rv, stall0)) mutated();
    return rv.resolved;
  });
  RvOutcome out;
  out.ok = rv.ok;
  if (rv.ok) {
    charge(self, rv.done);
    out.result = rv.result;
  } else {
    charge(self, arrival + rv.timeout.value_or(options_.costs.timeout));
  }
  record(self, fmt::format("collective {} gen {} tag ({}, {}) {}", static_cast<int>(kind),
                           group.generation(), tag.iteration, tag.step, rv.ok ? "ok" : "timeout"));
  return out;
}

BarrierStatus Cluster::barrier(RankId self, const Group& group, OpTag tag,
                               std::optional<Ticks> timeout) {
  auto out = rendezvous(self, group, tag, RvKind::kBarrier, 0, ReduceOp::kSum, {}, timeout);
  return out.ok ? BarrierStatus::kOk : BarrierStatus::kTimeout;
}

Bytes Cluster::broadcast(RankId self, const Group& group, OpTag tag, RankId root, Bytes payload) {
  if (!group.contains(root)) throw UsageError("broadcast root is not a group member");
  if (self != root) payload.clear();
  auto out = rendezvous(self, group, tag, RvKind::kBroadcast, root, ReduceOp::kSum,
                        std::move(payload), std::nullopt);
  if (!out.ok) throw Timeout("broadcast lost a group member");
  return std::move(out.result);
}

std::vector<double> Cluster::reduce_all(RankId self, const Group& group, OpTag tag,
                                        std::span<const double> value, ReduceOp op) {
  if (op == ReduceOp::kOr) throw UsageError("OR is not defined on real values");
  auto out = rendezvous(self, group, tag, RvKind::kReduceF64, 0, op, doubles_to_bytes(value),
                        std::nullopt);
  if (!out.ok) throw Timeout("reduce lost a group member");
  return bytes_to_doubles(out.result);
}

std::vector<std::uint64_t> Cluster::reduce_all(RankId self, const Group& group, OpTag tag,
                                               std::span<const std::uint64_t> value, ReduceOp op) {
  ByteWriter w;
  for (auto x : value) w.u64(x);
  auto out = rendezvous(self, group, tag, RvKind::kReduceU64, 0, op, std::move(w).take(),
                        std::nullopt);
  if (!out.ok) throw Timeout("reduce lost a group member");
  ByteReader r(out.result);
  std::vector<std::uint64_t> v(out.result.size() / 8);
  for (auto& x : v) x = r.u64();
  return v;
}

StateVector Cluster::state_vector(RankId self) {
  std::lock_guard lock(mu_);
  live_slot(self);
  StateVector sv;
  sv.states.reserve(slots_.size());
  for (const auto& s : slots_) sv.states.push_back(s.health);
  return sv;
}

void Cluster::fail_point(RankId self, std::uint64_t iteration, FailurePhase phase,
                         CheckpointStage stage) {
  std::lock_guard lock(mu_);
  auto& me = live_slot(self);
  const auto& events = options_.plan.events;
  for (std::size_t i = 0; i < events.size(); ++i) {
    const auto& ev = events[i];
    if (ev.rank != self || me.fired[i] || ev.iteration != iteration || ev.phase != phase) continue;
    if (phase == FailurePhase::kDuringCheckpoint && ev.stage != CheckpointStage::kAny &&
        ev.stage != stage) {
      continue;
    }
    me.fired[i] = true;
    me.health = Health::kCorrupt;
    killed_.push_back(self);
    for (auto& [id, w] : pending_) {
      if (w.src == self && w.status == TransferStatus::kPending) {
        w.status = TransferStatus::kFailed;
        w.payload.clear();
      }
    }
    record(self, fmt::format("killed at iteration {} {} stage {}", iteration, phase_name(phase),
                             static_cast<int>(stage)));
    mutated();
    throw RankKilled{self};
  }
}

void Cluster::advance(RankId self, Ticks ticks) {
  std::lock_guard lock(mu_);
  auto& me = live_slot(self);
  charge(self, me.clock + ticks);
}

void Cluster::set_phase(RankId self, LedgerPhase phase) {
  std::lock_guard lock(mu_);
  live_slot(self).phase = phase;
}

LedgerPhase Cluster::phase(RankId self) const {
  std::lock_guard lock(mu_);
  return slots_.at(self).phase;
}

Ticks Cluster::now(RankId self) const {
  std::lock_guard lock(mu_);
  return slots_.at(self).clock;
}

void Cluster::note(RankId self, std::string what) {
  std::lock_guard lock(mu_);
  record(self, std::move(what));
}

PhaseLedger Cluster::ledger(RankId r) const {
  std::lock_guard lock(mu_);
  return slots_.at(r).ledger;
}

Health Cluster::health(RankId r) const {
  std::lock_guard lock(mu_);
  return slots_.at(r).health;
}

std::vector<RankId> Cluster::killed() const {
  std::lock_guard lock(mu_);
  return killed_;
}

std::vector<TraceEvent> Cluster::trace() const {
  std::lock_guard lock(mu_);
  return trace_;
}

Bytes Cluster::peek(RankId owner, SegmentId seg, std::size_t offset, std::size_t size) const {
  std::lock_guard lock(mu_);
  const auto& segs = slots_.at(owner).segments;
  const auto& bytes = segs.at(seg);
  if (offset > bytes.size() || size > bytes.size() - offset) throw SegmentError("peek out of range");
  const auto first = bytes.begin() + static_cast<std::ptrdiff_t>(offset);
  return Bytes(first, first + static_cast<std::ptrdiff_t>(size));
}

}  // namespace kmft::sim
