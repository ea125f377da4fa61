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

#include "kmft/ft_runtime.hpp"

#include <algorithm>
#include <mutex>
#include <numeric>

#include <fmt/format.h>
#include <fmt/ranges.h>

#include "kmft/errors.hpp"
#include "log.hpp"

namespace kmft {

using sim::BarrierStatus;
using sim::FailurePhase;
using sim::LedgerPhase;
using sim::OpTag;
using sim::RankId;

WorldLayout WorldLayout::initial(std::size_t active, std::size_t spares) {
  if (active == 0) throw ConfigError("at least one active rank is required");
  std::vector<RankId> members(active);
  std::iota(members.begin(), members.end(), RankId{0});
  WorldLayout w{sim::Group(std::move(members), 0), {}, {}};
  w.roles.assign(active, Role::kActive);
  for (std::size_t s = 0; s < spares; ++s) {
    w.spares.push_back(static_cast<RankId>(active + s));
    w.roles.push_back(Role::kSpare);
  }
  return w;
}

RecoveryPlan plan_recovery(const WorldLayout& layout, const std::vector<RankId>& failed,
                           bool need_mirrors) {
  if (failed.empty()) throw UsageError("recovery without a failed rank");
  const auto& group = layout.active;
  std::vector<RankId> ordered;
  for (RankId r : group.members()) {
    if (std::find(failed.begin(), failed.end(), r) != failed.end()) ordered.push_back(r);
  }
  if (ordered.size() != failed.size()) throw UsageError("failed rank is not a group member");
  if (ordered.size() > layout.spares.size()) {
    throw UnrecoverableError(fmt::format("{} failed ranks but only {} spares", ordered.size(),
                                         layout.spares.size()));
  }
  if (need_mirrors) {
    for (RankId r : ordered) {
      const RankId mirror = ckpt::mirror_target(r, group);
      if (std::find(ordered.begin(), ordered.end(), mirror) != ordered.end()) {
        throw UnrecoverableError(fmt::format("rank {} and its mirror {} both failed", r, mirror));
      }
    }
  }
  RecoveryPlan plan;
  std::vector<RankId> members = group.members();
  std::vector<RankId> spares = layout.spares;
  std::vector<Role> roles = layout.roles;
  for (RankId r : ordered) {
    const RankId spare = spares.front();
    spares.erase(spares.begin());
    members[group.position_of(r)] = spare;
    roles.at(r) = Role::kDead;
    roles.at(spare) = Role::kActive;
    plan.replacements.emplace_back(r, spare);
  }
  plan.next = WorldLayout{group.rebuilt(std::move(members)), std::move(spares), std::move(roles)};
  return plan;
}

std::vector<RankId> detect_failures(sim::Cluster& cluster, RankId self, const sim::Group& group,
                                    OpTag tag, std::optional<sim::Ticks> timeout) {
  cluster.set_phase(self, LedgerPhase::kDetect);
  if (cluster.barrier(self, group, tag, timeout) == BarrierStatus::kOk) return {};
  const auto sv = cluster.state_vector(self);
  std::vector<RankId> failed;
  for (RankId r : group.members()) {
    if (!sv.healthy(r)) failed.push_back(r);
  }
  return failed;
}

namespace {

struct ActivationMsg {
  WorldLayout layout;
  std::optional<ckpt::CommittedPoint> committed;
  CentroidSet sidecar;
  std::vector<std::pair<RankId, RankId>> replacements;
};

Bytes encode_activation(const ActivationMsg& m) {
  ByteWriter w;
  w.u64(m.layout.active.generation());
  w.u64(m.layout.active.size());
  for (RankId r : m.layout.active.members()) w.u64(r);
  w.u64(m.layout.spares.size());
  for (RankId r : m.layout.spares) w.u64(r);
  w.u64(m.layout.roles.size());
  for (Role r : m.layout.roles) w.u64(static_cast<std::uint64_t>(r));
  w.u64(m.committed ? 1 : 0);
  w.u64(m.committed ? m.committed->epoch : 0);
  w.u64(m.committed ? m.committed->iteration : 0);
  w.u64(m.sidecar.k());
  w.u64(m.sidecar.d());
  w.f64s(m.sidecar.coords());
  w.u64(m.replacements.size());
  for (auto [f, s] : m.replacements) {
    w.u64(f);
    w.u64(s);
  }
  return std::move(w).take();
}

ActivationMsg decode_activation(std::span<const std::byte> bytes) {
  ByteReader r(bytes);
  const std::uint64_t generation = r.u64();
  std::vector<RankId> members(r.u64());
  for (auto& x : members) x = static_cast<RankId>(r.u64());
  std::vector<RankId> spares(r.u64());
  for (auto& x : spares) x = static_cast<RankId>(r.u64());
  std::vector<Role> roles(r.u64());
  for (auto& x : roles) x = static_cast<Role>(r.u64());
  const bool has = r.u64() != 0;
  const ckpt::CommittedPoint point{r.u64(), r.u64()};
  const std::size_t k = r.u64();
  const std::size_t d = r.u64();
  CentroidSet sidecar(k, d, r.f64s(k * d));
  std::vector<std::pair<RankId, RankId>> repl(r.u64());
  for (auto& [f, s] : repl) {
    f = static_cast<RankId>(r.u64());
    s = static_cast<RankId>(r.u64());
  }
  ActivationMsg m{WorldLayout{sim::Group(std::move(members), generation), std::move(spares),
                              std::move(roles)},
                  std::nullopt, std::move(sidecar), std::move(repl)};
  if (has) m.committed = point;
  return m;
}

struct FinalDeposit {
  sim::Group group{{0}, 0};
  std::vector<OwnedSample> owned;
  std::optional<CentroidSet> centroids;
  std::uint64_t iteration = 0;
  bool converged = false;
  std::uint64_t committed_epoch = 0;
};

struct HistoryEntry {
  std::uint64_t generation = 0;
  std::optional<CentroidSet> centroids;
  std::map<std::size_t, std::vector<OwnedSample>> owned;
};

// Shared between rank threads; lives outside virtual time.
class Recorder {
 public:
  void detection(DetectionRecord r) {
    std::lock_guard lock(mu_);
    detections_.push_back(std::move(r));
  }
  void rollback(RollbackRecord r) {
    std::lock_guard lock(mu_);
    rollbacks_.push_back(std::move(r));
  }
  void captured(std::uint64_t epoch, std::size_t position, const Bytes& payload) {
    std::lock_guard lock(mu_);
    captured_[{epoch, position}].push_back(payload);
  }
  void restored(RestoreRecord r) {
    std::lock_guard lock(mu_);
    restored_.push_back(std::move(r));
  }
  void iteration(std::uint64_t t, const sim::Group& group, std::size_t position,
                 const RankKmeansState& state) {
    std::lock_guard lock(mu_);
    auto& h = history_[t];
    if (h.generation < group.generation() || !h.centroids) {
      h = HistoryEntry{group.generation(), state.centroids, {}};
    }
    h.owned[position] = state.owned;
  }
  void final(RankId rank, FinalDeposit d) {
    std::lock_guard lock(mu_);
    finals_[rank] = std::move(d);
  }
  void abort(std::string reason) {
    std::lock_guard lock(mu_);
    if (!aborted_) aborted_ = std::move(reason);
  }

  std::vector<DetectionRecord> detections_;
  std::vector<RollbackRecord> rollbacks_;
  std::map<std::pair<std::uint64_t, std::size_t>, std::vector<Bytes>> captured_;
  std::vector<RestoreRecord> restored_;
  std::map<std::uint64_t, HistoryEntry> history_;
  std::map<RankId, FinalDeposit> finals_;
  std::optional<std::string> aborted_;

 private:
  std::mutex mu_;
};

class RankDriver {
 public:
  RankDriver(sim::Cluster& cluster, RankId self, const Dataset& data, const KmeansConfig& cfg,
             const FtOptions& opts, const WorldLayout& layout, const ckpt::SegmentLayout& seg,
             Recorder& rec)
      : cluster_(cluster),
        self_(self),
        data_(data),
        cfg_(cfg),
        opts_(opts),
        layout_(layout),
        store_(cluster, self, seg),
        rec_(rec),
        state_{init_centroids(data, cfg.k), {}, 0} {}

  void main() {
    try {
      if (layout_.roles.at(self_) == Role::kSpare) {
        cluster_.set_phase(self_, LedgerPhase::kRestore);
        const auto msg = cluster_.wait_for_activation(self_);
        if (!msg) return;
        activate(decode_activation(msg->body));
      } else {
        state_ = initial_rank_state(data_, cfg_.k, group(), position());
      }
      loop();
    } catch (const UnrecoverableError& e) {
      rec_.abort(e.what());
      KMFT_LOG_WARN("rank {} aborting: {}", self_, e.what());
      finish(false);
    } catch (const Timeout& e) {
      if (opts_.fault_tolerance) throw;
      rec_.abort(fmt::format("rank lost without fault tolerance: {}", e.what()));
      finish(false);
    } catch (const PeerDead& e) {
      if (opts_.fault_tolerance) throw;
      rec_.abort(fmt::format("rank lost without fault tolerance: {}", e.what()));
      finish(false);
    }
  }

 private:
  const sim::Group& group() const { return layout_.active; }
  std::size_t position() const { return group().position_of(self_); }
  RankContext ctx() const { return {cluster_, self_, group()}; }
  bool ft() const { return opts_.fault_tolerance; }

  void loop() {
    while (true) {
      const std::uint64_t t = state_.iteration + 1;
      bool converged = false;
      try {
        cluster_.set_phase(self_, LedgerPhase::kCompute);
        cluster_.fail_point(self_, t, FailurePhase::kDuringCompute);
        converged = run_iteration(opts_.method, ctx(), data_, state_) == IterationStatus::kConverged;
        if (opts_.record_history) rec_.iteration(t, group(), position(), state_);
        cluster_.fail_point(self_, t, FailurePhase::kBeforeBarrier);
      } catch (const Timeout&) {
        if (!ft()) throw;
        recover(t, detect(OpTag{t, steps::kDetect}));
        continue;
      } catch (const PeerDead&) {
        if (!ft()) throw;
        recover(t, detect(OpTag{t, steps::kDetect}));
        continue;
      }
      if (cfg_.force_iters) converged = false;
      const bool done = converged || t >= cfg_.max_iters;
      if (ft()) {
        if (auto failed = detect(OpTag{t, steps::kDetect}); !failed.empty()) {
          recover(t, failed);
          continue;
        }
        if (!converged && t % opts_.policy.interval == 0 && !checkpoint(t)) {
          recover(t, detect(OpTag{t, steps::kDetectAfterCheckpoint}));
          continue;
        }
        cluster_.fail_point(self_, t, FailurePhase::kDuringCheckpoint);
        if (done) {
          if (!finish_pending(t)) {
            recover(t, detect(OpTag{t, steps::kDetectAfterCheckpoint}));
            continue;
          }
          if (auto failed = detect(OpTag{t, steps::kExit}); !failed.empty()) {
            recover(t, failed);
            continue;
          }
        }
      }
      if (done) {
        finish(converged);
        return;
      }
    }
  }

  std::vector<RankId> detect(OpTag tag) {
    auto failed = detect_failures(cluster_, self_, group(), tag);
    if (!failed.empty()) {
      const auto sv = cluster_.state_vector(self_);
      rec_.detection({group().generation(), tag.iteration, self_, failed, sv.corrupt()});
    }
    return failed;
  }

  bool commit(std::uint64_t epoch, std::uint64_t t) {
    return store_.commit(group(), epoch, t) == BarrierStatus::kOk;
  }

  // False when the commit barrier timed out.
  bool checkpoint(std::uint64_t t) {
    if (!opts_.policy.eager_commit && store_.started()) {
      if (!commit(store_.started()->epoch, t)) return false;
    }
    const std::uint64_t epoch = store_.next_epoch();
    const Bytes payload = ckpt::encode_payload({epoch, t, state_.owned});
    if (opts_.audit) rec_.captured(epoch, position(), payload);
    store_.start(group(), epoch, t, payload, state_.centroids);
    if (opts_.policy.eager_commit) return commit(epoch, t);
    return true;
  }

  bool finish_pending(std::uint64_t t) {
    if (!store_.started()) return true;
    return commit(store_.started()->epoch, t);
  }

  void recover(std::uint64_t t, const std::vector<RankId>& failed) {
    cluster_.set_phase(self_, LedgerPhase::kRestore);
    if (failed.empty()) throw UnrecoverableError("timeout without a failed rank");
    store_.discard_started();
    const auto committed = store_.last_committed();
    auto plan = plan_recovery(layout_, failed, committed.has_value());
    const CentroidSet sidecar =
        committed ? store_.read_sidecar(committed->epoch) : init_centroids(data_, cfg_.k);

    layout_ = plan.next;
    RankId leader = group().at(0);
    for (RankId r : group().members()) {
      if (std::none_of(plan.replacements.begin(), plan.replacements.end(),
                       [&](const auto& p) { return p.second == r; })) {
        leader = r;
        break;
      }
    }
    if (self_ == leader) {
      const Bytes body = encode_activation({layout_, committed, sidecar, plan.replacements});
      for (auto [dead, spare] : plan.replacements) {
        cluster_.send(self_, spare, sim::MsgKind::kActivation, body, group().generation());
      }
    }

    if (committed) {
      const Bytes payload = store_.read_local(committed->epoch);
      state_.owned = ckpt::decode_payload(payload).entries;
      state_.iteration = committed->iteration;
      if (opts_.audit) {
        rec_.restored({group().generation(), committed->epoch, position(), self_, payload});
      }
    } else {
      store_.reset();
      state_ = initial_rank_state(data_, cfg_.k, group(), position());
    }
    const bool mirror_replaced = std::any_of(
        plan.replacements.begin(), plan.replacements.end(),
        [&](const auto& p) { return p.second == ckpt::mirror_target(self_, group()); });
    resume(committed, sidecar, mirror_replaced);
    if (self_ == leader) {
      rec_.rollback({group().generation(), t, state_.iteration,
                     committed ? std::optional(committed->epoch) : std::nullopt,
                     plan.replacements});
    }
  }

  void activate(ActivationMsg msg) {
    layout_ = std::move(msg.layout);
    if (msg.committed) {
      const RankId mirror = ckpt::mirror_target(self_, group());
      const Bytes payload = store_.read_mirror(mirror, msg.committed->epoch);
      state_.owned = ckpt::decode_payload(payload).entries;
      state_.iteration = msg.committed->iteration;
      store_.install(*msg.committed, payload, msg.sidecar);
      if (opts_.audit) {
        rec_.restored({group().generation(), msg.committed->epoch, position(), self_, payload});
      }
    } else {
      state_ = initial_rank_state(data_, cfg_.k, group(), position());
    }
    resume(msg.committed, msg.sidecar, false);
  }

  void resume(const std::optional<ckpt::CommittedPoint>& committed, const CentroidSet& sidecar,
              bool remirror) {
    cluster_.set_phase(self_, LedgerPhase::kRestore);
    try {
      if (committed) rebuild_centroids(opts_.method, ctx(), data_, state_, sidecar);
      if (remirror && store_.remirror(group()) != sim::TransferStatus::kDelivered) {
        throw UnrecoverableError("new mirror lost during recovery");
      }
    } catch (const Timeout& e) {
      throw UnrecoverableError(fmt::format("failure during recovery: {}", e.what()));
    } catch (const PeerDead& e) {
      throw UnrecoverableError(fmt::format("failure during recovery: {}", e.what()));
    }
    if (cluster_.barrier(self_, group(), OpTag{state_.iteration, steps::kRecoveryDone}) !=
        BarrierStatus::kOk) {
      throw UnrecoverableError("failure during recovery");
    }
    KMFT_LOG_DEBUG("rank {} resumes at iteration {} in generation {}", self_, state_.iteration,
                   group().generation());
  }

  void finish(bool converged) {
    FinalDeposit d;
    d.group = group();
    d.owned = state_.owned;
    d.centroids = state_.centroids;
    d.iteration = state_.iteration;
    d.converged = converged;
    if (store_.last_committed()) d.committed_epoch = store_.last_committed()->epoch;
    rec_.final(self_, std::move(d));
  }

  sim::Cluster& cluster_;
  RankId self_;
  const Dataset& data_;
  const KmeansConfig& cfg_;
  const FtOptions& opts_;
  WorldLayout layout_;
  ckpt::CheckpointStore store_;
  Recorder& rec_;
  RankKmeansState state_;
};

AssignmentTable assemble_from(std::size_t n, std::size_t k,
                              const std::map<std::size_t, std::vector<OwnedSample>>& owned) {
  std::vector<std::vector<OwnedSample>> parts;
  for (const auto& [pos, v] : owned) parts.push_back(v);
  return assemble_assignments(n, k, parts);
}

}  // namespace

RunOutcome run_ft_kmeans(const Dataset& data, const KmeansConfig& cfg, const FtOptions& options,
                         const WorldLayout& layout, const sim::FailurePlan& plan) {
  cfg.validate();
  options.policy.validate();
  if (options.fault_tolerance && layout.active.size() < 2) {
    throw ConfigError("fault tolerance needs at least two active ranks");
  }
  if (cfg.k > data.n()) throw ConfigError("k exceeds the number of samples");

  sim::ClusterOptions copts;
  copts.world_size = layout.world_size();
  copts.plan = plan;
  copts.costs = options.costs;
  copts.mode = options.mode;
  copts.trace = options.trace;
  sim::Cluster cluster(copts);

  const std::size_t max_owned =
      options.method == Method::kCenters ? data.n() : BlockPartition(data.n(), layout.active.size()).size(0);
  const ckpt::SegmentLayout seg{max_owned, cfg.k, data.d()};
  if (options.fault_tolerance) ckpt::register_segments(cluster, seg);

  Recorder rec;
  cluster.run([&](RankId self) {
    RankDriver driver(cluster, self, data, cfg, options, layout, seg, rec);
    driver.main();
  });

  RunOutcome out{.centroids = init_centroids(data, cfg.k), .table = AssignmentTable::unassigned(data.n(), cfg.k)};
  out.killed = cluster.killed();
  for (std::size_t r = 0; r < cluster.world_size(); ++r) {
    out.ledgers.push_back(cluster.ledger(static_cast<RankId>(r)));
  }
  out.detections = std::move(rec.detections_);
  out.rollbacks = std::move(rec.rollbacks_);
  for (const auto& rb : out.rollbacks) out.recoveries += rb.replacements.size();
  out.captured = std::move(rec.captured_);
  out.restored = std::move(rec.restored_);
  if (options.trace) out.trace = cluster.trace();

  if (rec.aborted_) {
    out.aborted = true;
    out.reason = *rec.aborted_;
  }

  // Deposits of the newest generation form the final group.
  std::uint64_t newest = 0;
  for (const auto& [r, d] : rec.finals_) newest = std::max(newest, d.group.generation());
  std::map<std::size_t, std::vector<OwnedSample>> owned;
  const FinalDeposit* any = nullptr;
  for (const auto& [r, d] : rec.finals_) {
    if (d.group.generation() != newest) continue;
    owned[d.group.position_of(r)] = d.owned;
    any = &d;
  }
  if (any) {
    out.final_group = any->group;
    out.centroids = *any->centroids;
    out.iterations = any->iteration;
    out.converged = any->converged && !out.aborted;
    out.epochs_committed = any->committed_epoch;
    if (!out.aborted && owned.size() == any->group.size()) {
      out.table = assemble_from(data.n(), cfg.k, owned);
    }
    for (RankId r : out.final_group.members()) {
      if (out.ledgers[r].total() >= out.critical.total()) out.critical = out.ledgers[r];
    }
  } else {
    out.final_group = layout.active;
  }
  if (!any && !out.aborted) {
    out.aborted = true;
    out.reason = "no rank finished";
  }

  for (auto& [t, h] : rec.history_) {
    try {
      out.history.emplace(t, IterationSnapshot{*h.centroids, assemble_from(data.n(), cfg.k, h.owned)});
    } catch (const UsageError&) {
      // incomplete: a member died before depositing this iteration
    }
  }
  return out;
}

RunOutcome run_parallel_kmeans(const Dataset& data, const KmeansConfig& cfg, Method method,
                               std::size_t procs, sim::SchedMode mode, bool record_history) {
  FtOptions opts;
  opts.method = method;
  opts.fault_tolerance = false;
  opts.mode = mode;
  opts.record_history = record_history;
  return run_ft_kmeans(data, cfg, opts, WorldLayout::initial(procs, 0), {});
}

}  // namespace kmft
