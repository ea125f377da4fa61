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
#include <functional>
#include <limits>
#include <span>
#include <vector>

namespace kmft {

using CenterIndex = std::uint32_t;

/// Sentinel for a sample that has not been assigned yet (before the first
/// assignment pass).
inline constexpr CenterIndex kUnassigned = std::numeric_limits<CenterIndex>::max();

/// Immutable n x d table of observations, row-major.
class Dataset {
 public:
  Dataset(std::size_t n, std::size_t d, std::vector<double> values);

  std::size_t n() const { return n_; }
  std::size_t d() const { return d_; }
  std::span<const double> row(std::size_t i) const { return {values_.data() + i * d_, d_}; }
  const std::vector<double>& values() const { return values_; }

  friend bool operator==(const Dataset&, const Dataset&) = default;

 private:
  std::size_t n_;
  std::size_t d_;
  std::vector<double> values_;
};

/// k cluster centers of dimension d, row-major.
class CentroidSet {
 public:
  CentroidSet(std::size_t k, std::size_t d, std::vector<double> coords);

  std::size_t k() const { return k_; }
  std::size_t d() const { return d_; }
  std::span<const double> center(std::size_t c) const { return {coords_.data() + c * d_, d_}; }
  std::span<double> center(std::size_t c) { return {coords_.data() + c * d_, d_}; }
  const std::vector<double>& coords() const { return coords_; }

  friend bool operator==(const CentroidSet&, const CentroidSet&) = default;

 private:
  std::size_t k_;
  std::size_t d_;
  std::vector<double> coords_;
};

struct AssignmentTable {
  std::vector<CenterIndex> assign;
  bool changed = false;
  std::vector<std::uint64_t> counts;

  /// Table for n samples that have not been assigned to any of k centers.
  static AssignmentTable unassigned(std::size_t n, std::size_t k);

  /// Rebuilds counts from assign. Throws UsageError on an out-of-range entry.
  void recount(std::size_t k);

  friend bool operator==(const AssignmentTable&, const AssignmentTable&) = default;
};

struct KmeansConfig {
  std::size_t k = 0;
  std::size_t max_iters = 100;
  std::uint64_t seed = 0;
  // Ignore convergence and run exactly max_iters iterations.
  bool force_iters = false;

  void validate() const;
};

double squared_distance(std::span<const double> a, std::span<const double> b);

/// Index of the closest center; ties go to the lowest index.
CenterIndex nearest_center(std::span<const double> x, const CentroidSet& centers);

/// First k pairwise-distinct samples in index order.
CentroidSet init_centroids(const Dataset& data, std::size_t k);

struct StepResult {
  CentroidSet centroids;
  AssignmentTable table;
};

/// One assignment + update pass. Empty clusters keep their previous center.
StepResult lloyd_step(const Dataset& data, const CentroidSet& centers, const AssignmentTable& prior);

/// Recomputes centers as per-cluster means summed in ascending sample order.
/// Clusters with no samples keep the coordinates from `previous`.
CentroidSet recompute_centers(const Dataset& data, const AssignmentTable& table,
                              const CentroidSet& previous);

double objective(const Dataset& data, const CentroidSet& centers, const AssignmentTable& table);

struct SequentialResult {
  CentroidSet centroids;
  AssignmentTable table;
  std::size_t iterations = 0;
  bool converged = false;
};

/// Called after every completed iteration with the 1-based iteration number.
using IterationObserver =
    std::function<void(std::size_t iteration, const CentroidSet&, const AssignmentTable&)>;

SequentialResult run_sequential(const Dataset& data, const KmeansConfig& cfg,
                                const IterationObserver& observer = {});

}  // namespace kmft
