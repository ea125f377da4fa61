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

#include "kmft/kmeans.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "kmft/errors.hpp"

namespace kmft {

namespace {

bool all_finite(const std::vector<double>& v) {
  return std::all_of(v.begin(), v.end(), [](double x) { return std::isfinite(x); });
}

}  // namespace

Dataset::Dataset(std::size_t n, std::size_t d, std::vector<double> values)
    : n_(n), d_(d), values_(std::move(values)) {
  if (n_ == 0 || d_ == 0) throw UsageError("dataset needs n >= 1 and d >= 1");
  if (values_.size() != n_ * d_) {
    throw UsageError("dataset holds " + std::to_string(values_.size()) + " values, expected " +
                     std::to_string(n_ * d_));
  }
  if (!all_finite(values_)) throw UsageError("dataset contains non-finite values");
}

CentroidSet::CentroidSet(std::size_t k, std::size_t d, std::vector<double> coords)
    : k_(k), d_(d), coords_(std::move(coords)) {
  if (k_ == 0 || d_ == 0) throw UsageError("centroid set needs k >= 1 and d >= 1");
  if (coords_.size() != k_ * d_) throw UsageError("centroid coordinate count mismatch");
  if (!all_finite(coords_)) throw UsageError("centroid set contains non-finite values");
}

AssignmentTable AssignmentTable::unassigned(std::size_t n, std::size_t k) {
  AssignmentTable t;
  t.assign.assign(n, kUnassigned);
  t.counts.assign(k, 0);
  return t;
}

void AssignmentTable::recount(std::size_t k) {
  counts.assign(k, 0);
  for (CenterIndex c : assign) {
    if (c >= k) throw UsageError("assignment entry out of range");
    ++counts[c];
  }
}

void KmeansConfig::validate() const {
  if (k == 0) throw UsageError("k must be >= 1");
  if (max_iters == 0) throw UsageError("max_iters must be >= 1");
}

double squared_distance(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) {
    throw UsageError("dimension mismatch: " + std::to_string(a.size()) + " vs " +
                     std::to_string(b.size()));
  }
  double acc = 0.0;
  for (std::size_t j = 0; j < a.size(); ++j) {
    const double diff = a[j] - b[j];
    acc += diff * diff;
  }
  return acc;
}

CenterIndex nearest_center(std::span<const double> x, const CentroidSet& centers) {
  CenterIndex best = 0;
  double best_dist = squared_distance(x, centers.center(0));
  for (std::size_t c = 1; c < centers.k(); ++c) {
    const double dist = squared_distance(x, centers.center(c));
    if (dist < best_dist) {
      best_dist = dist;
      best = static_cast<CenterIndex>(c);
    }
  }
  return best;
}

CentroidSet init_centroids(const Dataset& data, std::size_t k) {
  if (k == 0) throw InitError("k must be >= 1");
  std::vector<std::size_t> picked;
  picked.reserve(k);
  for (std::size_t i = 0; i < data.n() && picked.size() < k; ++i) {
    const auto row = data.row(i);
    const bool duplicate = std::any_of(picked.begin(), picked.end(), [&](std::size_t p) {
      return std::equal(row.begin(), row.end(), data.row(p).begin());
    });
    if (!duplicate) picked.push_back(i);
  }
  if (picked.size() < k) {
    throw InitError("dataset has only " + std::to_string(picked.size()) +
                    " distinct samples, k = " + std::to_string(k));
  }
  std::vector<double> coords;
  coords.reserve(k * data.d());
  for (std::size_t p : picked) {
    const auto row = data.row(p);
    coords.insert(coords.end(), row.begin(), row.end());
  }
  return CentroidSet(k, data.d(), std::move(coords));
}

CentroidSet recompute_centers(const Dataset& data, const AssignmentTable& table,
                              const CentroidSet& previous) {
  const std::size_t k = previous.k();
  const std::size_t d = previous.d();
  std::vector<double> sums(k * d, 0.0);
  std::vector<std::uint64_t> counts(k, 0);
  for (std::size_t i = 0; i < data.n(); ++i) {
    const CenterIndex c = table.assign[i];
    if (c == kUnassigned) continue;
    const auto row = data.row(i);
    for (std::size_t j = 0; j < d; ++j) sums[c * d + j] += row[j];
    ++counts[c];
  }
  std::vector<double> coords = previous.coords();
  for (std::size_t c = 0; c < k; ++c) {
    if (counts[c] == 0) continue;
    const double count = static_cast<double>(counts[c]);
    for (std::size_t j = 0; j < d; ++j) coords[c * d + j] = sums[c * d + j] / count;
  }
  return CentroidSet(k, d, std::move(coords));
}

StepResult lloyd_step(const Dataset& data, const CentroidSet& centers,
                      const AssignmentTable& prior) {
  if (data.d() != centers.d()) throw UsageError("dataset and centers differ in dimension");
  if (prior.assign.size() != data.n()) throw UsageError("assignment table size mismatch");

  AssignmentTable next;
  next.assign.resize(data.n());
  next.changed = false;
  for (std::size_t i = 0; i < data.n(); ++i) {
    next.assign[i] = nearest_center(data.row(i), centers);
    if (next.assign[i] != prior.assign[i]) next.changed = true;
  }
  next.recount(centers.k());
  CentroidSet updated = recompute_centers(data, next, centers);
  return {std::move(updated), std::move(next)};
}

double objective(const Dataset& data, const CentroidSet& centers, const AssignmentTable& table) {
  if (table.assign.size() != data.n()) throw UsageError("assignment table size mismatch");
  double total = 0.0;
  for (std::size_t i = 0; i < data.n(); ++i) {
    const CenterIndex c = table.assign[i];
    if (c >= centers.k()) throw UsageError("objective needs a fully assigned table");
    total += squared_distance(data.row(i), centers.center(c));
  }
  return total;
}

SequentialResult run_sequential(const Dataset& data, const KmeansConfig& cfg,
                                const IterationObserver& observer) {
  cfg.validate();
  SequentialResult result{init_centroids(data, cfg.k), AssignmentTable::unassigned(data.n(), cfg.k),
                          0, false};
  while (result.iterations < cfg.max_iters) {
    StepResult step = lloyd_step(data, result.centroids, result.table);
    ++result.iterations;
    result.centroids = std::move(step.centroids);
    result.table = std::move(step.table);
    if (observer) observer(result.iterations, result.centroids, result.table);
    if (!result.table.changed && !cfg.force_iters) {
      result.converged = true;
      break;
    }
  }
  return result;
}

}  // namespace kmft
