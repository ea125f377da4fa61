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

// Test-only generators and a brute-force Lloyd reference written without the
// library's helpers.

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <random>
#include <vector>

#include "kmft/kmeans.hpp"

namespace kmft::testing {

struct Instance {
  std::size_t n = 0;
  std::size_t d = 0;
  std::size_t k = 0;
  std::vector<double> values;

  Dataset dataset() const { return Dataset(n, d, values); }
};

// Random instance. Odd seeds draw from a
// small integer grid so that distance ties and duplicate samples show up.
inline Instance raw_instance(std::uint64_t seed, std::size_t max_n = 500, std::size_t max_d = 8,
                                std::size_t max_k = 16) {
  std::mt19937_64 rng(seed);
  auto pick = [&](std::size_t lo, std::size_t hi) {
    return std::uniform_int_distribution<std::size_t>(lo, hi)(rng);
  };
  Instance in;
  in.d = pick(1, max_d);
  in.k = pick(1, max_k);
  in.n = pick(std::max<std::size_t>(in.k, 8), max_n);
  in.values.resize(in.n * in.d);
  const bool grid = seed % 2 == 1;
  std::uniform_real_distribution<double> real(-50.0, 50.0);
  std::uniform_int_distribution<int> cell(0, 6);
  for (auto& v : in.values) v = grid ? static_cast<double>(cell(rng)) : real(rng);
  return in;
}

struct OracleRun {
  std::vector<double> centers;
  std::vector<std::uint32_t> assign;
  std::size_t iterations = 0;
  bool converged = false;
  std::vector<std::vector<std::uint32_t>> assign_history;
  std::vector<std::vector<double>> center_history;
};

inline double oracle_dist(const double* a, const double* b, std::size_t d) {
  double s = 0.0;
  for (std::size_t j = 0; j < d; ++j) s += (a[j] - b[j]) * (a[j] - b[j]);
  return s;
}

inline std::vector<double> oracle_init(const Instance& in) {
  std::vector<double> c;
  std::size_t have = 0;
  for (std::size_t i = 0; i < in.n && have < in.k; ++i) {
    const double* x = &in.values[i * in.d];
    bool dup = false;
    for (std::size_t m = 0; m < have && !dup; ++m) {
      bool same = true;
      for (std::size_t j = 0; j < in.d; ++j) same = same && c[m * in.d + j] == x[j];
      dup = same;
    }
    if (dup) continue;
    c.insert(c.end(), x, x + in.d);
    ++have;
  }
  return c;
}

// Grid instances can have fewer than k distinct samples; shrink k to fit.
inline Instance capped(Instance in) {
  in.k = std::max<std::size_t>(1, std::min(in.k, oracle_init(in).size() / in.d));
  return in;
}

inline Instance random_instance(std::uint64_t seed, std::size_t max_n = 500,
                                std::size_t max_d = 8, std::size_t max_k = 16) {
  return capped(raw_instance(seed, max_n, max_d, max_k));
}

inline OracleRun oracle_lloyd(const Instance& in, std::size_t max_iters, bool force = false) {
  const std::size_t n = in.n, d = in.d, k = in.k;
  OracleRun r;
  r.centers = oracle_init(in);
  r.assign.assign(n, std::numeric_limits<std::uint32_t>::max());
  for (std::size_t it = 1; it <= max_iters; ++it) {
    bool changed = false;
    for (std::size_t i = 0; i < n; ++i) {
      std::uint32_t best = 0;
      double best_d = oracle_dist(&in.values[i * d], &r.centers[0], d);
      for (std::uint32_t c = 1; c < k; ++c) {
        const double dc = oracle_dist(&in.values[i * d], &r.centers[c * d], d);
        if (dc < best_d) {
          best_d = dc;
          best = c;
        }
      }
      if (r.assign[i] != best) changed = true;
      r.assign[i] = best;
    }
    for (std::size_t c = 0; c < k; ++c) {
      std::vector<double> sum(d, 0.0);
      std::size_t count = 0;
      for (std::size_t i = 0; i < n; ++i) {
        if (r.assign[i] != c) continue;
        for (std::size_t j = 0; j < d; ++j) sum[j] += in.values[i * d + j];
        ++count;
      }
      if (count == 0) continue;
      for (std::size_t j = 0; j < d; ++j) r.centers[c * d + j] = sum[j] / static_cast<double>(count);
    }
    r.iterations = it;
    r.assign_history.push_back(r.assign);
    r.center_history.push_back(r.centers);
    if (!changed && !force) {
      r.converged = true;
      break;
    }
  }
  return r;
}

inline double oracle_objective(const Instance& in, const std::vector<double>& centers,
                               const std::vector<std::uint32_t>& assign) {
  double s = 0.0;
  for (std::size_t i = 0; i < in.n; ++i) {
    s += oracle_dist(&in.values[i * in.d], &centers[assign[i] * in.d], in.d);
  }
  return s;
}

}  // namespace kmft::testing
