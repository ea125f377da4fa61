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
#include <filesystem>
#include <span>
#include <vector>

#include "kmft/kmeans.hpp"
#include "kmft/wire.hpp"

namespace kmft {

// Binary dataset file: "KMDS", n u64, d u64, then n*d f64 row-major, all
// little-endian.
inline constexpr std::size_t kDatasetHeaderSize = 20;

Bytes encode_dataset(const Dataset& data);
/// Throws FormatError when the bytes disagree with the header.
Dataset decode_dataset(std::span<const std::byte> bytes);

/// Throws IoError when the file cannot be written or read.
void write_dataset(const std::filesystem::path& path, const Dataset& data);
Dataset read_dataset(const std::filesystem::path& path);

/// Comma-separated numeric rows, one sample per line. A first line that does
/// not parse as numbers is taken as a header. Throws FormatError with the
/// offending line number.
Dataset import_csv(const std::filesystem::path& path);

struct GeneratedData {
  Dataset data;
  std::vector<std::size_t> labels;  // blob of each sample, round robin
  CentroidSet blob_centers;
};

/// Gaussian blobs with standard deviation `spread` around centers drawn
/// uniformly from [0, 100)^d. Deterministic per seed.
GeneratedData generate_dataset(std::size_t n, std::size_t d, std::size_t blobs, double spread,
                               std::uint64_t seed);

}  // namespace kmft
