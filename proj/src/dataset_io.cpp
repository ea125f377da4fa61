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

#include "kmft/dataset_io.hpp"

#include <charconv>
#include <cstring>
#include <fstream>
#include <iterator>
#include <random>
#include <string>

#include <fmt/format.h>

#include "kmft/errors.hpp"

namespace kmft {

namespace {

constexpr char kMagic[4] = {'K', 'M', 'D', 'S'};

bool parse_row(const std::string& line, std::vector<double>& out) {
  out.clear();
  const char* p = line.data();
  const char* end = p + line.size();
  while (end > p && (end[-1] == '\r' || end[-1] == ' ')) --end;
  if (p == end) return false;
  while (true) {
    while (p < end && *p == ' ') ++p;
    double v = 0;
    const auto [next, ec] = std::from_chars(p, end, v);
    if (ec != std::errc()) return false;
    out.push_back(v);
    p = next;
    while (p < end && *p == ' ') ++p;
    if (p == end) return true;
    if (*p != ',') return false;
    ++p;
  }
}

}  // namespace

Bytes encode_dataset(const Dataset& data) {
  ByteWriter w;
  w.text(std::string_view(kMagic, 4));
  w.u64(data.n());
  w.u64(data.d());
  w.f64s(data.values());
  return std::move(w).take();
}

Dataset decode_dataset(std::span<const std::byte> bytes) {
  if (bytes.size() < kDatasetHeaderSize || std::memcmp(bytes.data(), kMagic, 4) != 0) {
    throw FormatError("not a KMDS dataset");
  }
  ByteReader r(bytes.subspan(4));
  const std::uint64_t n = r.u64();
  const std::uint64_t d = r.u64();
  if (d != 0 && n > r.remaining() / 8 / d) throw FormatError("dataset is truncated");
  if (r.remaining() != n * d * 8) throw FormatError("dataset size does not match its header");
  return Dataset(n, d, r.f64s(n * d));
}

void write_dataset(const std::filesystem::path& path, const Dataset& data) {
  const Bytes bytes = encode_dataset(data);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError(fmt::format("cannot open {} for writing", path.string()));
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError(fmt::format("write to {} failed", path.string()));
}

Dataset read_dataset(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError(fmt::format("cannot open {}", path.string()));
  std::string raw((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  const auto* p = reinterpret_cast<const std::byte*>(raw.data());
  return decode_dataset({p, raw.size()});
}

Dataset import_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError(fmt::format("cannot open {}", path.string()));
  std::vector<double> values;
  std::vector<double> row;
  std::size_t d = 0;
  std::size_t n = 0;
  std::string line;
  for (std::size_t lineno = 1; std::getline(in, line); ++lineno) {
    if (line.find_first_not_of(" \r") == std::string::npos) continue;
    if (!parse_row(line, row)) {
      if (lineno == 1) continue;
      throw FormatError(fmt::format("{}:{}: not a numeric row", path.string(), lineno));
    }
    if (n == 0) d = row.size();
    if (row.size() != d) {
      throw FormatError(fmt::format("{}:{}: expected {} columns, got {}", path.string(), lineno, d,
                                    row.size()));
    }
    values.insert(values.end(), row.begin(), row.end());
    ++n;
  }
  if (n == 0) throw FormatError(fmt::format("{}: no samples", path.string()));
  return Dataset(n, d, std::move(values));
}

GeneratedData generate_dataset(std::size_t n, std::size_t d, std::size_t blobs, double spread,
                               std::uint64_t seed) {
  if (n == 0 || d == 0) throw UsageError("dataset needs n >= 1 and d >= 1");
  if (blobs == 0 || blobs > n) throw UsageError("blobs must be in [1, n]");
  if (!(spread >= 0)) throw UsageError("spread must be non-negative");
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> uniform(0.0, 100.0);
  std::normal_distribution<double> noise(0.0, 1.0);

  std::vector<double> centers(blobs * d);
  for (auto& c : centers) c = uniform(rng);
  std::vector<double> values(n * d);
  std::vector<std::size_t> labels(n);
  for (std::size_t i = 0; i < n; ++i) {
    labels[i] = i % blobs;
    for (std::size_t j = 0; j < d; ++j) {
      values[i * d + j] = centers[labels[i] * d + j] + spread * noise(rng);
    }
  }
  return {Dataset(n, d, std::move(values)), std::move(labels),
          CentroidSet(blobs, d, std::move(centers))};
}

}  // namespace kmft
