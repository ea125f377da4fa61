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

#include "kmft/wire.hpp"

#include <bit>
#include <cstring>

#include "kmft/errors.hpp"

namespace kmft {

void ByteWriter::u64(std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out_.push_back(static_cast<std::byte>((v >> (8 * i)) & 0xFF));
}

void ByteWriter::f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }

void ByteWriter::f64s(std::span<const double> v) {
  out_.reserve(out_.size() + v.size() * 8);
  for (double x : v) f64(x);
}

void ByteWriter::raw(std::span<const std::byte> v) { out_.insert(out_.end(), v.begin(), v.end()); }

void ByteWriter::text(std::string_view s) {
  for (char c : s) out_.push_back(static_cast<std::byte>(c));
}

std::uint64_t ByteReader::u64() {
  const auto b = raw(8);
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  return v;
}

double ByteReader::f64() { return std::bit_cast<double>(u64()); }

std::vector<double> ByteReader::f64s(std::size_t count) {
  std::vector<double> v(count);
  for (auto& x : v) x = f64();
  return v;
}

std::span<const std::byte> ByteReader::raw(std::size_t count) {
  if (count > remaining()) throw FormatError("truncated input");
  auto s = in_.subspan(pos_, count);
  pos_ += count;
  return s;
}

Bytes doubles_to_bytes(std::span<const double> v) {
  ByteWriter w;
  w.f64s(v);
  return std::move(w).take();
}

std::vector<double> bytes_to_doubles(std::span<const std::byte> b) {
  if (b.size() % 8 != 0) throw FormatError("byte count is not a multiple of 8");
  ByteReader r(b);
  return r.f64s(b.size() / 8);
}

}  // namespace kmft
