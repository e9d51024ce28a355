// Copyright 2026 The LM-DFL Authors. All Rights Reserved.
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
// =============================================================================

#pragma once

// Big-endian bit-packed encoding of a QuantizedVector:
//   32-bit float norm | d sign bits (MSB first) | d indices at
//   ceil(log2 s) bits each | zero padding to the next byte.
// Lossless payloads replace the index block with d 32-bit float magnitudes.

#include <cstdint>
#include <span>
#include <vector>

#include "lmdfl/quantizers.hpp"

namespace lmdfl::wire {

struct Encoded {
  std::vector<std::uint8_t> bytes;
  std::uint64_t bit_length = 0;  // before padding
};

Encoded serialize(const quant::QuantizedVector& q);

// Dimension, level count and codebook are carried out of band.
quant::QuantizedVector deserialize(std::span<const std::uint8_t> bytes,
                                   std::size_t dim, std::uint32_t level_count,
                                   std::uint64_t codebook_id,
                                   bool lossless = false);

// Codebook sidecar: s big-endian 32-bit floats.
std::vector<std::uint8_t> serialize_codebook(const quant::LevelTable& table);
quant::LevelTable deserialize_codebook(std::span<const std::uint8_t> bytes);

class BitWriter {
 public:
  void put(std::uint64_t value, unsigned width);
  void put_float(float value);
  std::uint64_t bit_length() const noexcept { return bits_; }
  std::vector<std::uint8_t> finish() &&;

 private:
  std::vector<std::uint8_t> buf_;
  std::uint64_t bits_ = 0;
};

class BitReader {
 public:
  explicit BitReader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}
  std::uint64_t get(unsigned width);
  float get_float();

 private:
  std::span<const std::uint8_t> bytes_;
  std::uint64_t pos_ = 0;
};

}  // namespace lmdfl::wire
