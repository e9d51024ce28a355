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

#include "lmdfl/wire.hpp"

#include <bit>
#include <cstring>

#include "lmdfl/errors.hpp"

namespace lmdfl::wire {

void BitWriter::put(std::uint64_t value, unsigned width) {
  for (unsigned b = width; b-- > 0;) {
    if (bits_ % 8 == 0) buf_.push_back(0);
    if ((value >> b) & 1U) {
      buf_.back() |= static_cast<std::uint8_t>(0x80U >> (bits_ % 8));
    }
    ++bits_;
  }
}

void BitWriter::put_float(float value) {
  put(std::bit_cast<std::uint32_t>(value), 32);
}

std::vector<std::uint8_t> BitWriter::finish() && { return std::move(buf_); }

std::uint64_t BitReader::get(unsigned width) {
  if (pos_ + width > bytes_.size() * 8) {
    throw CorruptPayload("wire: payload truncated");
  }
  std::uint64_t value = 0;
  for (unsigned b = 0; b < width; ++b, ++pos_) {
    const unsigned bit = (bytes_[pos_ / 8] >> (7 - pos_ % 8)) & 1U;
    value = (value << 1) | bit;
  }
  return value;
}

float BitReader::get_float() {
  return std::bit_cast<float>(static_cast<std::uint32_t>(get(32)));
}

Encoded serialize(const quant::QuantizedVector& q) {
  BitWriter w;
  w.put_float(static_cast<float>(q.norm));
  for (bool neg : q.negative) w.put(neg ? 1 : 0, 1);
  if (q.lossless) {
    for (double m : q.magnitudes) w.put_float(static_cast<float>(m));
  } else {
    const unsigned width = quant::index_width(q.level_count);
    for (std::uint32_t idx : q.indices) w.put(idx, width);
  }
  Encoded out;
  out.bit_length = w.bit_length();
  out.bytes = std::move(w).finish();
  return out;
}

quant::QuantizedVector deserialize(std::span<const std::uint8_t> bytes,
                                   std::size_t dim, std::uint32_t level_count,
                                   std::uint64_t codebook_id, bool lossless) {
  BitReader r(bytes);
  quant::QuantizedVector q;
  q.norm = r.get_float();
  if (!(q.norm >= 0.0)) throw CorruptPayload("wire: negative or NaN norm");
  q.negative.resize(dim);
  for (std::size_t i = 0; i < dim; ++i) q.negative[i] = r.get(1) != 0;
  q.indices.assign(dim, 0);
  q.level_count = level_count;
  q.codebook_id = codebook_id;
  q.lossless = lossless;
  if (lossless) {
    q.magnitudes.resize(dim);
    for (auto& m : q.magnitudes) m = r.get_float();
    return q;
  }
  const unsigned width = quant::index_width(level_count);
  for (auto& idx : q.indices) {
    idx = static_cast<std::uint32_t>(r.get(width));
    if (idx >= level_count) {
      throw CorruptPayload("wire: index " + std::to_string(idx) +
                           " >= s=" + std::to_string(level_count));
    }
  }
  return q;
}

std::vector<std::uint8_t> serialize_codebook(const quant::LevelTable& table) {
  BitWriter w;
  for (double l : table.levels) w.put_float(static_cast<float>(l));
  return std::move(w).finish();
}

quant::LevelTable deserialize_codebook(std::span<const std::uint8_t> bytes) {
  if (bytes.empty() || bytes.size() % 4 != 0) {
    throw CorruptPayload("wire: codebook length not a multiple of 4");
  }
  BitReader r(bytes);
  std::vector<double> levels(bytes.size() / 4);
  for (auto& l : levels) l = r.get_float();
  try {
    return quant::LevelTable::from_levels(std::move(levels));
  } catch (const InvalidInput& e) {
    throw CorruptPayload(std::string("wire: bad codebook: ") + e.what());
  }
}

}  // namespace lmdfl::wire
