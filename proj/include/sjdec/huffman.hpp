// Copyright (c) the spectral-jdec authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#ifndef SJDEC_HUFFMAN_HPP_
#define SJDEC_HUFFMAN_HPP_

// Huffman tables and the bit-level I/O used by the entropy-coded segment.

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "sjdec/common.hpp"

namespace sjdec {

enum class ParseErrorKind {
  kTruncated,
  kUnsupported,
  kCorruptHuffman,
  kDimensionOverflow,
  kMalformed,
};

inline const char* to_string(ParseErrorKind kind) {
  switch (kind) {
    case ParseErrorKind::kTruncated: return "truncated";
    case ParseErrorKind::kUnsupported: return "unsupported";
    case ParseErrorKind::kCorruptHuffman: return "corrupt huffman code";
    case ParseErrorKind::kDimensionOverflow: return "dimension overflow";
    case ParseErrorKind::kMalformed: return "malformed";
  }
  return "unknown";
}

class ParseError : public Error {
 public:
  ParseError(ParseErrorKind kind, const std::string& what)
      : Error(std::string(to_string(kind)) + ": " + what), kind_(kind) {}
  ParseErrorKind kind() const { return kind_; }

 private:
  ParseErrorKind kind_;
};

// BITS/HUFFVAL pair as stored in a DHT segment.
struct HuffmanSpec {
  std::array<uint8_t, 16> counts{};  // number of codes of length 1..16
  std::vector<uint8_t> symbols;
};

// Annex K.3 tables.
inline const HuffmanSpec& std_dc_luma() {
  static const HuffmanSpec s{{0, 1, 5, 1, 1, 1, 1, 1, 1, 0, 0, 0, 0, 0, 0, 0},
                             {0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11}};
  return s;
}

inline const HuffmanSpec& std_dc_chroma() {
  static const HuffmanSpec s{{0, 3, 1, 1, 1, 1, 1, 1, 1, 1, 1, 0, 0, 0, 0, 0},
                             {0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11}};
  return s;
}

inline const HuffmanSpec& std_ac_luma() {
  static const HuffmanSpec s{
      {0, 2, 1, 3, 3, 2, 4, 3, 5, 5, 4, 4, 0, 0, 1, 0x7d},
      {0x01, 0x02, 0x03, 0x00, 0x04, 0x11, 0x05, 0x12, 0x21, 0x31, 0x41, 0x06, 0x13, 0x51,
       0x61, 0x07, 0x22, 0x71, 0x14, 0x32, 0x81, 0x91, 0xa1, 0x08, 0x23, 0x42, 0xb1, 0xc1,
       0x15, 0x52, 0xd1, 0xf0, 0x24, 0x33, 0x62, 0x72, 0x82, 0x09, 0x0a, 0x16, 0x17, 0x18,
       0x19, 0x1a, 0x25, 0x26, 0x27, 0x28, 0x29, 0x2a, 0x34, 0x35, 0x36, 0x37, 0x38, 0x39,
       0x3a, 0x43, 0x44, 0x45, 0x46, 0x47, 0x48, 0x49, 0x4a, 0x53, 0x54, 0x55, 0x56, 0x57,
       0x58, 0x59, 0x5a, 0x63, 0x64, 0x65, 0x66, 0x67, 0x68, 0x69, 0x6a, 0x73, 0x74, 0x75,
       0x76, 0x77, 0x78, 0x79, 0x7a, 0x83, 0x84, 0x85, 0x86, 0x87, 0x88, 0x89, 0x8a, 0x92,
       0x93, 0x94, 0x95, 0x96, 0x97, 0x98, 0x99, 0x9a, 0xa2, 0xa3, 0xa4, 0xa5, 0xa6, 0xa7,
       0xa8, 0xa9, 0xaa, 0xb2, 0xb3, 0xb4, 0xb5, 0xb6, 0xb7, 0xb8, 0xb9, 0xba, 0xc2, 0xc3,
       0xc4, 0xc5, 0xc6, 0xc7, 0xc8, 0xc9, 0xca, 0xd2, 0xd3, 0xd4, 0xd5, 0xd6, 0xd7, 0xd8,
       0xd9, 0xda, 0xe1, 0xe2, 0xe3, 0xe4, 0xe5, 0xe6, 0xe7, 0xe8, 0xe9, 0xea, 0xf1, 0xf2,
       0xf3, 0xf4, 0xf5, 0xf6, 0xf7, 0xf8, 0xf9, 0xfa}};
  return s;
}

inline const HuffmanSpec& std_ac_chroma() {
  static const HuffmanSpec s{
      {0, 2, 1, 2, 4, 4, 3, 4, 7, 5, 4, 4, 0, 1, 2, 0x77},
      {0x00, 0x01, 0x02, 0x03, 0x11, 0x04, 0x05, 0x21, 0x31, 0x06, 0x12, 0x41, 0x51, 0x07,
       0x61, 0x71, 0x13, 0x22, 0x32, 0x81, 0x08, 0x14, 0x42, 0x91, 0xa1, 0xb1, 0xc1, 0x09,
       0x23, 0x33, 0x52, 0xf0, 0x15, 0x62, 0x72, 0xd1, 0x0a, 0x16, 0x24, 0x34, 0xe1, 0x25,
       0xf1, 0x17, 0x18, 0x19, 0x1a, 0x26, 0x27, 0x28, 0x29, 0x2a, 0x35, 0x36, 0x37, 0x38,
       0x39, 0x3a, 0x43, 0x44, 0x45, 0x46, 0x47, 0x48, 0x49, 0x4a, 0x53, 0x54, 0x55, 0x56,
       0x57, 0x58, 0x59, 0x5a, 0x63, 0x64, 0x65, 0x66, 0x67, 0x68, 0x69, 0x6a, 0x73, 0x74,
       0x75, 0x76, 0x77, 0x78, 0x79, 0x7a, 0x82, 0x83, 0x84, 0x85, 0x86, 0x87, 0x88, 0x89,
       0x8a, 0x92, 0x93, 0x94, 0x95, 0x96, 0x97, 0x98, 0x99, 0x9a, 0xa2, 0xa3, 0xa4, 0xa5,
       0xa6, 0xa7, 0xa8, 0xa9, 0xaa, 0xb2, 0xb3, 0xb4, 0xb5, 0xb6, 0xb7, 0xb8, 0xb9, 0xba,
       0xc2, 0xc3, 0xc4, 0xc5, 0xc6, 0xc7, 0xc8, 0xc9, 0xca, 0xd2, 0xd3, 0xd4, 0xd5, 0xd6,
       0xd7, 0xd8, 0xd9, 0xda, 0xe2, 0xe3, 0xe4, 0xe5, 0xe6, 0xe7, 0xe8, 0xe9, 0xea, 0xf2,
       0xf3, 0xf4, 0xf5, 0xf6, 0xf7, 0xf8, 0xf9, 0xfa}};
  return s;
}

// Symbol -> (code, length) for the encoder.
class HuffmanEncoder {
 public:
  explicit HuffmanEncoder(const HuffmanSpec& spec) {
    uint32_t code = 0;
    std::size_t k = 0;
    for (int len = 1; len <= 16; ++len) {
      for (int i = 0; i < spec.counts[len - 1]; ++i, ++k) {
        codes_[spec.symbols[k]] = code++;
        lengths_[spec.symbols[k]] = static_cast<uint8_t>(len);
      }
      code <<= 1;
    }
  }
  uint32_t code(uint8_t symbol) const { return codes_[symbol]; }
  int length(uint8_t symbol) const { return lengths_[symbol]; }

 private:
  std::array<uint32_t, 256> codes_{};
  std::array<uint8_t, 256> lengths_{};
};

// Canonical decoding tables (mincode/maxcode/valptr per code length).
class HuffmanDecoder {
 public:
  HuffmanDecoder() = default;
  explicit HuffmanDecoder(const HuffmanSpec& spec) : symbols_(spec.symbols) {
    int32_t code = 0;
    int k = 0;
    std::size_t total = 0;
    for (int len = 1; len <= 16; ++len) {
      total += spec.counts[len - 1];
      if (spec.counts[len - 1] == 0) {
        maxcode_[len] = -1;
      } else {
        valptr_[len] = k;
        mincode_[len] = code;
        code += spec.counts[len - 1];
        k += spec.counts[len - 1];
        maxcode_[len] = code - 1;
      }
      if (code > (1 << len)) {
        throw ParseError(ParseErrorKind::kMalformed, "DHT: code space overflow");
      }
      code <<= 1;
    }
    if (total != spec.symbols.size() || total > 256) {
      throw ParseError(ParseErrorKind::kMalformed, "DHT: symbol count mismatch");
    }
    valid_ = true;
  }

  bool valid() const { return valid_; }

  // Decodes one symbol using next_bit() -> 0/1.
  template <typename NextBit>
  uint8_t decode(NextBit&& next_bit) const {
    int32_t code = 0;
    for (int len = 1; len <= 16; ++len) {
      code = (code << 1) | next_bit();
      if (maxcode_[len] >= 0 && code <= maxcode_[len] && code >= mincode_[len]) {
        return symbols_[static_cast<std::size_t>(valptr_[len] + code - mincode_[len])];
      }
    }
    throw ParseError(ParseErrorKind::kCorruptHuffman, "no code matches 16 bits");
  }

 private:
  std::array<int32_t, 17> mincode_{};
  std::array<int32_t, 17> maxcode_{};
  std::array<int32_t, 17> valptr_{};
  std::vector<uint8_t> symbols_;
  bool valid_ = false;
};

// MSB-first bit packer with 0xFF byte stuffing.
class BitWriter {
 public:
  explicit BitWriter(std::vector<uint8_t>& out) : out_(out) {}

  void put(uint32_t bits, int count) {
    for (int i = count - 1; i >= 0; --i) {
      acc_ = static_cast<uint8_t>((acc_ << 1) | ((bits >> i) & 1u));
      if (++filled_ == 8) emit();
    }
  }

  // Pads the final partial byte with 1-bits.
  void flush() {
    while (filled_ != 0) put(1, 1);
  }

 private:
  void emit() {
    out_.push_back(acc_);
    if (acc_ == 0xFF) out_.push_back(0x00);
    acc_ = 0;
    filled_ = 0;
  }

  std::vector<uint8_t>& out_;
  uint8_t acc_ = 0;
  int filled_ = 0;
};

// Reads entropy-coded bits, undoing byte stuffing. On reaching a marker it
// stops consuming input and supplies zero bits; running off the end of the
// buffer is a truncation error.
class BitReader {
 public:
  BitReader(const uint8_t* data, std::size_t size, std::size_t pos)
      : data_(data), size_(size), pos_(pos) {}

  int bit() {
    if (filled_ == 0) load();
    --filled_;
    return (acc_ >> filled_) & 1;
  }

  uint32_t bits(int count) {
    uint32_t v = 0;
    for (int i = 0; i < count; ++i) v = (v << 1) | static_cast<uint32_t>(bit());
    return v;
  }

  // Drops the rest of the current byte (used at restart boundaries).
  void align() { filled_ = 0; }

  bool at_marker() const { return marker_ != 0; }
  uint8_t marker() const { return marker_; }
  std::size_t position() const { return pos_; }

  // Consumes a pending marker (or, if none was hit yet, the next marker in
  // the stream, skipping fill bytes) and returns its code.
  uint8_t take_marker() {
    align();
    if (marker_ == 0) {
      while (true) {
        if (pos_ >= size_) throw ParseError(ParseErrorKind::kTruncated, "expected marker");
        if (data_[pos_] != 0xFF) {
          throw ParseError(ParseErrorKind::kMalformed, "expected marker in entropy data");
        }
        while (pos_ < size_ && data_[pos_] == 0xFF) ++pos_;
        if (pos_ >= size_) throw ParseError(ParseErrorKind::kTruncated, "expected marker");
        marker_ = data_[pos_++];
        if (marker_ != 0) break;
      }
    } else {
      pos_ += 2;
    }
    const uint8_t m = marker_;
    marker_ = 0;
    return m;
  }

 private:
  void load() {
    filled_ = 8;
    if (marker_ != 0) {
      acc_ = 0;
      return;
    }
    if (pos_ >= size_) {
      throw ParseError(ParseErrorKind::kTruncated, "entropy-coded data ends early");
    }
    uint8_t b = data_[pos_];
    if (b == 0xFF) {
      // Fill bytes may precede a marker.
      while (pos_ + 1 < size_ && data_[pos_ + 1] == 0xFF) ++pos_;
      if (pos_ + 1 >= size_) {
        throw ParseError(ParseErrorKind::kTruncated, "entropy-coded data ends early");
      }
      const uint8_t next = data_[pos_ + 1];
      if (next == 0x00) {
        pos_ += 2;
        acc_ = 0xFF;
        return;
      }
      // Marker: leave pos_ at the 0xFF.
      marker_ = next;
      acc_ = 0;
      return;
    }
    ++pos_;
    acc_ = b;
  }

  const uint8_t* data_;
  std::size_t size_;
  std::size_t pos_;
  uint8_t acc_ = 0;
  int filled_ = 0;
  uint8_t marker_ = 0;
};

// Number of bits needed for |v| (JPEG magnitude category).
inline int magnitude_category(int32_t v) {
  uint32_t a = static_cast<uint32_t>(v < 0 ? -v : v);
  int n = 0;
  while (a) {
    ++n;
    a >>= 1;
  }
  return n;
}

// Sign-extends a category-coded value (the EXTEND procedure of F.2.2.1).
inline int32_t extend_value(uint32_t bits, int category) {
  if (category == 0) return 0;
  const int32_t v = static_cast<int32_t>(bits);
  return v < (1 << (category - 1)) ? v - (1 << category) + 1 : v;
}

}  // namespace sjdec

#endif  // SJDEC_HUFFMAN_HPP_
