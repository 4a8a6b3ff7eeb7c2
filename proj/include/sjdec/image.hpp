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

#ifndef SJDEC_IMAGE_HPP_
#define SJDEC_IMAGE_HPP_

#include <cctype>
#include <climits>
#include <cstdint>
#include <fstream>
#include <iterator>
#include <string>
#include <vector>

#include "sjdec/common.hpp"

namespace sjdec {

class IoError : public Error {
 public:
  using Error::Error;
};

// Interleaved 8-bit RGB, row-major, H x W x 3.
struct RgbImage {
  int width = 0;
  int height = 0;
  std::vector<uint8_t> data;

  RgbImage() = default;
  RgbImage(int w, int h, uint8_t fill = 0)
      : width(w), height(h), data(static_cast<std::size_t>(w) * h * 3, fill) {
    if (w < 1 || h < 1) throw InvalidArgument("image dimensions must be >= 1");
  }

  bool empty() const { return width <= 0 || height <= 0; }
  uint8_t& at(int y, int x, int c) {
    return data[(static_cast<std::size_t>(y) * width + x) * 3 + c];
  }
  uint8_t at(int y, int x, int c) const {
    return data[(static_cast<std::size_t>(y) * width + x) * 3 + c];
  }
  bool operator==(const RgbImage&) const = default;
};

inline std::vector<uint8_t> read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void write_file(const std::string& path, const std::vector<uint8_t>& bytes) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot create " + path);
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed: " + path);
}

// Binary PPM (P6, maxval 255).
inline RgbImage decode_ppm(const std::vector<uint8_t>& bytes) {
  std::size_t pos = 0;
  auto skip_space = [&] {
    while (pos < bytes.size()) {
      if (bytes[pos] == '#') {
        while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
      } else if (std::isspace(bytes[pos])) {
        ++pos;
      } else {
        break;
      }
    }
  };
  auto read_int = [&]() -> long {
    skip_space();
    long v = 0;
    bool any = false;
    while (pos < bytes.size() && bytes[pos] >= '0' && bytes[pos] <= '9') {
      v = v * 10 + (bytes[pos++] - '0');
      any = true;
      if (v > (1L << 24)) throw IoError("ppm: header value too large");
    }
    if (!any) throw IoError("ppm: malformed header");
    return v;
  };
  if (bytes.size() < 2 || bytes[0] != 'P' || bytes[1] != '6') {
    throw IoError("ppm: not a binary P6 file");
  }
  pos = 2;
  const long w = read_int();
  const long h = read_int();
  const long maxval = read_int();
  if (w < 1 || h < 1) throw IoError("ppm: zero-sized image");
  if (maxval != 255) throw IoError("ppm: only maxval 255 is supported");
  ++pos;  // single whitespace after maxval
  const std::size_t need = static_cast<std::size_t>(w) * h * 3;
  if (bytes.size() < pos + need) throw IoError("ppm: truncated pixel data");
  RgbImage img(static_cast<int>(w), static_cast<int>(h));
  std::copy_n(bytes.begin() + static_cast<std::ptrdiff_t>(pos), need, img.data.begin());
  return img;
}

inline std::vector<uint8_t> encode_ppm(const RgbImage& img) {
  const std::string header =
      "P6\n" + std::to_string(img.width) + " " + std::to_string(img.height) + "\n255\n";
  std::vector<uint8_t> out(header.begin(), header.end());
  out.insert(out.end(), img.data.begin(), img.data.end());
  return out;
}

inline RgbImage read_ppm(const std::string& path) { return decode_ppm(read_file(path)); }
inline void write_ppm(const std::string& path, const RgbImage& img) {
  write_file(path, encode_ppm(img));
}

// Uncompressed Windows bitmap, 24 or 32 bits per pixel.
inline RgbImage decode_bmp(const std::vector<uint8_t>& bytes) {
  auto u16 = [&](std::size_t o) -> uint32_t {
    if (o + 2 > bytes.size()) throw IoError("bmp: truncated header");
    return bytes[o] | (bytes[o + 1] << 8);
  };
  auto u32 = [&](std::size_t o) -> uint32_t { return u16(o) | (u16(o + 2) << 16); };
  if (bytes.size() < 26 || bytes[0] != 'B' || bytes[1] != 'M') throw IoError("bmp: bad signature");
  const uint32_t offset = u32(10);
  const uint32_t header = u32(14);
  if (header < 40) throw IoError("bmp: unsupported core header");
  const auto w = static_cast<int32_t>(u32(18));
  const auto raw_h = static_cast<int32_t>(u32(22));
  const uint32_t bits = u16(28);
  const uint32_t compression = u32(30);
  if (bits != 24 && bits != 32) throw IoError("bmp: only 24/32-bit images are supported");
  if (compression != 0 && !(compression == 3 && bits == 32)) throw IoError("bmp: compressed data");
  if (w < 1 || raw_h == 0 || raw_h == INT32_MIN) throw IoError("bmp: zero-sized image");
  const int h = raw_h < 0 ? -raw_h : raw_h;
  const std::size_t bpp = bits / 8;
  const std::size_t stride = (static_cast<std::size_t>(w) * bpp + 3) / 4 * 4;
  if (bytes.size() < offset + stride * static_cast<std::size_t>(h)) throw IoError("bmp: truncated pixel data");
  RgbImage img(w, h);
  for (int y = 0; y < h; ++y) {
    const int src_row = raw_h > 0 ? h - 1 - y : y;
    const uint8_t* row = bytes.data() + offset + stride * static_cast<std::size_t>(src_row);
    for (int x = 0; x < w; ++x) {
      const uint8_t* px = row + static_cast<std::size_t>(x) * bpp;
      img.at(y, x, 0) = px[2];
      img.at(y, x, 1) = px[1];
      img.at(y, x, 2) = px[0];
    }
  }
  return img;
}

// PPM or BMP, chosen by signature.
inline RgbImage decode_image(const std::vector<uint8_t>& bytes) {
  if (bytes.size() >= 2 && bytes[0] == 'B' && bytes[1] == 'M') return decode_bmp(bytes);
  if (bytes.size() >= 2 && bytes[0] == 'P' && bytes[1] == '6') return decode_ppm(bytes);
  throw IoError("unrecognized image format (expected binary PPM or BMP)");
}

inline RgbImage read_image(const std::string& path) {
  const auto bytes = read_file(path);
  try {
    return decode_image(bytes);
  } catch (const IoError& e) {
    throw IoError(path + ": " + e.what());
  }
}

}  // namespace sjdec

#endif  // SJDEC_IMAGE_HPP_
