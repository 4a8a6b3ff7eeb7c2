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

#ifndef SJDEC_CODEC_HPP_
#define SJDEC_CODEC_HPP_

// Baseline JFIF codec: color conversion, 4:2:0 encoder, bitstream parser that
// stops at the quantized coefficients, and the conventional decoder.

#include <array>
#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "sjdec/common.hpp"
#include "sjdec/huffman.hpp"
#include "sjdec/image.hpp"
#include "sjdec/spectral.hpp"

namespace sjdec {

// One color component as reals, midpoint-subtracted.
struct ComponentPlane {
  int width = 0;
  int height = 0;
  std::vector<double> data;

  ComponentPlane() = default;
  ComponentPlane(int w, int h, double fill = 0.0)
      : width(w), height(h), data(static_cast<std::size_t>(w) * h, fill) {}

  double& at(int y, int x) { return data[static_cast<std::size_t>(y) * width + x]; }
  double at(int y, int x) const { return data[static_cast<std::size_t>(y) * width + x]; }
};

struct YCbCrPlanes {
  ComponentPlane y, cb, cr;
};

// Full-range BT.601 (JFIF), each component shifted by -128 and kept in
// [-128, 127].
inline YCbCrPlanes rgb_to_ycbcr(const RgbImage& img) {
  YCbCrPlanes p{ComponentPlane(img.width, img.height), ComponentPlane(img.width, img.height),
                ComponentPlane(img.width, img.height)};
  for (int y = 0; y < img.height; ++y) {
    for (int x = 0; x < img.width; ++x) {
      const double r = img.at(y, x, 0), g = img.at(y, x, 1), b = img.at(y, x, 2);
      p.y.at(y, x) = std::clamp(0.299 * r + 0.587 * g + 0.114 * b - 128.0, -128.0, 127.0);
      p.cb.at(y, x) = std::clamp(-0.168735892 * r - 0.331264108 * g + 0.5 * b, -128.0, 127.0);
      p.cr.at(y, x) = std::clamp(0.5 * r - 0.418687589 * g - 0.081312411 * b, -128.0, 127.0);
    }
  }
  return p;
}

inline uint8_t to_sample(double v) {
  return static_cast<uint8_t>(std::clamp(std::floor(v + 0.5), 0.0, 255.0));
}

// Inverse of rgb_to_ycbcr with rounding and clamping. Planes must share
// dimensions; the result is cropped to width x height.
inline RgbImage ycbcr_to_rgb(const ComponentPlane& py, const ComponentPlane& pcb,
                             const ComponentPlane& pcr, int width, int height) {
  if (pcb.width != py.width || pcr.width != py.width || pcb.height != py.height ||
      pcr.height != py.height || width > py.width || height > py.height) {
    throw InvalidArgument("ycbcr_to_rgb: plane dimensions disagree");
  }
  RgbImage img(width, height);
  for (int y = 0; y < height; ++y) {
    for (int x = 0; x < width; ++x) {
      const double l = py.at(y, x) + 128.0, cb = pcb.at(y, x), cr = pcr.at(y, x);
      img.at(y, x, 0) = to_sample(l + 1.402 * cr);
      img.at(y, x, 1) = to_sample(l - 0.344136286 * cb - 0.714136286 * cr);
      img.at(y, x, 2) = to_sample(l + 1.772 * cb);
    }
  }
  return img;
}

// Nearest-neighbor 2x decimation keeping the top-left sample of each 2x2.
inline ComponentPlane chroma_downsample(const ComponentPlane& p) {
  if (p.width % 2 != 0 || p.height % 2 != 0) {
    throw InvalidArgument("chroma_downsample: odd plane dimensions " +
                          std::to_string(p.width) + "x" + std::to_string(p.height));
  }
  ComponentPlane out(p.width / 2, p.height / 2);
  for (int y = 0; y < out.height; ++y)
    for (int x = 0; x < out.width; ++x) out.at(y, x) = p.at(2 * y, 2 * x);
  return out;
}

inline ComponentPlane chroma_upsample(const ComponentPlane& p) {
  ComponentPlane out(p.width * 2, p.height * 2);
  for (int y = 0; y < out.height; ++y)
    for (int x = 0; x < out.width; ++x) out.at(y, x) = p.at(y / 2, x / 2);
  return out;
}

// Extends a plane to (w, h) by replicating its last row and column.
inline ComponentPlane pad_replicate(const ComponentPlane& p, int w, int h) {
  ComponentPlane out(w, h);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      out.at(y, x) = p.at(std::min(y, p.height - 1), std::min(x, p.width - 1));
  return out;
}

enum class Subsampling { k420, k444 };

inline const char* to_string(Subsampling s) { return s == Subsampling::k420 ? "4:2:0" : "4:4:4"; }

// Row-major grid of 8x8 coefficient blocks.
struct CoeffGrid {
  int blocks_w = 0;
  int blocks_h = 0;
  std::vector<CoeffBlock> blocks;

  CoeffGrid() = default;
  CoeffGrid(int bw, int bh)
      : blocks_w(bw), blocks_h(bh), blocks(static_cast<std::size_t>(bw) * bh) {}

  CoeffBlock& at(int by, int bx) { return blocks[static_cast<std::size_t>(by) * blocks_w + bx]; }
  const CoeffBlock& at(int by, int bx) const {
    return blocks[static_cast<std::size_t>(by) * blocks_w + bx];
  }
  bool operator==(const CoeffGrid&) const = default;
};

// Everything a JPEG file carries about the image, short of pixels.
struct JpegSpectra {
  int width = 0;
  int height = 0;
  Subsampling subsampling = Subsampling::k420;
  CoeffGrid y, cb, cr;
  QuantTable q_luma, q_chroma;
  std::size_t source_bytes = 0;

  // Pixel extent covered by the luma grid.
  int padded_width() const { return y.blocks_w * kBlock; }
  int padded_height() const { return y.blocks_h * kBlock; }
};

inline int round_up(int v, int m) { return (v + m - 1) / m * m; }

// DCT + quantization of every 8x8 block of a plane whose sides are multiples
// of 8.
inline CoeffGrid forward_blocks(const ComponentPlane& plane, const QuantTable& table) {
  CoeffGrid grid(plane.width / kBlock, plane.height / kBlock);
  parallel_for(static_cast<std::size_t>(grid.blocks_h), [&](std::size_t b, std::size_t e) {
    for (int by = static_cast<int>(b); by < static_cast<int>(e); ++by) {
      for (int bx = 0; bx < grid.blocks_w; ++bx) {
        Mat8 px{};
        for (int i = 0; i < kBlock; ++i)
          for (int j = 0; j < kBlock; ++j)
            px[i * kBlock + j] = plane.at(by * kBlock + i, bx * kBlock + j);
        grid.at(by, bx) = quantize(dct2(px), table);
      }
    }
  });
  return grid;
}

// Dequantize + inverse DCT of every block (midpoint-subtracted samples).
inline ComponentPlane reconstruct_plane(const CoeffGrid& grid, const QuantTable& table) {
  ComponentPlane plane(grid.blocks_w * kBlock, grid.blocks_h * kBlock);
  parallel_for(static_cast<std::size_t>(grid.blocks_h), [&](std::size_t b, std::size_t e) {
    for (int by = static_cast<int>(b); by < static_cast<int>(e); ++by) {
      for (int bx = 0; bx < grid.blocks_w; ++bx) {
        const Mat8 px = idct2(dequantize(grid.at(by, bx), table));
        for (int i = 0; i < kBlock; ++i)
          for (int j = 0; j < kBlock; ++j)
            plane.at(by * kBlock + i, bx * kBlock + j) = px[i * kBlock + j];
      }
    }
  });
  return plane;
}

constexpr int kMaxDimension = 65535;

// Color conversion, padding, 4:2:0 decimation, DCT and quantization: the
// coefficients the encoder will entropy-code.
inline JpegSpectra compute_spectra(const RgbImage& img, int quality) {
  if (img.empty()) throw InvalidArgument("encode_jpeg: zero-sized image");
  if (img.width > kMaxDimension || img.height > kMaxDimension) {
    throw InvalidArgument("encode_jpeg: image exceeds 65535 pixels on a side");
  }
  auto [ql, qc] = quality_to_qtables(quality);
  const int pw = round_up(img.width, 16);
  const int ph = round_up(img.height, 16);
  YCbCrPlanes planes = rgb_to_ycbcr(img);
  JpegSpectra s;
  s.width = img.width;
  s.height = img.height;
  s.subsampling = Subsampling::k420;
  s.q_luma = ql;
  s.q_chroma = qc;
  s.y = forward_blocks(pad_replicate(planes.y, pw, ph), ql);
  s.cb = forward_blocks(chroma_downsample(pad_replicate(planes.cb, pw, ph)), qc);
  s.cr = forward_blocks(chroma_downsample(pad_replicate(planes.cr, pw, ph)), qc);
  return s;
}

namespace detail {

inline void put_u16(std::vector<uint8_t>& out, int v) {
  out.push_back(static_cast<uint8_t>((v >> 8) & 0xFF));
  out.push_back(static_cast<uint8_t>(v & 0xFF));
}

inline void put_marker(std::vector<uint8_t>& out, uint8_t m) {
  out.push_back(0xFF);
  out.push_back(m);
}

inline void write_dht(std::vector<uint8_t>& out, int cls_id, const HuffmanSpec& spec) {
  out.push_back(static_cast<uint8_t>(cls_id));
  out.insert(out.end(), spec.counts.begin(), spec.counts.end());
  out.insert(out.end(), spec.symbols.begin(), spec.symbols.end());
}

inline int mcu_size(Subsampling s) { return s == Subsampling::k420 ? 16 : 8; }

inline void check_grids(const JpegSpectra& s) {
  const int mcu = mcu_size(s.subsampling);
  const int mx = (s.width + mcu - 1) / mcu;
  const int my = (s.height + mcu - 1) / mcu;
  const int lf = s.subsampling == Subsampling::k420 ? 2 : 1;
  auto expect = [](const CoeffGrid& g, int w, int h, const char* name) {
    if (g.blocks_w != w || g.blocks_h != h ||
        g.blocks.size() != static_cast<std::size_t>(w) * h) {
      throw InvalidArgument(std::string("coefficient grid '") + name + "' has wrong extent");
    }
  };
  expect(s.y, mx * lf, my * lf, "y");
  expect(s.cb, mx, my, "cb");
  expect(s.cr, mx, my, "cr");
}

class BlockEncoder {
 public:
  BlockEncoder(BitWriter& w, const HuffmanSpec& dc, const HuffmanSpec& ac)
      : w_(w), dc_(dc), ac_(ac) {}

  void encode(const CoeffBlock& block) {
    const int32_t dc = block.values[0];
    const int32_t diff = dc - pred_;
    pred_ = dc;
    const int cat = magnitude_category(diff);
    if (cat > 11) throw InvalidArgument("DC difference outside baseline range");
    w_.put(dc_.code(static_cast<uint8_t>(cat)), dc_.length(static_cast<uint8_t>(cat)));
    if (cat) w_.put(value_bits(diff, cat), cat);

    int run = 0;
    for (int k = 1; k < kBlockArea; ++k) {
      const int32_t v = block.values[kZigzag[k]];
      if (v == 0) {
        ++run;
        continue;
      }
      while (run > 15) {
        w_.put(ac_.code(0xF0), ac_.length(0xF0));
        run -= 16;
      }
      const int s = magnitude_category(v);
      if (s > 10) throw InvalidArgument("AC coefficient outside baseline range");
      const auto rs = static_cast<uint8_t>((run << 4) | s);
      w_.put(ac_.code(rs), ac_.length(rs));
      w_.put(value_bits(v, s), s);
      run = 0;
    }
    if (run > 0) w_.put(ac_.code(0x00), ac_.length(0x00));
  }

 private:
  static uint32_t value_bits(int32_t v, int cat) {
    return static_cast<uint32_t>(v >= 0 ? v : v + (1 << cat) - 1) & ((1u << cat) - 1);
  }

  BitWriter& w_;
  HuffmanEncoder dc_, ac_;
  int32_t pred_ = 0;
};

}  // namespace detail

// Serializes spectra as a baseline JFIF stream with the standard Huffman
// tables. The grids must match the extents implied by width/height.
inline std::vector<uint8_t> write_jpeg(const JpegSpectra& s) {
  if (s.width < 1 || s.height < 1 || s.width > kMaxDimension || s.height > kMaxDimension) {
    throw InvalidArgument("write_jpeg: invalid dimensions");
  }
  detail::check_grids(s);
  using detail::put_marker;
  using detail::put_u16;
  std::vector<uint8_t> out;
  put_marker(out, 0xD8);

  put_marker(out, 0xE0);
  put_u16(out, 16);
  for (char c : {'J', 'F', 'I', 'F', '\0'}) out.push_back(static_cast<uint8_t>(c));
  out.insert(out.end(), {1, 1, 0});
  put_u16(out, 1);
  put_u16(out, 1);
  out.insert(out.end(), {0, 0});

  put_marker(out, 0xDB);
  put_u16(out, 2 + 2 * 65);
  for (int t = 0; t < 2; ++t) {
    const QuantTable& q = t == 0 ? s.q_luma : s.q_chroma;
    out.push_back(static_cast<uint8_t>(t));
    for (int k = 0; k < kBlockArea; ++k) {
      const uint16_t v = q.q[kZigzag[k]];
      if (v < 1 || v > 255) throw InvalidArgument("write_jpeg: quantizer outside [1, 255]");
      out.push_back(static_cast<uint8_t>(v));
    }
  }

  const uint8_t luma_sampling = s.subsampling == Subsampling::k420 ? 0x22 : 0x11;
  put_marker(out, 0xC0);
  put_u16(out, 8 + 3 * 3);
  out.push_back(8);
  put_u16(out, s.height);
  put_u16(out, s.width);
  out.push_back(3);
  out.insert(out.end(), {1, luma_sampling, 0, 2, 0x11, 1, 3, 0x11, 1});

  put_marker(out, 0xC4);
  const std::size_t dht_len = 2 + 4 * 17 + std_dc_luma().symbols.size() +
                              std_ac_luma().symbols.size() + std_dc_chroma().symbols.size() +
                              std_ac_chroma().symbols.size();
  put_u16(out, static_cast<int>(dht_len));
  detail::write_dht(out, 0x00, std_dc_luma());
  detail::write_dht(out, 0x10, std_ac_luma());
  detail::write_dht(out, 0x01, std_dc_chroma());
  detail::write_dht(out, 0x11, std_ac_chroma());

  put_marker(out, 0xDA);
  put_u16(out, 6 + 2 * 3);
  out.push_back(3);
  out.insert(out.end(), {1, 0x00, 2, 0x11, 3, 0x11, 0, 63, 0});

  BitWriter bw(out);
  detail::BlockEncoder ey(bw, std_dc_luma(), std_ac_luma());
  detail::BlockEncoder ecb(bw, std_dc_chroma(), std_ac_chroma());
  detail::BlockEncoder ecr(bw, std_dc_chroma(), std_ac_chroma());
  const int lf = s.subsampling == Subsampling::k420 ? 2 : 1;
  for (int my = 0; my < s.cb.blocks_h; ++my) {
    for (int mx = 0; mx < s.cb.blocks_w; ++mx) {
      for (int i = 0; i < lf; ++i)
        for (int j = 0; j < lf; ++j) ey.encode(s.y.at(my * lf + i, mx * lf + j));
      ecb.encode(s.cb.at(my, mx));
      ecr.encode(s.cr.at(my, mx));
    }
  }
  bw.flush();
  put_marker(out, 0xD9);
  return out;
}

inline std::vector<uint8_t> encode_jpeg(const RgbImage& img, int quality) {
  return write_jpeg(compute_spectra(img, quality));
}

namespace detail {

struct FrameComponent {
  int id = 0;
  int h = 1, v = 1;
  int tq = 0;
  int td = 0, ta = 0;
};

class JpegParser {
 public:
  explicit JpegParser(std::span<const uint8_t> bytes) : d_(bytes) {}

  JpegSpectra run() {
    if (d_.size() < 2) throw ParseError(ParseErrorKind::kTruncated, "stream shorter than SOI");
    if (d_[0] != 0xFF || d_[1] != 0xD8) throw ParseError(ParseErrorKind::kMalformed, "missing SOI");
    pos_ = 2;
    while (true) {
      const uint8_t m = next_marker();
      if (m == 0xD9) break;
      if (m == 0xD8) throw ParseError(ParseErrorKind::kMalformed, "unexpected SOI");
      if (m >= 0xD0 && m <= 0xD7) {
        throw ParseError(ParseErrorKind::kMalformed, "restart marker outside scan");
      }
      if (m == 0x01) continue;  // TEM has no payload
      const std::span<const uint8_t> seg = segment();
      switch (m) {
        case 0xC0:
        case 0xC1:
          read_sof(seg);
          break;
        case 0xC2:
          throw ParseError(ParseErrorKind::kUnsupported, "progressive JPEG (SOF2)");
        case 0xC3:
        case 0xC5:
        case 0xC6:
        case 0xC7:
          throw ParseError(ParseErrorKind::kUnsupported, "lossless/hierarchical JPEG");
        case 0xC9:
        case 0xCA:
        case 0xCB:
        case 0xCC:
        case 0xCD:
        case 0xCE:
        case 0xCF:
          throw ParseError(ParseErrorKind::kUnsupported, "arithmetic coding");
        case 0xC4:
          read_dht(seg);
          break;
        case 0xDB:
          read_dqt(seg);
          break;
        case 0xDD:
          if (seg.size() != 2) throw ParseError(ParseErrorKind::kMalformed, "DRI length");
          restart_interval_ = (seg[0] << 8) | seg[1];
          break;
        case 0xDA:
          read_sos_and_scan(seg);
          break;
        case 0xDC:
          throw ParseError(ParseErrorKind::kUnsupported, "DNL marker");
        default:
          break;  // APPn, COM and anything else carrying a length
      }
    }
    if (!scanned_) throw ParseError(ParseErrorKind::kMalformed, "no scan before EOI");
    out_.source_bytes = d_.size();
    return std::move(out_);
  }

 private:
  uint8_t next_marker() {
    // Tolerate garbage between segments as long as a marker follows.
    while (pos_ < d_.size() && d_[pos_] != 0xFF) ++pos_;
    while (pos_ < d_.size() && d_[pos_] == 0xFF) ++pos_;
    if (pos_ >= d_.size()) throw ParseError(ParseErrorKind::kTruncated, "missing EOI");
    return d_[pos_++];
  }

  std::span<const uint8_t> segment() {
    if (pos_ + 2 > d_.size()) throw ParseError(ParseErrorKind::kTruncated, "segment length");
    const std::size_t len = (static_cast<std::size_t>(d_[pos_]) << 8) | d_[pos_ + 1];
    if (len < 2) throw ParseError(ParseErrorKind::kMalformed, "segment length < 2");
    if (pos_ + len > d_.size()) throw ParseError(ParseErrorKind::kTruncated, "segment body");
    auto seg = d_.subspan(pos_ + 2, len - 2);
    pos_ += len;
    return seg;
  }

  void read_dqt(std::span<const uint8_t> seg) {
    std::size_t i = 0;
    while (i < seg.size()) {
      const int pq = seg[i] >> 4;
      const int tq = seg[i] & 15;
      ++i;
      if (pq != 0) throw ParseError(ParseErrorKind::kUnsupported, "16-bit quantization table");
      if (tq > 3) throw ParseError(ParseErrorKind::kMalformed, "DQT table id > 3");
      if (i + 64 > seg.size()) throw ParseError(ParseErrorKind::kMalformed, "DQT too short");
      QuantTable t;
      for (int k = 0; k < kBlockArea; ++k) {
        t.q[kZigzag[k]] = seg[i + k];
        if (seg[i + k] == 0) throw ParseError(ParseErrorKind::kMalformed, "zero quantizer");
      }
      i += 64;
      qt_[tq] = t;
    }
  }

  void read_dht(std::span<const uint8_t> seg) {
    std::size_t i = 0;
    while (i < seg.size()) {
      const int tc = seg[i] >> 4;
      const int th = seg[i] & 15;
      ++i;
      if (tc > 1 || th > 3) throw ParseError(ParseErrorKind::kMalformed, "DHT class/id");
      if (i + 16 > seg.size()) throw ParseError(ParseErrorKind::kMalformed, "DHT too short");
      HuffmanSpec spec;
      std::size_t total = 0;
      for (int k = 0; k < 16; ++k) {
        spec.counts[k] = seg[i + k];
        total += seg[i + k];
      }
      i += 16;
      if (i + total > seg.size()) throw ParseError(ParseErrorKind::kMalformed, "DHT symbols");
      spec.symbols.assign(seg.begin() + static_cast<std::ptrdiff_t>(i),
                          seg.begin() + static_cast<std::ptrdiff_t>(i + total));
      i += total;
      (tc == 0 ? dc_ : ac_)[th] = HuffmanDecoder(spec);
    }
  }

  void read_sof(std::span<const uint8_t> seg) {
    if (have_frame_) throw ParseError(ParseErrorKind::kMalformed, "second SOF");
    if (seg.size() < 6) throw ParseError(ParseErrorKind::kMalformed, "SOF too short");
    if (seg[0] != 8) throw ParseError(ParseErrorKind::kUnsupported, "sample precision != 8");
    const int h = (seg[1] << 8) | seg[2];
    const int w = (seg[3] << 8) | seg[4];
    const int nc = seg[5];
    if (h == 0) throw ParseError(ParseErrorKind::kUnsupported, "height defined by DNL");
    if (w == 0) throw ParseError(ParseErrorKind::kDimensionOverflow, "zero width");
    if (static_cast<uint64_t>(w) * h > (1ull << 28)) {
      throw ParseError(ParseErrorKind::kDimensionOverflow,
                       std::to_string(w) + "x" + std::to_string(h) + " exceeds pixel limit");
    }
    if (nc != 3) {
      throw ParseError(ParseErrorKind::kUnsupported,
                       std::to_string(nc) + "-component image (need YCbCr)");
    }
    if (seg.size() != 6 + 3u * nc) throw ParseError(ParseErrorKind::kMalformed, "SOF length");
    for (int c = 0; c < 3; ++c) {
      comps_[c].id = seg[6 + 3 * c];
      comps_[c].h = seg[7 + 3 * c] >> 4;
      comps_[c].v = seg[7 + 3 * c] & 15;
      comps_[c].tq = seg[8 + 3 * c];
      if (comps_[c].tq > 3) throw ParseError(ParseErrorKind::kMalformed, "SOF table id");
    }
    const bool chroma_11 = comps_[1].h == 1 && comps_[1].v == 1 && comps_[2].h == 1 &&
                           comps_[2].v == 1;
    if (chroma_11 && comps_[0].h == 2 && comps_[0].v == 2) {
      out_.subsampling = Subsampling::k420;
    } else if (chroma_11 && comps_[0].h == 1 && comps_[0].v == 1) {
      out_.subsampling = Subsampling::k444;
    } else {
      throw ParseError(ParseErrorKind::kUnsupported, "chroma subsampling other than 4:2:0/4:4:4");
    }
    out_.width = w;
    out_.height = h;
    const int mcu = mcu_size(out_.subsampling);
    const int lf = out_.subsampling == Subsampling::k420 ? 2 : 1;
    mcux_ = (w + mcu - 1) / mcu;
    mcuy_ = (h + mcu - 1) / mcu;
    out_.y = CoeffGrid(mcux_ * lf, mcuy_ * lf);
    out_.cb = CoeffGrid(mcux_, mcuy_);
    out_.cr = CoeffGrid(mcux_, mcuy_);
    have_frame_ = true;
  }

  void read_sos_and_scan(std::span<const uint8_t> seg) {
    if (!have_frame_) throw ParseError(ParseErrorKind::kMalformed, "SOS before SOF");
    if (scanned_) throw ParseError(ParseErrorKind::kUnsupported, "multiple scans");
    if (seg.empty()) throw ParseError(ParseErrorKind::kMalformed, "SOS too short");
    const int ns = seg[0];
    if (ns != 3) throw ParseError(ParseErrorKind::kUnsupported, "non-interleaved scan");
    if (seg.size() != 1 + 2u * ns + 3) throw ParseError(ParseErrorKind::kMalformed, "SOS length");
    for (int k = 0; k < ns; ++k) {
      const int id = seg[1 + 2 * k];
      if (id != comps_[k].id) {
        throw ParseError(ParseErrorKind::kUnsupported, "scan component order differs from frame");
      }
      comps_[k].td = seg[2 + 2 * k] >> 4;
      comps_[k].ta = seg[2 + 2 * k] & 15;
      if (comps_[k].td > 3 || comps_[k].ta > 3) {
        throw ParseError(ParseErrorKind::kMalformed, "SOS table id");
      }
    }
    const std::size_t p = 1 + 2u * ns;
    if (seg[p] != 0 || seg[p + 1] != 63 || seg[p + 2] != 0) {
      throw ParseError(ParseErrorKind::kUnsupported, "spectral selection / successive approx");
    }
    for (int c = 0; c < 3; ++c) {
      if (!qt_[comps_[c].tq]) throw ParseError(ParseErrorKind::kMalformed, "missing DQT");
      if (!dc_[comps_[c].td].valid() || !ac_[comps_[c].ta].valid()) {
        throw ParseError(ParseErrorKind::kMalformed, "missing DHT");
      }
    }
    if (comps_[1].tq != comps_[2].tq) {
      throw ParseError(ParseErrorKind::kUnsupported, "Cb and Cr use different quant tables");
    }
    out_.q_luma = *qt_[comps_[0].tq];
    out_.q_chroma = *qt_[comps_[1].tq];
    decode_scan();
    scanned_ = true;
  }

  void decode_block(BitReader& br, int c, CoeffBlock& blk) {
    auto next = [&br] { return br.bit(); };
    const int cat = dc_[comps_[c].td].decode(next);
    if (cat > 11) throw ParseError(ParseErrorKind::kCorruptHuffman, "DC category > 11");
    pred_[c] += extend_value(br.bits(cat), cat);
    if (pred_[c] < kCoeffMin || pred_[c] > kCoeffMax) {
      throw ParseError(ParseErrorKind::kMalformed, "DC coefficient outside 12-bit range");
    }
    blk.values.fill(0);
    blk.values[0] = pred_[c];
    const HuffmanDecoder& ac = ac_[comps_[c].ta];
    for (int k = 1; k < kBlockArea;) {
      const uint8_t rs = ac.decode(next);
      const int r = rs >> 4;
      const int s = rs & 15;
      if (s == 0) {
        if (r != 15) break;  // EOB
        k += 16;
        continue;
      }
      k += r;
      if (k > 63) throw ParseError(ParseErrorKind::kCorruptHuffman, "AC run past block end");
      blk.values[kZigzag[k]] = extend_value(br.bits(s), s);
      ++k;
    }
  }

  void decode_scan() {
    BitReader br(d_.data(), d_.size(), pos_);
    const int lf = out_.subsampling == Subsampling::k420 ? 2 : 1;
    const int total = mcux_ * mcuy_;
    int expected_rst = 0;
    for (int n = 0; n < total; ++n) {
      if (restart_interval_ != 0 && n != 0 && n % restart_interval_ == 0) {
        const uint8_t m = br.take_marker();
        if (m != 0xD0 + expected_rst) {
          throw ParseError(ParseErrorKind::kMalformed, "expected RST" + std::to_string(expected_rst));
        }
        expected_rst = (expected_rst + 1) & 7;
        pred_ = {0, 0, 0};
      }
      const int my = n / mcux_;
      const int mx = n % mcux_;
      for (int i = 0; i < lf; ++i)
        for (int j = 0; j < lf; ++j) decode_block(br, 0, out_.y.at(my * lf + i, mx * lf + j));
      decode_block(br, 1, out_.cb.at(my, mx));
      decode_block(br, 2, out_.cr.at(my, mx));
    }
    pos_ = br.position();
  }

  std::span<const uint8_t> d_;
  std::size_t pos_ = 0;
  std::array<std::optional<QuantTable>, 4> qt_{};
  std::array<HuffmanDecoder, 4> dc_{}, ac_{};
  std::array<FrameComponent, 3> comps_{};
  std::array<int32_t, 3> pred_{0, 0, 0};
  int restart_interval_ = 0;
  int mcux_ = 0, mcuy_ = 0;
  bool have_frame_ = false;
  bool scanned_ = false;
  JpegSpectra out_;
};

}  // namespace detail

// Entropy-decodes a baseline stream down to the quantized coefficients.
inline JpegSpectra parse_jpeg(std::span<const uint8_t> bytes) {
  return detail::JpegParser(bytes).run();
}

// Conventional decoder: dequantize, inverse DCT, nearest-neighbor chroma
// upsampling, color conversion, crop.
inline RgbImage decode_baseline(const JpegSpectra& s) {
  detail::check_grids(s);
  ComponentPlane y = reconstruct_plane(s.y, s.q_luma);
  ComponentPlane cb = reconstruct_plane(s.cb, s.q_chroma);
  ComponentPlane cr = reconstruct_plane(s.cr, s.q_chroma);
  if (s.subsampling == Subsampling::k420) {
    cb = chroma_upsample(cb);
    cr = chroma_upsample(cr);
  }
  return ycbcr_to_rgb(y, cb, cr, s.width, s.height);
}

}  // namespace sjdec

#endif  // SJDEC_CODEC_HPP_
