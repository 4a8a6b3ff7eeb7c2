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

#ifndef SJDEC_SPECTRAL_HPP_
#define SJDEC_SPECTRAL_HPP_

// DCT, quantization, sub-block conversion, zigzag ordering and spectrum
// normalization. All math here is 64-bit.

#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <string>
#include <utility>
#include <vector>

#include "sjdec/common.hpp"

namespace sjdec {

constexpr int kBlock = 8;
constexpr int kBlockArea = 64;

// Row-major 8x8 matrix of reals; row index is the vertical frequency (or
// spatial row), column the horizontal one.
using Mat8 = std::array<double, kBlockArea>;

// Orthonormal DCT-II basis of size n. Entry (u, k) is the u-th basis function
// sampled at spatial position k, so rows are frequencies.
class DctBasis {
 public:
  explicit DctBasis(int n) : n_(n) {
    if (n < 1) throw InvalidArgument("dct_basis: block size must be >= 1");
    m_.resize(static_cast<std::size_t>(n) * n);
    const double a0 = std::sqrt(1.0 / n);
    const double a = std::sqrt(2.0 / n);
    for (int u = 0; u < n; ++u) {
      for (int k = 0; k < n; ++k) {
        m_[static_cast<std::size_t>(u) * n + k] =
            (u == 0 ? a0 : a) * std::cos(std::numbers::pi * u * (2 * k + 1) / (2.0 * n));
      }
    }
  }

  int size() const { return n_; }
  double operator()(int u, int k) const { return m_[static_cast<std::size_t>(u) * n_ + k]; }
  const std::vector<double>& data() const { return m_; }

 private:
  int n_;
  std::vector<double> m_;
};

inline DctBasis dct_basis(int n) { return DctBasis(n); }

namespace detail {

inline const DctBasis& dct8() {
  static const DctBasis basis(kBlock);
  return basis;
}

// out = a * b for 8x8 row-major matrices.
inline Mat8 matmul(const Mat8& a, const Mat8& b) {
  Mat8 out{};
  for (int i = 0; i < kBlock; ++i) {
    for (int k = 0; k < kBlock; ++k) {
      const double aik = a[i * kBlock + k];
      for (int j = 0; j < kBlock; ++j) out[i * kBlock + j] += aik * b[k * kBlock + j];
    }
  }
  return out;
}

inline Mat8 transpose(const Mat8& a) {
  Mat8 out{};
  for (int i = 0; i < kBlock; ++i)
    for (int j = 0; j < kBlock; ++j) out[j * kBlock + i] = a[i * kBlock + j];
  return out;
}

inline Mat8 as_mat8(const DctBasis& d) {
  Mat8 m{};
  std::copy(d.data().begin(), d.data().end(), m.begin());
  return m;
}

// 8x8 block-diagonal matrix holding 8/b copies of D_b.
inline Mat8 block_diagonal_dct(int b) {
  const DctBasis db(b);
  Mat8 m{};
  for (int t = 0; t < kBlock / b; ++t)
    for (int u = 0; u < b; ++u)
      for (int k = 0; k < b; ++k) m[(t * b + u) * kBlock + (t * b + k)] = db(u, k);
  return m;
}

inline int checked_round(double x) {
  // Round half away from zero.
  return static_cast<int>(x < 0 ? -std::floor(-x + 0.5) : std::floor(x + 0.5));
}

}  // namespace detail

// 8x8 DCT-domain block (X = D I D^T).
struct SpectrumBlock {
  Mat8 values{};
  double& operator()(int u, int v) { return values[u * kBlock + v]; }
  double operator()(int u, int v) const { return values[u * kBlock + v]; }
  bool operator==(const SpectrumBlock&) const = default;
};

// Integer quantized coefficients, natural (row-major) order.
struct CoeffBlock {
  std::array<int32_t, kBlockArea> values{};
  int32_t& operator()(int u, int v) { return values[u * kBlock + v]; }
  int32_t operator()(int u, int v) const { return values[u * kBlock + v]; }
  bool operator==(const CoeffBlock&) const = default;
};

constexpr int32_t kCoeffMin = -2048;
constexpr int32_t kCoeffMax = 2047;

// Quantization divisors in natural order, each in [1, 255].
struct QuantTable {
  std::array<uint16_t, kBlockArea> q{};
  uint16_t& operator()(int u, int v) { return q[u * kBlock + v]; }
  uint16_t operator()(int u, int v) const { return q[u * kBlock + v]; }
  bool operator==(const QuantTable&) const = default;
};

inline SpectrumBlock dct2(const Mat8& block) {
  static const Mat8 d = detail::as_mat8(detail::dct8());
  static const Mat8 dt = detail::transpose(d);
  return SpectrumBlock{detail::matmul(detail::matmul(d, block), dt)};
}

inline Mat8 idct2(const SpectrumBlock& spectrum) {
  static const Mat8 d = detail::as_mat8(detail::dct8());
  static const Mat8 dt = detail::transpose(d);
  return detail::matmul(detail::matmul(dt, spectrum.values), d);
}

inline CoeffBlock quantize(const SpectrumBlock& spectrum, const QuantTable& table) {
  CoeffBlock out;
  for (int i = 0; i < kBlockArea; ++i) {
    if (table.q[i] < 1) throw InvalidArgument("quantize: table entry < 1");
    const double r = spectrum.values[i] / table.q[i];
    if (!(std::abs(r) < 4096.0)) {
      throw InvalidArgument("quantize: coefficient outside 12-bit range");
    }
    const int c = detail::checked_round(r);
    if (c < kCoeffMin || c > kCoeffMax) {
      throw InvalidArgument("quantize: coefficient " + std::to_string(c) +
                            " outside 12-bit range");
    }
    out.values[i] = c;
  }
  return out;
}

inline SpectrumBlock dequantize(const CoeffBlock& coeffs, const QuantTable& table) {
  SpectrumBlock out;
  for (int i = 0; i < kBlockArea; ++i) {
    out.values[i] = static_cast<double>(coeffs.values[i]) * table.q[i];
  }
  return out;
}

// An 8x8 area re-expressed as a grid of (8/b)x(8/b) DCT blocks of size b.
// Stored in matrix form: entry (i*b + u, j*b + v) is coefficient (u, v) of
// tile (i, j).
struct SubblockGrid {
  int b = kBlock;
  Mat8 values{};

  int tiles() const { return kBlock / b; }
  double at(int ti, int tj, int u, int v) const {
    return values[(ti * b + u) * kBlock + (tj * b + v)];
  }
  double& at(int ti, int tj, int u, int v) {
    return values[(ti * b + u) * kBlock + (tj * b + v)];
  }
};

inline void check_subblock_size(int b) {
  if (b != 1 && b != 2 && b != 4 && b != 8) {
    throw InvalidArgument("sub-block size must be one of 1, 2, 4, 8 (got " +
                          std::to_string(b) + ")");
  }
}

// D*_b (D^T X D) D*_b^T
inline SubblockGrid subblock_convert(const SpectrumBlock& spectrum, int b) {
  check_subblock_size(b);
  const Mat8 m = detail::block_diagonal_dct(b);
  const Mat8 spatial = idct2(spectrum);
  return SubblockGrid{b, detail::matmul(detail::matmul(m, spatial), detail::transpose(m))};
}

inline SpectrumBlock subblock_invert(const SubblockGrid& grid) {
  check_subblock_size(grid.b);
  const Mat8 m = detail::block_diagonal_dct(grid.b);
  const Mat8 spatial = detail::matmul(detail::matmul(detail::transpose(m), grid.values), m);
  return dct2(spatial);
}

inline SpectrumBlock subblock_invert(const SubblockGrid& grid, int b) {
  if (grid.b != b) {
    throw InvalidArgument("subblock_invert: grid built for b=" + std::to_string(grid.b) +
                          ", asked for b=" + std::to_string(b));
  }
  return subblock_invert(grid);
}

// Per-frequency magnitude bound for spectra of blocks with samples in
// [-128, 127]: 128 * (sum_i |D[u][i]|) * (sum_j |D[v][j]|).
struct NormalizationBounds {
  Mat8 b{};
  double operator()(int u, int v) const { return b[u * kBlock + v]; }
};

inline const NormalizationBounds& default_bounds() {
  static const NormalizationBounds bounds = [] {
    const DctBasis& d = detail::dct8();
    std::array<double, kBlock> row_abs{};
    for (int u = 0; u < kBlock; ++u)
      for (int k = 0; k < kBlock; ++k) row_abs[u] += std::abs(d(u, k));
    NormalizationBounds nb;
    for (int u = 0; u < kBlock; ++u)
      for (int v = 0; v < kBlock; ++v) nb.b[u * kBlock + v] = 128.0 * row_abs[u] * row_abs[v];
    return nb;
  }();
  return bounds;
}

inline Mat8 normalize_spectrum(const SpectrumBlock& spectrum,
                               const NormalizationBounds& bounds = default_bounds()) {
  Mat8 out{};
  for (int i = 0; i < kBlockArea; ++i) out[i] = spectrum.values[i] / bounds.b[i];
  return out;
}

inline SpectrumBlock denormalize_spectrum(const Mat8& normalized,
                                          const NormalizationBounds& bounds = default_bounds()) {
  SpectrumBlock out;
  for (int i = 0; i < kBlockArea; ++i) out.values[i] = normalized[i] * bounds.b[i];
  return out;
}

// Quantization tables go through the same per-frequency scaling.
inline Mat8 normalize_qtable(const QuantTable& table,
                             const NormalizationBounds& bounds = default_bounds()) {
  Mat8 out{};
  for (int i = 0; i < kBlockArea; ++i) out[i] = table.q[i] / bounds.b[i];
  return out;
}

// kZigzag[i] is the natural (row-major) index of the i-th coefficient in
// scan order.
inline constexpr std::array<int, kBlockArea> kZigzag = {
    0,  1,  8,  16, 9,  2,  3,  10, 17, 24, 32, 25, 18, 11, 4,  5,
    12, 19, 26, 33, 40, 48, 41, 34, 27, 20, 13, 6,  7,  14, 21, 28,
    35, 42, 49, 56, 57, 50, 43, 36, 29, 22, 15, 23, 30, 37, 44, 51,
    58, 59, 52, 45, 38, 31, 39, 46, 53, 60, 61, 54, 47, 55, 62, 63};

template <typename V>
std::array<V, kBlockArea> zigzag_scan(const std::array<V, kBlockArea>& natural) {
  std::array<V, kBlockArea> out{};
  for (int i = 0; i < kBlockArea; ++i) out[i] = natural[kZigzag[i]];
  return out;
}

template <typename V>
std::array<V, kBlockArea> inverse_zigzag(const std::array<V, kBlockArea>& scanned) {
  std::array<V, kBlockArea> out{};
  for (int i = 0; i < kBlockArea; ++i) out[kZigzag[i]] = scanned[i];
  return out;
}

// Annex K base tables, natural order.
inline constexpr std::array<uint16_t, kBlockArea> kBaseLuma = {
    16, 11, 10, 16, 24,  40,  51,  61,  12, 12, 14, 19, 26,  58,  60,  55,
    14, 13, 16, 24, 40,  57,  69,  56,  14, 17, 22, 29, 51,  87,  80,  62,
    18, 22, 37, 56, 68,  109, 103, 77,  24, 35, 55, 64, 81,  104, 113, 92,
    49, 64, 78, 87, 103, 121, 120, 101, 72, 92, 95, 98, 112, 100, 103, 99};

inline constexpr std::array<uint16_t, kBlockArea> kBaseChroma = {
    17, 18, 24, 47, 99, 99, 99, 99, 18, 21, 26, 66, 99, 99, 99, 99,
    24, 26, 56, 99, 99, 99, 99, 99, 47, 66, 99, 99, 99, 99, 99, 99,
    99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99,
    99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99};

// IJG quality scaling of the Annex K tables.
inline std::pair<QuantTable, QuantTable> quality_to_qtables(int quality) {
  if (quality < 0 || quality > 100) {
    throw InvalidArgument("quality factor must be in [0, 100] (got " +
                          std::to_string(quality) + ")");
  }
  const long scale = quality < 50 ? 5000 / std::max(quality, 1) : 200 - 2 * quality;
  auto scaled = [scale](const std::array<uint16_t, kBlockArea>& base) {
    QuantTable t;
    for (int i = 0; i < kBlockArea; ++i) {
      const long v = (base[i] * scale + 50) / 100;
      t.q[i] = static_cast<uint16_t>(std::clamp(v, 1L, 255L));
    }
    return t;
  };
  return {scaled(kBaseLuma), scaled(kBaseChroma)};
}

}  // namespace sjdec

#endif  // SJDEC_SPECTRAL_HPP_
