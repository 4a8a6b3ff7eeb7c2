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

#ifndef SJDEC_SYNTHETIC_HPP_
#define SJDEC_SYNTHETIC_HPP_

// Procedural test/training images: color gradients, Gabor patches and
// low-pass filtered noise, so no external corpus is needed.

#include <cmath>
#include <numbers>
#include <vector>

#include "sjdec/common.hpp"
#include "sjdec/image.hpp"

namespace sjdec {

enum class SyntheticKind { kGradient, kGabor, kFilteredNoise, kMixed };

namespace detail {

inline std::vector<double> box_blur(const std::vector<double>& src, int w, int h, int radius) {
  std::vector<double> tmp(src.size()), out(src.size());
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      double acc = 0;
      int n = 0;
      for (int k = -radius; k <= radius; ++k) {
        const int xx = std::clamp(x + k, 0, w - 1);
        acc += src[static_cast<std::size_t>(y) * w + xx];
        ++n;
      }
      tmp[static_cast<std::size_t>(y) * w + x] = acc / n;
    }
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      double acc = 0;
      int n = 0;
      for (int k = -radius; k <= radius; ++k) {
        const int yy = std::clamp(y + k, 0, h - 1);
        acc += tmp[static_cast<std::size_t>(yy) * w + x];
        ++n;
      }
      out[static_cast<std::size_t>(y) * w + x] = acc / n;
    }
  return out;
}

}  // namespace detail

inline RgbImage synthetic_image(int w, int h, SyntheticKind kind, Rng& rng) {
  std::vector<double> rgb(static_cast<std::size_t>(w) * h * 3, 0.0);
  auto add = [&](int y, int x, int c, double v) {
    rgb[(static_cast<std::size_t>(y) * w + x) * 3 + c] += v;
  };

  const bool gradient = kind == SyntheticKind::kGradient || kind == SyntheticKind::kMixed;
  const bool gabor = kind == SyntheticKind::kGabor || kind == SyntheticKind::kMixed;
  const bool noise = kind == SyntheticKind::kFilteredNoise || kind == SyntheticKind::kMixed;

  // Background: either a two-color linear gradient or a flat color.
  double c0[3], c1[3];
  for (int c = 0; c < 3; ++c) {
    c0[c] = rng.uniform(30, 225);
    c1[c] = gradient ? rng.uniform(30, 225) : c0[c];
  }
  const double angle = rng.uniform(0, 2 * std::numbers::pi);
  const double gx = std::cos(angle), gy = std::sin(angle);
  const double span = std::abs(gx) * (w - 1) + std::abs(gy) * (h - 1) + 1e-9;
  const double off = std::min(0.0, gx * (w - 1)) + std::min(0.0, gy * (h - 1));
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const double t = (gx * x + gy * y - off) / span;
      for (int c = 0; c < 3; ++c) add(y, x, c, c0[c] + (c1[c] - c0[c]) * t);
    }

  if (gabor) {
    const int patches = rng.uniform_int(1, 3);
    for (int p = 0; p < patches; ++p) {
      const double cx = rng.uniform(0, w), cy = rng.uniform(0, h);
      const double sigma = rng.uniform(0.12, 0.35) * std::min(w, h);
      const double theta = rng.uniform(0, std::numbers::pi);
      const double period = rng.uniform(3.0, 16.0);
      const double phase = rng.uniform(0, 2 * std::numbers::pi);
      double amp[3];
      for (int c = 0; c < 3; ++c) amp[c] = rng.uniform(-60, 60);
      for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
          const double dx = x - cx, dy = y - cy;
          const double along = dx * std::cos(theta) + dy * std::sin(theta);
          const double env = std::exp(-(dx * dx + dy * dy) / (2 * sigma * sigma));
          const double wave = std::cos(2 * std::numbers::pi * along / period + phase);
          for (int c = 0; c < 3; ++c) add(y, x, c, amp[c] * env * wave);
        }
    }
  }

  if (noise) {
    const int radius = rng.uniform_int(1, 3);
    const double strength = rng.uniform(20, 70);
    std::vector<double> n(static_cast<std::size_t>(w) * h);
    for (auto& v : n) v = rng.uniform(-1, 1);
    n = detail::box_blur(n, w, h, radius);
    // Mostly luminance texture with a weaker tint.
    double tint[3];
    for (int c = 0; c < 3; ++c) tint[c] = 1.0 + rng.uniform(-0.3, 0.3);
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x)
        for (int c = 0; c < 3; ++c)
          add(y, x, c, strength * tint[c] * n[static_cast<std::size_t>(y) * w + x]);
  }

  RgbImage img(w, h);
  for (std::size_t i = 0; i < rgb.size(); ++i) {
    img.data[i] = static_cast<uint8_t>(std::clamp(std::floor(rgb[i] + 0.5), 0.0, 255.0));
  }
  return img;
}

// n images cycling through the four kinds, fully determined by seed.
inline std::vector<RgbImage> synthetic_dataset(int n, int w, int h, uint64_t seed) {
  Rng rng(seed);
  std::vector<RgbImage> out;
  out.reserve(static_cast<std::size_t>(std::max(n, 0)));
  for (int i = 0; i < n; ++i) {
    out.push_back(synthetic_image(w, h, static_cast<SyntheticKind>(i % 4), rng));
  }
  return out;
}

}  // namespace sjdec

#endif  // SJDEC_SYNTHETIC_HPP_
