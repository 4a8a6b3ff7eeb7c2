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

#ifndef SJDEC_METRICS_HPP_
#define SJDEC_METRICS_HPP_

#include <cmath>
#include <fstream>
#include <functional>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "sjdec/codec.hpp"
#include "sjdec/image.hpp"

namespace sjdec {

constexpr double kInfDb = std::numeric_limits<double>::infinity();

namespace detail {

inline void check_same_dims(const RgbImage& a, const RgbImage& b, const char* what) {
  if (a.width != b.width || a.height != b.height) {
    throw InvalidArgument(std::string(what) + ": image dimensions differ (" +
                          std::to_string(a.width) + "x" + std::to_string(a.height) + " vs " +
                          std::to_string(b.width) + "x" + std::to_string(b.height) + ")");
  }
}

inline double mse_rgb(const RgbImage& a, const RgbImage& b) {
  double s = 0;
  for (std::size_t i = 0; i < a.data.size(); ++i) {
    const double d = static_cast<double>(a.data[i]) - b.data[i];
    s += d * d;
  }
  return s / static_cast<double>(a.data.size());
}

inline double to_db(double mse) { return mse <= 0 ? kInfDb : 10.0 * std::log10(255.0 * 255.0 / mse); }

}  // namespace detail

// BT.601 luma, unrounded.
inline std::vector<double> luma(const RgbImage& img) {
  std::vector<double> y(static_cast<std::size_t>(img.width) * img.height);
  for (std::size_t i = 0; i < y.size(); ++i) {
    y[i] = 0.299 * img.data[3 * i] + 0.587 * img.data[3 * i + 1] + 0.114 * img.data[3 * i + 2];
  }
  return y;
}

// Over all RGB samples; +inf for identical images.
inline double psnr(const RgbImage& a, const RgbImage& b) {
  detail::check_same_dims(a, b, "psnr");
  return detail::to_db(detail::mse_rgb(a, b));
}

// Yim-Bovik blocking effect factor of a single plane.
inline double blocking_effect_factor(const std::vector<double>& p, int w, int h, int block = 8) {
  double db = 0, dn = 0;
  std::size_t nb = 0, nn = 0;
  auto pair = [&](double a, double b, bool boundary) {
    const double d = (a - b) * (a - b);
    if (boundary) {
      db += d;
      ++nb;
    } else {
      dn += d;
      ++nn;
    }
  };
  for (int y = 0; y < h; ++y)
    for (int x = 0; x + 1 < w; ++x)
      pair(p[static_cast<std::size_t>(y) * w + x], p[static_cast<std::size_t>(y) * w + x + 1],
           (x + 1) % block == 0);
  for (int y = 0; y + 1 < h; ++y)
    for (int x = 0; x < w; ++x)
      pair(p[static_cast<std::size_t>(y) * w + x], p[static_cast<std::size_t>(y + 1) * w + x],
           (y + 1) % block == 0);
  if (nb == 0 || nn == 0) return 0.0;
  db /= static_cast<double>(nb);
  dn /= static_cast<double>(nn);
  if (db <= dn) return 0.0;
  const double eta = std::log2(static_cast<double>(block)) / std::log2(static_cast<double>(std::min(w, h)));
  return eta * (db - dn);
}

// PSNR with the test image's luma blocking factor added to the RGB MSE.
// Asymmetric: only `test` is inspected for block edges.
inline double psnr_b(const RgbImage& reference, const RgbImage& test, int block = 8) {
  detail::check_same_dims(reference, test, "psnr_b");
  if (reference.width < block || reference.height < block) {
    throw InvalidArgument("psnr_b: image smaller than one block");
  }
  const double bef = blocking_effect_factor(luma(test), test.width, test.height, block);
  return detail::to_db(detail::mse_rgb(reference, test) + bef);
}

// Luma SSIM with an 11x11 Gaussian window (sigma 1.5), averaged over all
// fully contained windows.
inline double ssim(const RgbImage& a, const RgbImage& b) {
  detail::check_same_dims(a, b, "ssim");
  constexpr int kWin = 11;
  if (a.width < kWin || a.height < kWin) throw InvalidArgument("ssim: image smaller than 11x11");
  std::array<double, kWin> g{};
  double gs = 0;
  for (int i = 0; i < kWin; ++i) {
    g[i] = std::exp(-((i - 5) * (i - 5)) / (2 * 1.5 * 1.5));
    gs += g[i];
  }
  for (auto& v : g) v /= gs;
  const int w = a.width, h = a.height;
  const int ow = w - kWin + 1, oh = h - kWin + 1;
  // Separable valid-mode filtering of one plane.
  auto filter = [&](const std::vector<double>& p) {
    std::vector<double> tmp(static_cast<std::size_t>(h) * ow), out(static_cast<std::size_t>(oh) * ow);
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < ow; ++x) {
        double s = 0;
        for (int i = 0; i < kWin; ++i) s += g[i] * p[static_cast<std::size_t>(y) * w + x + i];
        tmp[static_cast<std::size_t>(y) * ow + x] = s;
      }
    for (int y = 0; y < oh; ++y)
      for (int x = 0; x < ow; ++x) {
        double s = 0;
        for (int i = 0; i < kWin; ++i) s += g[i] * tmp[static_cast<std::size_t>(y + i) * ow + x];
        out[static_cast<std::size_t>(y) * ow + x] = s;
      }
    return out;
  };
  const auto x = luma(a), y = luma(b);
  std::vector<double> xx(x.size()), yy(x.size()), xy(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    xx[i] = x[i] * x[i];
    yy[i] = y[i] * y[i];
    xy[i] = x[i] * y[i];
  }
  const auto mx = filter(x), my = filter(y), sxx = filter(xx), syy = filter(yy), sxy = filter(xy);
  const double c1 = (0.01 * 255) * (0.01 * 255), c2 = (0.03 * 255) * (0.03 * 255);
  double total = 0;
  for (std::size_t i = 0; i < mx.size(); ++i) {
    const double vx = sxx[i] - mx[i] * mx[i];
    const double vy = syy[i] - my[i] * my[i];
    const double cxy = sxy[i] - mx[i] * my[i];
    total += ((2 * mx[i] * my[i] + c1) * (2 * cxy + c2)) /
             ((mx[i] * mx[i] + my[i] * my[i] + c1) * (vx + vy + c2));
  }
  return total / static_cast<double>(mx.size());
}

inline double bpp(std::size_t bytes, int width, int height) {
  if (width <= 0 || height <= 0) throw InvalidArgument("bpp: zero pixels");
  return 8.0 * static_cast<double>(bytes) / (static_cast<double>(width) * height);
}

// ---- rate-distortion sweep -------------------------------------------------

struct RdRecord {
  std::string method;
  int q = 0;
  double bpp = 0;
  double psnr = 0;
  double psnr_b = 0;
  double ssim = 0;
  int images = 0;  // images that contributed to the means
};

struct NamedImage {
  std::string name;
  RgbImage image;
};

struct RdReport {
  std::vector<RdRecord> records;
  std::vector<std::string> failures;  // "name q=..: reason"
};

using SpectraDecoder = std::function<RgbImage(const JpegSpectra&)>;

inline RgbImage baseline_decoder(const JpegSpectra& s) { return decode_baseline(s); }

// Encodes every image at each q, decodes with `decoder` and averages the
// metrics. Images that fail are skipped and listed in the report.
inline RdReport rd_sweep(const std::vector<NamedImage>& images, const std::vector<int>& qs,
                         const std::string& method, const SpectraDecoder& decoder) {
  RdReport rep;
  for (int q : qs) {
    RdRecord rec;
    rec.method = method;
    rec.q = q;
    for (const auto& [name, img] : images) {
      try {
        const auto bytes = encode_jpeg(img, q);
        const RgbImage out = decoder(parse_jpeg(bytes));
        const double p = psnr(img, out);
        const double pb = img.width >= 8 && img.height >= 8 ? psnr_b(img, out) : p;
        const double s = img.width >= 11 && img.height >= 11 ? ssim(img, out) : 1.0;
        rec.bpp += bpp(bytes.size(), img.width, img.height);
        rec.psnr += p;
        rec.psnr_b += pb;
        rec.ssim += s;
        ++rec.images;
      } catch (const std::exception& e) {
        rep.failures.push_back(name + " q=" + std::to_string(q) + ": " + e.what());
      }
    }
    if (rec.images == 0) continue;
    const double n = rec.images;
    rec.bpp /= n;
    rec.psnr /= n;
    rec.psnr_b /= n;
    rec.ssim /= n;
    rep.records.push_back(rec);
  }
  return rep;
}

inline std::string format_metric(double v) {
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  std::ostringstream os;
  os.precision(10);
  os << v;
  return os.str();
}

inline std::string rd_csv(const std::vector<RdRecord>& recs) {
  std::string out = "method,q,bpp,psnr,psnr_b,ssim\n";
  for (const auto& r : recs) {
    out += r.method + "," + std::to_string(r.q) + "," + format_metric(r.bpp) + "," +
           format_metric(r.psnr) + "," + format_metric(r.psnr_b) + "," + format_metric(r.ssim) + "\n";
  }
  return out;
}

inline nlohmann::json rd_json(const std::vector<RdRecord>& recs) {
  auto num = [](double v) -> nlohmann::json {
    if (std::isinf(v)) return format_metric(v);
    return v;
  };
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& r : recs) {
    arr.push_back({{"method", r.method}, {"q", r.q}, {"bpp", num(r.bpp)}, {"psnr", num(r.psnr)},
                   {"psnr_b", num(r.psnr_b)}, {"ssim", num(r.ssim)}});
  }
  return arr;
}

}  // namespace sjdec

#endif  // SJDEC_METRICS_HPP_
