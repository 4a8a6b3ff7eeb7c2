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

// Acceptance suite. One PASS/FAIL line per criterion; exit status is the number
// of failures. Criterion 10 runs only when SPECTRAL_JDEC_LIVE1_DIR names a
// directory of LIVE-1 reference images.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <limits>
#include <numbers>
#include <string>
#include <vector>

#include "sjdec/codec.hpp"
#include "sjdec/gradcheck.hpp"
#include "sjdec/image.hpp"
#include "sjdec/metrics.hpp"
#include "sjdec/model.hpp"
#include "sjdec/spectral.hpp"
#include "sjdec/synthetic.hpp"
#include "sjdec/trainer.hpp"

namespace {

using namespace sjdec;
using T64 = ad::Tensor<double>;

struct Outcome {
  bool pass = false;
  std::string detail;
  bool skipped = false;
};

int g_failures = 0;

std::string fmt(const char* f, double a) {
  char buf[128];
  std::snprintf(buf, sizeof buf, f, a);
  return buf;
}

void report(int id, const char* title, double limit_s, const std::function<Outcome()>& body) {
  const auto t0 = std::chrono::steady_clock::now();
  Outcome o;
  try {
    o = body();
  } catch (const std::exception& e) {
    o = {false, std::string("exception: ") + e.what()};
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  if (o.skipped) {
    std::printf("[%2d] SKIP %s: %s\n", id, title, o.detail.c_str());
    std::fflush(stdout);
    return;
  }
  const bool in_time = limit_s <= 0 || secs < limit_s;
  const bool pass = o.pass && in_time;
  if (!pass) ++g_failures;
  const std::string limit = limit_s > 0 ? fmt("limit %.0f s", limit_s) : "no limit";
  std::printf("[%2d] %s %s: %s; runtime %.2f s (%s)%s\n", id, pass ? "PASS" : "FAIL", title, o.detail.c_str(),
              secs, limit.c_str(), in_time ? "" : " EXCEEDED");
  std::fflush(stdout);
}


std::string data_path(const std::string& name) { return std::string(SJDEC_TEST_DATA) + "/" + name; }

// 3 photo crops + 17 synthetic images, sizes not multiples of 16.
std::vector<NamedImage> test_set() {
  std::vector<NamedImage> set;
  for (const char* n : {"astronaut_crop.ppm", "coffee_crop.ppm", "chelsea_small.ppm"})
    set.push_back({n, read_ppm(data_path(n))});
  auto syn = synthetic_dataset(17, 64, 48, 42);
  for (std::size_t i = 0; i < syn.size(); ++i) set.push_back({"synthetic" + std::to_string(i), std::move(syn[i])});
  return set;
}

Outcome dct_correctness() {
  double orth = 0;
  for (int n : {1, 2, 4, 8, 16}) {
    const DctBasis d(n);
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j) {
        double s = 0;
        for (int k = 0; k < n; ++k) s += d(i, k) * d(j, k);
        orth = std::max(orth, std::abs(s - (i == j ? 1.0 : 0.0)));
      }
  }
  Rng rng(1001);
  double rt = 0;
  for (int t = 0; t < 1000; ++t) {
    Mat8 x{};
    for (auto& v : x) v = rng.uniform(-128, 127);
    const Mat8 y = idct2(dct2(x));
    for (int i = 0; i < kBlockArea; ++i) rt = std::max(rt, std::abs(y[i] - x[i]));
  }
  return {orth < 1e-12 && rt < 1e-9,
          "max|DD^T-I| " + fmt("%.2e", orth) + " (<1e-12), roundtrip " + fmt("%.2e", rt) + " (<1e-9)"};
}

// Oracle: direct O(n^4) DCT of each spatial tile.
Outcome subblock_oracle() {
  Rng rng(2002);
  double conv = 0, inv = 0;
  for (int b : {1, 2, 4}) {
    for (int t = 0; t < 1000; ++t) {
      SpectrumBlock s{};
      for (auto& v : s.values) v = rng.uniform(-1024, 1024);
      const Mat8 x = idct2(s);
      const SubblockGrid g = subblock_convert(s, b);
      for (int ti = 0; ti < 8 / b; ++ti)
        for (int tj = 0; tj < 8 / b; ++tj)
          for (int u = 0; u < b; ++u)
            for (int v = 0; v < b; ++v) {
              double acc = 0;
              for (int i = 0; i < b; ++i)
                for (int j = 0; j < b; ++j) {
                  const double cu = (u == 0 ? std::sqrt(1.0 / b) : std::sqrt(2.0 / b)) *
                                    std::cos(std::numbers::pi * u * (2 * i + 1) / (2.0 * b));
                  const double cv = (v == 0 ? std::sqrt(1.0 / b) : std::sqrt(2.0 / b)) *
                                    std::cos(std::numbers::pi * v * (2 * j + 1) / (2.0 * b));
                  acc += cu * cv * x[(ti * b + i) * 8 + tj * b + j];
                }
              conv = std::max(conv, std::abs(acc - g.at(ti, tj, u, v)));
            }
      const SpectrumBlock back = subblock_invert(g, b);
      for (int i = 0; i < kBlockArea; ++i) inv = std::max(inv, std::abs(back.values[i] - s.values[i]));
    }
  }
  return {conv < 1e-9 && inv < 1e-9,
          "conversion err " + fmt("%.2e", conv) + ", inverse err " + fmt("%.2e", inv) + " (<1e-9), b in {1,2,4}"};
}

bool same_grid(const CoeffGrid& a, const CoeffGrid& b) {
  if (a.blocks_w != b.blocks_w || a.blocks_h != b.blocks_h) return false;
  for (int y = 0; y < a.blocks_h; ++y)
    for (int x = 0; x < a.blocks_w; ++x)
      if (a.at(y, x).values != b.at(y, x).values) return false;
  return true;
}

Outcome codec_roundtrip(const std::vector<NamedImage>& set) {
  int checked = 0, bad = 0;
  std::string first_bad;
  for (int q : {0, 10, 30, 50, 70, 90, 100}) {
    const auto [ql, qc] = quality_to_qtables(q);
    for (const auto& ni : set) {
      const JpegSpectra enc = compute_spectra(ni.image, q);
      const JpegSpectra dec = parse_jpeg(encode_jpeg(ni.image, q));
      const bool ok = same_grid(enc.y, dec.y) && same_grid(enc.cb, dec.cb) && same_grid(enc.cr, dec.cr) &&
                      dec.q_luma.q == ql.q && dec.q_chroma.q == qc.q && dec.width == ni.image.width &&
                      dec.height == ni.image.height;
      ++checked;
      if (!ok) {
        ++bad;
        if (first_bad.empty()) first_bad = ni.name + " q=" + std::to_string(q);
      }
    }
  }
  return {bad == 0, std::to_string(checked - bad) + "/" + std::to_string(checked) +
                        " (image, q) pairs exact" + (first_bad.empty() ? "" : ", first mismatch " + first_bad)};
}

Outcome baseline_sanity(const std::vector<NamedImage>& set) {
  std::vector<double> means;
  for (int q = 0; q <= 100; q += 10) {
    double s = 0;
    for (const auto& ni : set) s += psnr(ni.image, decode_baseline(parse_jpeg(encode_jpeg(ni.image, q))));
    means.push_back(s / static_cast<double>(set.size()));
  }
  bool mono = true;
  for (std::size_t i = 1; i < means.size(); ++i) mono = mono && means[i] >= means[i - 1];
  std::string curve;
  for (double m : means) curve += fmt("%.2f ", m);
  return {mono && means.back() > 40.0, std::string("mean PSNR over q=0..100 step 10: ") + curve +
                                           (mono ? "(nondecreasing)" : "(NOT monotone)") +
                                           fmt(", q=100 %.2f dB (>40)", means.back())};
}

Outcome ccf_identity() {
  ad::NoGradGuard no_grad;
  double worst = 0;
  for (int b : {2, 4}) {
    const auto g = make_block_grid(b, 1);
    std::vector<double> fh, fw;
    for (int u = 0; u < b; ++u)
      for (int v = 0; v < b; ++v) {
        fh.push_back(static_cast<double>(u) / b);
        fw.push_back(static_cast<double>(v) / b);
      }
    const auto ft = T64::from({b * b}, fh);
    const auto fwt = T64::from({b * b}, fw);
    auto alpha = [b](int u) { return u == 0 ? std::sqrt(1.0 / b) : std::sqrt(2.0 / b); };
    Rng rng(5005 + b);
    for (int trial = 0; trial < 1000; ++trial) {
      Mat8 pixels{};
      for (auto& x : pixels) x = rng.uniform(-128, 127);
      const SubblockGrid sg = subblock_convert(dct2(pixels), b);
      const int tiles = 8 / b;
      const int ti = trial % tiles, tj = (trial / tiles) % tiles;
      std::vector<double> amp;
      for (int u = 0; u < b; ++u)
        for (int v = 0; v < b; ++v) amp.push_back(alpha(u) * alpha(v) * sg.at(ti, tj, u, v));
      const auto f = ccf_features(T64::from({b * b}, amp), ft, fwt, g);
      for (int i = 0; i < b; ++i)
        for (int j = 0; j < b; ++j) {
          double s = 0;
          for (int k = 0; k < b * b; ++k) s += f.values()[(i * b + j) * b * b + k];
          worst = std::max(worst, std::abs(s - pixels[(ti * b + i) * 8 + tj * b + j]));
        }
    }
  }
  return {worst < 1e-6, "max tile error " + fmt("%.2e", worst) + " (<1e-6), B in {2,4}, 1000 blocks each"};
}

T64 random_tensor(ad::Shape s, Rng& rng, bool grad = true) {
  std::vector<double> v(ad::numel(s));
  for (auto& x : v) x = rng.uniform(-1, 1);
  return T64::from(std::move(s), std::move(v), grad);
}

Outcome gradient_integrity() {
  constexpr int kProbes = 24;
  using Fn = std::function<T64(const std::vector<T64>&)>;
  Rng rng(6006);
  auto weighted = [&rng](std::function<T64(const std::vector<T64>&)> op, ad::Shape out) -> Fn {
    auto w = random_tensor(std::move(out), rng, false);
    return [op, w](const std::vector<T64>& in) { return ad::sum(ad::mul(op(in), w)); };
  };
  struct Case {
    const char* name;
    Fn fn;
    std::vector<T64> in;
  };
  const ad::Shape s{3, 4};
  std::vector<T64> l1_in{random_tensor({4, 6}, rng)};
  {
    std::vector<double> tv(l1_in[0].values().begin(), l1_in[0].values().end());
    for (auto& v : tv) v += rng.uniform() < 0.5 ? rng.uniform(0.05, 1) : -rng.uniform(0.05, 1);
    l1_in.push_back(T64::from({4, 6}, tv, true));
  }
  std::vector<Case> cases;
  cases.push_back({"add", weighted([](auto& in) { return ad::add(in[0], in[1]); }, s),
                   {random_tensor(s, rng), random_tensor(s, rng)}});
  cases.push_back({"sub", weighted([](auto& in) { return ad::sub(in[0], in[1]); }, s),
                   {random_tensor(s, rng), random_tensor(s, rng)}});
  cases.push_back({"mul", weighted([](auto& in) { return ad::mul(in[0], in[1]); }, s),
                   {random_tensor(s, rng), random_tensor(s, rng)}});
  cases.push_back({"scale", weighted([](auto& in) { return ad::scale(in[0], -1.7); }, s), {random_tensor(s, rng)}});
  cases.push_back(
      {"add_scalar", weighted([](auto& in) { return ad::add_scalar(in[0], 0.3); }, s), {random_tensor(s, rng)}});
  cases.push_back({"relu", weighted([](auto& in) { return ad::relu(in[0]); }, s), {random_tensor(s, rng)}});
  cases.push_back({"cos", weighted([](auto& in) { return ad::cos(in[0]); }, s), {random_tensor(s, rng)}});
  cases.push_back({"sin", weighted([](auto& in) { return ad::sin(in[0]); }, s), {random_tensor(s, rng)}});
  cases.push_back({"broadcast_mul", weighted([](auto& in) { return ad::broadcast_mul(in[0], in[1]); }, {2, 3, 4}),
                   {random_tensor({2, 1, 4}, rng), random_tensor({3, 1}, rng)}});
  cases.push_back({"broadcast_add", weighted([](auto& in) { return ad::broadcast_add(in[0], in[1]); }, {2, 3, 4}),
                   {random_tensor({2, 3, 1}, rng), random_tensor({4}, rng)}});
  cases.push_back({"broadcast_to", weighted([](auto& in) { return ad::broadcast_to(in[0], {2, 3, 4}); }, {2, 3, 4}),
                   {random_tensor({3, 1}, rng)}});
  cases.push_back({"linear", weighted([](auto& in) { return ad::linear(in[0], in[1], in[2]); }, {2, 3, 5}),
                   {random_tensor({2, 3, 4}, rng), random_tensor({5, 4}, rng), random_tensor({5}, rng)}});
  cases.push_back({"conv3x3", weighted([](auto& in) { return ad::conv3x3(in[0], in[1], in[2]); }, {2, 4, 5, 3}),
                   {random_tensor({2, 4, 5, 2}, rng), random_tensor({3, 3, 3, 2}, rng), random_tensor({3}, rng)}});
  cases.push_back({"reshape", weighted([](auto& in) { return ad::reshape(in[0], {6, 4}); }, {6, 4}),
                   {random_tensor({2, 3, 4}, rng)}});
  cases.push_back({"permute", weighted([](auto& in) { return ad::permute(in[0], {2, 0, 1}); }, {4, 2, 3}),
                   {random_tensor({2, 3, 4}, rng)}});
  cases.push_back({"concat", weighted([](auto& in) { return ad::concat<double>({in[0], in[1]}, 1); }, {2, 5, 3}),
                   {random_tensor({2, 2, 3}, rng), random_tensor({2, 3, 3}, rng)}});
  cases.push_back({"slice", weighted([](auto& in) { return ad::slice(in[0], 2, 1, 3); }, {2, 3, 2}),
                   {random_tensor({2, 3, 4}, rng)}});
  cases.push_back({"sum", [](auto& in) { return ad::sum(ad::mul(in[0], in[0])); }, {random_tensor({3, 5}, rng)}});
  cases.push_back({"mean", [](auto& in) { return ad::mean(ad::mul(in[0], in[0])); }, {random_tensor({3, 5}, rng)}});
  cases.push_back({"l1_loss", [](auto& in) { return ad::l1_loss(in[0], in[1]); }, l1_in});

  double worst = 0;
  std::string worst_name = "-";
  int total = 0;
  auto check = [&](const std::string& name, const Fn& fn, const std::vector<T64>& in) {
    Rng pr(rng.next_u64());
    const auto r = ad::gradcheck(fn, in, kProbes, pr);
    total += r.probes;
    if (r.probes < 20) worst = std::numeric_limits<double>::infinity();
    if (r.max_rel_error >= worst) {
      worst = r.max_rel_error;
      worst_name = name;
    }
  };
  for (const auto& c : cases) check(c.name, c.fn, c.in);

  for (Ablation a : {Ablation::kFull, Ablation::kNoCcf, Ablation::kNoSubblock, Ablation::kNeither,
                     Ablation::kFourier}) {
    ModelConfig cfg;
    cfg.c = 6;
    cfg.k = 5;
    cfg.n_res_blocks = 1;
    cfg.hidden = 7;
    cfg.ablation = a;
    auto p = make_params<double>(cfg);
    initialize_params(p, rng);
    for (auto& [name, t] : p.entries)
      if (name.ends_with(".b"))
        for (auto& v : t.values()) v = rng.uniform(-0.1, 0.1);
    const auto in = prepare_input(compute_spectra(synthetic_image(16, 16, SyntheticKind::kMixed, rng), 50), cfg);
    const auto w = random_tensor({1, 16, 16, 3}, rng, false);
    const auto names = p.entries;
    auto fn = [&](const std::vector<T64>& leaves) {
      ModelParams<double> q;
      q.config = cfg;
      for (std::size_t i = 0; i < leaves.size(); ++i) q.entries.emplace_back(names[i].first, leaves[i]);
      return ad::sum(ad::mul(forward_tensor(in, q, 1), w));
    };
    check(std::string("forward/") + to_string(a), fn, p.tensors());
  }
  return {worst < 1e-4, std::to_string(cases.size()) + " operators + 5 forward variants, " + std::to_string(total) +
                            " probes, worst rel err " + fmt("%.2e", worst) + " (" + worst_name + ", <1e-4)"};
}

Outcome toy_training() {
  TrainConfig tc;
  tc.patch = 48;
  tc.batch = 8;
  tc.max_steps = 200;
  tc.epochs = 100;
  tc.seed = 3;
  const ModelConfig mc;  // C=32, K=64
  const auto data = synthetic_dataset(32, 64, 64, 1);
  const auto a = train(tc, data, mc);
  const auto b = train(tc, data, mc);
  bool identical = a.history.size() == b.history.size();
  for (std::size_t i = 0; identical && i < a.history.size(); ++i) identical = a.history[i].loss == b.history[i].loss;
  const double first = running_loss(a.history, 20, false);
  const double last = running_loss(a.history, 20, true);
  const double ratio = last / first;
  return {a.history.size() == 200 && ratio < 0.7 && identical,
          std::to_string(a.history.size()) + " steps, running L1 " + fmt("%.4f", first) + " -> " + fmt("%.4f", last) +
              fmt(" (ratio %.3f < 0.7)", ratio) + (identical ? ", rerun bit-identical" : ", rerun DIFFERS")};
}

Outcome shape_contracts() {
  bool ok = true;
  std::string why;
  const ModelConfig def;
  if (def.embed_in() != 24) ok = false, why += " embed_in!=24";
  {
    const auto p = make_params<float>(def);
    if (p["hf.conv2.w"].shape()[0] != 2 * def.k) ok = false, why += " hf_out!=2K";
  }
  Rng rng(8008);
  const auto img = synthetic_image(37, 21, SyntheticKind::kMixed, rng);
  const JpegSpectra s = compute_spectra(img, 50);
  int runs = 0;
  for (Ablation a : {Ablation::kFull, Ablation::kNoCcf, Ablation::kNoSubblock, Ablation::kNeither,
                     Ablation::kFourier}) {
    ModelConfig cfg;
    cfg.c = 8;
    cfg.k = 8;
    cfg.n_res_blocks = 1;
    cfg.ablation = a;
    auto p = make_params<float>(cfg);
    initialize_params(p, rng);
    for (int r : {1, 2, 4}) {
      const RgbImage out = forward(s, p, r);
      ++runs;
      if (out.width != 37 * r || out.height != 21 * r || out.data.size() != std::size_t(37 * r) * (21 * r) * 3) {
        ok = false;
        why += std::string(" ") + to_string(a) + " r=" + std::to_string(r);
      }
    }
  }
  return {ok, "embed channels " + std::to_string(def.embed_in()) + " (=24), h_f out 2K=" + std::to_string(2 * def.k) +
                  ", " + std::to_string(runs) + " forward runs (5 variants x r in {1,2,4}) on 37x21" +
                  (why.empty() ? "" : ", failed:" + why)};
}

Outcome metric_checks() {
  RgbImage a(40, 32, 100), b(40, 32, 101);
  const double p1 = psnr(a, b);
  const double oracle = 20.0 * std::log10(255.0);
  const bool uniform_ok = std::abs(p1 - 48.1308) < 1e-3 && std::abs(p1 - oracle) < 1e-9;
  Rng rng(9009);
  int violations = 0;
  for (int i = 0; i < 100; ++i) {
    const int w = 8 + static_cast<int>(rng.next_u64() % 40), h = 8 + static_cast<int>(rng.next_u64() % 40);
    RgbImage x(w, h), y(w, h);
    const double noise = rng.uniform(0, 60);
    for (std::size_t k = 0; k < x.data.size(); ++k) {
      x.data[k] = static_cast<uint8_t>(rng.next_u64() % 256);
      y.data[k] = static_cast<uint8_t>(std::clamp(x.data[k] + rng.uniform(-noise, noise), 0.0, 255.0));
    }
    if (psnr_b(x, y) > psnr(x, y)) ++violations;
  }
  RgbImage c(23, 17);
  for (auto& v : c.data) v = static_cast<uint8_t>(rng.next_u64() % 256);
  const double self = ssim(c, c);
  const bool bpp_ok = bpp(1000, 100, 80) == 1.0 && bpp(3, 2, 3) == 4.0 && bpp(12345, 17, 9) == 98760.0 / 153.0;
  return {uniform_ok && violations == 0 && self == 1.0 && bpp_ok,
          fmt("uniform diff-1 PSNR %.4f dB (48.1308 +/- 1e-3)", p1) + ", psnr_b > psnr in " +
              std::to_string(violations) + "/100 pairs, SSIM(identical) " + fmt("%.17g", self) +
              (bpp_ok ? ", bpp exact" : ", bpp WRONG")};
}

Outcome live1_numbers() {
  const char* dir = std::getenv("SPECTRAL_JDEC_LIVE1_DIR");
  if (dir == nullptr || !std::filesystem::is_directory(dir)) {
    return {false, "SPECTRAL_JDEC_LIVE1_DIR not set (dataset-gated)", true};
  }
  std::vector<NamedImage> imgs;
  for (const auto& e : std::filesystem::directory_iterator(dir)) {
    if (!e.is_regular_file()) continue;
    try {
      imgs.push_back({e.path().filename().string(), read_image(e.path().string())});
    } catch (const Error&) {
    }
  }
  if (imgs.empty()) return {false, std::string("no readable PPM/BMP images in ") + dir};
  const auto rep = rd_sweep(imgs, {10, 100}, "jpeg", baseline_decoder);
  double p10 = 0, b10 = 0, p100 = 0, b100 = 0;
  for (const auto& r : rep.records) {
    if (r.q == 10) p10 = r.psnr, b10 = r.psnr_b;
    if (r.q == 100) p100 = r.psnr, b100 = r.psnr_b;
  }
  const bool ok = std::abs(p10 - 25.69) <= 0.15 && std::abs(b10 - 24.20) <= 0.15 && std::abs(p100 - 43.07) <= 0.25 &&
                  std::abs(b100 - 42.37) <= 0.25;
  return {ok, std::to_string(imgs.size()) + " images: q=10 " + fmt("%.2f", p10) + "|" + fmt("%.2f", b10) +
                  " (25.69|24.20 +/- 0.15), q=100 " + fmt("%.2f", p100) + "|" + fmt("%.2f", b100) +
                  " (43.07|42.37 +/- 0.25)"};
}

}  // namespace

int main() {
  const auto set = test_set();
  report(1, "DCT correctness", 1, dct_correctness);
  report(2, "sub-block conversion oracle", 5, subblock_oracle);
  report(3, "codec roundtrip", 30, [&] { return codec_roundtrip(set); });
  report(4, "baseline decoder sanity", 30, [&] { return baseline_sanity(set); });
  report(5, "CCF to IDCT identity", 10, ccf_identity);
  report(6, "gradient integrity", 60, gradient_integrity);
  report(7, "toy training smoke", 600, toy_training);
  report(8, "shape and scale contracts", 0, shape_contracts);
  report(9, "metric checks", 0, metric_checks);
  report(10, "LIVE-1 baseline numbers", 0, live1_numbers);
  std::printf("%d criterion failure(s)\n", g_failures);
  return g_failures == 0 ? 0 : 1;
}
