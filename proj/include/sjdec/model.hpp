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

#ifndef SJDEC_MODEL_HPP_
#define SJDEC_MODEL_HPP_

// The JDEC network: group spectra embedding, CNN feature extractor,
// continuous cosine formulation and the per-position decoder MLP.

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "sjdec/codec.hpp"
#include "sjdec/common.hpp"
#include "sjdec/image.hpp"
#include "sjdec/spectral.hpp"
#include "sjdec/tensor.hpp"

namespace sjdec {

enum class Ablation { kFull, kNoCcf, kNoSubblock, kNeither, kFourier };

inline const char* to_string(Ablation a) {
  switch (a) {
    case Ablation::kFull: return "full";
    case Ablation::kNoCcf: return "no_ccf";
    case Ablation::kNoSubblock: return "no_subblock";
    case Ablation::kNeither: return "neither";
    case Ablation::kFourier: return "fourier";
  }
  return "?";
}

// Accepts the long names and the table ids id1..id4.
inline Ablation parse_ablation(std::string_view s) {
  if (s == "full" || s == "none") return Ablation::kFull;
  if (s == "no_ccf" || s == "id1") return Ablation::kNoCcf;
  if (s == "no_subblock" || s == "id2") return Ablation::kNoSubblock;
  if (s == "neither" || s == "id3") return Ablation::kNeither;
  if (s == "fourier" || s == "id4") return Ablation::kFourier;
  throw InvalidArgument("unknown ablation '" + std::string(s) + "'");
}

struct ModelConfig {
  int b = 4;
  int c = 32;
  int k = 64;
  int n_res_blocks = 4;
  int hidden = 0;  // decoder width; 0 means k
  Ablation ablation = Ablation::kFull;

  bool operator==(const ModelConfig&) const = default;

  int decoder_hidden() const { return hidden > 0 ? hidden : k; }
  bool uses_subblocks() const {
    return ablation != Ablation::kNoSubblock && ablation != Ablation::kNeither;
  }
  bool uses_ccf() const { return ablation != Ablation::kNoCcf && ablation != Ablation::kNeither; }
  // Pixel extent of one latent cell.
  int cell() const { return uses_subblocks() ? b : kBlock; }
  int embed_in() const { return uses_subblocks() ? 3 * b * b / 2 : 3 * kBlockArea; }
  int decoder_in() const {
    if (!uses_ccf()) return c + 2 + 2 * kBlockArea;
    return ablation == Ablation::kFourier ? 2 * k : k;
  }

  void validate() const {
    if (b != 2 && b != 4 && b != 8) {
      throw InvalidArgument("model: cell size B must be 2, 4 or 8 (got " + std::to_string(b) + ")");
    }
    if (c <= 0 || k <= 0) throw InvalidArgument("model: C and K must be positive");
    if (n_res_blocks < 0 || hidden < 0) throw InvalidArgument("model: negative layer count");
  }
};

// ---- parameters ------------------------------------------------------------

template <typename T>
struct ModelParams {
  ModelConfig config;
  std::vector<std::pair<std::string, ad::Tensor<T>>> entries;

  const ad::Tensor<T>& operator[](std::string_view name) const {
    for (const auto& [n, t] : entries)
      if (n == name) return t;
    throw InvalidArgument("model: no parameter '" + std::string(name) + "'");
  }
  bool contains(std::string_view name) const {
    for (const auto& e : entries)
      if (e.first == name) return true;
    return false;
  }
  std::vector<ad::Tensor<T>> tensors() const {
    std::vector<ad::Tensor<T>> out;
    for (const auto& e : entries) out.push_back(e.second);
    return out;
  }
  std::size_t count() const {
    std::size_t n = 0;
    for (const auto& e : entries) n += e.second.numel();
    return n;
  }
  void zero_grad() {
    for (auto& e : entries) e.second.zero_grad();
  }
};

// Layer list with shapes; every entry starts at zero.
template <typename T>
ModelParams<T> make_params(const ModelConfig& cfg) {
  cfg.validate();
  ModelParams<T> p;
  p.config = cfg;
  auto add = [&](std::string name, ad::Shape shape) {
    p.entries.emplace_back(std::move(name), ad::Tensor<T>::zeros(std::move(shape), true));
  };
  auto conv = [&](const std::string& name, int out, int in) {
    add(name + ".w", {out, 3, 3, in});
    add(name + ".b", {out});
  };
  const int c = cfg.c, k = cfg.k, h = cfg.decoder_hidden();
  add("embed.w", {c, cfg.embed_in()});
  add("embed.b", {c});
  for (int i = 0; i < cfg.n_res_blocks; ++i) {
    conv("res" + std::to_string(i) + ".conv1", c, c);
    conv("res" + std::to_string(i) + ".conv2", c, c);
  }
  conv("body", c, c);
  if (cfg.uses_ccf()) {
    conv("hc.conv1", c, c);
    conv("hc.conv2", k, c);
    conv("hf.conv1", c, c);
    conv("hf.conv2", 2 * k, c);
    add("hq.w", {k, 2 * kBlockArea});
    add("hq.b", {k});
  }
  const int widths[6] = {cfg.decoder_in(), h, h, h, h, 3};
  for (int i = 0; i < 5; ++i) {
    add("dec" + std::to_string(i) + ".w", {widths[i + 1], widths[i]});
    add("dec" + std::to_string(i) + ".b", {widths[i + 1]});
  }
  return p;
}

// He-uniform weights, zero biases; the frequency head's last layer is scaled
// down so initial frequencies stay near zero.
template <typename T>
void initialize_params(ModelParams<T>& p, Rng& rng) {
  for (auto& [name, t] : p.entries) {
    auto v = t.values();
    if (name.ends_with(".b")) {
      std::fill(v.begin(), v.end(), T(0));
      continue;
    }
    std::size_t fan_in = 1;
    for (int d = 1; d < t.rank(); ++d) fan_in *= static_cast<std::size_t>(t.dim(d));
    double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
    if (name == "hf.conv2.w") bound *= 0.1;
    for (auto& x : v) x = static_cast<T>(rng.uniform(-bound, bound));
  }
}

template <typename To, typename From>
ModelParams<To> cast_params(const ModelParams<From>& p) {
  ModelParams<To> out;
  out.config = p.config;
  for (const auto& [name, t] : p.entries) {
    std::vector<To> v(t.values().begin(), t.values().end());
    out.entries.emplace_back(name, ad::Tensor<To>::from(t.shape(), std::move(v), true));
  }
  return out;
}

// ---- block grid ------------------------------------------------------------

struct BlockGrid {
  int b = 4;
  int r = 1;
  std::vector<double> delta;  // r*b half-centered positions per axis

  int size() const { return static_cast<int>(delta.size()); }
  std::vector<std::pair<double, double>> coords() const {
    std::vector<std::pair<double, double>> out;
    for (double h : delta)
      for (double w : delta) out.emplace_back(h, w);
    return out;
  }
};

inline BlockGrid make_block_grid(int b, int r) {
  if (b < 1 || r < 1) throw InvalidArgument("block grid: b and r must be >= 1");
  BlockGrid g;
  g.b = b;
  g.r = r;
  for (int i = 0; i < b * r; ++i) g.delta.push_back((i + 0.5) / r);
  return g;
}

// ---- input preparation -----------------------------------------------------

// Spectra of a batch laid out per latent cell, plus the normalized
// quantization pair of each image.
struct ModelInput {
  int n = 0;
  int cells_h = 0;
  int cells_w = 0;
  int channels = 0;
  int width = 0;   // crop extent at r = 1
  int height = 0;
  std::vector<double> cells;  // [n, cells_h, cells_w, channels]
  std::vector<double> q;      // [n, 128]
};

namespace detail {

inline Mat8 normalized_block(const CoeffBlock& cb, const QuantTable& q) {
  Mat8 x = normalize_spectrum(dequantize(cb, q));
  for (auto& v : x) v = std::clamp(v, -1.0, 1.0);
  return x;
}

inline SpectrumBlock as_spectrum(const Mat8& m) {
  SpectrumBlock s;
  s.values = m;
  return s;
}

}  // namespace detail

inline void check_model_spectra(const JpegSpectra& s) {
  if (s.subsampling != Subsampling::k420) {
    throw InvalidArgument(std::string("model: expects 4:2:0 spectra, got ") +
                          to_string(s.subsampling));
  }
  if (s.y.blocks_w != 2 * s.cb.blocks_w || s.y.blocks_h != 2 * s.cb.blocks_h ||
      s.cb.blocks_w != s.cr.blocks_w || s.cb.blocks_h != s.cr.blocks_h) {
    throw InvalidArgument("model: luma grid must be twice the chroma grid");
  }
}

// Per-cell channel vectors for one image, appended to `out`.
inline void append_cells(const JpegSpectra& s, const ModelConfig& cfg, std::vector<double>& out) {
  check_model_spectra(s);
  const int cell = cfg.cell();
  const int ch = cfg.embed_in();
  const int cw = s.padded_width() / cell;
  const int chh = s.padded_height() / cell;
  const std::size_t base = out.size();
  out.resize(base + static_cast<std::size_t>(cw) * chh * ch, 0.0);
  auto at = [&](int cy, int cx, int k) -> double& {
    return out[base + (static_cast<std::size_t>(cy) * cw + cx) * ch + k];
  };
  if (!cfg.uses_subblocks()) {
    for (int by = 0; by < s.y.blocks_h; ++by)
      for (int bx = 0; bx < s.y.blocks_w; ++bx) {
        const Mat8 ly = detail::normalized_block(s.y.at(by, bx), s.q_luma);
        const Mat8 lb = detail::normalized_block(s.cb.at(by / 2, bx / 2), s.q_chroma);
        const Mat8 lr = detail::normalized_block(s.cr.at(by / 2, bx / 2), s.q_chroma);
        for (int i = 0; i < kBlockArea; ++i) {
          at(by, bx, i) = ly[i];
          at(by, bx, kBlockArea + i) = lb[i];
          at(by, bx, 2 * kBlockArea + i) = lr[i];
        }
      }
    return;
  }
  const int b = cfg.b, hb = b / 2;
  const int tl = kBlock / b;       // luma tiles per block axis
  const int tc = kBlock / hb;      // chroma tiles per block axis
  for (int by = 0; by < s.y.blocks_h; ++by)
    for (int bx = 0; bx < s.y.blocks_w; ++bx) {
      const SubblockGrid g =
          subblock_convert(detail::as_spectrum(detail::normalized_block(s.y.at(by, bx), s.q_luma)), b);
      for (int ti = 0; ti < tl; ++ti)
        for (int tj = 0; tj < tl; ++tj)
          for (int u = 0; u < b; ++u)
            for (int v = 0; v < b; ++v) at(by * tl + ti, bx * tl + tj, u * b + v) = g.at(ti, tj, u, v);
    }
  for (int comp = 0; comp < 2; ++comp) {
    const CoeffGrid& grid = comp == 0 ? s.cb : s.cr;
    const int off = b * b + comp * hb * hb;
    for (int by = 0; by < grid.blocks_h; ++by)
      for (int bx = 0; bx < grid.blocks_w; ++bx) {
        const SubblockGrid g = subblock_convert(
            detail::as_spectrum(detail::normalized_block(grid.at(by, bx), s.q_chroma)), hb);
        for (int ti = 0; ti < tc; ++ti)
          for (int tj = 0; tj < tc; ++tj)
            for (int u = 0; u < hb; ++u)
              for (int v = 0; v < hb; ++v)
                at(by * tc + ti, bx * tc + tj, off + u * hb + v) = g.at(ti, tj, u, v);
      }
  }
}

inline std::array<double, 2 * kBlockArea> normalized_qpair(const JpegSpectra& s) {
  std::array<double, 2 * kBlockArea> out{};
  const Mat8 ql = normalize_qtable(s.q_luma);
  const Mat8 qc = normalize_qtable(s.q_chroma);
  std::copy(ql.begin(), ql.end(), out.begin());
  std::copy(qc.begin(), qc.end(), out.begin() + kBlockArea);
  return out;
}

// All spectra must share padded dimensions.
inline ModelInput prepare_input(const std::vector<const JpegSpectra*>& batch, const ModelConfig& cfg) {
  if (batch.empty()) throw InvalidArgument("model: empty batch");
  cfg.validate();
  ModelInput in;
  in.n = static_cast<int>(batch.size());
  in.channels = cfg.embed_in();
  in.width = batch[0]->width;
  in.height = batch[0]->height;
  in.cells_w = batch[0]->padded_width() / cfg.cell();
  in.cells_h = batch[0]->padded_height() / cfg.cell();
  for (const JpegSpectra* s : batch) {
    if (s->width != in.width || s->height != in.height) {
      throw InvalidArgument("model: batch images differ in size");
    }
    append_cells(*s, cfg, in.cells);
    const auto q = normalized_qpair(*s);
    in.q.insert(in.q.end(), q.begin(), q.end());
  }
  return in;
}

inline ModelInput prepare_input(const JpegSpectra& s, const ModelConfig& cfg) {
  return prepare_input(std::vector<const JpegSpectra*>{&s}, cfg);
}

// ---- network stages --------------------------------------------------------

template <typename T>
ad::Tensor<T> to_tensor(ad::Shape shape, const std::vector<double>& v) {
  return ad::Tensor<T>::from(std::move(shape), std::vector<T>(v.begin(), v.end()));
}

template <typename T>
ad::Tensor<T> group_embed(const ad::Tensor<T>& cells, const ModelParams<T>& p) {
  if (cells.dim(-1) != p.config.embed_in()) {
    throw ad::ShapeError("group_embed: expected " + std::to_string(p.config.embed_in()) +
                         " channels per cell, got " + std::to_string(cells.dim(-1)));
  }
  return ad::linear(cells, p["embed.w"], p["embed.b"]);
}

template <typename T>
ad::Tensor<T> conv_layer(const ad::Tensor<T>& x, const ModelParams<T>& p, const std::string& name) {
  return ad::conv3x3(x, p[name + ".w"], p[name + ".b"]);
}

template <typename T>
ad::Tensor<T> encode_features(const ad::Tensor<T>& z0, const ModelParams<T>& p) {
  ad::Tensor<T> h = z0;
  for (int i = 0; i < p.config.n_res_blocks; ++i) {
    const std::string n = "res" + std::to_string(i);
    h = ad::add(h, conv_layer(ad::relu(conv_layer(h, p, n + ".conv1")), p, n + ".conv2"));
  }
  return ad::add(conv_layer(h, p, "body"), z0);
}

// Per-cell quantities the renderer needs. For the CCF variants `amp` holds
// h_c(z) (times h_q(Q) in the full model) and `phase` holds h_q(Q) for the
// Fourier variant; without CCF `amp` is z itself and `q` the raw table pair.
template <typename T>
struct CellHeads {
  ad::Tensor<T> amp;    // [N, Hc, Wc, K] or [N, Hc, Wc, C]
  ad::Tensor<T> fh;     // [N, Hc, Wc, K]
  ad::Tensor<T> fw;     // [N, Hc, Wc, K]
  ad::Tensor<T> phase;  // [N, 1, 1, K]
  ad::Tensor<T> q;      // [N, 1, 1, 128]
};

template <typename T>
CellHeads<T> compute_heads(const ad::Tensor<T>& z, const ad::Tensor<T>& q, const ModelParams<T>& p) {
  const ModelConfig& cfg = p.config;
  const int n = z.dim(0);
  CellHeads<T> h;
  if (!cfg.uses_ccf()) {
    h.amp = z;
    h.q = ad::reshape(q, {n, 1, 1, 2 * kBlockArea});
    return h;
  }
  const ad::Tensor<T> c =
      conv_layer(ad::relu(conv_layer(z, p, "hc.conv1")), p, "hc.conv2");
  const ad::Tensor<T> f =
      conv_layer(ad::relu(conv_layer(z, p, "hf.conv1")), p, "hf.conv2");
  h.fh = ad::slice(f, 3, 0, cfg.k);
  h.fw = ad::slice(f, 3, cfg.k, 2 * cfg.k);
  const ad::Tensor<T> qp = ad::reshape(ad::linear(q, p["hq.w"], p["hq.b"]), {n, 1, 1, cfg.k});
  if (cfg.ablation == Ablation::kFourier) {
    h.amp = c;
    h.phase = qp;
  } else {
    h.amp = ad::broadcast_mul(c, qp);
  }
  return h;
}

template <typename T>
ad::Tensor<T> delta_tensor(const BlockGrid& g, ad::Shape shape) {
  return to_tensor<T>(std::move(shape), g.delta);
}

namespace detail {
inline ad::Shape with_suffix(const ad::Shape& lead, std::initializer_list<int> tail) {
  ad::Shape s = lead;
  s.insert(s.end(), tail);
  return s;
}
}  // namespace detail

// features[..., i, j, k] = amp[..., k] cos(pi fh[..., k] dh_i) cos(pi fw[..., k] dw_j)
template <typename T>
ad::Tensor<T> ccf_features(const ad::Tensor<T>& amp, const ad::Tensor<T>& fh,
                           const ad::Tensor<T>& fw, const BlockGrid& g) {
  const int s = g.size();
  const int k = amp.dim(-1);
  ad::Shape lead(amp.shape().begin(), amp.shape().end() - 1);
  const ad::Shape cell = detail::with_suffix(lead, {1, 1, k});
  const T pi = static_cast<T>(std::numbers::pi);
  auto ch = ad::cos(ad::scale(ad::broadcast_mul(ad::reshape(fh, cell), delta_tensor<T>(g, {s, 1, 1})), pi));
  auto cw = ad::cos(ad::scale(ad::broadcast_mul(ad::reshape(fw, cell), delta_tensor<T>(g, {s, 1})), pi));
  return ad::broadcast_mul(ad::broadcast_mul(ch, cw), ad::reshape(amp, cell));
}

// C (.) [cos(pi(F.delta + h_q)); sin(pi(F.delta + h_q))]
template <typename T>
ad::Tensor<T> fourier_features(const ad::Tensor<T>& c, const ad::Tensor<T>& fh,
                               const ad::Tensor<T>& fw, const ad::Tensor<T>& phase,
                               const BlockGrid& g) {
  const int s = g.size();
  const int k = c.dim(-1);
  ad::Shape lead(c.shape().begin(), c.shape().end() - 1);
  const ad::Shape cell = detail::with_suffix(lead, {1, 1, k});
  auto ph = ad::broadcast_add(
      ad::broadcast_mul(ad::reshape(fh, cell), delta_tensor<T>(g, {s, 1, 1})),
      ad::broadcast_mul(ad::reshape(fw, cell), delta_tensor<T>(g, {s, 1})));
  ad::Shape pshape = phase.shape();
  pshape.insert(pshape.end() - 1, {1, 1});
  ph = ad::scale(ad::broadcast_add(ph, ad::reshape(phase, pshape)), static_cast<T>(std::numbers::pi));
  const auto cc = ad::reshape(c, cell);
  return ad::concat<T>({ad::broadcast_mul(ad::cos(ph), cc), ad::broadcast_mul(ad::sin(ph), cc)}, -1);
}

// Pointwise MLP over the last axis.
template <typename T>
ad::Tensor<T> decode_pixels(const ad::Tensor<T>& features, const ModelParams<T>& p) {
  ad::Tensor<T> h = features;
  for (int i = 0; i < 5; ++i) {
    const std::string n = "dec" + std::to_string(i);
    h = ad::linear(h, p[n + ".w"], p[n + ".b"]);
    if (i < 4) h = ad::relu(h);
  }
  return h;
}

// Decoder input for every cell position: [N, Hc, Wc, S, S, D].
template <typename T>
ad::Tensor<T> cell_features(const CellHeads<T>& h, const ModelParams<T>& p, const BlockGrid& g) {
  const ModelConfig& cfg = p.config;
  if (cfg.ablation == Ablation::kFourier) return fourier_features(h.amp, h.fh, h.fw, h.phase, g);
  if (cfg.uses_ccf()) return ccf_features(h.amp, h.fh, h.fw, g);
  const int n = h.amp.dim(0), ch = h.amp.dim(1), cw = h.amp.dim(2), c = h.amp.dim(3);
  const int s = g.size();
  std::vector<double> d;
  for (double a : g.delta)
    for (double b : g.delta) d.insert(d.end(), {a, b});
  auto z = ad::broadcast_to(ad::reshape(h.amp, {n, ch, cw, 1, 1, c}), {n, ch, cw, s, s, c});
  auto dd = ad::broadcast_to(to_tensor<T>({1, 1, 1, s, s, 2}, d), {n, ch, cw, s, s, 2});
  auto q = ad::broadcast_to(ad::reshape(h.q, {n, 1, 1, 1, 1, 2 * kBlockArea}),
                            {n, ch, cw, s, s, 2 * kBlockArea});
  return ad::concat<T>({z, dd, q}, -1);
}

// [N, Hc, Wc, S, S, 3] -> [N, Hc*S, Wc*S, 3]
template <typename T>
ad::Tensor<T> assemble(const ad::Tensor<T>& cells) {
  const int n = cells.dim(0), ch = cells.dim(1), cw = cells.dim(2), s = cells.dim(3);
  return ad::reshape(ad::permute(cells, {0, 1, 3, 2, 4, 5}), {n, ch * s, cw * s, 3});
}

template <typename T>
ad::Tensor<T> latent(const ModelInput& in, const ModelParams<T>& p) {
  if (in.channels != p.config.embed_in()) {
    throw InvalidArgument("model: input prepared for a different configuration");
  }
  auto cells = to_tensor<T>({in.n, in.cells_h, in.cells_w, in.channels}, in.cells);
  return encode_features(group_embed(cells, p), p);
}

template <typename T>
ad::Tensor<T> q_tensor(const ModelInput& in) {
  return to_tensor<T>({in.n, 2 * kBlockArea}, in.q);
}

// Whole-batch differentiable forward. Output [N, r*Hpad, r*Wpad, 3] in the
// [-0.5, 0.5] target convention, before clamping and cropping.
template <typename T>
ad::Tensor<T> forward_tensor(const ModelInput& in, const ModelParams<T>& p, int r = 1) {
  const BlockGrid g = make_block_grid(p.config.cell(), r);
  const auto z = latent(in, p);
  const auto heads = compute_heads(z, q_tensor<T>(in), p);
  return assemble(decode_pixels(cell_features(heads, p, g), p));
}

namespace detail {

template <typename T>
CellHeads<T> slice_rows(const CellHeads<T>& h, int begin, int end) {
  CellHeads<T> out = h;
  out.amp = ad::slice(h.amp, 1, begin, end);
  if (h.fh.defined()) out.fh = ad::slice(h.fh, 1, begin, end);
  if (h.fw.defined()) out.fw = ad::slice(h.fw, 1, begin, end);
  return out;
}

inline uint8_t to_pixel(double v) {
  return static_cast<uint8_t>(std::clamp(std::round((v + 0.5) * 255.0), 0.0, 255.0));
}

}  // namespace detail

// Decodes one image at scale r. Cell rows are rendered in chunks so memory
// stays bounded for large inputs.
template <typename T>
RgbImage forward(const JpegSpectra& spectra, const ModelParams<T>& p, int r = 1) {
  if (r < 1) throw InvalidArgument("model: scale must be >= 1");
  ad::NoGradGuard no_grad;
  const ModelInput in = prepare_input(spectra, p.config);
  const BlockGrid g = make_block_grid(p.config.cell(), r);
  const auto heads = compute_heads(latent(in, p), q_tensor<T>(in), p);
  const int s = g.size();
  const int out_w = in.width * r, out_h = in.height * r;
  RgbImage img(out_w, out_h);
  const std::size_t per_row = static_cast<std::size_t>(in.cells_w) * s * s;
  const int rows = std::max<int>(1, static_cast<int>(65536 / std::max<std::size_t>(per_row, 1)));
  for (int r0 = 0; r0 < in.cells_h; r0 += rows) {
    const int r1 = std::min(in.cells_h, r0 + rows);
    const auto pix = assemble(decode_pixels(cell_features(detail::slice_rows(heads, r0, r1), p, g), p));
    const int ph = pix.dim(1), pw = pix.dim(2);
    auto v = pix.values();
    for (int y = 0; y < ph; ++y) {
      const int oy = r0 * s + y;
      if (oy >= out_h) break;
      for (int x = 0; x < std::min(pw, out_w); ++x)
        for (int c = 0; c < 3; ++c)
          img.at(oy, x, c) = detail::to_pixel(v[(static_cast<std::size_t>(y) * pw + x) * 3 + c]);
    }
  }
  return img;
}

// ---- spectrum visualization ------------------------------------------------

constexpr int kVizBins = 51;

struct SpectrumViz {
  struct Entry {
    double fh, fw, amplitude;
  };
  std::vector<Entry> entries;
  std::vector<double> raster = std::vector<double>(kVizBins * kVizBins, 0.0);  // [bin_h][bin_w]

  double at(int bh, int bw) const { return raster[static_cast<std::size_t>(bh) * kVizBins + bw]; }
};

inline int viz_bin(double f, double scale) {
  return static_cast<int>(std::clamp(std::round(std::abs(f) * scale), 0.0, kVizBins - 1.0));
}

inline SpectrumViz spectrum_viz(std::span<const double> amp, std::span<const double> fh,
                                std::span<const double> fw, double scale = 25.0) {
  SpectrumViz viz;
  for (std::size_t k = 0; k < amp.size(); ++k) {
    viz.entries.push_back({fh[k], fw[k], amp[k]});
    viz.raster[static_cast<std::size_t>(viz_bin(fh[k], scale)) * kVizBins + viz_bin(fw[k], scale)] +=
        std::abs(amp[k]);
  }
  return viz;
}

// Estimated frequencies and amplitudes of one latent cell.
template <typename T>
SpectrumViz export_spectrum_viz(const JpegSpectra& spectra, const ModelParams<T>& p, int cell_y,
                                int cell_x, double scale = 25.0) {
  if (!p.config.uses_ccf()) throw InvalidArgument("spectrum: model variant has no frequency estimator");
  ad::NoGradGuard no_grad;
  const ModelInput in = prepare_input(spectra, p.config);
  if (cell_y < 0 || cell_x < 0 || cell_y >= in.cells_h || cell_x >= in.cells_w) {
    throw InvalidArgument("spectrum: cell (" + std::to_string(cell_y) + "," +
                          std::to_string(cell_x) + ") outside the " + std::to_string(in.cells_h) +
                          "x" + std::to_string(in.cells_w) + " latent grid");
  }
  const auto h = compute_heads(latent(in, p), q_tensor<T>(in), p);
  const int k = p.config.k;
  const std::size_t off = (static_cast<std::size_t>(cell_y) * in.cells_w + cell_x) * k;
  std::vector<double> a(k), fh(k), fw(k);
  for (int i = 0; i < k; ++i) {
    a[i] = h.amp.values()[off + i];
    fh[i] = h.fh.values()[off + i];
    fw[i] = h.fw.values()[off + i];
  }
  return spectrum_viz(a, fh, fw, scale);
}

}  // namespace sjdec

#endif  // SJDEC_MODEL_HPP_
