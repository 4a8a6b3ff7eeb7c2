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

#ifndef SJDEC_CHECKPOINT_HPP_
#define SJDEC_CHECKPOINT_HPP_

// Checkpoint file layout (all integers little-endian):
//   "SJDC" u32 version
//   i32 b, c, k, n_res_blocks, hidden, ablation
//   i64 step
//   u32 array count, then per array:
//     u32 name length, name bytes, u32 rank, i32 extents[rank],
//     u64 byte length, float32 values
//   u8 has_optimizer; if set: f64 lr, beta1, beta2, eps, i64 adam step,
//     then first and second moments per array in the same order (u64 byte
//     length + float32 values each).

#include <bit>
#include <cstdint>
#include <cstring>
#include <optional>
#include <string>
#include <vector>

#include "sjdec/image.hpp"
#include "sjdec/model.hpp"
#include "sjdec/optim.hpp"

namespace sjdec {

enum class CheckpointErrorKind { kFormat, kVersion, kTruncated, kShapeMismatch };

inline const char* to_string(CheckpointErrorKind k) {
  switch (k) {
    case CheckpointErrorKind::kFormat: return "format";
    case CheckpointErrorKind::kVersion: return "version";
    case CheckpointErrorKind::kTruncated: return "truncated";
    case CheckpointErrorKind::kShapeMismatch: return "shape mismatch";
  }
  return "?";
}

class CheckpointError : public Error {
 public:
  CheckpointError(CheckpointErrorKind kind, const std::string& what)
      : Error(std::string("checkpoint ") + to_string(kind) + ": " + what), kind_(kind) {}
  CheckpointErrorKind kind() const { return kind_; }

 private:
  CheckpointErrorKind kind_;
};

constexpr uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  ModelParams<float> params;
  std::optional<ad::AdamState<float>> adam;
  int64_t step = 0;
};

namespace detail {

class ByteWriter {
 public:
  template <typename U>
  void put(U v) {
    using Raw = std::conditional_t<sizeof(U) == 8, uint64_t,
                                   std::conditional_t<sizeof(U) == 4, uint32_t, uint8_t>>;
    const Raw r = std::bit_cast<Raw>(v);
    for (std::size_t i = 0; i < sizeof(U); ++i) out.push_back(static_cast<uint8_t>(r >> (8 * i)));
  }
  void put_floats(std::span<const float> v) {
    put<uint64_t>(v.size() * 4);
    for (float f : v) put(f);
  }
  std::vector<uint8_t> out;
};

class ByteReader {
 public:
  explicit ByteReader(std::span<const uint8_t> d) : d_(d) {}

  template <typename U>
  U get() {
    using Raw = std::conditional_t<sizeof(U) == 8, uint64_t,
                                   std::conditional_t<sizeof(U) == 4, uint32_t, uint8_t>>;
    need(sizeof(U));
    Raw r = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i) r |= static_cast<Raw>(static_cast<Raw>(d_[pos_ + i]) << (8 * i));
    pos_ += sizeof(U);
    return std::bit_cast<U>(r);
  }
  std::string get_string(std::size_t n) {
    need(n);
    std::string s(reinterpret_cast<const char*>(d_.data() + pos_), n);
    pos_ += n;
    return s;
  }
  // Reads a length-prefixed float block that must hold exactly `count` values.
  void get_floats(std::span<float> dst, const std::string& what) {
    const auto bytes = get<uint64_t>();
    if (bytes != dst.size() * 4) {
      throw CheckpointError(CheckpointErrorKind::kShapeMismatch,
                            what + ": " + std::to_string(bytes) + " bytes for " +
                                std::to_string(dst.size()) + " values");
    }
    for (auto& f : dst) f = get<float>();
  }
  bool done() const { return pos_ == d_.size(); }

 private:
  void need(std::size_t n) const {
    if (d_.size() - pos_ < n) {
      throw CheckpointError(CheckpointErrorKind::kTruncated,
                            "unexpected end of data at byte " + std::to_string(pos_));
    }
  }
  std::span<const uint8_t> d_;
  std::size_t pos_ = 0;
};

}  // namespace detail

inline std::vector<uint8_t> serialize_checkpoint(const Checkpoint& ck) {
  detail::ByteWriter w;
  for (char c : {'S', 'J', 'D', 'C'}) w.put(static_cast<uint8_t>(c));
  w.put<uint32_t>(kCheckpointVersion);
  const ModelConfig& c = ck.params.config;
  for (int v : {c.b, c.c, c.k, c.n_res_blocks, c.hidden, static_cast<int>(c.ablation)}) w.put<int32_t>(v);
  w.put<int64_t>(ck.step);
  w.put<uint32_t>(static_cast<uint32_t>(ck.params.entries.size()));
  for (const auto& [name, t] : ck.params.entries) {
    w.put<uint32_t>(static_cast<uint32_t>(name.size()));
    for (char ch : name) w.put(static_cast<uint8_t>(ch));
    w.put<uint32_t>(static_cast<uint32_t>(t.rank()));
    for (int d : t.shape()) w.put<int32_t>(d);
    w.put_floats(t.values());
  }
  w.put<uint8_t>(ck.adam ? 1 : 0);
  if (ck.adam) {
    const auto& a = *ck.adam;
    for (double v : {a.lr, a.beta1, a.beta2, a.eps}) w.put(v);
    w.put<int64_t>(a.step);
    for (std::size_t i = 0; i < ck.params.entries.size(); ++i) {
      const std::size_t n = ck.params.entries[i].second.numel();
      const bool has = i < a.m.size() && a.m[i].size() == n && a.v[i].size() == n;
      const std::vector<float> zero(has ? 0 : n, 0.0f);
      w.put_floats(has ? std::span<const float>(a.m[i]) : std::span<const float>(zero));
      w.put_floats(has ? std::span<const float>(a.v[i]) : std::span<const float>(zero));
    }
  }
  return std::move(w.out);
}

// When `expected` is given, a file written for any other configuration is
// rejected as a shape mismatch.
inline Checkpoint deserialize_checkpoint(std::span<const uint8_t> bytes,
                                         const std::optional<ModelConfig>& expected = std::nullopt) {
  using K = CheckpointErrorKind;
  if (bytes.size() < 4 || std::memcmp(bytes.data(), "SJDC", 4) != 0) {
    throw CheckpointError(K::kFormat, "missing SJDC magic");
  }
  detail::ByteReader r(bytes.subspan(4));
  const auto version = r.get<uint32_t>();
  if (version != kCheckpointVersion) {
    throw CheckpointError(K::kVersion, "file version " + std::to_string(version) +
                                           ", reader supports " +
                                           std::to_string(kCheckpointVersion));
  }
  ModelConfig cfg;
  cfg.b = r.get<int32_t>();
  cfg.c = r.get<int32_t>();
  cfg.k = r.get<int32_t>();
  cfg.n_res_blocks = r.get<int32_t>();
  cfg.hidden = r.get<int32_t>();
  const int abl = r.get<int32_t>();
  if (abl < 0 || abl > static_cast<int>(Ablation::kFourier)) {
    throw CheckpointError(K::kFormat, "unknown ablation id " + std::to_string(abl));
  }
  cfg.ablation = static_cast<Ablation>(abl);
  try {
    cfg.validate();
  } catch (const InvalidArgument& e) {
    throw CheckpointError(K::kFormat, e.what());
  }
  if (expected && !(*expected == cfg)) {
    throw CheckpointError(K::kShapeMismatch, "file holds a different model configuration");
  }
  Checkpoint ck;
  ck.params = make_params<float>(cfg);
  ck.step = r.get<int64_t>();
  const auto count = r.get<uint32_t>();
  if (count != ck.params.entries.size()) {
    throw CheckpointError(K::kShapeMismatch, std::to_string(count) + " arrays, configuration has " +
                                                 std::to_string(ck.params.entries.size()));
  }
  for (auto& [name, t] : ck.params.entries) {
    const std::string got = r.get_string(r.get<uint32_t>());
    if (got != name) throw CheckpointError(K::kShapeMismatch, "expected array " + name + ", found " + got);
    const auto rank = r.get<uint32_t>();
    if (rank > 8) throw CheckpointError(K::kFormat, name + ": implausible rank");
    ad::Shape shape(rank);
    for (auto& d : shape) d = r.get<int32_t>();
    if (shape != t.shape()) {
      throw CheckpointError(K::kShapeMismatch,
                            name + ": " + ad::to_string(shape) + " vs " + ad::to_string(t.shape()));
    }
    r.get_floats(t.values(), name);
  }
  if (r.get<uint8_t>()) {
    ad::AdamState<float> a;
    a.lr = r.get<double>();
    a.beta1 = r.get<double>();
    a.beta2 = r.get<double>();
    a.eps = r.get<double>();
    a.step = r.get<int64_t>();
    for (const auto& [name, t] : ck.params.entries) {
      a.m.emplace_back(t.numel());
      a.v.emplace_back(t.numel());
      r.get_floats(a.m.back(), name + " first moment");
      r.get_floats(a.v.back(), name + " second moment");
    }
    ck.adam = std::move(a);
  }
  if (!r.done()) throw CheckpointError(K::kFormat, "trailing bytes after checkpoint");
  return ck;
}

inline void save_checkpoint(const Checkpoint& ck, const std::string& path) {
  write_file(path, serialize_checkpoint(ck));
}

inline Checkpoint load_checkpoint(const std::string& path,
                                  const std::optional<ModelConfig>& expected = std::nullopt) {
  return deserialize_checkpoint(read_file(path), expected);
}

}  // namespace sjdec

#endif  // SJDEC_CHECKPOINT_HPP_
