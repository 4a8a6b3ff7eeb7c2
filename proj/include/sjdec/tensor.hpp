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

#ifndef SJDEC_TENSOR_HPP_
#define SJDEC_TENSOR_HPP_

// Minimal reverse-mode differentiation over dense row-major arrays. Only the
// operators the JDEC network needs are provided. Tensor<float> is the
// training precision; Tensor<double> is used for gradient verification.

#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "sjdec/common.hpp"

namespace sjdec::ad {

using Shape = std::vector<int>;

class ShapeError : public InvalidArgument {
 public:
  using InvalidArgument::InvalidArgument;
};

inline std::string to_string(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << ']';
  return os.str();
}

inline std::size_t numel(const Shape& s) {
  std::size_t n = 1;
  for (int d : s) {
    if (d < 0) throw ShapeError("negative extent in shape " + to_string(s));
    n *= static_cast<std::size_t>(d);
  }
  return n;
}

[[noreturn]] inline void shape_mismatch(const char* op, const Shape& a, const Shape& b) {
  throw ShapeError(std::string(op) + ": shape mismatch " + to_string(a) + " vs " + to_string(b));
}

template <typename T>
struct Node {
  Shape shape;
  std::vector<T> value;
  std::vector<T> grad;  // allocated lazily
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward;

  std::vector<T>& ensure_grad() {
    if (grad.size() != value.size()) grad.assign(value.size(), T(0));
    return grad;
  }
};

template <typename T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    auto n = std::make_shared<Node<T>>();
    n->value.assign(ad::numel(shape), T(0));
    n->shape = std::move(shape);
    n->requires_grad = requires_grad;
    return Tensor(std::move(n));
  }

  static Tensor from(Shape shape, std::vector<T> values, bool requires_grad = false) {
    if (values.size() != ad::numel(shape)) {
      throw ShapeError("tensor: " + std::to_string(values.size()) + " values for shape " +
                       to_string(shape));
    }
    auto n = std::make_shared<Node<T>>();
    n->shape = std::move(shape);
    n->value = std::move(values);
    n->requires_grad = requires_grad;
    return Tensor(std::move(n));
  }

  static Tensor scalar(T v, bool requires_grad = false) { return from({}, {v}, requires_grad); }

  bool defined() const { return static_cast<bool>(n_); }
  const Shape& shape() const { return n_->shape; }
  int dim(int i) const { return n_->shape[static_cast<std::size_t>(i < 0 ? i + rank() : i)]; }
  int rank() const { return static_cast<int>(n_->shape.size()); }
  std::size_t numel() const { return n_->value.size(); }

  std::span<T> values() { return n_->value; }
  std::span<const T> values() const { return n_->value; }
  T item() const {
    if (numel() != 1) throw ShapeError("item() on tensor of shape " + to_string(shape()));
    return n_->value[0];
  }

  bool requires_grad() const { return n_->requires_grad; }
  bool has_grad() const { return n_->grad.size() == n_->value.size() && !n_->value.empty(); }
  std::span<const T> grad() const { return n_->grad; }
  std::span<T> grad_mut() { return n_->ensure_grad(); }
  void zero_grad() { n_->grad.clear(); }

  Node<T>* node() const { return n_.get(); }
  const std::shared_ptr<Node<T>>& ptr() const { return n_; }

  explicit Tensor(std::shared_ptr<Node<T>> n) : n_(std::move(n)) {}

 private:
  std::shared_ptr<Node<T>> n_;
};

inline bool& grad_enabled_flag() {
  thread_local bool enabled = true;
  return enabled;
}

inline bool grad_enabled() { return grad_enabled_flag(); }

// Disables graph construction on this thread for the guard's lifetime.
class NoGradGuard {
 public:
  NoGradGuard() : prev_(grad_enabled_flag()) { grad_enabled_flag() = false; }
  ~NoGradGuard() { grad_enabled_flag() = prev_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool prev_;
};

namespace detail {

// When set, piecewise ops fold the side of every kink they evaluate into
// this hash, so callers can tell whether two forwards took the same branches.
inline std::uint64_t*& kink_signature() {
  thread_local std::uint64_t* sig = nullptr;
  return sig;
}

inline void record_kink(bool side) {
  if (std::uint64_t* s = kink_signature()) *s = (*s ^ (side ? 1u : 2u)) * 1099511628211ull;
}

// Output node of an op. Parents are retained only when a gradient can flow.
template <typename T>
Tensor<T> make_result(Shape shape, std::vector<T> value,
                      std::initializer_list<const Tensor<T>*> inputs,
                      std::function<void(Node<T>&)> backward) {
  auto n = std::make_shared<Node<T>>();
  n->shape = std::move(shape);
  n->value = std::move(value);
  if (grad_enabled())
    for (const Tensor<T>* in : inputs) n->requires_grad = n->requires_grad || in->requires_grad();
  if (n->requires_grad) {
    for (const Tensor<T>* in : inputs) n->parents.push_back(in->ptr());
    n->backward = std::move(backward);
  }
  return Tensor<T>(std::move(n));
}

template <typename T>
Tensor<T> make_result_n(Shape shape, std::vector<T> value, const std::vector<Tensor<T>>& inputs,
                        std::function<void(Node<T>&)> backward) {
  auto n = std::make_shared<Node<T>>();
  n->shape = std::move(shape);
  n->value = std::move(value);
  if (grad_enabled())
    for (const auto& in : inputs) n->requires_grad = n->requires_grad || in.requires_grad();
  if (n->requires_grad) {
    for (const auto& in : inputs) n->parents.push_back(in.ptr());
    n->backward = std::move(backward);
  }
  return Tensor<T>(std::move(n));
}

template <typename T>
bool wants_grad(const Node<T>& out, std::size_t parent) {
  return out.parents[parent]->requires_grad;
}

// out[m, :] = bias + a[m, :] . w^T, with a [rows, k] and w [n, k].
template <typename T>
void matmul_nt(std::span<const T> a, std::span<const T> w, std::span<const T> bias,
               std::size_t rows, std::size_t k, std::size_t n, std::span<T> out) {
  // Transposed weights make the inner loop a contiguous axpy over outputs.
  std::vector<T> wt(k * n);
  for (std::size_t o = 0; o < n; ++o)
    for (std::size_t i = 0; i < k; ++i) wt[i * n + o] = w[o * k + i];
  parallel_for(rows, [&](std::size_t b, std::size_t e) {
    for (std::size_t m = b; m < e; ++m) {
      T* dst = out.data() + m * n;
      if (!bias.empty()) {
        for (std::size_t o = 0; o < n; ++o) dst[o] = bias[o];
      } else {
        for (std::size_t o = 0; o < n; ++o) dst[o] = T(0);
      }
      const T* src = a.data() + m * k;
      for (std::size_t i = 0; i < k; ++i) {
        const T s = src[i];
        if (s == T(0)) continue;
        const T* wr = wt.data() + i * n;
        for (std::size_t o = 0; o < n; ++o) dst[o] += s * wr[o];
      }
    }
  }, 64);
}

// Gradients of matmul_nt given g = dL/dout [rows, n].
template <typename T>
void matmul_nt_backward(std::span<const T> a, std::span<const T> w, std::span<const T> g,
                        std::size_t rows, std::size_t k, std::size_t n, T* ga, T* gw, T* gb) {
  if (ga) {
    parallel_for(rows, [&](std::size_t b, std::size_t e) {
      for (std::size_t m = b; m < e; ++m) {
        T* dst = ga + m * k;
        const T* gr = g.data() + m * n;
        for (std::size_t o = 0; o < n; ++o) {
          const T s = gr[o];
          if (s == T(0)) continue;
          const T* wr = w.data() + o * k;
          for (std::size_t i = 0; i < k; ++i) dst[i] += s * wr[i];
        }
      }
    }, 64);
  }
  if (gw) {
    parallel_for(n, [&](std::size_t b, std::size_t e) {
      for (std::size_t m = 0; m < rows; ++m) {
        const T* src = a.data() + m * k;
        for (std::size_t o = b; o < e; ++o) {
          const T s = g[m * n + o];
          if (s == T(0)) continue;
          T* dst = gw + o * k;
          for (std::size_t i = 0; i < k; ++i) dst[i] += s * src[i];
        }
      }
    });
  }
  if (gb) {
    for (std::size_t m = 0; m < rows; ++m)
      for (std::size_t o = 0; o < n; ++o) gb[o] += g[m * n + o];
  }
}

// Right-aligned broadcast of `in` against `out`: per-axis strides of `in`
// laid out on out's axes, zero where `in` is broadcast.
inline std::vector<std::size_t> broadcast_strides(const Shape& in, const Shape& out) {
  std::vector<std::size_t> strides(out.size(), 0);
  std::size_t s = 1;
  const int offset = static_cast<int>(out.size()) - static_cast<int>(in.size());
  for (int i = static_cast<int>(in.size()) - 1; i >= 0; --i) {
    strides[static_cast<std::size_t>(i + offset)] = in[i] == 1 ? 0 : s;
    s *= static_cast<std::size_t>(in[i]);
  }
  return strides;
}

inline Shape broadcast_shape(const char* op, const Shape& a, const Shape& b) {
  const std::size_t r = std::max(a.size(), b.size());
  Shape out(r);
  for (std::size_t i = 0; i < r; ++i) {
    const int da = i + a.size() >= r ? a[i + a.size() - r] : 1;
    const int db = i + b.size() >= r ? b[i + b.size() - r] : 1;
    if (da != db && da != 1 && db != 1) shape_mismatch(op, a, b);
    out[i] = std::max(da, db);
  }
  return out;
}

// Visits every output index with the matching offsets into a and b.
template <typename Fn>
void for_each_broadcast(const Shape& out, const std::vector<std::size_t>& sa,
                        const std::vector<std::size_t>& sb, Fn&& fn) {
  const std::size_t total = numel(out);
  if (total == 0) return;
  const std::size_t r = out.size();
  if (r == 0) {
    fn(std::size_t{0}, std::size_t{0}, std::size_t{0});
    return;
  }
  std::vector<int> idx(r, 0);
  std::size_t oa = 0, ob = 0;
  const int inner = out[r - 1];
  const std::size_t ia = sa[r - 1], ib = sb[r - 1];
  for (std::size_t i = 0; i < total; i += static_cast<std::size_t>(inner)) {
    std::size_t pa = oa, pb = ob;
    for (int j = 0; j < inner; ++j, pa += ia, pb += ib) fn(i + static_cast<std::size_t>(j), pa, pb);
    // Advance the outer odometer.
    for (int d = static_cast<int>(r) - 2; d >= 0; --d) {
      if (++idx[static_cast<std::size_t>(d)] < out[static_cast<std::size_t>(d)]) {
        oa += sa[static_cast<std::size_t>(d)];
        ob += sb[static_cast<std::size_t>(d)];
        break;
      }
      oa -= sa[static_cast<std::size_t>(d)] * static_cast<std::size_t>(out[static_cast<std::size_t>(d)] - 1);
      ob -= sb[static_cast<std::size_t>(d)] * static_cast<std::size_t>(out[static_cast<std::size_t>(d)] - 1);
      idx[static_cast<std::size_t>(d)] = 0;
    }
  }
}

template <typename T, typename Fwd, typename DA, typename DB>
Tensor<T> broadcast_binary(const char* op, const Tensor<T>& a, const Tensor<T>& b, Fwd fwd, DA da,
                           DB db) {
  Shape out = broadcast_shape(op, a.shape(), b.shape());
  auto sa = broadcast_strides(a.shape(), out);
  auto sb = broadcast_strides(b.shape(), out);
  std::vector<T> v(numel(out));
  auto av = a.values();
  auto bv = b.values();
  for_each_broadcast(out, sa, sb, [&](std::size_t i, std::size_t pa, std::size_t pb) {
    v[i] = fwd(av[pa], bv[pb]);
  });
  return make_result<T>(out, std::move(v), {&a, &b}, [sa, sb, da, db](Node<T>& o) {
    Node<T>& na = *o.parents[0];
    Node<T>& nb = *o.parents[1];
    T* ga = na.requires_grad ? na.ensure_grad().data() : nullptr;
    T* gb = nb.requires_grad ? nb.ensure_grad().data() : nullptr;
    const auto& avv = na.value;
    const auto& bvv = nb.value;
    for_each_broadcast(o.shape, sa, sb, [&](std::size_t i, std::size_t pa, std::size_t pb) {
      const T g = o.grad[i];
      if (ga) ga[pa] += g * da(avv[pa], bvv[pb]);
      if (gb) gb[pb] += g * db(avv[pa], bvv[pb]);
    });
  });
}

template <typename T, typename Fwd, typename Deriv>
Tensor<T> unary(const Tensor<T>& x, Fwd fwd, Deriv deriv) {
  std::vector<T> v(x.numel());
  auto xv = x.values();
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = fwd(xv[i]);
  return make_result<T>(x.shape(), std::move(v), {&x}, [deriv](Node<T>& o) {
    Node<T>& p = *o.parents[0];
    auto& g = p.ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += o.grad[i] * deriv(p.value[i], o.value[i]);
  });
}

}  // namespace detail

// ---- elementwise -----------------------------------------------------------

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape() != b.shape()) shape_mismatch("add", a.shape(), b.shape());
  std::vector<T> v(a.numel());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = a.values()[i] + b.values()[i];
  return detail::make_result<T>(a.shape(), std::move(v), {&a, &b}, [](Node<T>& o) {
    for (auto& p : o.parents) {
      if (!p->requires_grad) continue;
      auto& g = p->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += o.grad[i];
    }
  });
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape() != b.shape()) shape_mismatch("sub", a.shape(), b.shape());
  std::vector<T> v(a.numel());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = a.values()[i] - b.values()[i];
  return detail::make_result<T>(a.shape(), std::move(v), {&a, &b}, [](Node<T>& o) {
    for (std::size_t k = 0; k < 2; ++k) {
      auto& p = o.parents[k];
      if (!p->requires_grad) continue;
      auto& g = p->ensure_grad();
      const T sign = k == 0 ? T(1) : T(-1);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += sign * o.grad[i];
    }
  });
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape() != b.shape()) shape_mismatch("mul", a.shape(), b.shape());
  std::vector<T> v(a.numel());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = a.values()[i] * b.values()[i];
  return detail::make_result<T>(a.shape(), std::move(v), {&a, &b}, [](Node<T>& o) {
    Node<T>& na = *o.parents[0];
    Node<T>& nb = *o.parents[1];
    if (na.requires_grad) {
      auto& g = na.ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += o.grad[i] * nb.value[i];
    }
    if (nb.requires_grad) {
      auto& g = nb.ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += o.grad[i] * na.value[i];
    }
  });
}

// Elementwise product with numpy-style broadcasting.
template <typename T>
Tensor<T> broadcast_mul(const Tensor<T>& a, const Tensor<T>& b) {
  return detail::broadcast_binary<T>(
      "broadcast_mul", a, b, [](T x, T y) { return x * y; }, [](T, T y) { return y; },
      [](T x, T) { return x; });
}

template <typename T>
Tensor<T> broadcast_add(const Tensor<T>& a, const Tensor<T>& b) {
  return detail::broadcast_binary<T>(
      "broadcast_add", a, b, [](T x, T y) { return x + y; }, [](T, T) { return T(1); },
      [](T, T) { return T(1); });
}

template <typename T>
Tensor<T> scale(const Tensor<T>& x, T c) {
  return detail::unary<T>(x, [c](T v) { return c * v; }, [c](T, T) { return c; });
}

template <typename T>
Tensor<T> add_scalar(const Tensor<T>& x, T c) {
  return detail::unary<T>(x, [c](T v) { return v + c; }, [](T, T) { return T(1); });
}

template <typename T>
Tensor<T> relu(const Tensor<T>& x) {
  if (detail::kink_signature())
    for (T v : x.values()) detail::record_kink(v > T(0));
  return detail::unary<T>(
      x, [](T v) { return v > T(0) ? v : T(0); }, [](T v, T) { return v > T(0) ? T(1) : T(0); });
}

template <typename T>
Tensor<T> cos(const Tensor<T>& x) {
  return detail::unary<T>(
      x, [](T v) { return std::cos(v); }, [](T v, T) { return -std::sin(v); });
}

template <typename T>
Tensor<T> sin(const Tensor<T>& x) {
  return detail::unary<T>(
      x, [](T v) { return std::sin(v); }, [](T v, T) { return std::cos(v); });
}

// ---- layers ----------------------------------------------------------------

// x [..., in], w [out, in], b [out] (or undefined) -> [..., out]
template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b) {
  if (x.rank() < 1 || w.rank() != 2 || x.dim(-1) != w.dim(1)) {
    shape_mismatch("linear", x.shape(), w.shape());
  }
  const auto k = static_cast<std::size_t>(w.dim(1));
  const auto n = static_cast<std::size_t>(w.dim(0));
  if (b.defined() && (b.rank() != 1 || static_cast<std::size_t>(b.dim(0)) != n)) {
    shape_mismatch("linear(bias)", w.shape(), b.shape());
  }
  const std::size_t rows = x.numel() / std::max<std::size_t>(k, 1);
  Shape out_shape = x.shape();
  out_shape.back() = static_cast<int>(n);
  std::vector<T> v(rows * n);
  detail::matmul_nt<T>(x.values(), w.values(),
                       b.defined() ? b.values() : std::span<const T>{}, rows, k, n, v);
  auto backward = [rows, k, n](Node<T>& o) {
    Node<T>& nx = *o.parents[0];
    Node<T>& nw = *o.parents[1];
    Node<T>* nb = o.parents.size() > 2 ? o.parents[2].get() : nullptr;
    detail::matmul_nt_backward<T>(nx.value, nw.value, o.grad, rows, k, n,
                                  nx.requires_grad ? nx.ensure_grad().data() : nullptr,
                                  nw.requires_grad ? nw.ensure_grad().data() : nullptr,
                                  nb && nb->requires_grad ? nb->ensure_grad().data() : nullptr);
  };
  if (b.defined()) return detail::make_result<T>(out_shape, std::move(v), {&x, &w, &b}, backward);
  return detail::make_result<T>(out_shape, std::move(v), {&x, &w}, backward);
}

namespace detail {

// Gathers 3x3 zero-padded neighborhoods of an NHWC tensor into rows of
// length 9*C ordered (ky, kx, c).
template <typename T>
std::vector<T> im2col3x3(std::span<const T> x, int n, int h, int w, int c) {
  const std::size_t row = 9u * static_cast<std::size_t>(c);
  std::vector<T> cols(static_cast<std::size_t>(n) * h * w * row, T(0));
  parallel_for(static_cast<std::size_t>(n) * h, [&](std::size_t b, std::size_t e) {
    for (std::size_t ny = b; ny < e; ++ny) {
      const int bi = static_cast<int>(ny) / h;
      const int y = static_cast<int>(ny) % h;
      for (int xx = 0; xx < w; ++xx) {
        T* dst = cols.data() + ((ny * w) + static_cast<std::size_t>(xx)) * row;
        for (int ky = 0; ky < 3; ++ky) {
          const int sy = y + ky - 1;
          if (sy < 0 || sy >= h) continue;
          for (int kx = 0; kx < 3; ++kx) {
            const int sx = xx + kx - 1;
            if (sx < 0 || sx >= w) continue;
            const T* src = x.data() + ((static_cast<std::size_t>(bi) * h + sy) * w + sx) * c;
            std::copy(src, src + c, dst + (ky * 3 + kx) * c);
          }
        }
      }
    }
  });
  return cols;
}

template <typename T>
void col2im3x3_add(std::span<const T> cols, int n, int h, int w, int c, T* gx) {
  const std::size_t row = 9u * static_cast<std::size_t>(c);
  // Gather form: each input pixel sums the column entries that read it, so
  // rows of the output are independent.
  parallel_for(static_cast<std::size_t>(n) * h, [&](std::size_t b, std::size_t e) {
    for (std::size_t ny = b; ny < e; ++ny) {
      const int bi = static_cast<int>(ny) / h;
      const int sy = static_cast<int>(ny) % h;
      for (int sx = 0; sx < w; ++sx) {
        T* dst = gx + ((static_cast<std::size_t>(bi) * h + sy) * w + sx) * c;
        for (int ky = 0; ky < 3; ++ky) {
          const int y = sy - ky + 1;
          if (y < 0 || y >= h) continue;
          for (int kx = 0; kx < 3; ++kx) {
            const int xx = sx - kx + 1;
            if (xx < 0 || xx >= w) continue;
            const T* src = cols.data() +
                           ((static_cast<std::size_t>(bi) * h + y) * w + xx) * row +
                           (ky * 3 + kx) * c;
            for (int ci = 0; ci < c; ++ci) dst[ci] += src[ci];
          }
        }
      }
    }
  });
}

}  // namespace detail

// Same-padded stride-1 3x3 convolution. x [N,H,W,Cin], w [Cout,3,3,Cin],
// b [Cout] -> [N,H,W,Cout].
template <typename T>
Tensor<T> conv3x3(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b) {
  if (x.rank() != 4 || w.rank() != 4 || w.dim(1) != 3 || w.dim(2) != 3 || w.dim(3) != x.dim(3)) {
    shape_mismatch("conv3x3", x.shape(), w.shape());
  }
  const int n = x.dim(0), h = x.dim(1), wd = x.dim(2), c = x.dim(3);
  const auto cout = static_cast<std::size_t>(w.dim(0));
  if (b.defined() && (b.rank() != 1 || static_cast<std::size_t>(b.dim(0)) != cout)) {
    shape_mismatch("conv3x3(bias)", w.shape(), b.shape());
  }
  const std::size_t rows = static_cast<std::size_t>(n) * h * wd;
  const std::size_t k = 9u * static_cast<std::size_t>(c);
  auto cols = std::make_shared<std::vector<T>>(detail::im2col3x3<T>(x.values(), n, h, wd, c));
  std::vector<T> v(rows * cout);
  detail::matmul_nt<T>(*cols, w.values(), b.defined() ? b.values() : std::span<const T>{}, rows,
                       k, cout, v);
  auto backward = [cols, n, h, wd, c, rows, k, cout](Node<T>& o) {
    Node<T>& nx = *o.parents[0];
    Node<T>& nw = *o.parents[1];
    Node<T>* nb = o.parents.size() > 2 ? o.parents[2].get() : nullptr;
    std::vector<T> gcols;
    if (nx.requires_grad) gcols.assign(rows * k, T(0));
    detail::matmul_nt_backward<T>(*cols, nw.value, o.grad, rows, k, cout,
                                  nx.requires_grad ? gcols.data() : nullptr,
                                  nw.requires_grad ? nw.ensure_grad().data() : nullptr,
                                  nb && nb->requires_grad ? nb->ensure_grad().data() : nullptr);
    if (nx.requires_grad) detail::col2im3x3_add<T>(gcols, n, h, wd, c, nx.ensure_grad().data());
  };
  Shape out{n, h, wd, static_cast<int>(cout)};
  if (b.defined()) return detail::make_result<T>(out, std::move(v), {&x, &w, &b}, backward);
  return detail::make_result<T>(out, std::move(v), {&x, &w}, backward);
}

// ---- shape ops -------------------------------------------------------------

template <typename T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape) {
  if (numel(shape) != x.numel()) shape_mismatch("reshape", x.shape(), shape);
  std::vector<T> v(x.values().begin(), x.values().end());
  return detail::make_result<T>(std::move(shape), std::move(v), {&x}, [](Node<T>& o) {
    auto& g = o.parents[0]->ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += o.grad[i];
  });
}

// Reorders axes: output axis i is input axis perm[i].
template <typename T>
Tensor<T> permute(const Tensor<T>& x, const std::vector<int>& perm) {
  const int r = x.rank();
  if (static_cast<int>(perm.size()) != r) shape_mismatch("permute", x.shape(), Shape(perm));
  std::vector<std::size_t> in_strides(static_cast<std::size_t>(r), 1);
  for (int i = r - 2; i >= 0; --i)
    in_strides[static_cast<std::size_t>(i)] =
        in_strides[static_cast<std::size_t>(i + 1)] * static_cast<std::size_t>(x.dim(i + 1));
  Shape out(static_cast<std::size_t>(r));
  std::vector<std::size_t> src_strides(static_cast<std::size_t>(r));
  std::vector<bool> used(static_cast<std::size_t>(r), false);
  for (int i = 0; i < r; ++i) {
    const int p = perm[static_cast<std::size_t>(i)];
    if (p < 0 || p >= r || used[static_cast<std::size_t>(p)]) {
      throw ShapeError("permute: invalid axis order for shape " + to_string(x.shape()));
    }
    used[static_cast<std::size_t>(p)] = true;
    out[static_cast<std::size_t>(i)] = x.dim(p);
    src_strides[static_cast<std::size_t>(i)] = in_strides[static_cast<std::size_t>(p)];
  }
  // map[i] = source offset of output element i
  auto map = std::make_shared<std::vector<std::size_t>>(x.numel());
  const std::vector<std::size_t> zero(static_cast<std::size_t>(r), 0);
  detail::for_each_broadcast(out, src_strides, zero,
                             [&](std::size_t i, std::size_t pa, std::size_t) { (*map)[i] = pa; });
  std::vector<T> v(x.numel());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = x.values()[(*map)[i]];
  return detail::make_result<T>(out, std::move(v), {&x}, [map](Node<T>& o) {
    auto& g = o.parents[0]->ensure_grad();
    for (std::size_t i = 0; i < o.grad.size(); ++i) g[(*map)[i]] += o.grad[i];
  });
}

// Expands size-1 (or missing leading) axes to `shape`.
template <typename T>
Tensor<T> broadcast_to(const Tensor<T>& x, const Shape& shape) {
  if (detail::broadcast_shape("broadcast_to", x.shape(), shape) != shape) {
    shape_mismatch("broadcast_to", x.shape(), shape);
  }
  auto sx = detail::broadcast_strides(x.shape(), shape);
  const std::vector<std::size_t> zero(shape.size(), 0);
  std::vector<T> v(numel(shape));
  auto xv = x.values();
  detail::for_each_broadcast(shape, sx, zero,
                             [&](std::size_t i, std::size_t pa, std::size_t) { v[i] = xv[pa]; });
  return detail::make_result<T>(shape, std::move(v), {&x}, [sx, zero](Node<T>& o) {
    auto& g = o.parents[0]->ensure_grad();
    detail::for_each_broadcast(o.shape, sx, zero, [&](std::size_t i, std::size_t pa, std::size_t) {
      g[pa] += o.grad[i];
    });
  });
}

namespace detail {
// (outer, axis extent, inner) factorization around `axis`.
inline std::tuple<std::size_t, std::size_t, std::size_t> split_axis(const Shape& s, int axis) {
  std::size_t outer = 1, inner = 1;
  for (int i = 0; i < axis; ++i) outer *= static_cast<std::size_t>(s[static_cast<std::size_t>(i)]);
  for (std::size_t i = static_cast<std::size_t>(axis) + 1; i < s.size(); ++i) inner *= static_cast<std::size_t>(s[i]);
  return {outer, static_cast<std::size_t>(s[static_cast<std::size_t>(axis)]), inner};
}
}  // namespace detail

template <typename T>
Tensor<T> concat(const std::vector<Tensor<T>>& xs, int axis) {
  if (xs.empty()) throw ShapeError("concat: no inputs");
  const int r = xs[0].rank();
  if (axis < 0) axis += r;
  if (axis < 0 || axis >= r) throw ShapeError("concat: axis out of range");
  Shape out = xs[0].shape();
  out[static_cast<std::size_t>(axis)] = 0;
  for (const auto& x : xs) {
    Shape a = x.shape(), b = xs[0].shape();
    if (x.rank() != r) shape_mismatch("concat", b, a);
    a[static_cast<std::size_t>(axis)] = b[static_cast<std::size_t>(axis)] = 0;
    if (a != b) shape_mismatch("concat", xs[0].shape(), x.shape());
    out[static_cast<std::size_t>(axis)] += x.dim(axis);
  }
  auto [outer, total, inner] = detail::split_axis(out, axis);
  std::vector<T> v(numel(out));
  std::vector<std::size_t> offsets;
  std::size_t off = 0;
  for (const auto& x : xs) {
    offsets.push_back(off);
    const std::size_t ext = static_cast<std::size_t>(x.dim(axis));
    auto xv = x.values();
    for (std::size_t o = 0; o < outer; ++o)
      std::copy_n(xv.begin() + static_cast<std::ptrdiff_t>(o * ext * inner), ext * inner,
                  v.begin() + static_cast<std::ptrdiff_t>((o * total + off) * inner));
    off += ext;
  }
  return detail::make_result_n<T>(out, std::move(v), xs,
                                  [offsets, outer, total, inner, axis](Node<T>& o) {
    for (std::size_t p = 0; p < o.parents.size(); ++p) {
      Node<T>& np = *o.parents[p];
      if (!np.requires_grad) continue;
      const std::size_t ext = static_cast<std::size_t>(np.shape[static_cast<std::size_t>(axis)]);
      auto& g = np.ensure_grad();
      for (std::size_t oo = 0; oo < outer; ++oo)
        for (std::size_t j = 0; j < ext * inner; ++j)
          g[oo * ext * inner + j] += o.grad[(oo * total + offsets[p]) * inner + j];
    }
  });
}

// Half-open range [begin, end) along `axis`.
template <typename T>
Tensor<T> slice(const Tensor<T>& x, int axis, int begin, int end) {
  if (axis < 0) axis += x.rank();
  if (axis < 0 || axis >= x.rank() || begin < 0 || end > x.dim(axis) || begin >= end) {
    throw ShapeError("slice: bad range on shape " + to_string(x.shape()));
  }
  auto [outer, total, inner] = detail::split_axis(x.shape(), axis);
  const std::size_t ext = static_cast<std::size_t>(end - begin);
  Shape out = x.shape();
  out[static_cast<std::size_t>(axis)] = end - begin;
  std::vector<T> v(numel(out));
  auto xv = x.values();
  for (std::size_t o = 0; o < outer; ++o)
    std::copy_n(xv.begin() + static_cast<std::ptrdiff_t>((o * total + static_cast<std::size_t>(begin)) * inner),
                ext * inner, v.begin() + static_cast<std::ptrdiff_t>(o * ext * inner));
  return detail::make_result<T>(out, std::move(v), {&x},
                                [outer = outer, total = total, inner = inner, ext, begin](Node<T>& o) {
    auto& g = o.parents[0]->ensure_grad();
    for (std::size_t oo = 0; oo < outer; ++oo)
      for (std::size_t j = 0; j < ext * inner; ++j)
        g[(oo * total + static_cast<std::size_t>(begin)) * inner + j] += o.grad[oo * ext * inner + j];
  });
}

// ---- reductions ------------------------------------------------------------

template <typename T>
Tensor<T> sum(const Tensor<T>& x) {
  T acc = 0;
  for (T v : x.values()) acc += v;
  return detail::make_result<T>({}, {acc}, {&x}, [](Node<T>& o) {
    auto& g = o.parents[0]->ensure_grad();
    for (auto& v : g) v += o.grad[0];
  });
}

template <typename T>
Tensor<T> mean(const Tensor<T>& x) {
  return scale(sum(x), T(1) / static_cast<T>(std::max<std::size_t>(1, x.numel())));
}

// Mean absolute error; the subgradient at a zero difference is 0.
template <typename T>
Tensor<T> l1_loss(const Tensor<T>& pred, const Tensor<T>& target) {
  if (pred.shape() != target.shape()) shape_mismatch("l1_loss", pred.shape(), target.shape());
  const std::size_t n = pred.numel();
  T acc = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const T d = pred.values()[i] - target.values()[i];
    acc += std::abs(d);
    if (detail::kink_signature()) detail::record_kink(d > T(0));
  }
  const T inv = T(1) / static_cast<T>(std::max<std::size_t>(1, n));
  return detail::make_result<T>({}, {acc * inv}, {&pred, &target}, [inv](Node<T>& o) {
    Node<T>& np = *o.parents[0];
    Node<T>& nt = *o.parents[1];
    const T g = o.grad[0] * inv;
    for (std::size_t i = 0; i < np.value.size(); ++i) {
      const T d = np.value[i] - nt.value[i];
      const T s = d > T(0) ? T(1) : (d < T(0) ? T(-1) : T(0));
      if (np.requires_grad) np.ensure_grad()[i] += g * s;
      if (nt.requires_grad) nt.ensure_grad()[i] -= g * s;
    }
  });
}

// ---- backward pass ---------------------------------------------------------

// Accumulates d(loss)/d(leaf) into every leaf that requires a gradient.
template <typename T>
void backward(const Tensor<T>& loss) {
  if (loss.numel() != 1) {
    throw ShapeError("backward: loss must be scalar, got shape " + to_string(loss.shape()));
  }
  if (!loss.requires_grad()) return;
  // Iterative post-order DFS for a topological order.
  std::vector<Node<T>*> order;
  std::unordered_set<Node<T>*> seen;
  std::vector<std::pair<Node<T>*, std::size_t>> stack{{loss.node(), 0}};
  seen.insert(loss.node());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node<T>* p = node->parents[next++].get();
      if (p->requires_grad && seen.insert(p).second) stack.push_back({p, 0});
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  loss.node()->ensure_grad()[0] += T(1);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node<T>* n = *it;
    if (n->backward && n->grad.size() == n->value.size()) n->backward(*n);
  }
  // Intermediate gradients are no longer needed.
  for (Node<T>* n : order) {
    if (n->backward) n->grad.clear();
  }
}

}  // namespace sjdec::ad

#endif  // SJDEC_TENSOR_HPP_
