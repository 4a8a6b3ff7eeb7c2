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

#ifndef SJDEC_OPTIM_HPP_
#define SJDEC_OPTIM_HPP_

#include <cmath>
#include <cstdint>
#include <vector>

#include "sjdec/tensor.hpp"

namespace sjdec::ad {

template <typename T>
struct AdamState {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::int64_t step = 0;
  std::vector<std::vector<T>> m;
  std::vector<std::vector<T>> v;

  // Sizes the moment buffers for `params`; existing moments are kept when
  // they already match.
  void init(const std::vector<Tensor<T>>& params) {
    if (m.size() == params.size()) {
      bool ok = true;
      for (std::size_t i = 0; i < params.size(); ++i)
        ok = ok && m[i].size() == params[i].numel() && v[i].size() == params[i].numel();
      if (ok) return;
    }
    m.assign(params.size(), {});
    v.assign(params.size(), {});
    for (std::size_t i = 0; i < params.size(); ++i) {
      m[i].assign(params[i].numel(), T(0));
      v[i].assign(params[i].numel(), T(0));
    }
    step = 0;
  }
};

// One bias-corrected Adam update from the gradients stored on `params`.
// Parameters without a gradient are treated as having a zero gradient.
template <typename T>
void adam_step(std::vector<Tensor<T>>& params, AdamState<T>& s) {
  s.init(params);
  ++s.step;
  const double c1 = 1.0 - std::pow(s.beta1, static_cast<double>(s.step));
  const double c2 = 1.0 - std::pow(s.beta2, static_cast<double>(s.step));
  for (std::size_t p = 0; p < params.size(); ++p) {
    auto w = params[p].values();
    const bool has = params[p].has_grad();
    auto g = params[p].grad();
    auto& m = s.m[p];
    auto& v = s.v[p];
    for (std::size_t i = 0; i < w.size(); ++i) {
      const double gi = has ? static_cast<double>(g[i]) : 0.0;
      const double mi = s.beta1 * m[i] + (1.0 - s.beta1) * gi;
      const double vi = s.beta2 * v[i] + (1.0 - s.beta2) * gi * gi;
      m[i] = static_cast<T>(mi);
      v[i] = static_cast<T>(vi);
      const double mh = mi / c1;
      const double vh = vi / c2;
      w[i] = static_cast<T>(w[i] - s.lr * mh / (std::sqrt(vh) + s.eps));
    }
  }
}

}  // namespace sjdec::ad

#endif  // SJDEC_OPTIM_HPP_
