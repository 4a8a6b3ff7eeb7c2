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

#ifndef SJDEC_GRADCHECK_HPP_
#define SJDEC_GRADCHECK_HPP_

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <vector>

#include "sjdec/common.hpp"
#include "sjdec/tensor.hpp"

namespace sjdec::ad {

struct GradCheckResult {
  int probes = 0;
  int skipped = 0;  // draws rejected because +h and -h took different kinks
  double max_rel_error = 0.0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
};

// Compares backward() against central differences on randomly chosen input
// entries. `fn` must rebuild the graph from the given leaves on every call.
// A draw whose perturbed evaluations land on different sides of a ReLU or
// absolute-value kink has no meaningful difference quotient and is redrawn.
inline GradCheckResult gradcheck(
    const std::function<Tensor<double>(const std::vector<Tensor<double>>&)>& fn,
    std::vector<Tensor<double>> inputs, int probes, Rng& rng, double h = 1e-4,
    double floor = 1e-6) {
  for (auto& t : inputs) t.zero_grad();
  Tensor<double> loss = fn(inputs);
  backward(loss);
  std::vector<std::size_t> candidates;
  for (std::size_t i = 0; i < inputs.size(); ++i)
    if (inputs[i].requires_grad() && inputs[i].numel() > 0) candidates.push_back(i);
  if (candidates.empty()) throw InvalidArgument("gradcheck: no differentiable inputs");
  auto eval = [&](std::uint64_t& sig) {
    sig = 14695981039346656037ull;
    detail::kink_signature() = &sig;
    const double v = fn(inputs).item();
    detail::kink_signature() = nullptr;
    return v;
  };
  GradCheckResult r;
  const int max_skips = 20 * probes;
  while (r.probes < probes) {
    Tensor<double>& t = inputs[candidates[rng.below(candidates.size())]];
    const std::size_t k = rng.below(t.numel());
    const double analytic = t.has_grad() ? t.grad()[k] : 0.0;
    const double saved = t.values()[k];
    std::uint64_t sig_base = 0, sig_up = 0, sig_down = 0;
    eval(sig_base);
    t.values()[k] = saved + h;
    const double up = eval(sig_up);
    t.values()[k] = saved - h;
    const double down = eval(sig_down);
    t.values()[k] = saved;
    if (sig_up != sig_base || sig_down != sig_base) {
      if (++r.skipped > max_skips) throw Error("gradcheck: too many probes straddle kinks");
      continue;
    }
    const double numeric = (up - down) / (2.0 * h);
    const double rel =
        std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
    ++r.probes;
    if (rel >= r.max_rel_error) {
      r.max_rel_error = rel;
      r.worst_analytic = analytic;
      r.worst_numeric = numeric;
    }
  }
  return r;
}

}  // namespace sjdec::ad

#endif  // SJDEC_GRADCHECK_HPP_
