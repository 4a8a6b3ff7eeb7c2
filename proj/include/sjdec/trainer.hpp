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

#ifndef SJDEC_TRAINER_HPP_
#define SJDEC_TRAINER_HPP_

#include <cmath>
#include <cstdint>
#include <fstream>
#include <functional>
#include <iomanip>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "sjdec/checkpoint.hpp"
#include "sjdec/codec.hpp"
#include "sjdec/model.hpp"
#include "sjdec/optim.hpp"

namespace sjdec {

struct TrainConfig {
  int patch = 48;
  int batch = 8;
  int epochs = 1;
  int64_t max_steps = 0;  // 0: no limit beyond epochs
  double lr = 1e-4;
  std::vector<int> decay_epochs;
  double decay_factor = 0.5;
  std::vector<int> q_set = {10, 20, 30, 40, 50, 60, 70, 80, 90, 100};
  uint64_t seed = 0;

  void validate() const {
    if (patch <= 0 || patch % 16 != 0) throw InvalidArgument("train: patch must be a positive multiple of 16");
    if (batch <= 0) throw InvalidArgument("train: batch must be positive");
    if (epochs < 0 || max_steps < 0) throw InvalidArgument("train: negative epoch or step count");
    if (!(lr > 0)) throw InvalidArgument("train: lr must be positive");
    if (q_set.empty()) throw InvalidArgument("train: empty quality set");
    for (int q : q_set)
      if (q < 0 || q > 100) throw InvalidArgument("train: quality " + std::to_string(q) + " outside [0,100]");
  }
};

// Quality factors 0..100 in steps of 10.
inline std::vector<int> extended_q_set() {
  std::vector<int> q;
  for (int v = 0; v <= 100; v += 10) q.push_back(v);
  return q;
}

inline double lr_at_epoch(const TrainConfig& cfg, int epoch) {
  double lr = cfg.lr;
  for (int e : cfg.decay_epochs)
    if (epoch >= e) lr *= cfg.decay_factor;
  return lr;
}

class TrainingError : public Error {
 public:
  using Error::Error;
};

struct TrainingPair {
  JpegSpectra spectra;
  std::vector<double> target;  // [patch, patch, 3] in [-0.5, 0.5]
};

// Crops a 16-aligned patch, compresses it at quality q and parses the stream
// back; the model sees only the parsed spectra.
inline TrainingPair make_training_pair(const RgbImage& img, int q, int patch, Rng& rng) {
  if (img.width < patch || img.height < patch) {
    throw InvalidArgument("train: image " + std::to_string(img.width) + "x" +
                          std::to_string(img.height) + " smaller than patch " + std::to_string(patch));
  }
  const int oy = 16 * rng.uniform_int(0, (img.height - patch) / 16);
  const int ox = 16 * rng.uniform_int(0, (img.width - patch) / 16);
  RgbImage crop(patch, patch);
  for (int y = 0; y < patch; ++y)
    for (int x = 0; x < patch; ++x)
      for (int c = 0; c < 3; ++c) crop.at(y, x, c) = img.at(oy + y, ox + x, c);
  TrainingPair pair;
  pair.spectra = parse_jpeg(encode_jpeg(crop, q));
  pair.target.resize(crop.data.size());
  for (std::size_t i = 0; i < crop.data.size(); ++i) pair.target[i] = crop.data[i] / 255.0 - 0.5;
  return pair;
}

struct LossRecord {
  int64_t step = 0;
  int epoch = 0;
  double lr = 0;
  double loss = 0;
};

struct TrainResult {
  Checkpoint checkpoint;
  std::vector<LossRecord> history;
};

inline void write_loss_csv(const std::string& path, const std::vector<LossRecord>& history) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot create " + path);
  out << "step,epoch,lr,loss\n" << std::setprecision(9);
  for (const auto& r : history) out << r.step << ',' << r.epoch << ',' << r.lr << ',' << r.loss << '\n';
}

// Mean loss over the first (or last) `window` records.
inline double running_loss(const std::vector<LossRecord>& h, std::size_t window, bool tail) {
  if (h.empty()) return 0.0;
  const std::size_t n = std::min(window, h.size());
  const std::size_t begin = tail ? h.size() - n : 0;
  double s = 0;
  for (std::size_t i = begin; i < begin + n; ++i) s += h[i].loss;
  return s / static_cast<double>(n);
}

inline Checkpoint initial_checkpoint(const ModelConfig& mcfg, uint64_t seed) {
  Checkpoint ck;
  ck.params = make_params<float>(mcfg);
  Rng rng(seed);
  initialize_params(ck.params, rng);
  return ck;
}

using TrainObserver = std::function<void(const LossRecord&)>;

// Shuffled mini-batch L1 training with Adam. One quality factor per batch.
// Passing `resume` continues from a checkpoint's parameters and optimizer.
inline TrainResult train(const TrainConfig& cfg, const std::vector<RgbImage>& data,
                         const ModelConfig& mcfg, const TrainObserver& observer = {},
                         const Checkpoint* resume = nullptr) {
  cfg.validate();
  mcfg.validate();
  if (data.empty()) throw InvalidArgument("train: empty dataset");
  TrainResult res;
  res.checkpoint = resume ? *resume : initial_checkpoint(mcfg, cfg.seed);
  if (!(res.checkpoint.params.config == mcfg)) {
    throw CheckpointError(CheckpointErrorKind::kShapeMismatch, "resume checkpoint has a different model configuration");
  }
  Checkpoint& ck = res.checkpoint;
  std::vector<ad::Tensor<float>> params = ck.params.tensors();
  ad::AdamState<float> adam = ck.adam.value_or(ad::AdamState<float>{});
  adam.init(params);

  Rng rng(cfg.seed ^ 0x5EEDF00DCAFEull);
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  const std::size_t per_epoch = (data.size() + static_cast<std::size_t>(cfg.batch) - 1) / static_cast<std::size_t>(cfg.batch);
  int64_t steps = 0;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    if (cfg.max_steps > 0 && steps >= cfg.max_steps) break;
    adam.lr = lr_at_epoch(cfg, epoch);
    rng.shuffle(order.begin(), order.end());
    for (std::size_t bi = 0; bi < per_epoch; ++bi) {
      if (cfg.max_steps > 0 && steps >= cfg.max_steps) break;
      const uint64_t batch_seed = rng.next_u64();
      Rng brng(batch_seed);
      const int q = cfg.q_set[brng.below(cfg.q_set.size())];
      const std::size_t begin = bi * static_cast<std::size_t>(cfg.batch);
      const std::size_t end = std::min(order.size(), begin + static_cast<std::size_t>(cfg.batch));
      std::vector<uint64_t> item_seeds;
      for (std::size_t i = begin; i < end; ++i) item_seeds.push_back(brng.next_u64());
      std::vector<TrainingPair> pairs(end - begin);
      parallel_for(pairs.size(), [&](std::size_t b, std::size_t e) {
        for (std::size_t i = b; i < e; ++i) {
          Rng irng(item_seeds[i]);
          pairs[i] = make_training_pair(data[order[begin + i]], q, cfg.patch, irng);
        }
      });
      std::vector<const JpegSpectra*> spectra;
      std::vector<float> target;
      for (const auto& p : pairs) {
        spectra.push_back(&p.spectra);
        target.insert(target.end(), p.target.begin(), p.target.end());
      }
      const ModelInput in = prepare_input(spectra, mcfg);
      const int n = static_cast<int>(pairs.size());
      ck.params.zero_grad();
      const auto pred = forward_tensor(in, ck.params, 1);
      const auto tgt = ad::Tensor<float>::from({n, cfg.patch, cfg.patch, 3}, std::move(target));
      const auto loss = ad::l1_loss(pred, tgt);
      const double lv = loss.item();
      if (!std::isfinite(lv)) {
        std::ostringstream os;
        os << "non-finite loss at step " << ck.step << " (lr " << adam.lr << ", batch seed " << batch_seed << ")";
        throw TrainingError(os.str());
      }
      ad::backward(loss);
      ad::adam_step(params, adam);
      ++steps;
      ++ck.step;
      LossRecord rec{ck.step, epoch, adam.lr, lv};
      res.history.push_back(rec);
      if (observer) observer(rec);
    }
  }
  ck.params.zero_grad();
  if (steps > 0 || ck.adam) ck.adam = adam;
  return res;
}

}  // namespace sjdec

#endif  // SJDEC_TRAINER_HPP_
