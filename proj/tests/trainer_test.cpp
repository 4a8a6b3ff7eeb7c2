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

#include <cmath>
#include <filesystem>

#include <gtest/gtest.h>

#include "sjdec/checkpoint.hpp"
#include "sjdec/synthetic.hpp"
#include "sjdec/trainer.hpp"

namespace sjdec {
namespace {

ModelConfig small_model() {
  ModelConfig c;
  c.c = 8;
  c.k = 8;
  c.n_res_blocks = 1;
  return c;
}

std::string temp_path(const std::string& name) {
  return (std::filesystem::temp_directory_path() / ("sjdec_" + name)).string();
}

TEST(Schedule, HalvesAtDecayEpochs) {
  TrainConfig c;
  c.decay_epochs = {2, 4};
  EXPECT_DOUBLE_EQ(lr_at_epoch(c, 0), 1e-4);
  EXPECT_DOUBLE_EQ(lr_at_epoch(c, 1), 1e-4);
  EXPECT_DOUBLE_EQ(lr_at_epoch(c, 2), 5e-5);
  EXPECT_DOUBLE_EQ(lr_at_epoch(c, 3), 5e-5);
  EXPECT_DOUBLE_EQ(lr_at_epoch(c, 4), 2.5e-5);
  EXPECT_DOUBLE_EQ(lr_at_epoch(c, 9), 2.5e-5);
}

TEST(TrainConfig, Validation) {
  TrainConfig c;
  c.patch = 40;
  EXPECT_THROW(c.validate(), InvalidArgument);
  c.patch = 48;
  c.q_set = {10, 101};
  EXPECT_THROW(c.validate(), InvalidArgument);
  EXPECT_EQ(extended_q_set().front(), 0);
  EXPECT_EQ(extended_q_set().size(), 11u);
}

TEST(TrainingPair, ConstantGray) {
  RgbImage img(64, 64);
  std::fill(img.data.begin(), img.data.end(), uint8_t{128});
  Rng rng(1);
  for (int q : {0, 50, 100}) {
    const auto pair = make_training_pair(img, q, 48, rng);
    for (double t : pair.target) EXPECT_DOUBLE_EQ(t, 128 / 255.0 - 0.5);
    for (const auto* g : {&pair.spectra.y, &pair.spectra.cb, &pair.spectra.cr})
      for (const auto& b : g->blocks)
        for (int i = 1; i < 64; ++i) EXPECT_EQ(b.values[i], 0);
  }
}

TEST(TrainingPair, TargetRangeAndAlignment) {
  Rng gen(2);
  const RgbImage img = synthetic_image(80, 96, SyntheticKind::kMixed, gen);
  Rng rng(3);
  for (int trial = 0; trial < 10; ++trial) {
    const auto pair = make_training_pair(img, 70, 48, rng);
    ASSERT_EQ(pair.target.size(), 48u * 48 * 3);
    for (double t : pair.target) {
      EXPECT_GE(t, -0.5);
      EXPECT_LE(t, 0.5);
    }
    bool found = false;
    for (int oy = 0; oy + 48 <= img.height && !found; oy += 16)
      for (int ox = 0; ox + 48 <= img.width && !found; ox += 16) {
        bool same = true;
        for (int y = 0; y < 48 && same; ++y)
          for (int x = 0; x < 48 && same; ++x)
            for (int c = 0; c < 3 && same; ++c)
              same = pair.target[(y * 48 + x) * 3 + c] == img.at(oy + y, ox + x, c) / 255.0 - 0.5;
        found = same;
      }
    EXPECT_TRUE(found);
  }
}

TEST(TrainingPair, SpectraMatchCodecRoundtrip) {
  Rng gen(4);
  const RgbImage img = synthetic_image(48, 48, SyntheticKind::kGabor, gen);
  Rng rng(5);
  const auto pair = make_training_pair(img, 35, 48, rng);
  const auto direct = parse_jpeg(encode_jpeg(img, 35));
  EXPECT_EQ(pair.spectra.y, direct.y);
  EXPECT_EQ(pair.spectra.cb, direct.cb);
  EXPECT_EQ(pair.spectra.cr, direct.cr);
  EXPECT_EQ(pair.spectra.q_luma, direct.q_luma);
  RgbImage tiny(32, 32);
  EXPECT_THROW(make_training_pair(tiny, 50, 48, rng), InvalidArgument);
}

TEST(WeightInit, BoundsAndDeterminism) {
  const ModelConfig cfg;
  const Checkpoint a = initial_checkpoint(cfg, 9);
  const Checkpoint b = initial_checkpoint(cfg, 9);
  for (std::size_t i = 0; i < a.params.entries.size(); ++i) {
    const auto& [name, t] = a.params.entries[i];
    const auto tb = b.params.entries[i].second;
    EXPECT_TRUE(std::equal(t.values().begin(), t.values().end(), tb.values().begin())) << name;
    if (name.ends_with(".b")) {
      for (float v : t.values()) EXPECT_EQ(v, 0.0f);
      continue;
    }
    std::size_t fan_in = 1;
    for (int d = 1; d < t.rank(); ++d) fan_in *= static_cast<std::size_t>(t.dim(d));
    double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
    if (name == "hf.conv2.w") bound *= 0.1;
    double mx = 0;
    for (float v : t.values()) mx = std::max(mx, std::abs(static_cast<double>(v)));
    EXPECT_LE(mx, bound) << name;
    EXPECT_GT(mx, 0.5 * bound) << name;
  }
}

TEST(Checkpoint, RoundtripIsBitExact) {
  Checkpoint ck = initial_checkpoint(small_model(), 11);
  ck.step = 1234;
  ad::AdamState<float> adam;
  adam.lr = 3e-4;
  adam.init(ck.params.tensors());
  Rng rng(12);
  for (auto& m : adam.m)
    for (auto& v : m) v = static_cast<float>(rng.uniform(-1, 1));
  adam.step = 77;
  ck.adam = adam;
  const auto bytes = serialize_checkpoint(ck);
  const Checkpoint back = deserialize_checkpoint(bytes);
  EXPECT_EQ(serialize_checkpoint(back), bytes);
  EXPECT_EQ(back.step, 1234);
  ASSERT_TRUE(back.adam.has_value());
  EXPECT_EQ(back.adam->step, 77);
  EXPECT_EQ(back.adam->m, adam.m);
  const auto path = temp_path("ckpt.bin");
  save_checkpoint(ck, path);
  const Checkpoint file = load_checkpoint(path, small_model());
  for (std::size_t i = 0; i < ck.params.entries.size(); ++i) {
    const auto x = ck.params.entries[i].second.values();
    const auto y = file.params.entries[i].second.values();
    EXPECT_EQ(0, std::memcmp(x.data(), y.data(), x.size() * sizeof(float)));
  }
  std::filesystem::remove(path);
}

CheckpointErrorKind kind_of(std::span<const uint8_t> bytes, std::optional<ModelConfig> expect = {}) {
  try {
    deserialize_checkpoint(bytes, expect);
  } catch (const CheckpointError& e) {
    return e.kind();
  }
  ADD_FAILURE() << "no error";
  return CheckpointErrorKind::kFormat;
}

TEST(Checkpoint, DistinctErrors) {
  const auto bytes = serialize_checkpoint(initial_checkpoint(small_model(), 13));
  auto bad = bytes;
  bad[0] = 'X';
  EXPECT_EQ(kind_of(bad), CheckpointErrorKind::kFormat);
  bad = bytes;
  bad[4] = 9;
  EXPECT_EQ(kind_of(bad), CheckpointErrorKind::kVersion);
  for (std::size_t cut : {std::size_t{6}, bytes.size() / 2, bytes.size() - 1}) {
    EXPECT_EQ(kind_of(std::span(bytes).first(cut)), CheckpointErrorKind::kTruncated) << cut;
  }
  ModelConfig other = small_model();
  other.k = 16;
  EXPECT_EQ(kind_of(bytes, other), CheckpointErrorKind::kShapeMismatch);
  other = small_model();
  other.ablation = Ablation::kFourier;
  EXPECT_EQ(kind_of(bytes, other), CheckpointErrorKind::kShapeMismatch);
}

TEST(Train, ZeroEpochsKeepsInitialization) {
  TrainConfig tc;
  tc.epochs = 0;
  tc.seed = 14;
  const auto data = synthetic_dataset(4, 48, 48, 1);
  const auto res = train(tc, data, small_model());
  EXPECT_TRUE(res.history.empty());
  EXPECT_EQ(serialize_checkpoint(res.checkpoint), serialize_checkpoint(initial_checkpoint(small_model(), 14)));
}

TEST(Train, SeededRunsAreBitIdentical) {
  TrainConfig tc;
  tc.patch = 32;
  tc.batch = 3;
  tc.epochs = 3;
  tc.lr = 1e-3;
  tc.decay_epochs = {2};
  tc.seed = 15;
  const auto data = synthetic_dataset(5, 48, 48, 2);
  const auto a = train(tc, data, small_model());
  const auto b = train(tc, data, small_model());
  ASSERT_EQ(a.history.size(), 6u);
  for (std::size_t i = 0; i < a.history.size(); ++i) {
    EXPECT_EQ(a.history[i].loss, b.history[i].loss);
    EXPECT_EQ(a.history[i].step, static_cast<int64_t>(i + 1));
  }
  EXPECT_EQ(a.history[3].epoch, 1);
  EXPECT_DOUBLE_EQ(a.history[5].lr, 5e-4);
  EXPECT_EQ(serialize_checkpoint(a.checkpoint), serialize_checkpoint(b.checkpoint));
  EXPECT_EQ(a.checkpoint.step, 6);

  const auto path = temp_path("loss.csv");
  write_loss_csv(path, a.history);
  std::ifstream in(path);
  std::string header;
  std::getline(in, header);
  EXPECT_EQ(header, "step,epoch,lr,loss");
  std::filesystem::remove(path);
}

TEST(Train, ResumeContinuesStepCounter) {
  TrainConfig tc;
  tc.patch = 32;
  tc.batch = 2;
  tc.epochs = 1;
  tc.seed = 16;
  const auto data = synthetic_dataset(4, 32, 32, 3);
  const auto first = train(tc, data, small_model());
  const auto second = train(tc, data, small_model(), {}, &first.checkpoint);
  EXPECT_EQ(second.checkpoint.step, 4);
  EXPECT_EQ(second.history.front().step, 3);
  ModelConfig other = small_model();
  other.c = 4;
  EXPECT_THROW(train(tc, data, other, {}, &first.checkpoint), CheckpointError);
}

TEST(Train, NonFiniteLossAborts) {
  TrainConfig tc;
  tc.patch = 32;
  tc.batch = 2;
  tc.seed = 17;
  Checkpoint ck = initial_checkpoint(small_model(), 17);
  auto w = ck.params["dec4.b"];
  w.values()[0] = std::nanf("");
  const auto data = synthetic_dataset(2, 32, 32, 4);
  try {
    train(tc, data, small_model(), {}, &ck);
    FAIL();
  } catch (const TrainingError& e) {
    EXPECT_NE(std::string(e.what()).find("batch seed"), std::string::npos);
  }
  EXPECT_THROW(train(tc, {}, small_model()), InvalidArgument);
}

}  // namespace
}  // namespace sjdec
