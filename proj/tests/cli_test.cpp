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

#include <filesystem>
#include <fstream>
#include <initializer_list>
#include <sstream>
#include <string>
#include <vector>

#include <gtest/gtest.h>

#include "json.hpp"
#include "sjdec/checkpoint.hpp"
#include "sjdec/cli.hpp"

namespace sjdec {
namespace {

namespace fs = std::filesystem;

std::string data_path(const std::string& name) { return std::string(SJDEC_TEST_DATA) + "/" + name; }

struct CliRun {
  int code;
  std::string out;
  std::string err;
};

CliRun run(std::initializer_list<std::string> args) {
  std::vector<std::string> store{"sjdec"};
  store.insert(store.end(), args.begin(), args.end());
  std::vector<const char*> argv;
  for (const auto& s : store) argv.push_back(s.c_str());
  std::ostringstream out, err;
  const int code = run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

class CliTest : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() /
           ("sjdec_cli_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::remove_all(dir_);
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }

  std::string path(const std::string& name) const { return (dir_ / name).string(); }

  std::string write(const std::string& name, const std::string& text) const {
    std::ofstream(path(name)) << text;
    return path(name);
  }

  std::string tiny_config() const {
    return write("cfg.txt", "# tiny\nbatch = 2\nmax_steps=2\nc=8\nk=8\nn_res_blocks=1\nsynthetic_size=48\n");
  }

  std::string trained_model() const {
    const CliRun r = run({"train", "--synthetic", "2", "--config", tiny_config(), "-o", path("m.ckpt")});
    EXPECT_EQ(r.code, 0) << r.err;
    return path("m.ckpt");
  }

  std::string encoded(int q = 50) const {
    const CliRun r = run({"encode", data_path("chelsea_small.ppm"), "-q", std::to_string(q), "-o", path("a.jpg")});
    EXPECT_EQ(r.code, 0) << r.err;
    return path("a.jpg");
  }

  fs::path dir_;
};

TEST_F(CliTest, NoSubcommandIsUsageError) { EXPECT_EQ(run({}).code, 2); }

TEST_F(CliTest, HelpExitsZero) {
  const CliRun r = run({"--help"});
  EXPECT_EQ(r.code, 0);
  EXPECT_NE(r.out.find("encode"), std::string::npos);
}

TEST_F(CliTest, UnknownFlagIsUsageError) {
  EXPECT_EQ(run({"encode", data_path("chelsea_small.ppm"), "-o", path("a.jpg"), "--bogus"}).code, 2);
  EXPECT_EQ(run({"frobnicate"}).code, 2);
}

TEST_F(CliTest, EncodeReportsBitsPerPixel) {
  const CliRun r = run({"encode", data_path("chelsea_small.bmp"), "-q", "75", "-o", path("a.jpg")});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_NE(r.out.find("bpp"), std::string::npos);
  EXPECT_GT(fs::file_size(path("a.jpg")), 100u);
}

TEST_F(CliTest, EncodeRejectsQualityOutOfRangeBeforeWriting) {
  for (const char* q : {"101", "-1"}) {
    const CliRun r = run({"encode", data_path("chelsea_small.ppm"), "-q", q, "-o", path("a.jpg")});
    EXPECT_EQ(r.code, 2) << q;
  }
  EXPECT_FALSE(fs::exists(path("a.jpg")));
}

TEST_F(CliTest, EncodeMissingInputIsFailure) {
  EXPECT_EQ(run({"encode", path("nope.ppm"), "-o", path("a.jpg")}).code, 1);
}

TEST_F(CliTest, EncodeWritesJpegMarker) {
  ASSERT_EQ(run({"encode", data_path("astronaut_crop.ppm"), "-q", "50", "-o", path("a.jpg")}).code, 0);
  const auto bytes = read_file(path("a.jpg"));
  ASSERT_GE(bytes.size(), 2u);
  EXPECT_EQ(bytes[0], 0xFF);
  EXPECT_EQ(bytes[1], 0xD8);
}

TEST_F(CliTest, EncodeUnreadableImageIsFailure) {
  EXPECT_EQ(run({"encode", write("bad.ppm", "garbage"), "-o", path("a.jpg")}).code, 1);
}

TEST_F(CliTest, InspectPrintsTablesAndBlock) {
  const CliRun r = run({"inspect", encoded(), "--block", "0", "1"});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_NE(r.out.find("56x48"), std::string::npos);
  EXPECT_NE(r.out.find("4:2:0"), std::string::npos);
  EXPECT_NE(r.out.find("luma quantization table"), std::string::npos);
  EXPECT_NE(r.out.find("block (0,1)"), std::string::npos);
}

TEST_F(CliTest, InspectJsonMatchesParser) {
  const std::string jpg = encoded();
  const CliRun r = run({"inspect", jpg, "--json", "--block", "1", "2", "--component", "cb"});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto j = nlohmann::json::parse(r.out);
  const JpegSpectra s = parse_jpeg(read_file(jpg));
  EXPECT_EQ(j["width"], 56);
  EXPECT_EQ(j["height"], 48);
  EXPECT_EQ(j["q_luma"].size(), 64u);
  EXPECT_EQ(j["q_luma"][0], s.q_luma.q[0]);
  ASSERT_EQ(j["block"]["coefficients"].size(), 64u);
  for (int i = 0; i < 64; ++i) EXPECT_EQ(j["block"]["coefficients"][i], s.cb.at(1, 2).values[i]);
}

TEST_F(CliTest, InspectBlockOutOfRangeIsUsageError) {
  EXPECT_EQ(run({"inspect", encoded(), "--block", "99", "0"}).code, 2);
  EXPECT_EQ(run({"inspect", encoded(), "--block", "0"}).code, 2);
  EXPECT_EQ(run({"inspect", encoded(), "--component", "k"}).code, 2);
}

TEST_F(CliTest, InspectProgressiveIsUnsupported) {
  const CliRun r = run({"inspect", data_path("progressive.jpg")});
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.err.find("unsupported"), std::string::npos);
  EXPECT_NE(r.err.find("progressive"), std::string::npos);
}

TEST_F(CliTest, DecodeBaselineMatchesLibraryDecoder) {
  const std::string jpg = encoded();
  ASSERT_EQ(run({"decode", jpg, "-o", path("out.ppm")}).code, 0);
  const RgbImage got = read_ppm(path("out.ppm"));
  const RgbImage want = decode_baseline(parse_jpeg(read_file(jpg)));
  EXPECT_EQ(got.data, want.data);
}

TEST_F(CliTest, DecodeScaleWithoutModelIsUsageError) {
  const CliRun r = run({"decode", encoded(), "-o", path("out.ppm"), "--scale", "2"});
  EXPECT_EQ(r.code, 2);
  EXPECT_FALSE(fs::exists(path("out.ppm")));
  EXPECT_EQ(run({"decode", encoded(), "-o", path("out.ppm"), "--scale", "0"}).code, 2);
  EXPECT_EQ(run({"decode", encoded(), "-o", path("out.ppm"), "--model", path("none.ckpt")}).code, 1);
  EXPECT_EQ(run({"decode", path("none.jpg"), "-o", path("out.ppm")}).code, 1);
}

TEST_F(CliTest, DecodeWithModelUpsamples) {
  const std::string model = trained_model();
  const CliRun r = run({"decode", encoded(), "-o", path("out.ppm"), "--model", model, "--scale", "2"});
  ASSERT_EQ(r.code, 0) << r.err;
  const RgbImage img = read_ppm(path("out.ppm"));
  EXPECT_EQ(img.width, 112);
  EXPECT_EQ(img.height, 96);
}

TEST_F(CliTest, DecodeCorruptCheckpointIsFailure) {
  write("bad.ckpt", "SJDC");
  EXPECT_EQ(run({"decode", encoded(), "-o", path("out.ppm"), "--model", path("bad.ckpt")}).code, 1);
  write("junk.ckpt", "not a checkpoint");
  EXPECT_EQ(run({"decode", encoded(), "-o", path("out.ppm"), "--model", path("junk.ckpt")}).code, 1);
}

TEST_F(CliTest, DecodeFutureVersionIsMismatch) {
  auto bytes = read_file(trained_model());
  bytes[4] = 99;
  write_file(path("v99.ckpt"), bytes);
  EXPECT_EQ(run({"decode", encoded(), "-o", path("out.ppm"), "--model", path("v99.ckpt")}).code, 3);
}

TEST_F(CliTest, TrainWritesCheckpointAndLossCsv) {
  const CliRun r = run({"train", "--synthetic", "2", "--config", tiny_config(), "--seed", "17", "-o", path("m.ckpt"),
                     "--loss-csv", path("loss.csv")});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_NE(r.out.find("seed 17"), std::string::npos);
  const Checkpoint ck = load_checkpoint(path("m.ckpt"));
  EXPECT_EQ(ck.params.config.c, 8);
  EXPECT_EQ(ck.step, 1);
  ASSERT_TRUE(ck.adam.has_value());
  std::ifstream csv(path("loss.csv"));
  std::string header;
  std::getline(csv, header);
  EXPECT_EQ(header, "step,epoch,lr,loss");
}

TEST_F(CliTest, TrainFiveStepSmokeLoadsBack) {
  const std::string cfg = write("smoke.txt", "batch=1\nmax_steps=5\nc=8\nk=8\nn_res_blocks=1\nsynthetic_size=48\n");
  const CliRun r = run({"train", "--synthetic", "8", "--config", cfg, "-o", path("m.ckpt")});
  ASSERT_EQ(r.code, 0) << r.err;
  const Checkpoint ck = load_checkpoint(path("m.ckpt"));
  EXPECT_EQ(ck.step, 5);
  EXPECT_EQ(ck.params.config.k, 8);
}

TEST_F(CliTest, TrainIsDeterministicForSeed) {
  const std::string cfg = tiny_config();
  ASSERT_EQ(run({"train", "--synthetic", "2", "--config", cfg, "--seed", "4", "-o", path("a.ckpt")}).code, 0);
  ASSERT_EQ(run({"train", "--synthetic", "2", "--config", cfg, "--seed", "4", "-o", path("b.ckpt")}).code, 0);
  EXPECT_EQ(read_file(path("a.ckpt")), read_file(path("b.ckpt")));
}

TEST_F(CliTest, TrainAblationAndJdecPlus) {
  const CliRun r = run({"train", "--synthetic", "2", "--config", tiny_config(), "--ablation", "id4", "--jdec-plus",
                     "-o", path("m.ckpt")});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(load_checkpoint(path("m.ckpt")).params.config.ablation, Ablation::kFourier);
}

TEST_F(CliTest, TrainFromDataDirectory) {
  fs::create_directories(path("imgs"));
  fs::copy_file(data_path("chelsea_small.ppm"), path("imgs/a.ppm"));
  fs::copy_file(data_path("chelsea_small.bmp"), path("imgs/b.BMP"));
  const CliRun r = run({"train", "--data", path("imgs"), "--config", tiny_config(), "-o", path("m.ckpt")});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_NE(r.out.find("2 images"), std::string::npos);
}

TEST_F(CliTest, TrainUsageErrors) {
  EXPECT_EQ(run({"train", "--data", path("missing"), "-o", path("m.ckpt")}).code, 2);
  EXPECT_EQ(run({"train", "-o", path("m.ckpt")}).code, 2);
  EXPECT_EQ(run({"train", "--synthetic", "2", "--ablation", "id9", "-o", path("m.ckpt")}).code, 2);
  EXPECT_EQ(run({"train", "--synthetic", "2", "--config", write("c.txt", "warp=9\n"), "-o", path("m.ckpt")}).code, 2);
  EXPECT_EQ(run({"train", "--synthetic", "2", "--config", write("d.txt", "b=3\n"), "-o", path("m.ckpt")}).code, 2);
  EXPECT_EQ(run({"train", "--synthetic", "2", "--config", write("e.txt", "batch=0\n"), "-o", path("m.ckpt")}).code,
            2);
  EXPECT_EQ(run({"train", "--synthetic", "2", "--config", path("none.txt"), "-o", path("m.ckpt")}).code, 2);
  EXPECT_FALSE(fs::exists(path("m.ckpt")));
}

TEST_F(CliTest, TrainDivergenceIsFailure) {
  const std::string cfg = write("nan.txt", "batch=2\nmax_steps=2\nc=8\nk=8\nn_res_blocks=1\nsynthetic_size=48\nlr=1e30\n");
  const CliRun r = run({"train", "--synthetic", "4", "--config", cfg, "-o", path("m.ckpt")});
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.err.find("batch seed"), std::string::npos);
}

TEST_F(CliTest, TrainResume) {
  const std::string model = trained_model();
  const CliRun ok = run({"train", "--synthetic", "2", "--config", tiny_config(), "--resume", model, "-o", path("r.ckpt")});
  ASSERT_EQ(ok.code, 0) << ok.err;
  EXPECT_EQ(load_checkpoint(path("r.ckpt")).step, 2);
  const std::string other = write("k16.txt", "batch=2\nmax_steps=2\nc=8\nk=16\nn_res_blocks=1\nsynthetic_size=48\n");
  EXPECT_EQ(run({"train", "--synthetic", "2", "--config", other, "--resume", model, "-o", path("x.ckpt")}).code, 3);
}

TEST_F(CliTest, EvalWritesCsvAndJsonAndSkipsBadImages) {
  fs::create_directories(path("imgs"));
  fs::copy_file(data_path("chelsea_small.ppm"), path("imgs/a.ppm"));
  fs::copy_file(data_path("coffee_crop.ppm"), path("imgs/b.ppm"));
  write("imgs/c.ppm", "broken");
  write("imgs/notes.txt", "ignored");
  const CliRun r = run({"eval", "--data", path("imgs"), "--q", "30,90", "-o", path("rd.csv"), "--json", path("rd.json")});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_NE(r.err.find("c.ppm"), std::string::npos);
  std::ifstream csv(path("rd.csv"));
  std::string line;
  std::getline(csv, line);
  EXPECT_EQ(line, "method,q,bpp,psnr,psnr_b,ssim");
  int rows = 0;
  while (std::getline(csv, line)) rows += !line.empty();
  EXPECT_EQ(rows, 2);
  std::ifstream js(path("rd.json"));
  const auto j = nlohmann::json::parse(js);
  ASSERT_EQ(j.size(), 2u);
  EXPECT_EQ(j[0]["method"], "jpeg");
}

TEST_F(CliTest, EvalWithModel) {
  fs::create_directories(path("imgs"));
  fs::copy_file(data_path("chelsea_small.ppm"), path("imgs/a.ppm"));
  const CliRun r = run({"eval", "--data", path("imgs"), "--q", "50", "--model", trained_model(), "-o", path("rd.csv")});
  ASSERT_EQ(r.code, 0) << r.err;
  std::ifstream csv(path("rd.csv"));
  std::string line;
  std::getline(csv, line);
  std::getline(csv, line);
  EXPECT_EQ(line.rfind("jdec,50,", 0), 0u);
}

TEST_F(CliTest, EvalFailureModes) {
  fs::create_directories(path("imgs"));
  fs::copy_file(data_path("chelsea_small.ppm"), path("imgs/a.ppm"));
  EXPECT_EQ(run({"eval", "--data", path("imgs"), "--q", "50", "--model", path("none.ckpt"), "-o", path("r.csv")}).code,
            1);
  EXPECT_EQ(run({"eval", "--data", path("imgs"), "--q", "50,x", "-o", path("r.csv")}).code, 2);
  EXPECT_EQ(run({"eval", "--data", path("imgs"), "--q", "120", "-o", path("r.csv")}).code, 2);
  EXPECT_EQ(run({"eval", "--data", path("missing"), "-o", path("r.csv")}).code, 2);
  fs::create_directories(path("bad"));
  write("bad/x.ppm", "broken");
  EXPECT_EQ(run({"eval", "--data", path("bad"), "--q", "50", "-o", path("r.csv")}).code, 1);
  EXPECT_FALSE(fs::exists(path("r.csv")));
}

TEST_F(CliTest, SpectrumExportsTriplesAndRaster) {
  const std::string model = trained_model();
  const CliRun r = run({"spectrum", "--model", model, encoded(), "--block", "1", "2", "-o", path("v.json")});
  ASSERT_EQ(r.code, 0) << r.err;
  std::ifstream in(path("v.json"));
  const auto j = nlohmann::json::parse(in);
  EXPECT_EQ(j["entries"].size(), 8u);
  EXPECT_TRUE(j["entries"][0].contains("fh"));
  EXPECT_TRUE(j["entries"][0].contains("amplitude"));
  ASSERT_EQ(j["raster"].size(), 51u);
  EXPECT_EQ(j["raster"][0].size(), 51u);
}

TEST_F(CliTest, SpectrumErrors) {
  const std::string model = trained_model();
  EXPECT_EQ(run({"spectrum", "--model", model, encoded(), "--block", "99", "0", "-o", path("v.json")}).code, 1);
  EXPECT_EQ(run({"spectrum", encoded(), "--block", "0", "0", "-o", path("v.json")}).code, 2);
  const CliRun id1 = run({"train", "--synthetic", "2", "--config", tiny_config(), "--ablation", "id1", "-o",
                       path("id1.ckpt")});
  ASSERT_EQ(id1.code, 0) << id1.err;
  EXPECT_EQ(run({"spectrum", "--model", path("id1.ckpt"), encoded(), "--block", "0", "0", "-o", path("v.json")}).code,
            1);
}

}  // namespace
}  // namespace sjdec
