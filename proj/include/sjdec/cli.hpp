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

#ifndef SJDEC_CLI_HPP_
#define SJDEC_CLI_HPP_

// Command-line front end. Exit codes: 0 ok, 1 I/O, parse or runtime
// failure, 2 usage, 3 checkpoint/configuration mismatch.

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "sjdec/checkpoint.hpp"
#include "sjdec/codec.hpp"
#include "sjdec/metrics.hpp"
#include "sjdec/model.hpp"
#include "sjdec/synthetic.hpp"
#include "sjdec/trainer.hpp"

namespace sjdec {

enum ExitCode { kExitOk = 0, kExitFailure = 1, kExitUsage = 2, kExitMismatch = 3 };

class UsageError : public Error {
 public:
  using Error::Error;
};

namespace cli {

namespace fs = std::filesystem;

inline void require_file(const std::string& path, const char* what) {
  if (!fs::is_regular_file(path)) throw IoError(std::string(what) + " not found: " + path);
}

inline void require_output_dir(const std::string& path) {
  const fs::path parent = fs::path(path).parent_path();
  if (!parent.empty() && !fs::is_directory(parent)) {
    throw UsageError("output directory does not exist: " + parent.string());
  }
}

inline void check_quality(int q) {
  if (q < 0 || q > 100) throw UsageError("quality must be in [0,100], got " + std::to_string(q));
}

// Sorted PPM/BMP files of a directory.
inline std::vector<std::string> list_images(const std::string& dir) {
  if (!fs::is_directory(dir)) throw UsageError("data directory not found: " + dir);
  std::vector<std::string> out;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (!e.is_regular_file()) continue;
    std::string ext = e.path().extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
    if (ext == ".ppm" || ext == ".bmp") out.push_back(e.path().string());
  }
  std::sort(out.begin(), out.end());
  if (out.empty()) throw UsageError("no .ppm or .bmp images in " + dir);
  return out;
}

inline std::vector<int> parse_int_list(const std::string& s) {
  std::vector<int> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.empty()) continue;
    std::size_t used = 0;
    int v = 0;
    try {
      v = std::stoi(item, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used != item.size()) throw UsageError("not an integer list: " + s);
    out.push_back(v);
  }
  return out;
}

// key=value lines; '#' starts a comment.
inline std::map<std::string, std::string> read_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw UsageError("cannot read config file " + path);
  std::map<std::string, std::string> kv;
  std::string line;
  int n = 0;
  auto trim = [](std::string s) {
    const auto b = s.find_first_not_of(" \t\r");
    const auto e = s.find_last_not_of(" \t\r");
    return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
  };
  while (std::getline(in, line)) {
    ++n;
    if (const auto h = line.find('#'); h != std::string::npos) line.resize(h);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw UsageError(path + ":" + std::to_string(n) + ": expected key=value");
    }
    kv[trim(line.substr(0, eq))] = trim(line.substr(eq + 1));
  }
  return kv;
}

struct TrainSetup {
  TrainConfig train;
  ModelConfig model;
  int synthetic_size = 64;
};

inline void apply_config(TrainSetup& s, const std::map<std::string, std::string>& kv) {
  for (const auto& [k, v] : kv) {
    auto as_int = [&] {
      const auto l = parse_int_list(v);
      if (l.size() != 1) throw UsageError("config key " + k + " expects one integer");
      return l[0];
    };
    if (k == "patch") s.train.patch = as_int();
    else if (k == "batch") s.train.batch = as_int();
    else if (k == "epochs") s.train.epochs = as_int();
    else if (k == "max_steps") s.train.max_steps = as_int();
    else if (k == "lr") {
      try {
        s.train.lr = std::stod(v);
      } catch (const std::exception&) {
        throw UsageError("config key lr expects a number");
      }
    } else if (k == "decay_epochs") s.train.decay_epochs = parse_int_list(v);
    else if (k == "q_set") s.train.q_set = parse_int_list(v);
    else if (k == "seed") s.train.seed = static_cast<uint64_t>(as_int());
    else if (k == "b") s.model.b = as_int();
    else if (k == "c") s.model.c = as_int();
    else if (k == "k") s.model.k = as_int();
    else if (k == "n_res_blocks") s.model.n_res_blocks = as_int();
    else if (k == "hidden") s.model.hidden = as_int();
    else if (k == "ablation") s.model.ablation = parse_ablation(v);
    else if (k == "synthetic_size") s.synthetic_size = as_int();
    else throw UsageError("unknown config key '" + k + "'");
  }
}

inline Checkpoint load_model(const std::string& path) {
  require_file(path, "checkpoint");
  return load_checkpoint(path);
}

inline void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot create " + path);
  out << text;
  if (!out) throw IoError("write failed: " + path);
}

inline std::vector<NamedImage> load_images(const std::vector<std::string>& paths, std::ostream& err) {
  std::vector<NamedImage> out;
  for (const auto& p : paths) {
    try {
      out.push_back({fs::path(p).filename().string(), read_image(p)});
    } catch (const Error& e) {
      err << "skipping " << p << ": " << e.what() << "\n";
    }
  }
  return out;
}

}  // namespace cli

inline int run_cli(int argc, const char* const* argv, std::ostream& out = std::cout,
                   std::ostream& err = std::cerr) {
  CLI::App app{"Spectral JPEG decoding: baseline codec and JDEC network"};
  app.require_subcommand(1);
  app.name("sjdec");

  // encode
  std::string enc_in, enc_out;
  int enc_q = 75;
  auto* enc = app.add_subcommand("encode", "Compress a PPM/BMP image to baseline JPEG (4:2:0)");
  enc->add_option("input", enc_in, "Input image")->required();
  enc->add_option("-q,--quality", enc_q, "Quality factor 0..100")->capture_default_str();
  enc->add_option("-o,--output", enc_out, "Output JPEG")->required();

  // inspect
  std::string ins_in, ins_comp = "y";
  std::vector<int> ins_block;
  bool ins_json = false;
  auto* ins = app.add_subcommand("inspect", "Print dimensions, quantization tables and coefficients");
  ins->add_option("input", ins_in, "Input JPEG")->required();
  ins->add_option("--block", ins_block, "Block row and column to dump")->expected(2);
  ins->add_option("--component", ins_comp, "Component for --block: y, cb or cr")->capture_default_str();
  ins->add_flag("--json", ins_json, "Emit JSON");

  // decode
  std::string dec_in, dec_out, dec_model;
  int dec_scale = 1;
  auto* dec = app.add_subcommand("decode", "Decode a JPEG with the baseline decoder or a JDEC checkpoint");
  dec->add_option("input", dec_in, "Input JPEG")->required();
  dec->add_option("-o,--output", dec_out, "Output PPM")->required();
  dec->add_option("--model", dec_model, "JDEC checkpoint");
  dec->add_option("--scale", dec_scale, "Output upsampling ratio (requires --model)")->capture_default_str();

  // train
  std::string tr_data, tr_config, tr_out, tr_ablation, tr_resume, tr_loss;
  int tr_synthetic = 0;
  bool tr_plus = false;
  std::optional<uint64_t> tr_seed;
  auto* tr = app.add_subcommand("train", "Train a JDEC model");
  auto* tr_data_opt = tr->add_option("--data", tr_data, "Directory of PPM/BMP training images");
  tr->add_option("--synthetic", tr_synthetic, "Use n generated images instead of --data")->excludes(tr_data_opt);
  tr->add_option("--config", tr_config, "key=value configuration file");
  tr->add_option("--ablation", tr_ablation, "id1 (no CCF), id2 (no sub-blocks), id3 (neither), id4 (Fourier features)");
  tr->add_flag("--jdec-plus", tr_plus, "Sample quality factors from 0..100");
  tr->add_option("--seed", tr_seed, "Random seed");
  tr->add_option("--resume", tr_resume, "Continue from a checkpoint");
  tr->add_option("--loss-csv", tr_loss, "Loss history path (default: <output>.loss.csv)");
  tr->add_option("-o,--output", tr_out, "Checkpoint path")->required();

  // eval
  std::string ev_data, ev_q = "10,20,30,40,50,60,70,80,90,100", ev_model, ev_out, ev_json;
  auto* ev = app.add_subcommand("eval", "Rate-distortion sweep over a directory of images");
  ev->add_option("--data", ev_data, "Directory of PPM/BMP reference images")->required();
  ev->add_option("--q", ev_q, "Comma-separated quality factors")->capture_default_str();
  ev->add_option("--model", ev_model, "JDEC checkpoint (default: baseline decoder)");
  ev->add_option("-o,--output", ev_out, "CSV output")->required();
  ev->add_option("--json", ev_json, "Also write the records as JSON");

  // spectrum
  std::string sp_model, sp_in, sp_out;
  std::vector<int> sp_block;
  double sp_bin_scale = 25.0;
  auto* sp = app.add_subcommand("spectrum", "Export estimated frequencies of one latent cell");
  sp->add_option("--model", sp_model, "JDEC checkpoint")->required();
  sp->add_option("input", sp_in, "Input JPEG")->required();
  sp->add_option("--block", sp_block, "Latent cell row and column")->expected(2)->required();
  sp->add_option("--bin-scale", sp_bin_scale, "Raster bins per unit frequency")->capture_default_str();
  sp->add_option("-o,--output", sp_out, "JSON output")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::ParseError& e) {
    app.exit(e, out, err);
    return kExitUsage;
  }

  try {
    if (*enc) {
      cli::check_quality(enc_q);
      cli::require_file(enc_in, "input");
      cli::require_output_dir(enc_out);
      const RgbImage img = read_image(enc_in);
      const auto bytes = encode_jpeg(img, enc_q);
      write_file(enc_out, bytes);
      out << "wrote " << enc_out << ": " << img.width << "x" << img.height << ", " << bytes.size()
          << " bytes, " << std::setprecision(4) << bpp(bytes.size(), img.width, img.height) << " bpp\n";
      return kExitOk;
    }

    if (*ins) {
      cli::require_file(ins_in, "input");
      if (ins_comp != "y" && ins_comp != "cb" && ins_comp != "cr") {
        throw UsageError("--component must be y, cb or cr");
      }
      const auto bytes = read_file(ins_in);
      const JpegSpectra s = parse_jpeg(bytes);
      const CoeffGrid& grid = ins_comp == "y" ? s.y : ins_comp == "cb" ? s.cb : s.cr;
      if (!ins_block.empty() && (ins_block[0] < 0 || ins_block[1] < 0 ||
                                 ins_block[0] >= grid.blocks_h || ins_block[1] >= grid.blocks_w)) {
        throw UsageError("--block outside the " + std::to_string(grid.blocks_h) + "x" +
                         std::to_string(grid.blocks_w) + " " + ins_comp + " block grid");
      }
      const double rate = bpp(bytes.size(), s.width, s.height);
      if (ins_json) {
        nlohmann::json j{{"width", s.width},
                         {"height", s.height},
                         {"subsampling", to_string(s.subsampling)},
                         {"bytes", bytes.size()},
                         {"bpp", rate},
                         {"q_luma", s.q_luma.q},
                         {"q_chroma", s.q_chroma.q}};
        if (!ins_block.empty()) {
          j["block"] = {{"component", ins_comp},
                        {"row", ins_block[0]},
                        {"col", ins_block[1]},
                        {"coefficients", grid.at(ins_block[0], ins_block[1]).values}};
        }
        out << j.dump(2) << "\n";
        return kExitOk;
      }
      auto table = [&](const char* name, const auto& v) {
        out << name << ":\n";
        for (int r = 0; r < kBlock; ++r) {
          out << " ";
          for (int c = 0; c < kBlock; ++c) out << std::setw(5) << v[r * kBlock + c];
          out << "\n";
        }
      };
      out << ins_in << ": " << s.width << "x" << s.height << ", " << to_string(s.subsampling) << ", "
          << bytes.size() << " bytes, " << std::setprecision(4) << rate << " bpp\n";
      table("luma quantization table", s.q_luma.q);
      table("chroma quantization table", s.q_chroma.q);
      if (!ins_block.empty()) {
        table((ins_comp + " block (" + std::to_string(ins_block[0]) + "," + std::to_string(ins_block[1]) +
               ") quantized coefficients").c_str(),
              grid.at(ins_block[0], ins_block[1]).values);
      }
      return kExitOk;
    }

    if (*dec) {
      if (dec_scale < 1) throw UsageError("--scale must be >= 1");
      if (dec_scale != 1 && dec_model.empty()) throw UsageError("--scale requires --model");
      cli::require_file(dec_in, "input");
      if (!dec_model.empty()) cli::require_file(dec_model, "checkpoint");
      cli::require_output_dir(dec_out);
      const JpegSpectra s = parse_jpeg(read_file(dec_in));
      RgbImage img;
      if (dec_model.empty()) {
        img = decode_baseline(s);
      } else {
        const Checkpoint ck = cli::load_model(dec_model);
        img = forward(s, ck.params, dec_scale);
      }
      write_ppm(dec_out, img);
      out << "wrote " << dec_out << ": " << img.width << "x" << img.height
          << (dec_model.empty() ? " (baseline)" : " (jdec)") << "\n";
      return kExitOk;
    }

    if (*tr) {
      if (tr_data.empty() && tr_synthetic <= 0) throw UsageError("train needs --data or --synthetic n");
      cli::TrainSetup setup;
      try {
        if (!tr_config.empty()) cli::apply_config(setup, cli::read_config_file(tr_config));
        if (!tr_ablation.empty()) setup.model.ablation = parse_ablation(tr_ablation);
        if (tr_plus) setup.train.q_set = extended_q_set();
        if (tr_seed) setup.train.seed = *tr_seed;
        setup.train.validate();
        setup.model.validate();
      } catch (const InvalidArgument& e) {
        throw UsageError(e.what());
      }
      if (setup.synthetic_size < setup.train.patch) {
        throw UsageError("synthetic_size must be at least the patch size");
      }
      std::vector<std::string> paths;
      if (!tr_data.empty()) paths = cli::list_images(tr_data);
      std::optional<Checkpoint> resume;
      if (!tr_resume.empty()) resume = load_checkpoint(tr_resume, setup.model);
      cli::require_output_dir(tr_out);
      const std::string loss_path = tr_loss.empty() ? tr_out + ".loss.csv" : tr_loss;
      cli::require_output_dir(loss_path);

      std::vector<RgbImage> data;
      if (!paths.empty()) {
        for (auto& ni : cli::load_images(paths, err))
          if (ni.image.width >= setup.train.patch && ni.image.height >= setup.train.patch) {
            data.push_back(std::move(ni.image));
          } else {
            err << "skipping " << ni.name << ": smaller than patch\n";
          }
        if (data.empty()) throw IoError("no usable training images in " + tr_data);
      } else {
        data = synthetic_dataset(tr_synthetic, setup.synthetic_size, setup.synthetic_size, setup.train.seed);
      }
      out << "seed " << setup.train.seed << ", " << data.size() << " images, ablation "
          << to_string(setup.model.ablation) << ", C=" << setup.model.c << " K=" << setup.model.k
          << " B=" << setup.model.b << "\n";
      const auto res = train(setup.train, data, setup.model, [&](const LossRecord& r) {
        if (r.step % 50 == 0) out << "step " << r.step << " epoch " << r.epoch << " loss " << r.loss << "\n";
      }, resume ? &*resume : nullptr);
      save_checkpoint(res.checkpoint, tr_out);
      write_loss_csv(loss_path, res.history);
      out << "wrote " << tr_out << " after " << res.checkpoint.step << " steps";
      if (!res.history.empty()) out << ", final loss " << res.history.back().loss;
      out << "\n";
      return kExitOk;
    }

    if (*ev) {
      const std::vector<int> qs = cli::parse_int_list(ev_q);
      if (qs.empty()) throw UsageError("--q needs at least one quality factor");
      for (int q : qs) cli::check_quality(q);
      const auto paths = cli::list_images(ev_data);
      cli::require_output_dir(ev_out);
      if (!ev_json.empty()) cli::require_output_dir(ev_json);
      std::optional<Checkpoint> ck;
      if (!ev_model.empty()) {
        ck = cli::load_model(ev_model);
      }
      const auto images = cli::load_images(paths, err);
      SpectraDecoder decoder = baseline_decoder;
      if (ck) decoder = [&](const JpegSpectra& s) { return forward(s, ck->params, 1); };
      const auto rep = rd_sweep(images, qs, ck ? "jdec" : "jpeg", decoder);
      for (const auto& f : rep.failures) err << "skipped " << f << "\n";
      if (rep.records.empty()) {
        err << "error: every image failed\n";
        return kExitFailure;
      }
      cli::write_text(ev_out, rd_csv(rep.records));
      if (!ev_json.empty()) cli::write_text(ev_json, rd_json(rep.records).dump(2) + "\n");
      out << "wrote " << rep.records.size() << " records for " << images.size() << " images to " << ev_out << "\n";
      return kExitOk;
    }

    if (*sp) {
      cli::require_file(sp_in, "input");
      cli::require_file(sp_model, "checkpoint");
      if (!(sp_bin_scale > 0)) throw UsageError("--bin-scale must be positive");
      cli::require_output_dir(sp_out);
      const Checkpoint ck = cli::load_model(sp_model);
      const JpegSpectra s = parse_jpeg(read_file(sp_in));
      const SpectrumViz viz = export_spectrum_viz(s, ck.params, sp_block[0], sp_block[1], sp_bin_scale);
      nlohmann::json entries = nlohmann::json::array();
      for (const auto& e : viz.entries) entries.push_back({{"fh", e.fh}, {"fw", e.fw}, {"amplitude", e.amplitude}});
      nlohmann::json raster = nlohmann::json::array();
      for (int r = 0; r < kVizBins; ++r) {
        nlohmann::json row = nlohmann::json::array();
        for (int c = 0; c < kVizBins; ++c) row.push_back(viz.at(r, c));
        raster.push_back(row);
      }
      const nlohmann::json j{{"cell", {sp_block[0], sp_block[1]}},
                             {"k", ck.params.config.k},
                             {"bin_scale", sp_bin_scale},
                             {"entries", entries},
                             {"raster", raster}};
      cli::write_text(sp_out, j.dump() + "\n");
      out << "wrote " << viz.entries.size() << " frequencies to " << sp_out << "\n";
      return kExitOk;
    }
  } catch (const UsageError& e) {
    err << "usage error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const CheckpointError& e) {
    err << "error: " << e.what() << "\n";
    const bool mismatch = e.kind() == CheckpointErrorKind::kVersion ||
                          e.kind() == CheckpointErrorKind::kShapeMismatch;
    return mismatch ? kExitMismatch : kExitFailure;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitFailure;
  }
  return kExitUsage;
}

}  // namespace sjdec

#endif  // SJDEC_CLI_HPP_
