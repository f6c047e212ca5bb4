/*
 * Copyright 2026 The refseq Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *    http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

// Command-line surface: dataset generation, the three training stages,
// single-scene inference, bulk prediction, evaluation, and mask inspection.
//
// Exit codes: 0 success, 2 usage, 3 IO, 4 missing stage dependency,
// 5 prediction/annotation mismatch.

#include <CLI11.hpp>

#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "refseq/errors.hpp"
#include "refseq/hash.hpp"
#include "refseq/pipeline.hpp"
#include "refseq/png.hpp"

namespace fs = std::filesystem;
using namespace refseq;

namespace {

// Timestamps are confined to this log; every other output is byte-stable.
void log_line(const std::string& out_dir, const std::string& msg) {
  if (out_dir.empty()) return;
  fs::create_directories(out_dir);
  std::ofstream os(out_dir + "/run.log", std::ios::app);
  const auto now = std::chrono::system_clock::now();
  const auto t = std::chrono::system_clock::to_time_t(now);
  char buf[32];
  std::strftime(buf, sizeof buf, "%F %T", std::gmtime(&t));
  os << "[" << buf << "] " << msg << "\n";
}

void write_config_echo(const std::string& out_dir, const std::string& cmd,
                       nlohmann::json settings) {
  fs::create_directories(out_dir);
  settings["command"] = cmd;
  nlohmann::json echo;
  echo["settings"] = settings;
  echo["config_hash"] = fnv1a_hex(settings.dump());
  std::ofstream os(out_dir + "/config_echo_" + cmd + ".json", std::ios::trunc);
  if (!os) throw IoError("cannot write config echo in " + out_dir);
  os << echo.dump(2) << "\n";
}

uint64_t resolve_seed(uint64_t flag_seed) {
  if (const char* env = std::getenv("REFSEQ_SEED")) return std::strtoull(env, nullptr, 10);
  return flag_seed;
}

synth::Scene find_scene(const std::string& data_dir, const std::string& scene_id) {
  for (const std::string split : {"train", "val", "test"})
    for (auto& s : synth::load_dataset(data_dir, split))
      if (s.scene_id == scene_id) return s;
  throw IoError("scene '" + scene_id + "' not found in " + data_dir);
}

vq::VqConfig vq_config_from_flags(int map_h, int map_w, int downsample, int latent_dim,
                                  int codebook, bool attention, uint64_t seed) {
  vq::VqConfig cfg;
  cfg.map_h = map_h;
  cfg.map_w = map_w;
  cfg.downsample = downsample;
  cfg.latent_dim = latent_dim;
  cfg.codebook_size = codebook;
  cfg.use_attention = attention;
  cfg.seed = seed;
  return cfg;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"refseq: referring scene perception on synthetic data"};
  app.require_subcommand(1);

  // ---- gen-data ----
  auto* gen = app.add_subcommand("gen-data", "generate a synthetic dataset");
  long gen_scenes = 2000;
  uint64_t gen_seed = 7;
  std::string gen_out;
  std::vector<double> gen_splits{0.8, 0.1, 0.1};
  int gen_min_persons = 1, gen_max_persons = 4;
  int gen_bins = 32;
  gen->add_option("--scenes", gen_scenes, "number of scenes");
  gen->add_option("--bins", gen_bins, "coordinate bins in the dataset vocabulary");
  gen->add_option("--seed", gen_seed, "generation seed");
  gen->add_option("--out", gen_out, "output directory")->required();
  gen->add_option("--splits", gen_splits, "train/val/test fractions")->expected(3);
  gen->add_option("--min-persons", gen_min_persons);
  gen->add_option("--max-persons", gen_max_persons);

  // ---- train ----
  auto* train = app.add_subcommand("train", "run a training stage");
  int train_stage = 1;
  std::string train_data, train_out, train_vq_path, train_init, train_name, train_single;
  uint64_t train_seed = 7;
  int train_steps = -1, train_batch = 8;
  double train_lr = -1;  // default set per stage below
  bool train_parity = false, train_dry = false, train_vq_attention = false;
  double train_parsing_weight = 0.4;
  int train_vq_latent = 16, train_vq_codebook = 32;
  std::vector<int> train_vq_channels{16, 32, 32, 32};
  train->add_option("--stage", train_stage, "1, 2, or 3")->required();
  train->add_option("--data", train_data, "dataset directory")->required();
  train->add_option("--out", train_out, "output directory")->required();
  train->add_option("--seed", train_seed, "training seed");
  train->add_option("--steps", train_steps, "override step count");
  train->add_option("--batch", train_batch, "batch size");
  train->add_option("--lr", train_lr, "override learning rate");
  train->add_option("--vq", train_vq_path, "stage-1 checkpoint (stages 2 and 3)");
  train->add_option("--init", train_init, "stage-2 checkpoint (stage 3)");
  train->add_option("--name", train_name, "checkpoint name for stage 3 (default stage3)");
  train->add_option("--single-task", train_single,
                    "restrict stage 3 to one task (box|keypoints|parsing|caption)");
  train->add_flag("--token-parity", train_parity,
                  "weight tasks by inverse target length (approximately equal token budgets)");
  train->add_flag("--vq-attention", train_vq_attention,
                  "enable the self-attention layers in the parsing autoencoder");
  train->add_option("--vq-latent", train_vq_latent, "parsing autoencoder latent dim");
  train->add_option("--vq-codebook", train_vq_codebook, "parsing codebook size");
  train->add_option("--vq-channels", train_vq_channels, "encoder stage widths")->expected(-1);
  train->add_option("--parsing-weight", train_parsing_weight,
                    "stage-3 sampling weight of the parsing task");
  train->add_flag("--dry-run", train_dry, "print the batch composition and exit");

  // ---- infer ----
  auto* infer = app.add_subcommand("infer", "run one task on one scene");
  std::string in_task, in_data, in_ckpt, in_vq, in_scene, in_text, in_out;
  std::vector<double> in_region;
  bool in_overlay = false;
  infer->add_option("--task", in_task, "box|keypoints|parsing|caption")->required();
  infer->add_option("--data", in_data, "dataset directory")->required();
  infer->add_option("--checkpoint", in_ckpt, "sequence model checkpoint base")->required();
  infer->add_option("--vq", in_vq, "parsing autoencoder checkpoint base");
  infer->add_option("--scene", in_scene, "scene id")->required();
  infer->add_option("--text", in_text, "referring text (box/keypoints/parsing)");
  infer->add_option("--region", in_region, "x1 y1 x2 y2 (caption)")->expected(4);
  infer->add_option("--out", in_out, "output directory")->required();
  infer->add_flag("--overlay", in_overlay, "write a PNG overlay");

  // ---- predict ----
  auto* predict = app.add_subcommand("predict", "bulk inference over a split");
  std::string pr_data, pr_split = "test", pr_ckpt, pr_vq, pr_out;
  predict->add_option("--data", pr_data)->required();
  predict->add_option("--split", pr_split);
  predict->add_option("--checkpoint", pr_ckpt)->required();
  predict->add_option("--vq", pr_vq)->required();
  predict->add_option("--out", pr_out)->required();

  // ---- eval ----
  auto* eval = app.add_subcommand("eval", "score predictions against annotations");
  std::string ev_pred, ev_data, ev_split = "test", ev_out;
  eval->add_option("--pred", ev_pred, "predictions JSONL")->required();
  eval->add_option("--data", ev_data)->required();
  eval->add_option("--split", ev_split);
  eval->add_option("--out", ev_out)->required();

  // ---- inspect-mask ----
  auto* inspect = app.add_subcommand("inspect-mask", "render a decoder mask as ASCII");
  std::string mask_layout;
  inspect->add_option("--layout", mask_layout,
                      "length[:block_start:block_size], e.g. 12 or 18:6:12")
      ->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);  // --help
    app.exit(e);
    return 2;
  }

  try {
    if (gen->parsed()) {
      const uint64_t seed = resolve_seed(gen_seed);
      synth::SceneConfig cfg;
      cfg.min_persons = gen_min_persons;
      cfg.max_persons = gen_max_persons;
      cfg.vocab_bins = gen_bins;
      write_config_echo(gen_out, "gen-data",
                        {{"scenes", gen_scenes},
                         {"seed", seed},
                         {"splits", gen_splits},
                         {"scene_config", cfg.to_json()}});
      const auto report = synth::build_dataset(gen_out, gen_scenes, seed, gen_splits, cfg);
      if (report.scenes_skipped)
        std::cerr << "warning: skipped " << report.scenes_skipped
                  << " scene indices (placement failures)\n";
      std::cout << report.manifest.dump(2) << "\n";
      log_line(gen_out, "gen-data complete");
      return 0;
    }

    if (train->parsed()) {
      const uint64_t seed = resolve_seed(train_seed);
      pipeline::TrainConfig cfg;
      cfg.seed = seed;
      cfg.batch_size = train_batch;
      cfg.token_parity = train_parity;
      cfg.parsing_weight = train_parsing_weight;
      if (train_lr > 0) cfg.lr = static_cast<float>(train_lr);

      if (train_stage == 1) {
        vq::VqConfig vq_cfg = vq_config_from_flags(32, 24, 8, train_vq_latent,
                                                   train_vq_codebook, train_vq_attention, seed);
        vq_cfg.hidden_channels = train_vq_channels;
        vq::VqTrainConfig tc;
        tc.seed = seed;
        if (train_steps > 0) tc.steps = train_steps;
        if (train_lr > 0) tc.learning_rate = static_cast<float>(train_lr);
        write_config_echo(train_out, "train-stage1",
                          {{"stage", 1},
                           {"data", train_data},
                           {"seed", seed},
                           {"vq_config", vq_cfg.to_json()},
                           {"steps", tc.steps},
                           {"lr", tc.learning_rate},
                           {"batch", tc.batch_size}});
        if (train_dry) {
          std::cout << "stage 1: parsing autoencoder, " << tc.steps << " steps, batch "
                    << tc.batch_size << "\n";
          return 0;
        }
        auto art = pipeline::run_stage1(train_data, train_out, vq_cfg, tc, cfg.placement);
        std::cout << "stage 1 checkpoint: " << art.checkpoint << "\n";
        log_line(train_out, "train stage 1 complete");
        return 0;
      }

      const std::string vq_base =
          train_vq_path.empty() ? train_out + "/vq.rseq1" : train_vq_path;
      if (train_stage == 2) {
        if (train_steps > 0) cfg.stage2_steps = train_steps;
        model::ModelConfig mc;
        mc.seed = seed;
        write_config_echo(train_out, "train-stage2",
                          {{"stage", 2},
                           {"data", train_data},
                           {"seed", seed},
                           {"vq", vq_base},
                           {"model_config", mc.to_json()},
                           {"train_config", cfg.to_json()}});
        if (train_dry) {
          std::cout << "stage 2: caption pretraining, " << cfg.stage2_steps
                    << " steps, batch of " << cfg.batch_size << " caption samples\n";
          return 0;
        }
        auto art = pipeline::run_stage2(train_data, train_out, vq_base, mc, cfg);
        std::cout << "stage 2 checkpoint: " << art.checkpoint << "\n";
        log_line(train_out, "train stage 2 complete");
        return 0;
      }

      if (train_stage == 3) {
        if (train_steps > 0) cfg.stage3_steps = train_steps;
        const std::string init_base =
            train_init.empty() ? train_out + "/stage2.rseq1" : train_init;
        std::optional<codec::Task> single;
        if (!train_single.empty()) single = codec::task_from_name(train_single);
        const std::string name = train_name.empty() ? "stage3" : train_name;
        write_config_echo(train_out, "train-stage3",
                          {{"stage", 3},
                           {"data", train_data},
                           {"seed", seed},
                           {"vq", vq_base},
                           {"init", init_base},
                           {"single_task", train_single},
                           {"name", name},
                           {"train_config", cfg.to_json()}});
        if (train_dry) {
          if (single) {
            std::cout << "stage 3 (single-task " << train_single << "): every batch is "
                      << cfg.batch_size << " " << train_single << " samples\n";
          } else {
            const double rest = (1.0 - cfg.parsing_weight) / 3.0;
            std::cout << "stage 3: batch of " << cfg.batch_size
                      << " = one sample of each task (box, keypoints, parsing, caption) + "
                      << cfg.batch_size - 4 << " weighted draws (parsing " << cfg.parsing_weight
                      << ", others " << rest << " each"
                      << (cfg.token_parity ? "; token-parity reweighting active" : "") << ")\n";
          }
          return 0;
        }
        auto art =
            pipeline::run_stage3(train_data, train_out, init_base, vq_base, cfg, single, name);
        std::cout << "stage 3 checkpoint: " << art.checkpoint << "\n";
        log_line(train_out, "train stage 3 complete");
        return 0;
      }
      throw RangeError("train: stage must be 1, 2, or 3");
    }

    if (infer->parsed()) {
      const codec::Task task = codec::task_from_name(in_task);
      if (task == codec::Task::Caption && in_region.size() != 4)
        throw RangeError("infer: the caption task needs --region x1 y1 x2 y2");
      if (task != codec::Task::Caption && in_text.empty())
        throw RangeError("infer: this task needs --text");
      write_config_echo(in_out, "infer",
                        {{"task", in_task},
                         {"data", in_data},
                         {"checkpoint", in_ckpt},
                         {"vq", in_vq},
                         {"scene", in_scene},
                         {"text", in_text},
                         {"region", in_region}});
      const synth::Scene scene = find_scene(in_data, in_scene);
      const auto vocab = pipeline::dataset_vocabulary(in_data);
      const auto manifest = synth::load_manifest(in_data);
      const auto qcfg = pipeline::dataset_quantizer(vocab, manifest);
      model::Seq2SeqModel m = model::Seq2SeqModel::load(in_ckpt);

      pipeline::Prediction pred;
      if (task == codec::Task::Caption) {
        // match the region against the scene's persons
        int person_index = -1;
        for (size_t p = 0; p < scene.persons.size(); ++p) {
          const auto& r = scene.persons[p].region;
          if (std::abs(r.x1 - in_region[0]) < 1 && std::abs(r.y1 - in_region[1]) < 1 &&
              std::abs(r.x2 - in_region[2]) < 1 && std::abs(r.y2 - in_region[3]) < 1)
            person_index = static_cast<int>(p);
        }
        if (person_index < 0)
          throw RangeError("infer: --region does not match any person in the scene");
        pred = pipeline::infer_caption(m, scene, person_index, qcfg);
      } else {
        if (in_vq.empty())
          throw DependencyError("infer: tasks with parsing output need --vq (stage-1 checkpoint)");
        const vq::VqModel vqm = vq::VqModel::load(in_vq);
        pred = pipeline::infer_one(m, vqm, scene, task, in_text, 0, qcfg,
                                   vq::Placement::Resize);
      }
      nlohmann::json j;
      j["scene_id"] = pred.scene_id;
      j["task"] = codec::task_name(pred.task);
      j["tokens"] = pred.tokens;
      j["decoded"] = pred.decoded;
      j["telemetry"] = {{"prefix_steps", pred.prefix_steps},
                        {"block_forwards", pred.block_forwards}};
      fs::create_directories(in_out);
      const std::string pred_path = in_out + "/prediction_" + in_scene + "_" + in_task + ".json";
      std::ofstream os(pred_path, std::ios::trunc);
      os << j.dump(2) << "\n";
      std::cout << j.dump(2) << "\n";

      if (in_overlay) {
        png::Overlay ov;
        ParsingMap label_map;
        if (pred.decoded.contains("region")) {
          const auto& r = pred.decoded.at("region");
          ov.box = codec::Region{r.at(0).get<double>(), r.at(1).get<double>(),
                                 r.at(2).get<double>(), r.at(3).get<double>()};
        }
        if (pred.decoded.contains("keypoints")) {
          codec::KeypointSet k(vocab.keypoints());
          for (size_t kk = 0; kk < k.schema.names.size(); ++kk) {
            const auto& jk = pred.decoded.at("keypoints").at(k.schema.names[kk]);
            if (!jk.is_null()) k.points[kk] = {jk.at(0).get<double>(), jk.at(1).get<double>()};
          }
          ov.keypoints = std::move(k);
        }
        if (pred.decoded.contains("labels_rle")) {
          label_map = ParsingMap(scene.height, scene.width,
                                 pred.decoded.at("channels").get<int>());
          const auto& rle = pred.decoded.at("labels_rle");
          int y = 0, x = 0;
          for (size_t i = 0; i + 1 < rle.size(); i += 2) {
            int v = rle.at(i).get<int>(), n = rle.at(i + 1).get<int>();
            while (n-- > 0) {
              label_map.paint(v, y, x);
              if (++x == scene.width) {
                x = 0;
                ++y;
              }
            }
          }
          ov.parsing = &label_map;
        }
        png::write_overlay(in_out + "/overlay_" + in_scene + "_" + in_task + ".png", scene.image,
                           scene.width, scene.height, ov);
      }
      log_line(in_out, "infer complete");
      return 0;
    }

    if (predict->parsed()) {
      write_config_echo(pr_out, "predict",
                        {{"data", pr_data},
                         {"split", pr_split},
                         {"checkpoint", pr_ckpt},
                         {"vq", pr_vq}});
      const auto vocab = pipeline::dataset_vocabulary(pr_data);
      const auto manifest = synth::load_manifest(pr_data);
      const auto qcfg = pipeline::dataset_quantizer(vocab, manifest);
      model::Seq2SeqModel m = model::Seq2SeqModel::load(pr_ckpt);
      const vq::VqModel vqm = vq::VqModel::load(pr_vq);
      const auto scenes = synth::load_dataset(pr_data, pr_split);
      fs::create_directories(pr_out);
      const std::string out_path = pr_out + "/preds_" + pr_split + ".jsonl";
      pipeline::predict_split(m, vqm, scenes, qcfg, vq::Placement::Resize, out_path);
      std::cout << "predictions: " << out_path << "\n";
      log_line(pr_out, "predict complete");
      return 0;
    }

    if (eval->parsed()) {
      write_config_echo(ev_out, "eval",
                        {{"pred", ev_pred}, {"data", ev_data}, {"split", ev_split}});
      const auto report = pipeline::evaluate(ev_pred, ev_data, ev_split);
      pipeline::write_report(report, ev_out);
      std::cout << report.to_csv();
      log_line(ev_out, "eval complete");
      return 0;
    }

    if (inspect->parsed()) {
      int len = 0, bs = -1, bsz = 0;
      {
        std::istringstream is(mask_layout);
        std::string part;
        std::vector<int> parts;
        while (std::getline(is, part, ':')) parts.push_back(std::stoi(part));
        if (parts.size() == 1) {
          len = parts[0];
        } else if (parts.size() == 3) {
          len = parts[0];
          bs = parts[1];
          bsz = parts[2];
        } else {
          throw RangeError("inspect-mask: layout must be LEN or LEN:START:SIZE");
        }
      }
      const model::DecoderMask mask = model::build_hybrid_mask(len, bs, bsz);
      for (int i = 0; i < len; ++i) {
        for (int j = 0; j < len; ++j) std::cout << (mask.at(i, j) ? '#' : '.');
        std::cout << "\n";
      }
      return 0;
    }
  } catch (const CLI::Error& e) {
    return 2;
  } catch (const RangeError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return 2;
  } catch (const TruncationError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return 2;
  } catch (const DependencyError& e) {
    std::cerr << "dependency error: " << e.what() << "\n";
    return 4;
  } catch (const DataMismatchError& e) {
    std::cerr << "data mismatch: " << e.what() << "\n";
    return 5;
  } catch (const IoError& e) {
    std::cerr << "io error: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
