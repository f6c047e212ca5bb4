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

#include "refseq/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "refseq/errors.hpp"
#include "refseq/ops.hpp"

namespace refseq::pipeline {

namespace fs = std::filesystem;
using codec::Task;
using codec::TokenSeq;
using model::TaskSample;

nlohmann::json TrainConfig::to_json() const {
  return {{"stage2_steps", stage2_steps},
          {"stage3_steps", stage3_steps},
          {"batch_size", batch_size},
          {"lr", lr},
          {"lr_linear_decay", lr_linear_decay},
          {"parsing_weight", parsing_weight},
          {"token_parity", token_parity},
          {"seed", seed},
          {"log_every", log_every},
          {"placement", vq::placement_name(placement)}};
}

codec::Vocabulary dataset_vocabulary(const std::string& data_dir) {
  std::ifstream is(synth::DatasetPaths{data_dir}.vocab());
  if (!is) throw IoError("dataset: cannot open vocab.json in " + data_dir);
  nlohmann::json j;
  is >> j;
  return codec::Vocabulary::from_json(j);
}

codec::QuantizerConfig dataset_quantizer(const codec::Vocabulary& vocab,
                                         const nlohmann::json& manifest) {
  codec::QuantizerConfig q;
  q.n_bins = vocab.config().n_bins;
  q.width = manifest.at("config").at("width").get<double>();
  q.height = manifest.at("config").at("height").get<double>();
  return q;
}

ParsingMap person_model_map(const synth::PersonInstance& person, int frame_w, int frame_h,
                            const vq::VqConfig& cfg, vq::Placement placement) {
  const ParsingMap frame = synth::full_frame_parsing(person, frame_w, frame_h);
  return vq::crop_to_model(frame, person.region, cfg, placement);
}

const std::vector<TaskSample>& SampleSet::of(Task t) const {
  switch (t) {
    case Task::Box: return box;
    case Task::Keypoints: return keypoints;
    case Task::Parsing: return parsing;
    case Task::Caption: return caption;
  }
  throw RangeError("sample set: bad task");
}

SampleSet build_samples(const std::vector<synth::Scene>& scenes, const codec::Vocabulary& vocab,
                        const codec::QuantizerConfig& qcfg, const vq::VqModel* vq_model,
                        vq::Placement placement) {
  SampleSet out;
  for (const auto& scene : scenes) {
    const Tensor image = scene.image_tensor();
    for (size_t r = 0; r < scene.references.size(); ++r) {
      const auto& ref = scene.references[r];
      const auto& person = scene.persons[static_cast<size_t>(ref.target)];

      TaskSample box;
      box.task = Task::Box;
      box.image = image;
      box.instruction = codec::render_instruction(Task::Box, ref.text, qcfg, vocab);
      box.target = codec::encode_region(person.region, qcfg, vocab);
      box.scene_id = scene.scene_id;
      box.ref_index = static_cast<int>(r);
      box.dimension = ref.dimension;
      out.box.push_back(std::move(box));

      TaskSample kpt;
      kpt.task = Task::Keypoints;
      kpt.image = image;
      kpt.instruction = codec::render_instruction(Task::Keypoints, ref.text, qcfg, vocab);
      kpt.target = codec::encode_box_keypoint_sequence(person.region, person.keypoints, qcfg, vocab);
      kpt.scene_id = scene.scene_id;
      kpt.ref_index = static_cast<int>(r);
      kpt.dimension = ref.dimension;
      out.keypoints.push_back(std::move(kpt));

      if (vq_model) {
        TaskSample par;
        par.task = Task::Parsing;
        par.image = image;
        par.instruction = codec::render_instruction(Task::Parsing, ref.text, qcfg, vocab);
        par.target = codec::encode_region(person.region, qcfg, vocab);
        par.target.push_back(vocab.bop());
        const ParsingMap model_map =
            person_model_map(person, scene.width, scene.height, vq_model->config(), placement);
        const TokenSeq codes = vq_model->merge_tokens(model_map, vocab);
        par.target.insert(par.target.end(), codes.begin(), codes.end());
        par.query_block_tokens = static_cast<int>(codes.size());
        par.scene_id = scene.scene_id;
        par.ref_index = static_cast<int>(r);
        par.dimension = ref.dimension;
        out.parsing.push_back(std::move(par));
      }
    }
    for (size_t p = 0; p < scene.persons.size(); ++p) {
      TaskSample cap;
      cap.task = Task::Caption;
      cap.image = image;
      cap.instruction =
          codec::render_instruction(Task::Caption, scene.persons[p].region, qcfg, vocab);
      cap.target = vocab.encode_text(scene.captions[p]);
      cap.scene_id = scene.scene_id;
      cap.ref_index = static_cast<int>(p);
      cap.dimension = "caption";
      out.caption.push_back(std::move(cap));
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// training stages

namespace {

// Deterministic epoch-shuffled cursor over a sample list.
class SampleCursor {
 public:
  SampleCursor(size_t n, Rng rng) : rng_(rng), order_(n) {
    for (size_t i = 0; i < n; ++i) order_[i] = i;
    cursor_ = n;  // reshuffle on first draw
  }
  size_t next() {
    if (cursor_ >= order_.size()) {
      for (size_t i = order_.size(); i > 1; --i)
        std::swap(order_[i - 1], order_[static_cast<size_t>(rng_.uniform_int(0, static_cast<int>(i) - 1))]);
      cursor_ = 0;
    }
    return order_[cursor_++];
  }

 private:
  Rng rng_;
  std::vector<size_t> order_;
  size_t cursor_;
};

double average_target_len(const std::vector<TaskSample>& samples) {
  if (samples.empty()) return 1.0;
  double total = 0;
  for (const auto& s : samples) total += static_cast<double>(s.target.size());
  return total / static_cast<double>(samples.size());
}

struct CurveWriter {
  std::ofstream os;
  explicit CurveWriter(const std::string& path) : os(path, std::ios::trunc) {
    if (!os) throw IoError("train: cannot write " + path);
    os << "step,task,loss\n";
  }
  void row(long step, const std::string& task, double loss) {
    os << step << "," << task << "," << loss << "\n";
  }
};

double probe_loss(const model::Seq2SeqModel& m, const std::vector<TaskSample>& samples,
                  size_t probe_n) {
  NoGradScope ng;
  std::vector<const TaskSample*> probe;
  for (size_t i = 0; i < std::min(probe_n, samples.size()); ++i) probe.push_back(&samples[i]);
  if (probe.empty()) return 0.0;
  return model::seq_ce_loss(m, probe).item_double();
}

void train_model(model::Seq2SeqModel& m, const SampleSet& samples,
                 const std::vector<Task>& tasks, const TrainConfig& cfg, int steps,
                 CurveWriter& curve) {
  Adam opt(AdamConfig{cfg.lr, 0.9f, 0.999f, 1e-8f});
  opt.register_params(m.params());

  Rng rng(cfg.seed, 0x57a9e);
  std::map<Task, SampleCursor> cursors;
  for (Task t : tasks) {
    if (samples.of(t).empty())
      throw RangeError(std::string("train: no samples for task '") + codec::task_name(t) + "'");
    cursors.emplace(t, SampleCursor(samples.of(t).size(), rng.split(static_cast<uint64_t>(t))));
  }

  // sampling weights for the free batch slots
  std::map<Task, double> weights;
  if (cfg.token_parity) {
    double total = 0;
    for (Task t : tasks) total += 1.0 / average_target_len(samples.of(t));
    for (Task t : tasks) weights[t] = (1.0 / average_target_len(samples.of(t))) / total;
  } else if (tasks.size() == 1) {
    weights[tasks[0]] = 1.0;
  } else {
    const double rest = (1.0 - cfg.parsing_weight) / static_cast<double>(tasks.size() - 1);
    for (Task t : tasks) weights[t] = t == Task::Parsing ? cfg.parsing_weight : rest;
  }

  Rng pick(cfg.seed, 0x91c);
  for (long step = 1; step <= steps; ++step) {
    if (cfg.lr_linear_decay)
      opt.set_lr(cfg.lr * std::max(0.05f, 1.f - static_cast<float>(step) / steps));

    std::vector<const TaskSample*> batch;
    // guarantee every task appears, then fill by weight
    for (Task t : tasks)
      batch.push_back(&samples.of(t)[cursors.at(t).next()]);
    while (static_cast<int>(batch.size()) < cfg.batch_size) {
      double u = pick.uniform();
      Task chosen = tasks.back();
      for (Task t : tasks) {
        if (u < weights.at(t)) {
          chosen = t;
          break;
        }
        u -= weights.at(t);
      }
      batch.push_back(&samples.of(chosen)[cursors.at(chosen).next()]);
    }

    opt.zero_grad();
    double loss_value = 0;
    try {
      TapeScope scope;
      Tensor loss = model::seq_ce_loss(m, batch);
      loss_value = loss.item_double();
      if (!std::isfinite(loss_value)) throw TrainingDiverged("train: non-finite loss", step);
      backward(loss);
    } catch (const NumericsError& e) {
      throw TrainingDiverged(std::string("train: ") + e.what(), step);
    }
    opt.step();

    if (step % cfg.log_every == 0 || step == steps) {
      if (tasks.size() == 1) {
        curve.row(step, codec::task_name(tasks[0]), loss_value);
      } else {
        for (Task t : tasks)
          curve.row(step, codec::task_name(t), probe_loss(m, samples.of(t), 8));
      }
    }
  }
}

}  // namespace

StageArtifacts run_stage1(const std::string& data_dir, const std::string& out_dir,
                          const vq::VqConfig& vq_cfg, const vq::VqTrainConfig& train_cfg,
                          vq::Placement placement) {
  fs::create_directories(out_dir);
  const auto manifest = synth::load_manifest(data_dir);
  const int frame_w = manifest.at("config").at("width").get<int>();
  const int frame_h = manifest.at("config").at("height").get<int>();

  auto collect = [&](const std::string& split) {
    std::vector<ParsingMap> maps;
    for (const auto& scene : synth::load_dataset(data_dir, split))
      for (const auto& person : scene.persons)
        maps.push_back(person_model_map(person, frame_w, frame_h, vq_cfg, placement));
    return maps;
  };
  const std::vector<ParsingMap> train_maps = collect("train");
  const std::vector<ParsingMap> heldout = collect("val");

  vq::VqModel vq_model(vq_cfg);
  CurveWriter curve(out_dir + "/vq_curve.csv");
  const auto result = vq::train_vq(vq_model, train_maps, heldout, train_cfg,
                                   [&](long step, double loss) { curve.row(step, "vq", loss); });

  StageArtifacts art;
  art.checkpoint = out_dir + "/vq.rseq1";
  art.final_loss = result.final_loss;
  vq_model.save(art.checkpoint);
  {
    std::ofstream os(out_dir + "/vq_heldout.json", std::ios::trunc);
    os << nlohmann::json{{"heldout_miou", result.heldout_miou},
                         {"train_maps", train_maps.size()},
                         {"heldout_maps", heldout.size()}}
              .dump(2)
       << "\n";
  }
  return art;
}

StageArtifacts run_stage2(const std::string& data_dir, const std::string& out_dir,
                          const std::string& vq_base, model::ModelConfig model_cfg,
                          const TrainConfig& cfg) {
  fs::create_directories(out_dir);
  if (!fs::exists(vq_base))
    throw DependencyError("stage 2 requires the stage-1 checkpoint at " + vq_base);
  const vq::VqModel vq_model = vq::VqModel::load(vq_base);
  const codec::Vocabulary vocab = dataset_vocabulary(data_dir);
  const auto manifest = synth::load_manifest(data_dir);
  const codec::QuantizerConfig qcfg = dataset_quantizer(vocab, manifest);

  if (vq_model.config().n_tokens() != vocab.range(codec::Partition::Query).size())
    throw ShapeError("stage 2: parsing grid " + std::to_string(vq_model.config().n_tokens()) +
                     " does not match the vocabulary query partition");
  model_cfg.query_count = vq_model.config().n_tokens();
  model_cfg.latent_dim = vq_model.config().latent_dim;

  const auto scenes = synth::load_dataset(data_dir, "train");
  const SampleSet samples = build_samples(scenes, vocab, qcfg, nullptr, cfg.placement);

  Tensor codebook = vq_model.codebook();
  model::Seq2SeqModel m(model_cfg, vocab, &codebook);
  CurveWriter curve(out_dir + "/stage2_curve.csv");
  train_model(m, samples, {Task::Caption}, cfg, cfg.stage2_steps, curve);

  StageArtifacts art;
  art.checkpoint = out_dir + "/stage2.rseq1";
  m.save(art.checkpoint);
  return art;
}

StageArtifacts run_stage3(const std::string& data_dir, const std::string& out_dir,
                          const std::string& stage2_base, const std::string& vq_base,
                          const TrainConfig& cfg, std::optional<codec::Task> single_task,
                          const std::string& checkpoint_name) {
  fs::create_directories(out_dir);
  if (!fs::exists(stage2_base))
    throw DependencyError("stage 3 requires the stage-2 checkpoint at " + stage2_base);
  if (!fs::exists(vq_base))
    throw DependencyError("stage 3 requires the stage-1 checkpoint at " + vq_base);
  const vq::VqModel vq_model = vq::VqModel::load(vq_base);
  const codec::Vocabulary vocab = dataset_vocabulary(data_dir);
  const auto manifest = synth::load_manifest(data_dir);
  const codec::QuantizerConfig qcfg = dataset_quantizer(vocab, manifest);

  const auto scenes = synth::load_dataset(data_dir, "train");
  const SampleSet samples = build_samples(scenes, vocab, qcfg, &vq_model, cfg.placement);

  model::Seq2SeqModel m = model::Seq2SeqModel::load(stage2_base);
  std::vector<Task> tasks;
  if (single_task)
    tasks = {*single_task};
  else
    tasks = {Task::Box, Task::Keypoints, Task::Parsing, Task::Caption};
  if (!single_task && cfg.batch_size < static_cast<int>(tasks.size()))
    throw RangeError("stage 3: batch size must cover all four tasks");

  CurveWriter curve(out_dir + "/" + checkpoint_name + "_curve.csv");
  train_model(m, samples, tasks, cfg, cfg.stage3_steps, curve);

  StageArtifacts art;
  art.checkpoint = out_dir + "/" + checkpoint_name + ".rseq1";
  m.save(art.checkpoint);
  return art;
}

// ---------------------------------------------------------------------------
// inference

namespace {

nlohmann::json region_json(const codec::Region& r) {
  return nlohmann::json::array({r.x1, r.y1, r.x2, r.y2});
}

}  // namespace

Prediction infer_one(const model::Seq2SeqModel& m, const vq::VqModel& vq_model,
                     const synth::Scene& scene, Task task, const std::string& text, int index,
                     const codec::QuantizerConfig& qcfg, vq::Placement placement) {
  if (task == Task::Caption)
    throw RangeError("infer: captions take a region; use infer_caption");
  const codec::Vocabulary& vocab = m.vocab();
  Tensor images = Tensor::from_data({1, 3, scene.height, scene.width}, scene.image);
  NoGradScope ng;
  const model::EncodedBatch enc =
      m.encode(images, {codec::render_instruction(task, text, qcfg, vocab)});

  Prediction pred;
  pred.scene_id = scene.scene_id;
  pred.task = task;
  pred.index = index;

  auto grammar_fail = [&](const std::string& why) {
    pred.decoded = nlohmann::json{{"grammar_error", why}};
  };

  if (task == Task::Box) {
    const auto res = m.decode_autoregressive(enc, 8, vocab.eos());
    pred.tokens = res.tokens;
    pred.prefix_steps = res.decoder_forwards;
    try {
      if (res.tokens.size() != 4) throw ParseError("expected exactly 4 bin tokens", 0);
      const codec::Region r = codec::decode_region(res.tokens, qcfg, vocab);
      pred.decoded = {{"region", region_json(r)}};
    } catch (const ParseError& e) {
      grammar_fail(e.what());
    }
  } else if (task == Task::Keypoints) {
    const auto res = m.decode_autoregressive(enc, 24, vocab.eos());
    pred.tokens = res.tokens;
    pred.prefix_steps = res.decoder_forwards;
    try {
      const auto decoded = codec::decode_box_keypoint_sequence(res.tokens, qcfg, vocab);
      nlohmann::json jk;
      for (size_t k = 0; k < decoded.keypoints.schema.names.size(); ++k) {
        if (decoded.keypoints.points[k])
          jk[decoded.keypoints.schema.names[k]] = nlohmann::json::array(
              {decoded.keypoints.points[k]->first, decoded.keypoints.points[k]->second});
        else
          jk[decoded.keypoints.schema.names[k]] = nullptr;
      }
      pred.decoded = {{"region", region_json(decoded.box)}, {"keypoints", jk}};
    } catch (const ParseError& e) {
      grammar_fail(e.what());
    }
  } else {  // parsing
    const auto prefix_res = m.decode_autoregressive(enc, 8, vocab.bop());
    pred.prefix_steps = prefix_res.decoder_forwards;
    try {
      if (prefix_res.tokens.size() != 4)
        throw ParseError("expected 4 bin tokens before the block opener", 0);
      TokenSeq prefix = prefix_res.tokens;
      const codec::Region box = codec::decode_region(prefix, qcfg, vocab);
      prefix.push_back(vocab.bop());
      const auto qpg = m.decode_qpg(enc, prefix);
      pred.tokens = qpg.tokens;
      pred.block_forwards = qpg.block_forwards;
      const TokenSeq codes(qpg.tokens.begin() + 5, qpg.tokens.end());
      const ParsingMap person_map = vq_model.dispense_tokens(codes, vocab);
      const ParsingMap frame =
          vq::place_in_frame(person_map, box, scene.width, scene.height, placement);
      // row-major run-length encoding of the label image
      nlohmann::json rle = nlohmann::json::array();
      int run_val = frame.label(0, 0), run_len = 0;
      for (int y = 0; y < frame.height; ++y)
        for (int x = 0; x < frame.width; ++x) {
          const int v = frame.label(y, x);
          if (v == run_val) {
            ++run_len;
          } else {
            rle.push_back(run_val);
            rle.push_back(run_len);
            run_val = v;
            run_len = 1;
          }
        }
      rle.push_back(run_val);
      rle.push_back(run_len);
      pred.decoded = {{"region", region_json(box)},
                      {"labels_rle", rle},
                      {"height", frame.height},
                      {"width", frame.width},
                      {"channels", frame.channels}};
    } catch (const ParseError& e) {
      pred.tokens = prefix_res.tokens;
      grammar_fail(e.what());
    } catch (const RangeError& e) {
      pred.tokens = prefix_res.tokens;
      grammar_fail(e.what());
    }
  }
  return pred;
}

Prediction infer_caption(const model::Seq2SeqModel& m, const synth::Scene& scene,
                         int person_index, const codec::QuantizerConfig& qcfg) {
  const codec::Vocabulary& vocab = m.vocab();
  Tensor images = Tensor::from_data({1, 3, scene.height, scene.width}, scene.image);
  NoGradScope ng;
  const auto& person = scene.persons.at(static_cast<size_t>(person_index));
  const model::EncodedBatch enc =
      m.encode(images, {codec::render_instruction(Task::Caption, person.region, qcfg, vocab)});
  const auto res = m.decode_autoregressive(enc, 30, vocab.eos());

  Prediction pred;
  pred.scene_id = scene.scene_id;
  pred.task = Task::Caption;
  pred.index = person_index;
  pred.tokens = res.tokens;
  pred.prefix_steps = res.decoder_forwards;
  try {
    pred.decoded = {{"text", vocab.decode_text(res.tokens)}};
  } catch (const ParseError& e) {
    pred.decoded = nlohmann::json{{"grammar_error", e.what()}};
  }
  return pred;
}

namespace {

nlohmann::json prediction_line(const Prediction& p) {
  nlohmann::json j;
  j["scene_id"] = p.scene_id;
  j["task"] = codec::task_name(p.task);
  j["index"] = p.index;
  j["dimension"] = p.dimension;
  j["tokens"] = p.tokens;
  j["decoded"] = p.decoded;
  j["telemetry"] = {{"prefix_steps", p.prefix_steps}, {"block_forwards", p.block_forwards}};
  return j;
}

}  // namespace

void predict_split(const model::Seq2SeqModel& m, const vq::VqModel& vq_model,
                   const std::vector<synth::Scene>& scenes, const codec::QuantizerConfig& qcfg,
                   vq::Placement placement, const std::string& out_jsonl) {
  std::ofstream os(out_jsonl, std::ios::trunc);
  if (!os) throw IoError("predict: cannot write " + out_jsonl);
  for (const auto& scene : scenes) {
    for (size_t r = 0; r < scene.references.size(); ++r) {
      const auto& ref = scene.references[r];
      for (Task t : {Task::Box, Task::Keypoints, Task::Parsing}) {
        Prediction p = infer_one(m, vq_model, scene, t, ref.text, static_cast<int>(r), qcfg,
                                 placement);
        p.dimension = ref.dimension;
        os << prediction_line(p).dump() << "\n";
      }
    }
    for (size_t pi = 0; pi < scene.persons.size(); ++pi) {
      Prediction p = infer_caption(m, scene, static_cast<int>(pi), qcfg);
      p.dimension = "caption";
      os << prediction_line(p).dump() << "\n";
    }
  }
}

// ---------------------------------------------------------------------------
// evaluation

metrics::Report evaluate(const std::string& pred_jsonl, const std::string& data_dir,
                         const std::string& split) {
  const auto scenes = synth::load_dataset(data_dir, split);
  std::map<std::string, const synth::Scene*> by_id;
  for (const auto& s : scenes) by_id[s.scene_id] = &s;

  std::ifstream is(pred_jsonl);
  if (!is) throw IoError("eval: cannot open " + pred_jsonl);
  std::map<std::string, nlohmann::json> preds;
  std::vector<std::string> offenders;
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    nlohmann::json j = nlohmann::json::parse(line);
    const std::string scene_id = j.at("scene_id").get<std::string>();
    if (!by_id.count(scene_id)) continue;  // prediction for another split
    const std::string key = scene_id + "|" + j.at("task").get<std::string>() + "|" +
                            std::to_string(j.at("index").get<int>());
    if (preds.count(key)) offenders.push_back("duplicate " + key);
    preds[key] = std::move(j);
  }

  std::vector<metrics::EvalRecord> records;
  for (const auto& scene : scenes) {
    for (size_t r = 0; r < scene.references.size(); ++r) {
      const auto& ref = scene.references[r];
      const auto& person = scene.persons[static_cast<size_t>(ref.target)];
      for (Task t : {Task::Box, Task::Keypoints, Task::Parsing}) {
        const std::string key =
            scene.scene_id + "|" + codec::task_name(t) + "|" + std::to_string(r);
        auto it = preds.find(key);
        if (it == preds.end()) {
          offenders.push_back("missing " + key);
          continue;
        }
        const nlohmann::json& decoded = it->second.at("decoded");
        metrics::EvalRecord rec;
        rec.scene_id = scene.scene_id;
        rec.task = t;
        rec.dimension = ref.dimension;
        rec.index = static_cast<int>(r);
        if (t == Task::Box) {
          rec.gt_box = person.region;
          rec.pred_box = codec::Region{0, 0, 0, 0};
          if (decoded.contains("region"))
            rec.pred_box = codec::Region{decoded.at("region").at(0).get<double>(),
                                         decoded.at("region").at(1).get<double>(),
                                         decoded.at("region").at(2).get<double>(),
                                         decoded.at("region").at(3).get<double>()};
        } else if (t == Task::Keypoints) {
          rec.gt_kpts = person.keypoints;
          rec.oks_scale = std::sqrt(std::max(1.0, person.region.area()));
          codec::KeypointSet pk(person.keypoints.schema);
          if (decoded.contains("keypoints")) {
            for (size_t k = 0; k < pk.schema.names.size(); ++k) {
              const auto& jk = decoded.at("keypoints").at(pk.schema.names[k]);
              if (!jk.is_null()) pk.points[k] = {jk.at(0).get<double>(), jk.at(1).get<double>()};
            }
          }
          rec.pred_kpts = std::move(pk);
        } else {
          rec.gt_map = std::make_shared<ParsingMap>(
              synth::full_frame_parsing(person, scene.width, scene.height));
          auto pm = std::make_shared<ParsingMap>(scene.height, scene.width,
                                                 rec.gt_map->channels);
          if (decoded.contains("labels_rle")) {
            const auto& rle = decoded.at("labels_rle");
            int y = 0, x = 0;
            for (size_t i = 0; i + 1 < rle.size(); i += 2) {
              const int v = rle.at(i).get<int>();
              int n = rle.at(i + 1).get<int>();
              while (n-- > 0) {
                pm->paint(v, y, x);
                if (++x == scene.width) {
                  x = 0;
                  ++y;
                }
              }
            }
          }
          rec.pred_map = std::move(pm);
        }
        records.push_back(std::move(rec));
      }
    }
    for (size_t pi = 0; pi < scene.persons.size(); ++pi) {
      const std::string key = scene.scene_id + "|caption|" + std::to_string(pi);
      auto it = preds.find(key);
      if (it == preds.end()) {
        offenders.push_back("missing " + key);
        continue;
      }
      metrics::EvalRecord rec;
      rec.scene_id = scene.scene_id;
      rec.task = Task::Caption;
      rec.dimension = "caption";
      rec.index = static_cast<int>(pi);
      const nlohmann::json& decoded = it->second.at("decoded");
      rec.pred_text = decoded.contains("text") ? decoded.at("text").get<std::string>() : "";
      rec.ref_texts = {scene.captions[pi]};
      records.push_back(std::move(rec));
    }
  }

  if (!offenders.empty()) {
    std::string msg = "eval: prediction/annotation mismatch:";
    for (size_t i = 0; i < std::min<size_t>(10, offenders.size()); ++i)
      msg += " " + offenders[i] + ";";
    throw DataMismatchError(msg);
  }
  return metrics::build_report(records);
}

void write_report(const metrics::Report& report, const std::string& out_dir) {
  fs::create_directories(out_dir);
  {
    std::ofstream os(out_dir + "/report.csv", std::ios::trunc);
    if (!os) throw IoError("report: cannot write report.csv");
    os << report.to_csv();
  }
  {
    std::ofstream os(out_dir + "/report.json", std::ios::trunc);
    if (!os) throw IoError("report: cannot write report.json");
    os << report.to_json().dump(2) << "\n";
  }
}

}  // namespace refseq::pipeline
