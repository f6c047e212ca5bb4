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
#pragma once

#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "refseq/metrics.hpp"
#include "refseq/model.hpp"
#include "refseq/synth.hpp"
#include "refseq/vq.hpp"

// Glue between the dataset, the codecs, the parsing autoencoder, and the
// sequence model: training stages, bulk inference, and evaluation.
namespace refseq::pipeline {

struct TrainConfig {
  int stage2_steps = 1100;
  int stage3_steps = 2600;
  int batch_size = 8;
  float lr = 1e-3f;
  bool lr_linear_decay = true;
  double parsing_weight = 0.4;  // sampling weight of the parsing task in stage 3
  bool token_parity = false;    // weight tasks by inverse target length instead
  uint64_t seed = 7;
  int log_every = 50;
  vq::Placement placement = vq::Placement::Resize;

  nlohmann::json to_json() const;
};

codec::Vocabulary dataset_vocabulary(const std::string& data_dir);
codec::QuantizerConfig dataset_quantizer(const codec::Vocabulary& vocab,
                                         const nlohmann::json& manifest);

// Model-grid map of one person under the configured placement strategy.
ParsingMap person_model_map(const synth::PersonInstance& person, int frame_w, int frame_h,
                            const vq::VqConfig& cfg, vq::Placement placement);

// Teacher-forcing samples for one split. Parsing samples are built only when
// a trained parsing autoencoder is supplied.
struct SampleSet {
  std::vector<model::TaskSample> box, keypoints, parsing, caption;
  const std::vector<model::TaskSample>& of(codec::Task t) const;
};
SampleSet build_samples(const std::vector<synth::Scene>& scenes, const codec::Vocabulary& vocab,
                        const codec::QuantizerConfig& qcfg, const vq::VqModel* vq_model,
                        vq::Placement placement);

// --- training stages ---

struct StageArtifacts {
  std::string checkpoint;  // path base written
  double final_loss = 0;
};

// Stage 1: parsing autoencoder on the train-split person maps; held-out
// reconstruction mIoU comes from the val split. Writes <out>/vq.rseq1(.json)
// and <out>/vq_curve.csv.
StageArtifacts run_stage1(const std::string& data_dir, const std::string& out_dir,
                          const vq::VqConfig& vq_cfg, const vq::VqTrainConfig& train_cfg,
                          vq::Placement placement);

// Stage 2: caption pretraining from a fresh model whose query rows are
// initialized from the stage-1 codebook. Writes <out>/stage2.rseq1(.json) and
// <out>/stage2_curve.csv.
StageArtifacts run_stage2(const std::string& data_dir, const std::string& out_dir,
                          const std::string& vq_base, model::ModelConfig model_cfg,
                          const TrainConfig& cfg);

// Stage 3: joint training over all four tasks starting from the stage-2
// checkpoint; every batch contains each task at least once and the parsing
// task is oversampled. single_task narrows the mix to one task (ablations).
StageArtifacts run_stage3(const std::string& data_dir, const std::string& out_dir,
                          const std::string& stage2_base, const std::string& vq_base,
                          const TrainConfig& cfg,
                          std::optional<codec::Task> single_task = std::nullopt,
                          const std::string& checkpoint_name = "stage3");

// --- inference ---

struct Prediction {
  std::string scene_id;
  codec::Task task = codec::Task::Box;
  int index = 0;  // reference index (box/keypoints/parsing) or person index (caption)
  std::string dimension;
  codec::TokenSeq tokens;
  nlohmann::json decoded;
  long prefix_steps = 0;    // autoregressive decoder forwards
  long block_forwards = 0;  // 1 for the parsing query block, 0 otherwise
};

// Runs one referring task on one scene.
Prediction infer_one(const model::Seq2SeqModel& m, const vq::VqModel& vq_model,
                     const synth::Scene& scene, codec::Task task, const std::string& text,
                     int index, const codec::QuantizerConfig& qcfg, vq::Placement placement);
Prediction infer_caption(const model::Seq2SeqModel& m, const synth::Scene& scene,
                         int person_index, const codec::QuantizerConfig& qcfg);

// Every (reference x {box,keypoints,parsing}) plus every (person x caption)
// of the split, one JSON line per prediction.
void predict_split(const model::Seq2SeqModel& m, const vq::VqModel& vq_model,
                   const std::vector<synth::Scene>& scenes, const codec::QuantizerConfig& qcfg,
                   vq::Placement placement, const std::string& out_jsonl);

// --- evaluation ---

// Joins predictions with the dataset annotations; every expected record must
// be present exactly once (DataMismatchError lists the first offenders).
metrics::Report evaluate(const std::string& pred_jsonl, const std::string& data_dir,
                         const std::string& split);

// Writes report.csv and report.json under out_dir.
void write_report(const metrics::Report& report, const std::string& out_dir);

}  // namespace refseq::pipeline
