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

#include <functional>
#include <string>
#include <vector>

#include <json.hpp>

#include "refseq/codecs.hpp"
#include "refseq/optim.hpp"
#include "refseq/parsing_map.hpp"
#include "refseq/rng.hpp"

namespace refseq::vq {

// Vector-quantized autoencoder over body-part rasters: a strided-conv encoder
// maps an [L,H,W] map to an h x w grid of d-dimensional latents, each latent
// snaps to its nearest codebook row, and a transposed-conv decoder maps the
// quantized grid back to per-channel logits.
struct VqConfig {
  int map_h = 32;
  int map_w = 24;  // 4:3 aspect
  int channels = 5;
  int downsample = 8;  // power of two; grid is (map_h/ds) x (map_w/ds)
  int latent_dim = 16;
  int codebook_size = 32;
  // One self-attention layer at the encoder bottleneck and one at the decoder
  // entry; off by default at this scale.
  bool use_attention = false;
  std::vector<int> hidden_channels{16, 32, 32, 32};  // first log2(ds) stages used
  float beta = 0.25f;  // commitment weight
  uint64_t seed = 7;

  int grid_h() const { return map_h / downsample; }
  int grid_w() const { return map_w / downsample; }
  int n_tokens() const { return grid_h() * grid_w(); }
  int n_stages() const;

  nlohmann::json to_json() const;
  static VqConfig from_json(const nlohmann::json& j);
};

class VqModel {
 public:
  struct Attn {
    Tensor wq, bq, wk, bk, wv, bv, wo, bo;
  };

  explicit VqModel(VqConfig cfg);

  const VqConfig& config() const { return cfg_; }
  ParamList params() const { return params_; }
  Tensor codebook() const { return codebook_; }
  bool trained() const { return trained_; }
  void set_trained(bool v) { trained_ = v; }

  // maps [B, L, H, W] -> latent rows [B*h*w, d]
  Tensor encode(const Tensor& maps) const;
  // Nearest codebook row per latent (ties pick the smallest index).
  std::vector<int> nearest_codes(const Tensor& latent_rows) const;
  // rows [B*h*w, d] -> logits [B, L, H, W]
  Tensor decode_latent(const Tensor& rows, int batch) const;

  struct LossParts {
    Tensor total;
    double recon = 0, embed = 0, commit = 0;
  };
  // Reconstruction BCE + codebook and commitment terms (squared norms) with a
  // straight-through estimator on the reconstruction path.
  LossParts loss(const Tensor& maps, float beta) const;

  // Inference codec over a single map. Requires a trained model.
  std::vector<int> merge_codes(const ParsingMap& m) const;
  codec::TokenSeq merge_tokens(const ParsingMap& m, const codec::Vocabulary& vocab) const;
  ParsingMap dispense_codes(const std::vector<int>& codes) const;
  ParsingMap dispense_tokens(const codec::TokenSeq& tokens, const codec::Vocabulary& vocab) const;

  // Checkpoint = RSEQ1 params next to a JSON config sidecar.
  void save(const std::string& path_base) const;
  static VqModel load(const std::string& path_base);

 private:
  void check_trained(const char* op) const;
  VqConfig cfg_;
  ParamList params_;
  Tensor codebook_;
  std::vector<Tensor> enc_w_, enc_b_, dec_w_, dec_b_;
  Tensor enc_out_w_, enc_out_b_;
  Tensor dec_in_w_, dec_in_b_, dec_out_w_, dec_out_b_;
  // optional attention blocks: [0]=encoder bottleneck, [1]=decoder entry
  std::vector<Attn> attn_;
  bool trained_ = false;
};

struct VqTrainConfig {
  float learning_rate = 2e-3f;
  bool lr_linear_decay = true;  // to 10% over the run
  int batch_size = 16;
  int steps = 1500;
  float beta = 0.25f;
  uint64_t seed = 7;
  int log_every = 50;
};

struct VqTrainResult {
  double final_loss = 0;
  double heldout_miou = 1.0;
  std::vector<std::pair<long, double>> curve;  // (step, loss)
};

// Adam training over shuffled minibatches; deterministic under the seed.
// Non-finite loss aborts with TrainingDiverged carrying the step.
VqTrainResult train_vq(VqModel& model, const std::vector<ParsingMap>& train_maps,
                       const std::vector<ParsingMap>& heldout_maps, const VqTrainConfig& cfg,
                       const std::function<void(long, double)>& on_log = nullptr);

// Reconstruction mIoU of merge-then-dispense over a set of maps.
double reconstruction_miou(const VqModel& model, const std::vector<ParsingMap>& maps);

// How a person's full-frame map is normalized to the model grid and restored.
enum class Placement { Resize, Padding, WholeImage };
const char* placement_name(Placement p);
Placement placement_from_name(const std::string& s);

// Full-frame map + box -> model-sized map (nearest-neighbor, labels stay discrete).
ParsingMap crop_to_model(const ParsingMap& frame_map, const codec::Region& box,
                         const VqConfig& cfg, Placement strategy);
// Model-sized person map -> full frame under the same strategy.
ParsingMap place_in_frame(const ParsingMap& person_map, const codec::Region& box, int frame_w,
                          int frame_h, Placement strategy);

}  // namespace refseq::vq
