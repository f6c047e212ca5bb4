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

#include <memory>
#include <string>
#include <vector>

#include <json.hpp>

#include "refseq/codecs.hpp"
#include "refseq/optim.hpp"
#include "refseq/tensor.hpp"

namespace refseq::model {

struct ModelConfig {
  int d_model = 128;
  int n_heads = 4;
  int n_enc_layers = 3;
  int n_dec_layers = 3;
  int ffn_dim = 256;
  int patch_size = 8;
  int image_size = 64;
  int max_input_len = 128;
  int max_target_len = 40;
  int vocab_size = 0;   // filled from the vocabulary
  int query_count = 12; // must equal the parsing grid h*w
  int latent_dim = 16;  // codebook dim, for query initialization
  uint64_t seed = 7;

  nlohmann::json to_json() const;
  static ModelConfig from_json(const nlohmann::json& j);
};

// Boolean self-attention mask over target positions. Outside the query block
// attention is causal; inside the block every pair may attend, plus the whole
// prefix before the block. Nothing before the block sees into it.
struct DecoderMask {
  int len = 0;
  int block_start = -1;  // -1: no block
  int block_size = 0;
  std::shared_ptr<std::vector<uint8_t>> allowed;  // len x len

  bool at(int i, int j) const { return (*allowed)[static_cast<size_t>(i) * len + j] != 0; }
};

// block_start = -1 (or block_size = 0) builds the pure causal mask.
DecoderMask build_hybrid_mask(int len, int block_start, int block_size);

// One teacher-forcing sample: rendered instruction + target token stream.
// For parsing targets, block_start marks where the query block begins in the
// *decoder input* (right after the block-opening token).
struct TaskSample {
  codec::Task task = codec::Task::Box;
  Tensor image;  // [3, H, W]
  codec::TokenSeq instruction;
  codec::TokenSeq target;
  int query_block_tokens = 0;  // number of parsing codes at the tail of target
  std::string scene_id;
  int ref_index = 0;
  std::string dimension;
};

struct EncodedBatch {
  Tensor states;             // [B, L, d_model]
  std::vector<int> lengths;  // valid length per sample
};

class Seq2SeqModel {
 public:
  // codebook, when given, initializes the query-partition embedding rows
  // (zero-padded to d_model; rows repeat when query_count exceeds the
  // codebook size).
  Seq2SeqModel(ModelConfig cfg, codec::Vocabulary vocab, const Tensor* codebook = nullptr);

  const ModelConfig& config() const { return cfg_; }
  const codec::Vocabulary& vocab() const { return vocab_; }
  ParamList params() const { return params_; }
  Tensor token_embedding() const { return tok_emb_; }

  // Encoder over image patches + instruction tokens.
  EncodedBatch encode(const Tensor& images, const std::vector<codec::TokenSeq>& instructions) const;

  // Teacher-forced decoder logits [B * Lt, vocab] under per-sample masks.
  struct DecodeInputs {
    std::vector<std::vector<int>> input_ids;  // per sample, padded internally
    std::vector<int> block_start;             // -1 when no block
    std::vector<int> block_size;
  };
  Tensor decode_logits(const EncodedBatch& enc, const DecodeInputs& inputs) const;

  // Greedy autoregressive decoding; one decoder forward per emitted token.
  struct DecodeResult {
    codec::TokenSeq tokens;   // generated tokens (without BOS)
    long decoder_forwards = 0;
  };
  DecodeResult decode_autoregressive(const EncodedBatch& enc, int max_len,
                                     int stop_token) const;

  // One bidirectional forward over the query block appended to the prefix;
  // block logits argmax restricted to the parsing-code partition.
  // Returns prefix ++ block tokens; the block costs exactly one forward.
  struct QpgResult {
    codec::TokenSeq tokens;
    long block_forwards = 0;
  };
  QpgResult decode_qpg(const EncodedBatch& enc, const codec::TokenSeq& prefix) const;

  void save(const std::string& path_base) const;
  static Seq2SeqModel load(const std::string& path_base);

 private:
  struct Layer {
    Tensor ln1_g, ln1_b, wq, bq, wk, bk, wv, bv, wo, bo;
    Tensor ln2_g, ln2_b;                        // decoder: cross-attn norm
    Tensor xwq, xbq, xwk, xbk, xwv, xbv, xwo, xbo;  // cross attention
    Tensor ln3_g, ln3_b;                        // pre-FFN norm
    Tensor fw1, fb1, fw2, fb2;
  };

  Tensor attention(const Tensor& q_in, const Tensor& kv_in,
                   std::shared_ptr<const std::vector<uint8_t>> mask, const Tensor& wq,
                   const Tensor& bq, const Tensor& wk, const Tensor& bk, const Tensor& wv,
                   const Tensor& bv, const Tensor& wo, const Tensor& bo) const;
  Tensor decode_states(const EncodedBatch& enc, const DecodeInputs& inputs, int& padded_len) const;

  ModelConfig cfg_;
  codec::Vocabulary vocab_;
  ParamList params_;

  Tensor tok_emb_, enc_pos_, dec_pos_;
  Tensor patch_w_, patch_b_;
  std::vector<Layer> enc_layers_, dec_layers_;
  Tensor enc_ln_g_, enc_ln_b_, dec_ln_g_, dec_ln_b_;
  Tensor out_w_, out_b_;
};

// Builds decoder inputs + labels from task samples. Targets get a trailing
// EOS except parsing targets, whose query block ends the sequence; the
// position that consumes the block-opening token is excluded from the loss.
struct TargetBatch {
  Seq2SeqModel::DecodeInputs inputs;
  std::vector<int> labels_flat;  // row-major [B, Lt], -1 = ignore
  int padded_len = 0;
};
TargetBatch build_target_batch(const std::vector<const TaskSample*>& samples,
                               const codec::Vocabulary& vocab, int max_target_len);

// Teacher-forced mean cross-entropy of a batch of samples.
Tensor seq_ce_loss(const Seq2SeqModel& model, const std::vector<const TaskSample*>& samples);

}  // namespace refseq::model
