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

#include "refseq/model.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "refseq/ops.hpp"
#include "refseq/rng.hpp"
#include "refseq/serialize.hpp"

namespace refseq::model {

using namespace refseq::ops;

nlohmann::json ModelConfig::to_json() const {
  return {{"d_model", d_model},
          {"n_heads", n_heads},
          {"n_enc_layers", n_enc_layers},
          {"n_dec_layers", n_dec_layers},
          {"ffn_dim", ffn_dim},
          {"patch_size", patch_size},
          {"image_size", image_size},
          {"max_input_len", max_input_len},
          {"max_target_len", max_target_len},
          {"vocab_size", vocab_size},
          {"query_count", query_count},
          {"latent_dim", latent_dim},
          {"seed", seed}};
}

ModelConfig ModelConfig::from_json(const nlohmann::json& j) {
  ModelConfig c;
  c.d_model = j.at("d_model").get<int>();
  c.n_heads = j.at("n_heads").get<int>();
  c.n_enc_layers = j.at("n_enc_layers").get<int>();
  c.n_dec_layers = j.at("n_dec_layers").get<int>();
  c.ffn_dim = j.at("ffn_dim").get<int>();
  c.patch_size = j.at("patch_size").get<int>();
  c.image_size = j.at("image_size").get<int>();
  c.max_input_len = j.at("max_input_len").get<int>();
  c.max_target_len = j.at("max_target_len").get<int>();
  c.vocab_size = j.at("vocab_size").get<int>();
  c.query_count = j.at("query_count").get<int>();
  c.latent_dim = j.at("latent_dim").get<int>();
  c.seed = j.at("seed").get<uint64_t>();
  return c;
}

namespace {

Tensor init_normal(Rng& rng, Shape shape, float std_dev) {
  std::vector<float> v(static_cast<size_t>(numel(shape)));
  for (auto& x : v) x = rng.normal_f32() * std_dev;
  Tensor t = Tensor::from_data(std::move(shape), std::move(v));
  t.set_requires_grad(true);
  return t;
}

Tensor init_linear(Rng& rng, int d_in, int d_out) {
  return init_normal(rng, {d_in, d_out}, std::sqrt(1.f / static_cast<float>(d_in)));
}

Tensor init_const(Shape shape, float value) {
  Tensor t = Tensor::full(std::move(shape), value);
  t.set_requires_grad(true);
  return t;
}

}  // namespace

Seq2SeqModel::Seq2SeqModel(ModelConfig cfg, codec::Vocabulary vocab, const Tensor* codebook)
    : cfg_(std::move(cfg)), vocab_(std::move(vocab)) {
  cfg_.vocab_size = vocab_.size();
  if (cfg_.d_model % cfg_.n_heads != 0)
    throw ShapeError("model: d_model not divisible by heads");
  if (cfg_.image_size % cfg_.patch_size != 0)
    throw ShapeError("model: image size not divisible by patch size");
  if (vocab_.range(codec::Partition::Query).size() != cfg_.query_count)
    throw ShapeError("model: query_count " + std::to_string(cfg_.query_count) +
                     " does not match the vocabulary query partition of " +
                     std::to_string(vocab_.range(codec::Partition::Query).size()));

  Rng rng(cfg_.seed, 0x5e95e9);
  tok_emb_ = init_normal(rng, {cfg_.vocab_size, cfg_.d_model}, 0.02f);
  if (codebook) {
    // query rows start as the codebook rows, zero-padded to d_model
    if (codebook->rank() != 2 || codebook->dim(1) != cfg_.latent_dim)
      throw ShapeError("model: codebook " + shape_str(codebook->shape()) +
                       " does not match latent_dim " + std::to_string(cfg_.latent_dim));
    const auto qr = vocab_.range(codec::Partition::Query);
    const int rows = codebook->dim(0);
    for (int q = 0; q < cfg_.query_count; ++q) {
      float* dst = tok_emb_.data() + static_cast<int64_t>(qr.begin + q) * cfg_.d_model;
      const float* src = codebook->data() + static_cast<int64_t>(q % rows) * cfg_.latent_dim;
      for (int j = 0; j < cfg_.d_model; ++j) dst[j] = j < cfg_.latent_dim ? src[j] : 0.f;
    }
  }
  enc_pos_ = init_normal(rng, {cfg_.max_input_len, cfg_.d_model}, 0.02f);
  dec_pos_ = init_normal(rng, {cfg_.max_target_len, cfg_.d_model}, 0.02f);
  patch_w_ = init_normal(rng, {cfg_.d_model, 3, cfg_.patch_size, cfg_.patch_size},
                         std::sqrt(2.f / static_cast<float>(3 * cfg_.patch_size * cfg_.patch_size)));
  patch_b_ = init_const({cfg_.d_model}, 0.f);

  params_.emplace_back("model/tok_emb", tok_emb_);
  params_.emplace_back("model/enc_pos", enc_pos_);
  params_.emplace_back("model/dec_pos", dec_pos_);
  params_.emplace_back("model/patch/w", patch_w_);
  params_.emplace_back("model/patch/b", patch_b_);

  auto add_layer = [&](const std::string& base, bool cross) {
    Layer l;
    const int d = cfg_.d_model;
    l.ln1_g = init_const({d}, 1.f);
    l.ln1_b = init_const({d}, 0.f);
    l.wq = init_linear(rng, d, d);
    l.bq = init_const({d}, 0.f);
    l.wk = init_linear(rng, d, d);
    l.bk = init_const({d}, 0.f);
    l.wv = init_linear(rng, d, d);
    l.bv = init_const({d}, 0.f);
    l.wo = init_linear(rng, d, d);
    l.bo = init_const({d}, 0.f);
    params_.emplace_back(base + "ln1/g", l.ln1_g);
    params_.emplace_back(base + "ln1/b", l.ln1_b);
    params_.emplace_back(base + "self/wq", l.wq);
    params_.emplace_back(base + "self/bq", l.bq);
    params_.emplace_back(base + "self/wk", l.wk);
    params_.emplace_back(base + "self/bk", l.bk);
    params_.emplace_back(base + "self/wv", l.wv);
    params_.emplace_back(base + "self/bv", l.bv);
    params_.emplace_back(base + "self/wo", l.wo);
    params_.emplace_back(base + "self/bo", l.bo);
    if (cross) {
      l.ln2_g = init_const({d}, 1.f);
      l.ln2_b = init_const({d}, 0.f);
      l.xwq = init_linear(rng, d, d);
      l.xbq = init_const({d}, 0.f);
      l.xwk = init_linear(rng, d, d);
      l.xbk = init_const({d}, 0.f);
      l.xwv = init_linear(rng, d, d);
      l.xbv = init_const({d}, 0.f);
      l.xwo = init_linear(rng, d, d);
      l.xbo = init_const({d}, 0.f);
      params_.emplace_back(base + "ln2/g", l.ln2_g);
      params_.emplace_back(base + "ln2/b", l.ln2_b);
      params_.emplace_back(base + "cross/wq", l.xwq);
      params_.emplace_back(base + "cross/bq", l.xbq);
      params_.emplace_back(base + "cross/wk", l.xwk);
      params_.emplace_back(base + "cross/bk", l.xbk);
      params_.emplace_back(base + "cross/wv", l.xwv);
      params_.emplace_back(base + "cross/bv", l.xbv);
      params_.emplace_back(base + "cross/wo", l.xwo);
      params_.emplace_back(base + "cross/bo", l.xbo);
    }
    l.ln3_g = init_const({d}, 1.f);
    l.ln3_b = init_const({d}, 0.f);
    l.fw1 = init_linear(rng, d, cfg_.ffn_dim);
    l.fb1 = init_const({cfg_.ffn_dim}, 0.f);
    l.fw2 = init_linear(rng, cfg_.ffn_dim, d);
    l.fb2 = init_const({d}, 0.f);
    params_.emplace_back(base + "ln3/g", l.ln3_g);
    params_.emplace_back(base + "ln3/b", l.ln3_b);
    params_.emplace_back(base + "ffn/w1", l.fw1);
    params_.emplace_back(base + "ffn/b1", l.fb1);
    params_.emplace_back(base + "ffn/w2", l.fw2);
    params_.emplace_back(base + "ffn/b2", l.fb2);
    return l;
  };

  for (int i = 0; i < cfg_.n_enc_layers; ++i)
    enc_layers_.push_back(add_layer("model/enc" + std::to_string(i) + "/", false));
  enc_ln_g_ = init_const({cfg_.d_model}, 1.f);
  enc_ln_b_ = init_const({cfg_.d_model}, 0.f);
  params_.emplace_back("model/enc_ln/g", enc_ln_g_);
  params_.emplace_back("model/enc_ln/b", enc_ln_b_);

  for (int i = 0; i < cfg_.n_dec_layers; ++i)
    dec_layers_.push_back(add_layer("model/dec" + std::to_string(i) + "/", true));
  dec_ln_g_ = init_const({cfg_.d_model}, 1.f);
  dec_ln_b_ = init_const({cfg_.d_model}, 0.f);
  params_.emplace_back("model/dec_ln/g", dec_ln_g_);
  params_.emplace_back("model/dec_ln/b", dec_ln_b_);

  out_w_ = init_normal(rng, {cfg_.d_model, cfg_.vocab_size}, 0.02f);
  out_b_ = init_const({cfg_.vocab_size}, 0.f);
  params_.emplace_back("model/out/w", out_w_);
  params_.emplace_back("model/out/b", out_b_);
}

Tensor Seq2SeqModel::attention(const Tensor& q_in, const Tensor& kv_in,
                               std::shared_ptr<const std::vector<uint8_t>> mask,
                               const Tensor& wq, const Tensor& bq, const Tensor& wk,
                               const Tensor& bk, const Tensor& wv, const Tensor& bv,
                               const Tensor& wo, const Tensor& bo) const {
  const int B = q_in.dim(0), Lq = q_in.dim(1), Lk = kv_in.dim(1), d = cfg_.d_model;
  const int H = cfg_.n_heads, dh = d / H;
  Tensor q = reshape(add(matmul(reshape(q_in, {B * Lq, d}), wq), bq), {B, Lq, d});
  Tensor k = reshape(add(matmul(reshape(kv_in, {B * Lk, d}), wk), bk), {B, Lk, d});
  Tensor v = reshape(add(matmul(reshape(kv_in, {B * Lk, d}), wv), bv), {B, Lk, d});
  Tensor q3 = split_heads(q, H);  // [B*H, Lq, dh]
  Tensor k3 = split_heads(k, H);
  Tensor v3 = split_heads(v, H);
  Tensor scores = scale(matmul_nt(q3, k3), 1.f / std::sqrt(static_cast<float>(dh)));
  Tensor att = masked_softmax_heads(reshape(scores, {B, H, Lq, Lk}), std::move(mask), H);
  Tensor mixed = matmul(reshape(att, {B * H, Lq, Lk}), v3);  // [B*H, Lq, dh]
  Tensor merged = merge_heads(mixed, H, B);                  // [B, Lq, d]
  return reshape(add(matmul(reshape(merged, {B * Lq, d}), wo), bo), {B, Lq, d});
}

EncodedBatch Seq2SeqModel::encode(const Tensor& images,
                                  const std::vector<codec::TokenSeq>& instructions) const {
  if (images.rank() != 4 || images.dim(1) != 3 || images.dim(2) != cfg_.image_size ||
      images.dim(3) != cfg_.image_size)
    throw ShapeError("encode: expected images [B,3," + std::to_string(cfg_.image_size) + "," +
                     std::to_string(cfg_.image_size) + "], got " + shape_str(images.shape()));
  const int B = images.dim(0);
  if (static_cast<int>(instructions.size()) != B)
    throw ShapeError("encode: instruction count does not match image batch");

  const int side = cfg_.image_size / cfg_.patch_size;
  const int n_patches = side * side;
  Tensor patches = conv2d(images, patch_w_, patch_b_, cfg_.patch_size, 0);  // [B,d,side,side]
  Tensor img_tokens = transpose(reshape(patches, {B, cfg_.d_model, n_patches}));  // [B,P,d]

  int li = 1;
  for (const auto& ins : instructions) li = std::max(li, static_cast<int>(ins.size()));
  std::vector<int> flat_ids(static_cast<size_t>(B) * li, vocab_.pad());
  for (int b = 0; b < B; ++b)
    for (size_t t = 0; t < instructions[static_cast<size_t>(b)].size(); ++t)
      flat_ids[static_cast<size_t>(b) * li + t] = instructions[static_cast<size_t>(b)][t];
  Tensor instr_tokens =
      reshape(embedding(tok_emb_, flat_ids), {B, li, cfg_.d_model});

  Tensor x = concat({img_tokens, instr_tokens}, 1);  // [B, L, d]
  const int L = n_patches + li;
  if (L > cfg_.max_input_len)
    throw TruncationError("encode: input length " + std::to_string(L) +
                          " exceeds the configured maximum " +
                          std::to_string(cfg_.max_input_len));
  x = add(x, slice(enc_pos_, 0, 0, L));

  EncodedBatch out;
  out.lengths.resize(static_cast<size_t>(B));
  auto mask = std::make_shared<std::vector<uint8_t>>(static_cast<size_t>(B) * L * L, 0);
  for (int b = 0; b < B; ++b) {
    const int len = n_patches + static_cast<int>(instructions[static_cast<size_t>(b)].size());
    out.lengths[static_cast<size_t>(b)] = len;
    for (int i = 0; i < L; ++i)
      for (int j = 0; j < len; ++j)
        (*mask)[(static_cast<size_t>(b) * L + i) * L + j] = 1;
  }

  for (const Layer& l : enc_layers_) {
    Tensor h = layer_norm(x, l.ln1_g, l.ln1_b);
    x = add(x, attention(h, h, mask, l.wq, l.bq, l.wk, l.bk, l.wv, l.bv, l.wo, l.bo));
    Tensor f = layer_norm(x, l.ln3_g, l.ln3_b);
    Tensor f2 = reshape(f, {B * L, cfg_.d_model});
    Tensor ff = add(matmul(gelu(add(matmul(f2, l.fw1), l.fb1)), l.fw2), l.fb2);
    x = add(x, reshape(ff, {B, L, cfg_.d_model}));
  }
  out.states = layer_norm(x, enc_ln_g_, enc_ln_b_);
  return out;
}

Tensor Seq2SeqModel::decode_states(const EncodedBatch& enc, const DecodeInputs& inputs,
                                   int& padded_len) const {
  const int B = enc.states.dim(0);
  if (static_cast<int>(inputs.input_ids.size()) != B)
    throw ShapeError("decode: target batch does not match encoder batch");
  int Lt = 1;
  for (const auto& ids : inputs.input_ids) Lt = std::max(Lt, static_cast<int>(ids.size()));
  if (Lt > cfg_.max_target_len)
    throw TruncationError("decode: target length " + std::to_string(Lt) +
                          " exceeds the configured maximum " +
                          std::to_string(cfg_.max_target_len));
  padded_len = Lt;
  const int Lenc = enc.states.dim(1);

  std::vector<int> flat_ids(static_cast<size_t>(B) * Lt, vocab_.pad());
  for (int b = 0; b < B; ++b)
    for (size_t t = 0; t < inputs.input_ids[static_cast<size_t>(b)].size(); ++t)
      flat_ids[static_cast<size_t>(b) * Lt + t] = inputs.input_ids[static_cast<size_t>(b)][t];

  Tensor x = reshape(embedding(tok_emb_, flat_ids), {B, Lt, cfg_.d_model});
  x = add(x, slice(dec_pos_, 0, 0, Lt));

  auto self_mask = std::make_shared<std::vector<uint8_t>>(static_cast<size_t>(B) * Lt * Lt, 0);
  for (int b = 0; b < B; ++b) {
    const DecoderMask m = build_hybrid_mask(
        Lt, inputs.block_start.empty() ? -1 : inputs.block_start[static_cast<size_t>(b)],
        inputs.block_size.empty() ? 0 : inputs.block_size[static_cast<size_t>(b)]);
    std::copy(m.allowed->begin(), m.allowed->end(),
              self_mask->begin() + static_cast<int64_t>(b) * Lt * Lt);
  }
  auto cross_mask = std::make_shared<std::vector<uint8_t>>(static_cast<size_t>(B) * Lt * Lenc, 0);
  for (int b = 0; b < B; ++b)
    for (int i = 0; i < Lt; ++i)
      for (int j = 0; j < enc.lengths[static_cast<size_t>(b)]; ++j)
        (*cross_mask)[(static_cast<size_t>(b) * Lt + i) * Lenc + j] = 1;

  for (const Layer& l : dec_layers_) {
    Tensor h = layer_norm(x, l.ln1_g, l.ln1_b);
    x = add(x, attention(h, h, self_mask, l.wq, l.bq, l.wk, l.bk, l.wv, l.bv, l.wo, l.bo));
    Tensor c = layer_norm(x, l.ln2_g, l.ln2_b);
    x = add(x, attention(c, enc.states, cross_mask, l.xwq, l.xbq, l.xwk, l.xbk, l.xwv, l.xbv,
                         l.xwo, l.xbo));
    Tensor f = layer_norm(x, l.ln3_g, l.ln3_b);
    Tensor f2 = reshape(f, {B * Lt, cfg_.d_model});
    Tensor ff = add(matmul(gelu(add(matmul(f2, l.fw1), l.fb1)), l.fw2), l.fb2);
    x = add(x, reshape(ff, {B, Lt, cfg_.d_model}));
  }
  return layer_norm(x, dec_ln_g_, dec_ln_b_);
}

Tensor Seq2SeqModel::decode_logits(const EncodedBatch& enc, const DecodeInputs& inputs) const {
  int Lt = 0;
  Tensor states = decode_states(enc, inputs, Lt);
  const int B = enc.states.dim(0);
  return add(matmul(reshape(states, {B * Lt, cfg_.d_model}), out_w_), out_b_);
}

Seq2SeqModel::DecodeResult Seq2SeqModel::decode_autoregressive(const EncodedBatch& enc,
                                                               int max_len,
                                                               int stop_token) const {
  if (enc.states.dim(0) != 1)
    throw ShapeError("decode_autoregressive: expects a single-sample encoding");
  NoGradScope ng;
  DecodeResult result;
  for (int step = 0; step < max_len; ++step) {
    DecodeInputs in;
    std::vector<int> ids{vocab_.bos()};
    ids.insert(ids.end(), result.tokens.begin(), result.tokens.end());
    in.input_ids = {ids};
    in.block_start = {-1};
    in.block_size = {0};
    Tensor logits = decode_logits(enc, in);
    ++result.decoder_forwards;
    const int row = static_cast<int>(ids.size()) - 1;
    const float* lrow = logits.data() + static_cast<int64_t>(row) * cfg_.vocab_size;
    int best = 0;
    for (int v = 1; v < cfg_.vocab_size; ++v)
      if (lrow[v] > lrow[best]) best = v;
    if (best == stop_token) break;
    result.tokens.push_back(best);
  }
  return result;
}

Seq2SeqModel::QpgResult Seq2SeqModel::decode_qpg(const EncodedBatch& enc,
                                                 const codec::TokenSeq& prefix) const {
  if (enc.states.dim(0) != 1) throw ShapeError("decode_qpg: expects a single-sample encoding");
  if (prefix.empty() || prefix.back() != vocab_.bop())
    throw ParseError("decode_qpg: prefix must end with the block-opening token",
                     static_cast<long>(prefix.size()));
  NoGradScope ng;
  const int Q = cfg_.query_count;
  DecodeInputs in;
  std::vector<int> ids{vocab_.bos()};
  ids.insert(ids.end(), prefix.begin(), prefix.end());
  const int block_start = static_cast<int>(ids.size());
  for (int q = 0; q < Q; ++q) ids.push_back(vocab_.query_token(q));
  in.input_ids = {ids};
  in.block_start = {block_start};
  in.block_size = {Q};

  Tensor logits = decode_logits(enc, in);
  QpgResult result;
  result.tokens = prefix;
  result.block_forwards = 1;
  const auto pr = vocab_.range(codec::Partition::ParsingCode);
  for (int q = 0; q < Q; ++q) {
    const float* lrow =
        logits.data() + static_cast<int64_t>(block_start + q) * cfg_.vocab_size;
    int best = pr.begin;
    for (int v = pr.begin + 1; v < pr.end; ++v)
      if (lrow[v] > lrow[best]) best = v;
    result.tokens.push_back(best);
  }
  return result;
}

void Seq2SeqModel::save(const std::string& path_base) const {
  save_params(path_base, params_);
  nlohmann::json j;
  j["config"] = cfg_.to_json();
  j["vocab"] = vocab_.to_json();
  std::ofstream os(path_base + ".json", std::ios::trunc);
  if (!os) throw IoError("model save: cannot open " + path_base + ".json");
  os << j.dump(2) << "\n";
}

Seq2SeqModel Seq2SeqModel::load(const std::string& path_base) {
  std::ifstream is(path_base + ".json");
  if (!is) throw IoError("model load: cannot open " + path_base + ".json");
  nlohmann::json j;
  is >> j;
  Seq2SeqModel model(ModelConfig::from_json(j.at("config")),
                     codec::Vocabulary::from_json(j.at("vocab")));
  ParamList params = model.params_;
  load_params(path_base, params);
  return model;
}

TargetBatch build_target_batch(const std::vector<const TaskSample*>& samples,
                               const codec::Vocabulary& vocab, int max_target_len) {
  TargetBatch out;
  std::vector<std::vector<int>> labels;
  for (const TaskSample* s : samples) {
    std::vector<int> input{vocab.bos()};
    std::vector<int> label;
    if (s->task == codec::Task::Parsing) {
      const int Q = s->query_block_tokens;
      if (Q <= 0 || static_cast<int>(s->target.size()) <= Q)
        throw ShapeError("target batch: parsing sample without a query block");
      const int k = static_cast<int>(s->target.size()) - Q;  // prefix incl. BOP
      if (s->target[static_cast<size_t>(k - 1)] != vocab.bop())
        throw ParseError("target batch: parsing prefix does not end with the block opener",
                         k - 1);
      for (int i = 0; i < k; ++i) {
        input.push_back(s->target[static_cast<size_t>(i)]);
        label.push_back(s->target[static_cast<size_t>(i)]);
      }
      // the position holding the block opener is not scored autoregressively
      label.push_back(-1);
      out.inputs.block_start.push_back(static_cast<int>(input.size()));
      out.inputs.block_size.push_back(Q);
      for (int q = 0; q < Q; ++q) {
        input.push_back(vocab.query_token(q));
        label.push_back(s->target[static_cast<size_t>(k + q)]);
      }
    } else {
      for (int t : s->target) {
        input.push_back(t);
        label.push_back(t);
      }
      label.push_back(vocab.eos());
      out.inputs.block_start.push_back(-1);
      out.inputs.block_size.push_back(0);
    }
    if (static_cast<int>(input.size()) > max_target_len)
      throw TruncationError("target batch: sequence of " + std::to_string(input.size()) +
                            " exceeds max target length " + std::to_string(max_target_len));
    out.inputs.input_ids.push_back(std::move(input));
    labels.push_back(std::move(label));
  }
  int Lt = 1;
  for (const auto& ids : out.inputs.input_ids) Lt = std::max(Lt, static_cast<int>(ids.size()));
  out.padded_len = Lt;
  out.labels_flat.assign(static_cast<size_t>(samples.size()) * Lt, -1);
  for (size_t b = 0; b < labels.size(); ++b)
    for (size_t t = 0; t < labels[b].size(); ++t)
      out.labels_flat[b * static_cast<size_t>(Lt) + t] = labels[b][t];
  return out;
}

Tensor seq_ce_loss(const Seq2SeqModel& model, const std::vector<const TaskSample*>& samples) {
  if (samples.empty()) throw ShapeError("seq_ce_loss: empty batch");
  const int B = static_cast<int>(samples.size());
  const int H = samples[0]->image.dim(1), W = samples[0]->image.dim(2);
  std::vector<float> img_data;
  img_data.reserve(static_cast<size_t>(B) * 3 * H * W);
  std::vector<codec::TokenSeq> instructions;
  for (const TaskSample* s : samples) {
    if (s->image.rank() != 3 || s->image.dim(0) != 3 || s->image.dim(1) != H || s->image.dim(2) != W)
      throw ShapeError("seq_ce_loss: mixed image shapes in batch");
    img_data.insert(img_data.end(), s->image.values().begin(), s->image.values().end());
    instructions.push_back(s->instruction);
  }
  Tensor images = Tensor::from_data({B, 3, H, W}, std::move(img_data));
  EncodedBatch enc = model.encode(images, instructions);
  TargetBatch tb = build_target_batch(samples, model.vocab(), model.config().max_target_len);
  Tensor logits = model.decode_logits(enc, tb.inputs);
  return cross_entropy_logits(logits, tb.labels_flat, -1);
}

}  // namespace refseq::model
