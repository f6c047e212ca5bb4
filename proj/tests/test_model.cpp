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
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstring>
#include <filesystem>

#include "refseq/model.hpp"
#include "refseq/ops.hpp"
#include "refseq/optim.hpp"
#include "refseq/rng.hpp"
#include "refseq/synth.hpp"
#include "ref_transformer_f64.hpp"

using namespace refseq;
using namespace refseq::model;
using codec::Task;
using codec::TokenSeq;

namespace {

codec::Vocabulary tiny_vocab(int n_queries = 4, int merges = 8) {
  codec::VocabConfig vc;
  vc.n_bins = 16;
  vc.n_parsing_codes = 8;
  vc.n_queries = n_queries;
  vc.keypoints = synth::keypoint_schema();
  return codec::Vocabulary(codec::BpeModel::train({"the red person", "a b c d"}, merges), vc);
}

ModelConfig tiny_cfg(int n_queries = 4) {
  ModelConfig cfg;
  cfg.d_model = 16;
  cfg.n_heads = 2;
  cfg.n_enc_layers = 2;
  cfg.n_dec_layers = 2;
  cfg.ffn_dim = 24;
  cfg.patch_size = 8;
  cfg.image_size = 16;  // 4 patches
  cfg.max_input_len = 24;
  cfg.max_target_len = 24;
  cfg.query_count = n_queries;
  cfg.latent_dim = 8;
  cfg.seed = 5;
  return cfg;
}

Tensor rand_image(Rng& rng, int size) {
  std::vector<float> v(static_cast<size_t>(3) * size * size);
  for (auto& x : v) x = static_cast<float>(rng.uniform(0, 1));
  return Tensor::from_data({3, size, size}, std::move(v));
}

TaskSample box_sample(Rng& rng, const codec::Vocabulary& vocab, const ModelConfig& cfg) {
  TaskSample s;
  s.task = Task::Box;
  s.image = rand_image(rng, cfg.image_size);
  s.instruction = vocab.encode_text("the red person");
  s.target = {vocab.bin_token(1), vocab.bin_token(2), vocab.bin_token(9), vocab.bin_token(11)};
  return s;
}

TaskSample parsing_sample(Rng& rng, const codec::Vocabulary& vocab, const ModelConfig& cfg) {
  TaskSample s;
  s.task = Task::Parsing;
  s.image = rand_image(rng, cfg.image_size);
  s.instruction = vocab.encode_text("the red person");
  s.target = {vocab.bin_token(0), vocab.bin_token(0), vocab.bin_token(10), vocab.bin_token(12),
              vocab.bop()};
  for (int q = 0; q < cfg.query_count; ++q)
    s.target.push_back(vocab.parsing_token(q % vocab.range(codec::Partition::ParsingCode).size()));
  s.query_block_tokens = cfg.query_count;
  return s;
}

}  // namespace

TEST_CASE("hybrid mask matches a brute-force rule at length 64") {
  const int len = 64;
  for (auto [bs, bsz] : {std::pair{-1, 0}, {10, 8}, {0, 5}, {56, 8}}) {
    const DecoderMask m = build_hybrid_mask(len, bs, bsz);
    for (int i = 0; i < len; ++i) {
      for (int j = 0; j < len; ++j) {
        bool want;
        const bool in_block = bs >= 0 && i >= bs && i < bs + bsz;
        if (in_block)
          want = j < bs + bsz;  // block sees the whole block plus the prefix
        else
          want = j <= i;
        CHECK(m.at(i, j) == want);
      }
    }
  }
}

TEST_CASE("hybrid mask: no block equals causal everywhere; block is all-true square") {
  const DecoderMask causal = build_hybrid_mask(64, -1, 0);
  const DecoderMask with_block = build_hybrid_mask(64, 20, 16);
  for (int i = 0; i < 64; ++i)
    for (int j = 0; j < 64; ++j) {
      if (i >= 20 && i < 36 && j >= 20 && j < 36) {
        CHECK(with_block.at(i, j));
      } else if (i < 20 || i >= 36) {
        CHECK(with_block.at(i, j) == causal.at(i, j));
      }
    }
}

TEST_CASE("hybrid mask: nothing before the block attends into it") {
  const DecoderMask m = build_hybrid_mask(32, 12, 8);
  for (int i = 0; i < 12; ++i)
    for (int j = 12; j < 20; ++j) CHECK_FALSE(m.at(i, j));
}

TEST_CASE("hybrid mask rejects out-of-range blocks") {
  CHECK_THROWS_AS(build_hybrid_mask(8, 4, 8), ShapeError);
  CHECK_THROWS_AS(build_hybrid_mask(0, -1, 0), ShapeError);
}

TEST_CASE("encoder: one state per input position, deterministic, order-sensitive") {
  auto vocab = tiny_vocab();
  auto cfg = tiny_cfg();
  Seq2SeqModel m(cfg, vocab);
  Rng rng(3);
  Tensor img = rand_image(rng, cfg.image_size);
  Tensor images = Tensor::from_data({1, 3, cfg.image_size, cfg.image_size}, img.values());
  TokenSeq instr = vocab.encode_text("the red person");

  NoGradScope ng;
  auto enc1 = m.encode(images, {instr});
  CHECK(enc1.states.dim(1) == 4 + static_cast<int>(instr.size()));
  auto enc2 = m.encode(images, {instr});
  CHECK(std::memcmp(enc1.states.data(), enc2.states.data(),
                    sizeof(float) * static_cast<size_t>(enc1.states.size())) == 0);

  TokenSeq permuted = instr;
  REQUIRE(permuted.size() >= 2);
  std::swap(permuted[0], permuted[permuted.size() - 1]);
  auto enc3 = m.encode(images, {permuted});
  CHECK(std::memcmp(enc1.states.data(), enc3.states.data(),
                    sizeof(float) * static_cast<size_t>(enc1.states.size())) != 0);
}

TEST_CASE("patch embedding: zero image gives identical tokens; one patch changes one token") {
  auto vocab = tiny_vocab();
  auto cfg = tiny_cfg();
  Seq2SeqModel m(cfg, vocab);
  Tensor patch_w, patch_b;
  for (const auto& [name, t] : m.params()) {
    if (name == "model/patch/w") patch_w = t;
    if (name == "model/patch/b") patch_b = t;
  }
  NoGradScope ng;
  Tensor zero = Tensor::zeros({1, 3, cfg.image_size, cfg.image_size});
  Tensor pz = ops::conv2d(zero, patch_w, patch_b, cfg.patch_size, 0);  // [1,d,2,2]
  for (int d = 0; d < cfg.d_model; ++d) {
    const float* plane = pz.data() + static_cast<int64_t>(d) * 4;
    for (int p = 1; p < 4; ++p) CHECK(plane[p] == plane[0]);
  }

  Rng rng(5);
  Tensor img = rand_image(rng, cfg.image_size);
  std::vector<float> bumped = img.values();
  bumped[3 * cfg.image_size + 2] += 0.25f;  // inside patch (0,0)
  Tensor a = ops::conv2d(Tensor::from_data({1, 3, cfg.image_size, cfg.image_size}, img.values()),
                         patch_w, patch_b, cfg.patch_size, 0);
  Tensor b = ops::conv2d(Tensor::from_data({1, 3, cfg.image_size, cfg.image_size}, bumped),
                         patch_w, patch_b, cfg.patch_size, 0);
  int diff_positions = 0;
  for (int p = 0; p < 4; ++p) {
    bool differs = false;
    for (int d = 0; d < cfg.d_model; ++d)
      if (a.data()[static_cast<int64_t>(d) * 4 + p] != b.data()[static_cast<int64_t>(d) * 4 + p])
        differs = true;
    diff_positions += differs;
  }
  CHECK(diff_positions == 1);
}

TEST_CASE("autoregressive decode: forward counting and stop behaviour") {
  auto vocab = tiny_vocab();
  auto cfg = tiny_cfg();
  Seq2SeqModel m(cfg, vocab);
  Rng rng(7);
  Tensor images = Tensor::from_data({1, 3, cfg.image_size, cfg.image_size},
                                    rand_image(rng, cfg.image_size).values());
  NoGradScope ng;
  auto enc = m.encode(images, {vocab.encode_text("a b")});

  auto one = m.decode_autoregressive(enc, 1, -1);
  CHECK(one.decoder_forwards == 1);
  CHECK(one.tokens.size() == 1);

  auto many = m.decode_autoregressive(enc, 12, -1);  // stop token never fires
  CHECK(many.decoder_forwards == 12);
  CHECK(many.tokens.size() == 12);

  // force EOS as the first argmax via the output bias, then expect empty output
  Tensor out_b;
  for (const auto& [name, t] : m.params())
    if (name == "model/out/b") out_b = t;
  out_b.data()[vocab.eos()] = 50.f;
  auto eos_first = m.decode_autoregressive(enc, 8, vocab.eos());
  CHECK(eos_first.tokens.empty());
  CHECK(eos_first.decoder_forwards == 1);
  out_b.data()[vocab.eos()] = 0.f;
}

TEST_CASE("qpg decode: shape contract, partition restriction, one block forward") {
  auto vocab = tiny_vocab();
  auto cfg = tiny_cfg();
  Seq2SeqModel m(cfg, vocab);
  Rng rng(9);
  Tensor images = Tensor::from_data({1, 3, cfg.image_size, cfg.image_size},
                                    rand_image(rng, cfg.image_size).values());
  NoGradScope ng;
  auto enc = m.encode(images, {vocab.encode_text("a b")});

  TokenSeq prefix{vocab.bin_token(1), vocab.bin_token(2), vocab.bin_token(3), vocab.bin_token(4),
                  vocab.bop()};
  auto res = m.decode_qpg(enc, prefix);
  CHECK(res.block_forwards == 1);
  CHECK(res.tokens.size() == prefix.size() + static_cast<size_t>(cfg.query_count));
  for (size_t i = prefix.size(); i < res.tokens.size(); ++i)
    CHECK(vocab.partition_of(res.tokens[i]) == codec::Partition::ParsingCode);

  CHECK_THROWS_AS(m.decode_qpg(enc, TokenSeq{vocab.bin_token(1)}), ParseError);

  // forward accounting: AR over the same block costs block-size forwards
  auto ar = m.decode_autoregressive(enc, cfg.query_count, -1);
  CHECK(ar.decoder_forwards == cfg.query_count);
  CHECK(res.block_forwards == 1);
}

TEST_CASE("teacher-forced logits equal stepwise logits on identical prefixes (bitwise)") {
  auto vocab = tiny_vocab();
  auto cfg = tiny_cfg();
  Seq2SeqModel m(cfg, vocab);
  Rng rng(11);
  Tensor images = Tensor::from_data({1, 3, cfg.image_size, cfg.image_size},
                                    rand_image(rng, cfg.image_size).values());
  NoGradScope ng;
  auto enc = m.encode(images, {vocab.encode_text("a b c")});

  std::vector<int> full{vocab.bos(), vocab.bin_token(1), vocab.bin_token(2), vocab.bin_token(3),
                        vocab.bin_token(4), vocab.bop()};
  Seq2SeqModel::DecodeInputs all;
  all.input_ids = {full};
  all.block_start = {-1};
  all.block_size = {0};
  Tensor full_logits = m.decode_logits(enc, all);

  for (size_t t = 1; t <= full.size(); ++t) {
    Seq2SeqModel::DecodeInputs part;
    part.input_ids = {std::vector<int>(full.begin(), full.begin() + static_cast<long>(t))};
    part.block_start = {-1};
    part.block_size = {0};
    Tensor part_logits = m.decode_logits(enc, part);
    const int row = static_cast<int>(t) - 1;
    CHECK(std::memcmp(part_logits.data() + static_cast<int64_t>(row) * vocab.size(),
                      full_logits.data() + static_cast<int64_t>(row) * vocab.size(),
                      sizeof(float) * static_cast<size_t>(vocab.size())) == 0);
  }
}

TEST_CASE("causality and block bidirectionality probes") {
  auto vocab = tiny_vocab();
  auto cfg = tiny_cfg();
  Seq2SeqModel m(cfg, vocab);
  Rng rng(13);
  Tensor images = Tensor::from_data({1, 3, cfg.image_size, cfg.image_size},
                                    rand_image(rng, cfg.image_size).values());
  NoGradScope ng;
  auto enc = m.encode(images, {vocab.encode_text("a")});

  // outside a block, position i ignores tokens past i
  std::vector<int> ids_a{vocab.bos(), vocab.bin_token(1), vocab.bin_token(2), vocab.bin_token(3)};
  std::vector<int> ids_b = ids_a;
  ids_b[3] = vocab.bin_token(9);
  Seq2SeqModel::DecodeInputs da{{ids_a}, {-1}, {0}};
  Seq2SeqModel::DecodeInputs db{{ids_b}, {-1}, {0}};
  Tensor la = m.decode_logits(enc, da);
  Tensor lb = m.decode_logits(enc, db);
  for (int row = 0; row < 3; ++row)
    CHECK(std::memcmp(la.data() + static_cast<int64_t>(row) * vocab.size(),
                      lb.data() + static_cast<int64_t>(row) * vocab.size(),
                      sizeof(float) * static_cast<size_t>(vocab.size())) == 0);

  // inside the block, every position feels a change in another block slot:
  // perturb one query embedding row and compare block logits
  std::vector<int> ids{vocab.bos(), vocab.bin_token(1), vocab.bop()};
  const int bstart = static_cast<int>(ids.size());
  for (int q = 0; q < cfg.query_count; ++q) ids.push_back(vocab.query_token(q));
  Seq2SeqModel::DecodeInputs dq{{ids}, {bstart}, {cfg.query_count}};
  Tensor l1 = m.decode_logits(enc, dq);
  Tensor emb = m.token_embedding();
  const int row_id = vocab.query_token(1);
  emb.data()[static_cast<int64_t>(row_id) * cfg.d_model + 0] += 0.5f;
  Tensor l2 = m.decode_logits(enc, dq);
  for (int q = 0; q < cfg.query_count; ++q) {
    const int row = bstart + q;
    CHECK(std::memcmp(l1.data() + static_cast<int64_t>(row) * vocab.size(),
                      l2.data() + static_cast<int64_t>(row) * vocab.size(),
                      sizeof(float) * static_cast<size_t>(vocab.size())) != 0);
  }
}

TEST_CASE("uniform logits give ln(vocab) loss") {
  auto vocab = tiny_vocab();
  auto cfg = tiny_cfg();
  Seq2SeqModel m(cfg, vocab);
  Tensor out_w, out_b;
  for (const auto& [name, t] : m.params()) {
    if (name == "model/out/w") out_w = t;
    if (name == "model/out/b") out_b = t;
  }
  std::fill(out_w.data(), out_w.data() + out_w.size(), 0.f);
  std::fill(out_b.data(), out_b.data() + out_b.size(), 0.f);
  Rng rng(17);
  TaskSample s = box_sample(rng, vocab, cfg);
  NoGradScope ng;
  Tensor loss = seq_ce_loss(m, {&s});
  CHECK(loss.item_double() == doctest::Approx(std::log(vocab.size())).epsilon(1e-6));
}

TEST_CASE("gradient flow: an rpar batch reaches every parameter group") {
  auto vocab = tiny_vocab();
  auto cfg = tiny_cfg();
  Seq2SeqModel m(cfg, vocab);
  Rng rng(19);
  TaskSample s1 = parsing_sample(rng, vocab, cfg);
  TaskSample s2 = box_sample(rng, vocab, cfg);
  {
    TapeScope scope;
    backward(seq_ce_loss(m, {&s1, &s2}));
  }
  auto group_grad = [&](const std::string& needle) {
    double norm = 0;
    for (const auto& [name, t] : m.params()) {
      if (name.find(needle) == std::string::npos || !t.has_grad()) continue;
      for (float g : t.grad()) norm += static_cast<double>(g) * g;
    }
    return norm;
  };
  CHECK(group_grad("patch") > 0);
  CHECK(group_grad("tok_emb") > 0);
  CHECK(group_grad("enc0") > 0);
  CHECK(group_grad("enc1") > 0);
  CHECK(group_grad("dec0") > 0);
  CHECK(group_grad("dec1") > 0);
  CHECK(group_grad("out") > 0);

  // query rows specifically
  Tensor emb = m.token_embedding();
  REQUIRE(emb.has_grad());
  const auto qr = vocab.range(codec::Partition::Query);
  double qnorm = 0;
  for (int q = qr.begin; q < qr.end; ++q)
    for (int c = 0; c < cfg.d_model; ++c) {
      const float g = emb.grad()[static_cast<size_t>(q) * cfg.d_model + c];
      qnorm += static_cast<double>(g) * g;
    }
  CHECK(qnorm > 0);
}

TEST_CASE("query embeddings initialize from the codebook, zero-padded") {
  auto vocab = tiny_vocab();
  auto cfg = tiny_cfg();
  Rng rng(23);
  std::vector<float> cb(static_cast<size_t>(6) * cfg.latent_dim);
  for (auto& v : cb) v = static_cast<float>(rng.uniform(-1, 1));
  Tensor codebook = Tensor::from_data({6, cfg.latent_dim}, cb);
  Seq2SeqModel m(cfg, vocab, &codebook);
  Tensor emb = m.token_embedding();
  const auto qr = vocab.range(codec::Partition::Query);
  for (int q = 0; q < cfg.query_count; ++q) {
    const float* row = emb.data() + static_cast<int64_t>(qr.begin + q) * cfg.d_model;
    const float* src = codebook.data() + static_cast<int64_t>(q % 6) * cfg.latent_dim;
    for (int c = 0; c < cfg.d_model; ++c)
      CHECK(row[c] == (c < cfg.latent_dim ? src[c] : 0.f));
  }
}

TEST_CASE("overlong inputs and targets raise TruncationError") {
  auto vocab = tiny_vocab();
  auto cfg = tiny_cfg();
  cfg.max_input_len = 8;  // 4 patches + instruction will not fit
  Seq2SeqModel m(cfg, vocab);
  Rng rng(29);
  Tensor images = Tensor::from_data({1, 3, cfg.image_size, cfg.image_size},
                                    rand_image(rng, cfg.image_size).values());
  NoGradScope ng;
  CHECK_THROWS_AS(m.encode(images, {vocab.encode_text("a very long instruction text")}),
                  TruncationError);

  auto cfg2 = tiny_cfg();
  cfg2.max_target_len = 4;
  Seq2SeqModel m2(cfg2, vocab);
  auto enc = m2.encode(images, {vocab.encode_text("a")});
  Seq2SeqModel::DecodeInputs in;
  in.input_ids = {std::vector<int>(10, vocab.pad())};
  in.block_start = {-1};
  in.block_size = {0};
  CHECK_THROWS_AS(m2.decode_logits(enc, in), TruncationError);
}

TEST_CASE("save/load round trip preserves parameters and logits") {
  namespace fs = std::filesystem;
  auto vocab = tiny_vocab();
  auto cfg = tiny_cfg();
  Seq2SeqModel m(cfg, vocab);
  const std::string base = (fs::temp_directory_path() / "refseq_model_test.rseq1").string();
  m.save(base);
  Seq2SeqModel loaded = Seq2SeqModel::load(base);
  const auto p1 = m.params(), p2 = loaded.params();
  REQUIRE(p1.size() == p2.size());
  for (size_t i = 0; i < p1.size(); ++i)
    CHECK(std::memcmp(p1[i].second.data(), p2[i].second.data(),
                      sizeof(float) * static_cast<size_t>(p1[i].second.size())) == 0);
  fs::remove(base);
  fs::remove(base + ".json");
}

TEST_CASE("one-sample overfit drives the loss near zero") {
  auto vocab = tiny_vocab();
  auto cfg = tiny_cfg();
  Seq2SeqModel m(cfg, vocab);
  Rng rng(31);
  TaskSample s = box_sample(rng, vocab, cfg);
  Adam opt(AdamConfig{3e-3f, 0.9f, 0.999f, 1e-8f});
  opt.register_params(m.params());
  double last = 0;
  for (int step = 0; step < 260; ++step) {
    opt.zero_grad();
    TapeScope scope;
    Tensor loss = seq_ce_loss(m, {&s});
    last = loss.item_double();
    backward(loss);
    opt.step();
  }
  CHECK(last < 0.1);
}

TEST_CASE("whole-model gradients match finite differences over the f64 mirror") {
  auto vocab = tiny_vocab();
  auto cfg = tiny_cfg();
  Seq2SeqModel m(cfg, vocab);
  Rng rng(37);
  TaskSample s1 = parsing_sample(rng, vocab, cfg);
  TaskSample s2 = box_sample(rng, vocab, cfg);
  std::vector<const TaskSample*> batch{&s1, &s2};

  {
    TapeScope scope;
    backward(seq_ce_loss(m, batch));
  }

  TargetBatch tb = build_target_batch(batch, vocab, cfg.max_target_len);
  std::vector<testref::RefSample> ref_samples;
  for (size_t b = 0; b < batch.size(); ++b) {
    testref::RefSample rs;
    rs.image = batch[b]->image.values();
    rs.instr = batch[b]->instruction;
    rs.dec_input = tb.inputs.input_ids[b];
    rs.block_start = tb.inputs.block_start[b];
    rs.block_size = tb.inputs.block_size[b];
    ref_samples.push_back(std::move(rs));
  }
  // pad decoder inputs to the batch maximum like the engine does
  size_t lt = 0;
  for (const auto& rs : ref_samples) lt = std::max(lt, rs.dec_input.size());
  for (auto& rs : ref_samples) rs.dec_input.resize(lt, vocab.pad());

  ModelConfig rcfg = m.config();
  testref::RefParams P = testref::RefParams::from(m.params());
  auto eval = [&]() { return testref::ref_seq_ce_loss(rcfg, vocab, P, ref_samples, tb.labels_flat); };

  Rng pick(3);
  int checked = 0;
  for (const auto& [name, t] : m.params()) {
    if (!t.has_grad()) continue;
    auto& vec = P.t.at(name);
    for (int probe = 0; probe < 3; ++probe) {
      const size_t idx = static_cast<size_t>(pick.next_u64() % vec.size());
      const double orig = vec[idx];
      const double h = 1e-3;
      vec[idx] = orig + h;
      const double fp = eval();
      vec[idx] = orig - h;
      const double fm = eval();
      vec[idx] = orig;
      const double fd = (fp - fm) / (2 * h);
      const double an = t.grad()[idx];
      INFO(name << "[" << idx << "] analytic " << an << " fd " << fd);
      CHECK(std::abs(an - fd) <= std::max(1e-5, 1e-3 * std::max(std::abs(an), std::abs(fd))));
      ++checked;
    }
  }
  CHECK(checked > 100);
}
