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

#include "refseq/vq.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "refseq/metrics.hpp"
#include "refseq/ops.hpp"
#include "refseq/serialize.hpp"

namespace refseq::vq {

using namespace refseq::ops;

int VqConfig::n_stages() const {
  int ds = downsample, n = 0;
  while (ds > 1) {
    if (ds % 2 != 0) throw RangeError("vq: downsample must be a power of two");
    ds /= 2;
    ++n;
  }
  if (n == 0 || n > static_cast<int>(hidden_channels.size()))
    throw RangeError("vq: downsample " + std::to_string(downsample) +
                     " needs between 1 and " + std::to_string(hidden_channels.size()) +
                     " conv stages");
  return n;
}

nlohmann::json VqConfig::to_json() const {
  return {{"map_h", map_h},
          {"map_w", map_w},
          {"channels", channels},
          {"downsample", downsample},
          {"latent_dim", latent_dim},
          {"codebook_size", codebook_size},
          {"use_attention", use_attention},
          {"hidden_channels", hidden_channels},
          {"beta", beta},
          {"seed", seed}};
}

VqConfig VqConfig::from_json(const nlohmann::json& j) {
  VqConfig c;
  c.map_h = j.at("map_h").get<int>();
  c.map_w = j.at("map_w").get<int>();
  c.channels = j.at("channels").get<int>();
  c.downsample = j.at("downsample").get<int>();
  c.latent_dim = j.at("latent_dim").get<int>();
  c.codebook_size = j.at("codebook_size").get<int>();
  c.use_attention = j.at("use_attention").get<bool>();
  c.hidden_channels = j.at("hidden_channels").get<std::vector<int>>();
  c.beta = j.at("beta").get<float>();
  c.seed = j.at("seed").get<uint64_t>();
  return c;
}

namespace {

Tensor init_conv(Rng& rng, Shape shape, int fan_in) {
  std::vector<float> w(static_cast<size_t>(numel(shape)));
  const float std = std::sqrt(2.f / static_cast<float>(fan_in));
  for (auto& v : w) v = rng.normal_f32() * std;
  Tensor t = Tensor::from_data(std::move(shape), std::move(w));
  t.set_requires_grad(true);
  return t;
}

Tensor init_zero(Shape shape) {
  Tensor t = Tensor::zeros(std::move(shape));
  t.set_requires_grad(true);
  return t;
}

Tensor init_linear(Rng& rng, int in, int out) {
  std::vector<float> w(static_cast<size_t>(in) * out);
  const float std = std::sqrt(1.f / static_cast<float>(in));
  for (auto& v : w) v = rng.normal_f32() * std;
  Tensor t = Tensor::from_data({in, out}, std::move(w));
  t.set_requires_grad(true);
  return t;
}

}  // namespace

VqModel::VqModel(VqConfig cfg) : cfg_(std::move(cfg)) {
  if (cfg_.map_h % cfg_.downsample != 0 || cfg_.map_w % cfg_.downsample != 0)
    throw ShapeError("vq: map " + std::to_string(cfg_.map_h) + "x" + std::to_string(cfg_.map_w) +
                     " not divisible by downsample " + std::to_string(cfg_.downsample));
  const int n = cfg_.n_stages();
  Rng rng(cfg_.seed, 0x76711);

  // codebook rows from a unit-variance gaussian
  {
    std::vector<float> cb(static_cast<size_t>(cfg_.codebook_size) * cfg_.latent_dim);
    for (auto& v : cb) v = rng.normal_f32();
    codebook_ = Tensor::from_data({cfg_.codebook_size, cfg_.latent_dim}, std::move(cb));
    codebook_.set_requires_grad(true);
    params_.emplace_back("vq/codebook", codebook_);
  }

  int ch = cfg_.channels;
  for (int i = 0; i < n; ++i) {
    const int out = cfg_.hidden_channels[static_cast<size_t>(i)];
    enc_w_.push_back(init_conv(rng, {out, ch, 3, 3}, ch * 9));
    enc_b_.push_back(init_zero({out}));
    params_.emplace_back("vq/enc" + std::to_string(i) + "/w", enc_w_.back());
    params_.emplace_back("vq/enc" + std::to_string(i) + "/b", enc_b_.back());
    ch = out;
  }
  enc_out_w_ = init_conv(rng, {cfg_.latent_dim, ch, 1, 1}, ch);
  enc_out_b_ = init_zero({cfg_.latent_dim});
  params_.emplace_back("vq/enc_out/w", enc_out_w_);
  params_.emplace_back("vq/enc_out/b", enc_out_b_);

  dec_in_w_ = init_conv(rng, {ch, cfg_.latent_dim, 1, 1}, cfg_.latent_dim);
  dec_in_b_ = init_zero({ch});
  params_.emplace_back("vq/dec_in/w", dec_in_w_);
  params_.emplace_back("vq/dec_in/b", dec_in_b_);
  for (int i = n - 1; i >= 0; --i) {
    const int in = cfg_.hidden_channels[static_cast<size_t>(i)];
    const int out = i > 0 ? cfg_.hidden_channels[static_cast<size_t>(i - 1)] : cfg_.hidden_channels[0];
    dec_w_.push_back(init_conv(rng, {in, out, 4, 4}, in * 16));
    dec_b_.push_back(init_zero({out}));
    const int idx = n - 1 - i;
    params_.emplace_back("vq/dec" + std::to_string(idx) + "/w", dec_w_.back());
    params_.emplace_back("vq/dec" + std::to_string(idx) + "/b", dec_b_.back());
  }
  dec_out_w_ = init_conv(rng, {cfg_.channels, cfg_.hidden_channels[0], 1, 1},
                         cfg_.hidden_channels[0]);
  dec_out_b_ = init_zero({cfg_.channels});
  params_.emplace_back("vq/dec_out/w", dec_out_w_);
  params_.emplace_back("vq/dec_out/b", dec_out_b_);

  if (cfg_.use_attention) {
    const int cb = cfg_.hidden_channels[static_cast<size_t>(n - 1)];
    for (int side = 0; side < 2; ++side) {
      Attn a;
      a.wq = init_linear(rng, cb, cb);
      a.bq = init_zero({cb});
      a.wk = init_linear(rng, cb, cb);
      a.bk = init_zero({cb});
      a.wv = init_linear(rng, cb, cb);
      a.bv = init_zero({cb});
      a.wo = init_linear(rng, cb, cb);
      a.bo = init_zero({cb});
      const std::string base = side == 0 ? "vq/enc_attn/" : "vq/dec_attn/";
      params_.emplace_back(base + "wq", a.wq);
      params_.emplace_back(base + "bq", a.bq);
      params_.emplace_back(base + "wk", a.wk);
      params_.emplace_back(base + "bk", a.bk);
      params_.emplace_back(base + "wv", a.wv);
      params_.emplace_back(base + "bv", a.bv);
      params_.emplace_back(base + "wo", a.wo);
      params_.emplace_back(base + "bo", a.bo);
      attn_.push_back(a);
    }
  }
}

namespace {

// Single-head self-attention over the spatial grid; residual added.
Tensor attention_block(const Tensor& feat, const VqModel::Attn& a, int batch, int cells, int ch) {
  Tensor rows = reshape(feat, {batch * cells, ch});
  Tensor q = reshape(add(matmul(rows, a.wq), a.bq), {batch, cells, ch});
  Tensor k = reshape(add(matmul(rows, a.wk), a.bk), {batch, cells, ch});
  Tensor v = reshape(add(matmul(rows, a.wv), a.bv), {batch, cells, ch});
  Tensor scores = scale(matmul_nt(q, k), 1.f / std::sqrt(static_cast<float>(ch)));
  Tensor att = softmax_last(scores);
  Tensor mixed = matmul(att, v);  // [B, cells, ch]
  Tensor out = add(matmul(reshape(mixed, {batch * cells, ch}), a.wo), a.bo);
  return add(reshape(out, {batch, cells, ch}), reshape(rows, {batch, cells, ch}));
}

}  // namespace

Tensor VqModel::encode(const Tensor& maps) const {
  if (maps.rank() != 4 || maps.dim(1) != cfg_.channels || maps.dim(2) != cfg_.map_h ||
      maps.dim(3) != cfg_.map_w)
    throw ShapeError("vq encode: expected [B," + std::to_string(cfg_.channels) + "," +
                     std::to_string(cfg_.map_h) + "," + std::to_string(cfg_.map_w) + "], got " +
                     shape_str(maps.shape()));
  const int B = maps.dim(0);
  Tensor h = maps;
  for (size_t i = 0; i < enc_w_.size(); ++i)
    h = gelu(conv2d(h, enc_w_[i], enc_b_[i], 2, 1));
  if (cfg_.use_attention) {
    const int ch = h.dim(1), cells = h.dim(2) * h.dim(3);
    const int gh = h.dim(2), gw = h.dim(3);
    Tensor rows = transpose(reshape(h, {B, ch, cells}));  // [B, cells, ch]
    rows = attention_block(rows, attn_[0], B, cells, ch);
    h = reshape(transpose(rows), {B, ch, gh, gw});
  }
  h = conv2d(h, enc_out_w_, enc_out_b_, 1, 0);  // [B, d, gh, gw]
  const int cells = cfg_.grid_h() * cfg_.grid_w();
  Tensor rows = transpose(reshape(h, {B, cfg_.latent_dim, cells}));  // [B, cells, d]
  return reshape(rows, {B * cells, cfg_.latent_dim});
}

std::vector<int> VqModel::nearest_codes(const Tensor& latent_rows) const {
  if (latent_rows.rank() != 2 || latent_rows.dim(1) != cfg_.latent_dim)
    throw ShapeError("vq quantize: latent rows " + shape_str(latent_rows.shape()) +
                     " do not match codebook dim " + std::to_string(cfg_.latent_dim));
  if (codebook_.size() == 0) throw ShapeError("vq quantize: empty codebook");
  const int n = latent_rows.dim(0), d = cfg_.latent_dim, K = cfg_.codebook_size;
  std::vector<int> codes(static_cast<size_t>(n));
  const float* z = latent_rows.data();
  const float* cb = codebook_.data();
  for (int i = 0; i < n; ++i) {
    double best = 0;
    int best_k = -1;
    for (int k = 0; k < K; ++k) {
      double dist = 0;
      for (int j = 0; j < d; ++j) {
        const double diff = static_cast<double>(z[static_cast<size_t>(i) * d + j]) -
                            cb[static_cast<size_t>(k) * d + j];
        dist += diff * diff;
      }
      if (best_k < 0 || dist < best) {  // ties keep the smallest k
        best = dist;
        best_k = k;
      }
    }
    codes[static_cast<size_t>(i)] = best_k;
  }
  return codes;
}

Tensor VqModel::decode_latent(const Tensor& rows, int batch) const {
  const int cells = cfg_.grid_h() * cfg_.grid_w();
  if (rows.rank() != 2 || rows.dim(0) != batch * cells || rows.dim(1) != cfg_.latent_dim)
    throw ShapeError("vq decode: rows " + shape_str(rows.shape()) + " do not match batch " +
                     std::to_string(batch) + " x grid " + std::to_string(cells));
  Tensor grid = reshape(rows, {batch, cells, cfg_.latent_dim});
  Tensor h = reshape(transpose(grid), {batch, cfg_.latent_dim, cfg_.grid_h(), cfg_.grid_w()});
  h = gelu(conv2d(h, dec_in_w_, dec_in_b_, 1, 0));
  if (cfg_.use_attention) {
    const int ch = h.dim(1), cc = h.dim(2) * h.dim(3);
    Tensor r = transpose(reshape(h, {batch, ch, cc}));
    r = attention_block(r, attn_[1], batch, cc, ch);
    h = reshape(transpose(r), {batch, ch, cfg_.grid_h(), cfg_.grid_w()});
  }
  for (size_t i = 0; i < dec_w_.size(); ++i)
    h = gelu(conv_transpose2d(h, dec_w_[i], dec_b_[i], 2, 1));
  return conv2d(h, dec_out_w_, dec_out_b_, 1, 0);  // logits [B, L, H, W]
}

VqModel::LossParts VqModel::loss(const Tensor& maps, float beta) const {
  const int B = maps.dim(0);
  Tensor z_rows = encode(maps);
  const std::vector<int> codes = nearest_codes(z_rows);
  Tensor zq_rows = embedding(codebook_, codes);
  // straight-through: value of zq, gradient to the encoder path
  Tensor st_rows = add(detach(sub(zq_rows, z_rows)), z_rows);
  Tensor logits = decode_latent(st_rows, B);
  Tensor recon = bce_with_logits(logits, maps);
  Tensor embed = mse(zq_rows, detach(z_rows));
  Tensor commit = mse(z_rows, detach(zq_rows));
  LossParts parts;
  parts.recon = recon.item_double();
  parts.embed = embed.item_double();
  parts.commit = commit.item_double();
  parts.total = add(recon, add(embed, scale(commit, beta)));
  return parts;
}

void VqModel::check_trained(const char* op) const {
  if (!trained_)
    throw RangeError(std::string(op) + ": model has not been trained (or loaded) yet");
}

std::vector<int> VqModel::merge_codes(const ParsingMap& m) const {
  check_trained("vq merge");
  NoGradScope ng;
  Tensor batch = parsing_batch({&m});
  return nearest_codes(encode(batch));
}

codec::TokenSeq VqModel::merge_tokens(const ParsingMap& m, const codec::Vocabulary& vocab) const {
  codec::TokenSeq out;
  for (int code : merge_codes(m)) out.push_back(vocab.parsing_token(code));
  return out;
}

ParsingMap VqModel::dispense_codes(const std::vector<int>& codes) const {
  check_trained("vq dispense");
  if (static_cast<int>(codes.size()) != cfg_.n_tokens())
    throw ParseError("vq dispense: expected " + std::to_string(cfg_.n_tokens()) +
                         " codes, got " + std::to_string(codes.size()),
                     static_cast<long>(codes.size()));
  for (size_t i = 0; i < codes.size(); ++i)
    if (codes[i] < 0 || codes[i] >= cfg_.codebook_size)
      throw ParseError("vq dispense: code " + std::to_string(codes[i]) + " outside codebook",
                       static_cast<long>(i));
  NoGradScope ng;
  Tensor rows = embedding(codebook_, codes);
  Tensor logits = decode_latent(rows, 1);
  Tensor probs = sigmoid(logits);
  Tensor single = reshape(probs, {cfg_.channels, cfg_.map_h, cfg_.map_w});
  return binarize_probabilities(single);
}

ParsingMap VqModel::dispense_tokens(const codec::TokenSeq& tokens,
                                    const codec::Vocabulary& vocab) const {
  std::vector<int> codes;
  codes.reserve(tokens.size());
  for (size_t i = 0; i < tokens.size(); ++i) {
    if (vocab.partition_of(tokens[i]) != codec::Partition::ParsingCode)
      throw ParseError("vq dispense: token " + std::to_string(tokens[i]) +
                           " outside the parsing_code partition",
                       static_cast<long>(i));
    codes.push_back(vocab.parsing_index(tokens[i]));
  }
  return dispense_codes(codes);
}

void VqModel::save(const std::string& path_base) const {
  save_params(path_base, params_);
  nlohmann::json j;
  j["config"] = cfg_.to_json();
  j["trained"] = trained_;
  std::ofstream os(path_base + ".json", std::ios::trunc);
  if (!os) throw IoError("vq save: cannot open " + path_base + ".json");
  os << j.dump(2) << "\n";
}

VqModel VqModel::load(const std::string& path_base) {
  std::ifstream is(path_base + ".json");
  if (!is) throw IoError("vq load: cannot open " + path_base + ".json");
  nlohmann::json j;
  is >> j;
  VqModel model(VqConfig::from_json(j.at("config")));
  ParamList params = model.params_;
  load_params(path_base, params);
  model.trained_ = j.value("trained", false);
  return model;
}

VqTrainResult train_vq(VqModel& model, const std::vector<ParsingMap>& train_maps,
                       const std::vector<ParsingMap>& heldout_maps, const VqTrainConfig& cfg,
                       const std::function<void(long, double)>& on_log) {
  if (train_maps.empty()) throw RangeError("vq train: empty dataset");
  Adam opt(AdamConfig{cfg.learning_rate, 0.9f, 0.999f, 1e-8f});
  opt.register_params(model.params());

  Rng rng(cfg.seed, 0x7621);
  std::vector<size_t> order(train_maps.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = i;
  size_t cursor = order.size();  // trigger reshuffle on first use

  VqTrainResult result;
  for (long step = 1; step <= cfg.steps; ++step) {
    if (cfg.lr_linear_decay)
      opt.set_lr(cfg.learning_rate *
                 std::max(0.1f, 1.f - static_cast<float>(step) / static_cast<float>(cfg.steps)));
    std::vector<const ParsingMap*> batch;
    for (int b = 0; b < cfg.batch_size; ++b) {
      if (cursor >= order.size()) {
        for (size_t i = order.size(); i > 1; --i)
          std::swap(order[i - 1], order[static_cast<size_t>(rng.uniform_int(0, static_cast<int>(i) - 1))]);
        cursor = 0;
      }
      batch.push_back(&train_maps[order[cursor++]]);
    }
    double loss_value = 0;
    opt.zero_grad();
    try {
      TapeScope scope;
      Tensor maps = parsing_batch(batch);
      auto parts = model.loss(maps, cfg.beta);
      loss_value = parts.total.item_double();
      if (!std::isfinite(loss_value))
        throw TrainingDiverged("vq train: non-finite loss", step);
      backward(parts.total);
    } catch (const NumericsError& e) {
      throw TrainingDiverged(std::string("vq train: ") + e.what(), step);
    }
    opt.step();
    if (step % cfg.log_every == 0 || step == cfg.steps) {
      result.curve.emplace_back(step, loss_value);
      if (on_log) on_log(step, loss_value);
    }
    result.final_loss = loss_value;
  }
  model.set_trained(true);
  if (!heldout_maps.empty()) result.heldout_miou = reconstruction_miou(model, heldout_maps);
  return result;
}

double reconstruction_miou(const VqModel& model, const std::vector<ParsingMap>& maps) {
  metrics::MiouAccumulator acc;
  for (const auto& m : maps) acc.add(model.dispense_codes(model.merge_codes(m)), m);
  return acc.value();
}

const char* placement_name(Placement p) {
  switch (p) {
    case Placement::Resize: return "resize";
    case Placement::Padding: return "padding";
    case Placement::WholeImage: return "whole_image";
  }
  return "?";
}

Placement placement_from_name(const std::string& s) {
  if (s == "resize") return Placement::Resize;
  if (s == "padding") return Placement::Padding;
  if (s == "whole_image") return Placement::WholeImage;
  throw RangeError("unknown placement strategy '" + s + "'");
}

namespace {

struct PixelRect {
  int x0, y0, w, h;
};

PixelRect rect_of(const codec::Region& box, int frame_w, int frame_h, const char* op) {
  const int x0 = std::max(0, static_cast<int>(std::floor(box.x1)));
  const int y0 = std::max(0, static_cast<int>(std::floor(box.y1)));
  const int x1 = std::min(frame_w, static_cast<int>(std::ceil(box.x2)));
  const int y1 = std::min(frame_h, static_cast<int>(std::ceil(box.y2)));
  if (x1 - x0 <= 0 || y1 - y0 <= 0)
    throw RangeError(std::string(op) + ": degenerate box (" + std::to_string(box.x1) + "," +
                     std::to_string(box.y1) + ")-(" + std::to_string(box.x2) + "," +
                     std::to_string(box.y2) + ")");
  return {x0, y0, x1 - x0, y1 - y0};
}

// Nearest-neighbor label resample of a sub-rectangle into dst_h x dst_w.
ParsingMap resample(const ParsingMap& src, int sx, int sy, int sw, int sh, int dst_h, int dst_w) {
  ParsingMap out(dst_h, dst_w, src.channels);
  for (int y = 0; y < dst_h; ++y) {
    int yy = sy + static_cast<int>((y + 0.5) * sh / dst_h);
    yy = std::min(sy + sh - 1, std::max(sy, yy));
    for (int x = 0; x < dst_w; ++x) {
      int xx = sx + static_cast<int>((x + 0.5) * sw / dst_w);
      xx = std::min(sx + sw - 1, std::max(sx, xx));
      out.paint(src.label(yy, xx), y, x);
    }
  }
  return out;
}

// Padding canvas: smallest rectangle with the model map's aspect, anchored at
// the box origin, that covers the box.
PixelRect padded_canvas(const PixelRect& r, int aspect_h, int aspect_w) {
  int ch = r.h, cw = (ch * aspect_w + aspect_h - 1) / aspect_h;
  if (cw < r.w) {
    cw = r.w;
    ch = (cw * aspect_h + aspect_w - 1) / aspect_w;
  }
  return {r.x0, r.y0, cw, ch};
}

}  // namespace

ParsingMap crop_to_model(const ParsingMap& frame_map, const codec::Region& box,
                         const VqConfig& cfg, Placement strategy) {
  switch (strategy) {
    case Placement::WholeImage:
      return resample(frame_map, 0, 0, frame_map.width, frame_map.height, cfg.map_h, cfg.map_w);
    case Placement::Resize: {
      const PixelRect r = rect_of(box, frame_map.width, frame_map.height, "crop");
      return resample(frame_map, r.x0, r.y0, r.w, r.h, cfg.map_h, cfg.map_w);
    }
    case Placement::Padding: {
      const PixelRect r = rect_of(box, frame_map.width, frame_map.height, "crop");
      const PixelRect canvas = padded_canvas(r, cfg.map_h, cfg.map_w);
      ParsingMap padded(canvas.h, canvas.w, frame_map.channels);
      for (int y = 0; y < r.h; ++y)
        for (int x = 0; x < r.w; ++x)
          padded.paint(frame_map.label(r.y0 + y, r.x0 + x), y, x);
      return resample(padded, 0, 0, canvas.w, canvas.h, cfg.map_h, cfg.map_w);
    }
  }
  throw RangeError("crop: bad strategy");
}

ParsingMap place_in_frame(const ParsingMap& person_map, const codec::Region& box, int frame_w,
                          int frame_h, Placement strategy) {
  ParsingMap frame(frame_h, frame_w, person_map.channels);
  switch (strategy) {
    case Placement::WholeImage:
      return resample(person_map, 0, 0, person_map.width, person_map.height, frame_h, frame_w);
    case Placement::Resize: {
      const PixelRect r = rect_of(box, frame_w, frame_h, "place");
      ParsingMap scaled = resample(person_map, 0, 0, person_map.width, person_map.height, r.h, r.w);
      for (int y = 0; y < r.h; ++y)
        for (int x = 0; x < r.w; ++x) frame.paint(scaled.label(y, x), r.y0 + y, r.x0 + x);
      return frame;
    }
    case Placement::Padding: {
      const PixelRect r = rect_of(box, frame_w, frame_h, "place");
      const PixelRect canvas = padded_canvas(r, person_map.height, person_map.width);
      ParsingMap scaled = resample(person_map, 0, 0, person_map.width, person_map.height,
                                   canvas.h, canvas.w);
      for (int y = 0; y < r.h && r.y0 + y < frame_h; ++y)
        for (int x = 0; x < r.w && r.x0 + x < frame_w; ++x)
          frame.paint(scaled.label(y, x), r.y0 + y, r.x0 + x);
      return frame;
    }
  }
  throw RangeError("place: bad strategy");
}

}  // namespace refseq::vq
