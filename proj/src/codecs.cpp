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

#include "refseq/codecs.hpp"

#include <cmath>

#include "refseq/errors.hpp"

namespace refseq::codec {

int quantize_coord(double x, double extent, const QuantizerConfig& cfg) {
  if (!(x >= 0.0 && x < extent))
    throw RangeError("quantize: coordinate " + std::to_string(x) + " outside [0, " +
                     std::to_string(extent) + ")");
  int b = static_cast<int>(std::floor(x / extent * cfg.n_bins));
  if (b > cfg.n_bins - 1) b = cfg.n_bins - 1;  // guards the x ~ extent rounding edge
  return b;
}

double dequantize_coord(int b, double extent, const QuantizerConfig& cfg) {
  if (b < 0 || b >= cfg.n_bins)
    throw RangeError("dequantize: bin " + std::to_string(b) + " outside [0, " +
                     std::to_string(cfg.n_bins) + ")");
  return std::ceil(static_cast<double>(b) / cfg.n_bins * extent);
}

void Region::validate(double w, double h) const {
  if (!(0 <= x1 && x1 <= x2 && x2 < w && 0 <= y1 && y1 <= y2 && y2 < h))
    throw RangeError("region: corners (" + std::to_string(x1) + "," + std::to_string(y1) + ")-(" +
                     std::to_string(x2) + "," + std::to_string(y2) + ") invalid for frame " +
                     std::to_string(w) + "x" + std::to_string(h));
}

TokenSeq encode_region(const Region& s, const QuantizerConfig& cfg, const Vocabulary& vocab) {
  s.validate(cfg.width, cfg.height);
  return {vocab.bin_token(quantize_coord(s.x1, cfg.width, cfg)),
          vocab.bin_token(quantize_coord(s.y1, cfg.height, cfg)),
          vocab.bin_token(quantize_coord(s.x2, cfg.width, cfg)),
          vocab.bin_token(quantize_coord(s.y2, cfg.height, cfg))};
}

Region decode_region(const TokenSeq& tokens, const QuantizerConfig& cfg, const Vocabulary& vocab) {
  if (tokens.size() != 4)
    throw ParseError("region: expected 4 bin tokens, got " + std::to_string(tokens.size()),
                     static_cast<long>(tokens.size()));
  for (size_t i = 0; i < 4; ++i)
    if (vocab.partition_of(tokens[i]) != Partition::Bin)
      throw ParseError("region: token " + std::to_string(tokens[i]) + " is not a bin token",
                       static_cast<long>(i));
  Region r;
  r.x1 = dequantize_coord(vocab.bin_index(tokens[0]), cfg.width, cfg);
  r.y1 = dequantize_coord(vocab.bin_index(tokens[1]), cfg.height, cfg);
  r.x2 = dequantize_coord(vocab.bin_index(tokens[2]), cfg.width, cfg);
  r.y2 = dequantize_coord(vocab.bin_index(tokens[3]), cfg.height, cfg);
  return r;
}

int KeypointSet::visible_count() const {
  int n = 0;
  for (const auto& p : points) n += p.has_value();
  return n;
}

TokenSeq encode_keypoints(const KeypointSet& k, const QuantizerConfig& cfg,
                          const Vocabulary& vocab) {
  if (k.points.size() != k.schema.names.size())
    throw RangeError("keypoints: points/schema size mismatch");
  if (k.schema.names != vocab.keypoints().names)
    throw RangeError("keypoints: schema does not match the vocabulary schema");
  TokenSeq out;
  for (size_t i = 0; i < k.points.size(); ++i) {
    if (!k.points[i]) continue;
    const auto [x, y] = *k.points[i];
    out.push_back(vocab.keypoint_token(static_cast<int>(i)));
    out.push_back(vocab.bin_token(quantize_coord(x, cfg.width, cfg)));
    out.push_back(vocab.bin_token(quantize_coord(y, cfg.height, cfg)));
  }
  return out;
}

KeypointSet decode_keypoints(const TokenSeq& tokens, const QuantizerConfig& cfg,
                             const Vocabulary& vocab) {
  KeypointSet out(vocab.keypoints());
  if (tokens.size() % 3 != 0)
    throw ParseError("keypoints: truncated triple, stream length " +
                         std::to_string(tokens.size()),
                     static_cast<long>(tokens.size() - tokens.size() % 3));
  for (size_t i = 0; i < tokens.size(); i += 3) {
    if (vocab.partition_of(tokens[i]) != Partition::KeypointName)
      throw ParseError("keypoints: expected a name token, got id " + std::to_string(tokens[i]),
                       static_cast<long>(i));
    for (size_t j = i + 1; j <= i + 2; ++j)
      if (vocab.partition_of(tokens[j]) != Partition::Bin)
        throw ParseError("keypoints: expected a bin token, got id " + std::to_string(tokens[j]),
                         static_cast<long>(j));
    const int kpt = vocab.keypoint_index(tokens[i]);
    if (out.points[static_cast<size_t>(kpt)]) continue;  // duplicate name: first wins
    out.points[static_cast<size_t>(kpt)] = {
        dequantize_coord(vocab.bin_index(tokens[i + 1]), cfg.width, cfg),
        dequantize_coord(vocab.bin_index(tokens[i + 2]), cfg.height, cfg)};
  }
  return out;
}

TokenSeq encode_box_keypoint_sequence(const Region& s, const KeypointSet& k,
                                      const QuantizerConfig& cfg, const Vocabulary& vocab) {
  TokenSeq out = encode_region(s, cfg, vocab);
  TokenSeq kq = encode_keypoints(k, cfg, vocab);
  out.insert(out.end(), kq.begin(), kq.end());
  return out;
}

BoxKeypointTarget decode_box_keypoint_sequence(const TokenSeq& tokens,
                                               const QuantizerConfig& cfg,
                                               const Vocabulary& vocab) {
  if (tokens.size() < 4)
    throw ParseError("box+keypoints: stream shorter than the 4-token box prefix",
                     static_cast<long>(tokens.size()));
  BoxKeypointTarget out;
  out.box = decode_region(TokenSeq(tokens.begin(), tokens.begin() + 4), cfg, vocab);
  out.keypoints = decode_keypoints(TokenSeq(tokens.begin() + 4, tokens.end()), cfg, vocab);
  return out;
}

const char* task_name(Task t) {
  switch (t) {
    case Task::Box: return "box";
    case Task::Keypoints: return "keypoints";
    case Task::Parsing: return "parsing";
    case Task::Caption: return "caption";
  }
  return "?";
}

Task task_from_name(const std::string& s) {
  if (s == "box") return Task::Box;
  if (s == "keypoints") return Task::Keypoints;
  if (s == "parsing") return Task::Parsing;
  if (s == "caption") return Task::Caption;
  throw RangeError("unknown task '" + s + "'");
}

std::string instruction_template(Task t) {
  switch (t) {
    case Task::Box:
      return "which person does the text \" {} \" describe ?";
    case Task::Keypoints:
      return "which region does the text \" {} \" describe ? provide the keypoints .";
    case Task::Parsing:
      return "which region does the text \" {} \" describe ? provide the parsing map .";
    case Task::Caption:
      return "describe the human in region {} .";
  }
  return "";
}

namespace {

// Splits "prefix {} suffix" around the slot.
std::pair<std::string, std::string> split_template(const std::string& tpl) {
  const size_t pos = tpl.find("{}");
  return {tpl.substr(0, pos), tpl.substr(pos + 2)};
}

}  // namespace

TokenSeq render_instruction(Task t, const std::string& referring_text,
                            const QuantizerConfig& cfg, const Vocabulary& vocab) {
  (void)cfg;
  if (t == Task::Caption)
    throw RangeError("instruction: the caption task takes a region argument, not text");
  auto [prefix, suffix] = split_template(instruction_template(t));
  return vocab.encode_text(prefix + referring_text + suffix);
}

TokenSeq render_instruction(Task t, const Region& region, const QuantizerConfig& cfg,
                            const Vocabulary& vocab) {
  if (t != Task::Caption)
    throw RangeError(std::string("instruction: task '") + task_name(t) +
                     "' takes a referring text argument, not a region");
  auto [prefix, suffix] = split_template(instruction_template(t));
  TokenSeq out = vocab.encode_text(prefix);
  TokenSeq boxq = encode_region(region, cfg, vocab);
  out.insert(out.end(), boxq.begin(), boxq.end());
  TokenSeq tail = vocab.encode_text(suffix);
  out.insert(out.end(), tail.begin(), tail.end());
  return out;
}

}  // namespace refseq::codec
