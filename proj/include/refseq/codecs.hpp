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

#include "refseq/vocab.hpp"

namespace refseq::codec {

using TokenSeq = std::vector<int>;

// Uniform spatial quantizer: n_bins bins over [0, extent) per axis.
struct QuantizerConfig {
  int n_bins = 64;
  double width = 64;
  double height = 64;
};

// floor(x / extent * N), clamped to N-1. x must lie in [0, extent).
int quantize_coord(double x, double extent, const QuantizerConfig& cfg);
// ceil(b / N * extent); applied symmetrically to x and y. b must lie in [0, N).
double dequantize_coord(int b, double extent, const QuantizerConfig& cfg);

// Axis-aligned box; corners in pixels, 0 <= x1 <= x2 < W, 0 <= y1 <= y2 < H.
struct Region {
  double x1 = 0, y1 = 0, x2 = 0, y2 = 0;
  double area() const { return (x2 - x1) * (y2 - y1); }
  void validate(double w, double h) const;
};

// [qx1, qy1, qx2, qy2] as bin tokens.
TokenSeq encode_region(const Region& s, const QuantizerConfig& cfg, const Vocabulary& vocab);
Region decode_region(const TokenSeq& tokens, const QuantizerConfig& cfg, const Vocabulary& vocab);

// Named keypoints over a fixed schema; absent point = invisible.
struct KeypointSet {
  KeypointSchema schema;
  std::vector<std::optional<std::pair<double, double>>> points;

  explicit KeypointSet(KeypointSchema s)
      : schema(std::move(s)), points(schema.names.size(), std::nullopt) {}
  KeypointSet() = default;
  int visible_count() const;
};

// For each visible keypoint in schema order: [name-token, x-bin, y-bin].
// Invisible keypoints are omitted entirely.
TokenSeq encode_keypoints(const KeypointSet& k, const QuantizerConfig& cfg,
                          const Vocabulary& vocab);
// Inverse. Names absent from the stream stay invisible; when a name repeats,
// the first triple wins. Malformed streams raise ParseError with the offset.
KeypointSet decode_keypoints(const TokenSeq& tokens, const QuantizerConfig& cfg,
                             const Vocabulary& vocab);

// Keypoint target format: the bounding box prefix followed by the named
// keypoint triples, so box and keypoints constrain each other during decoding.
TokenSeq encode_box_keypoint_sequence(const Region& s, const KeypointSet& k,
                                      const QuantizerConfig& cfg, const Vocabulary& vocab);

struct BoxKeypointTarget {
  Region box;
  KeypointSet keypoints;
};
BoxKeypointTarget decode_box_keypoint_sequence(const TokenSeq& tokens,
                                               const QuantizerConfig& cfg,
                                               const Vocabulary& vocab);

enum class Task { Box, Keypoints, Parsing, Caption };

const char* task_name(Task t);           // "box" | "keypoints" | "parsing" | "caption"
Task task_from_name(const std::string&); // RangeError on unknown

// Frozen instruction templates (documented in the README). The text slot is
// filled with the referring text; the Caption task instead takes a region
// rendered inline as 4 bin tokens.
std::string instruction_template(Task t);

TokenSeq render_instruction(Task t, const std::string& referring_text,
                            const QuantizerConfig& cfg, const Vocabulary& vocab);
TokenSeq render_instruction(Task t, const Region& region, const QuantizerConfig& cfg,
                            const Vocabulary& vocab);

}  // namespace refseq::codec
