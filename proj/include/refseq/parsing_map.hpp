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

#include <cstdint>
#include <vector>

#include "refseq/tensor.hpp"

namespace refseq {

// Binary body-part raster. Channel 0 is background; exactly one channel is
// set per pixel. Stored channel-major [L, H, W].
struct ParsingMap {
  int height = 0;
  int width = 0;
  int channels = 0;
  std::vector<uint8_t> v;

  ParsingMap() = default;
  ParsingMap(int h, int w, int l) : height(h), width(w), channels(l) {
    v.assign(static_cast<size_t>(h) * w * l, 0);
    // all-background until painted
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) at(0, y, x) = 1;
  }

  uint8_t& at(int c, int y, int x) {
    return v[(static_cast<size_t>(c) * height + y) * width + x];
  }
  uint8_t at(int c, int y, int x) const {
    return v[(static_cast<size_t>(c) * height + y) * width + x];
  }

  // Class index of a pixel (argmax over the one-hot channels).
  int label(int y, int x) const {
    for (int c = channels - 1; c >= 1; --c)
      if (at(c, y, x)) return c;
    return 0;
  }

  // Clears every channel at (y,x) and sets channel c.
  void paint(int c, int y, int x) {
    for (int k = 0; k < channels; ++k) at(k, y, x) = 0;
    at(c, y, x) = 1;
  }

  bool operator==(const ParsingMap& o) const {
    return height == o.height && width == o.width && channels == o.channels && v == o.v;
  }

  // Enforces the one-hot-with-background invariant; throws RangeError.
  void validate() const;

  Tensor to_tensor() const;                       // [L, H, W] floats in {0,1}
  static ParsingMap from_tensor(const Tensor& t); // values must be exactly 0 or 1
};

// Stacks maps into a [B, L, H, W] batch tensor.
Tensor parsing_batch(const std::vector<const ParsingMap*>& maps);

// Binarize decoder probabilities [L,H,W] in [0,1] by per-pixel argmax, which
// restores the one-hot invariant when channels disagree.
ParsingMap binarize_probabilities(const Tensor& probs);

}  // namespace refseq
