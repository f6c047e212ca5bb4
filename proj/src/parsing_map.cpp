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

#include "refseq/parsing_map.hpp"

#include "refseq/errors.hpp"

namespace refseq {

void ParsingMap::validate() const {
  if (static_cast<size_t>(height) * width * channels != v.size())
    throw RangeError("parsing map: storage does not match dims");
  for (int y = 0; y < height; ++y) {
    for (int x = 0; x < width; ++x) {
      int sum = 0;
      for (int c = 0; c < channels; ++c) {
        const uint8_t b = at(c, y, x);
        if (b != 0 && b != 1)
          throw RangeError("parsing map: non-binary value at (" + std::to_string(y) + "," +
                           std::to_string(x) + ")");
        sum += b;
      }
      if (sum != 1)
        throw RangeError("parsing map: pixel (" + std::to_string(y) + "," + std::to_string(x) +
                         ") set in " + std::to_string(sum) + " channels");
    }
  }
}

Tensor ParsingMap::to_tensor() const {
  std::vector<float> data(v.begin(), v.end());
  return Tensor::from_data({channels, height, width}, std::move(data));
}

ParsingMap ParsingMap::from_tensor(const Tensor& t) {
  if (t.rank() != 3) throw ShapeError("parsing map: expected [L,H,W], got " + shape_str(t.shape()));
  ParsingMap m;
  m.channels = t.dim(0);
  m.height = t.dim(1);
  m.width = t.dim(2);
  m.v.resize(t.values().size());
  for (size_t i = 0; i < m.v.size(); ++i) {
    const float f = t.values()[i];
    if (f != 0.f && f != 1.f)
      throw RangeError("parsing map: tensor value " + std::to_string(f) + " is not binary");
    m.v[i] = static_cast<uint8_t>(f);
  }
  return m;
}

Tensor parsing_batch(const std::vector<const ParsingMap*>& maps) {
  if (maps.empty()) throw ShapeError("parsing batch: no maps");
  const int L = maps[0]->channels, H = maps[0]->height, W = maps[0]->width;
  std::vector<float> data;
  data.reserve(maps.size() * maps[0]->v.size());
  for (const ParsingMap* m : maps) {
    if (m->channels != L || m->height != H || m->width != W)
      throw ShapeError("parsing batch: mixed map shapes");
    data.insert(data.end(), m->v.begin(), m->v.end());
  }
  return Tensor::from_data({static_cast<int>(maps.size()), L, H, W}, std::move(data));
}

ParsingMap binarize_probabilities(const Tensor& probs) {
  if (probs.rank() != 3)
    throw ShapeError("binarize: expected [L,H,W], got " + shape_str(probs.shape()));
  const int L = probs.dim(0), H = probs.dim(1), W = probs.dim(2);
  ParsingMap m(H, W, L);
  const float* p = probs.data();
  for (int y = 0; y < H; ++y) {
    for (int x = 0; x < W; ++x) {
      int best = 0;
      float best_v = p[(static_cast<size_t>(0) * H + y) * W + x];
      for (int c = 1; c < L; ++c) {
        const float v = p[(static_cast<size_t>(c) * H + y) * W + x];
        if (v > best_v) {
          best_v = v;
          best = c;
        }
      }
      m.paint(best, y, x);
    }
  }
  return m;
}

}  // namespace refseq
