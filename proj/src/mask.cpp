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

#include "refseq/errors.hpp"
#include "refseq/model.hpp"

namespace refseq::model {

DecoderMask build_hybrid_mask(int len, int block_start, int block_size) {
  if (len <= 0) throw ShapeError("hybrid mask: non-positive length");
  const bool has_block = block_start >= 0 && block_size > 0;
  if (has_block && block_start + block_size > len)
    throw ShapeError("hybrid mask: block [" + std::to_string(block_start) + "," +
                     std::to_string(block_start + block_size) + ") exceeds length " +
                     std::to_string(len));

  DecoderMask m;
  m.len = len;
  m.block_start = has_block ? block_start : -1;
  m.block_size = has_block ? block_size : 0;
  m.allowed = std::make_shared<std::vector<uint8_t>>(static_cast<size_t>(len) * len, 0);
  auto& a = *std::const_pointer_cast<std::vector<uint8_t>>(m.allowed);

  const int bs = m.block_start, be = has_block ? block_start + block_size : -1;
  for (int i = 0; i < len; ++i) {
    const bool i_in_block = has_block && i >= bs && i < be;
    for (int j = 0; j < len; ++j) {
      bool ok;
      if (i_in_block) {
        // whole block visible to itself, plus the prefix before the block
        ok = (j >= bs && j < be) || j < bs;
      } else {
        ok = j <= i;
        // positions outside the block stay causal; anything before the block
        // must not see into it (causality already guarantees that), and
        // positions after the block may see all of it (also causal).
      }
      a[static_cast<size_t>(i) * len + j] = ok ? 1 : 0;
    }
  }
  return m;
}

}  // namespace refseq::model
