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

#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace refseq::codec {

// Byte-level BPE. Token ids are local to the model: 0..255 are raw bytes,
// 256+i is the token produced by merge rule i. Byte fallback makes
// decode(encode(s)) == s for every byte string.
class BpeModel {
 public:
  BpeModel() = default;

  // Deterministic training: the most frequent adjacent pair merges first;
  // ties break on the lexicographically smallest (left bytes, right bytes)
  // pair. Stops early when no pair occurs twice.
  static BpeModel train(const std::vector<std::string>& corpus, int target_merges);

  // Rebuild from a stored merge list (manifest round trip).
  static BpeModel from_merges(std::vector<std::pair<int, int>> merges);

  std::vector<int> encode(std::string_view s) const;
  std::string decode(const std::vector<int>& ids) const;

  int vocab_size() const { return 256 + static_cast<int>(merges_.size()); }
  const std::vector<std::pair<int, int>>& merges() const { return merges_; }
  const std::string& token_bytes(int id) const;

 private:
  void rebuild_tokens();
  std::vector<std::pair<int, int>> merges_;
  std::vector<std::string> token_bytes_;  // index 0..vocab_size
};

}  // namespace refseq::codec
