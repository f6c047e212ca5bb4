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

#include "refseq/bpe.hpp"

#include <map>

#include "refseq/errors.hpp"

namespace refseq::codec {

namespace {

// Greedy left-to-right replacement of the pair (a,b) by id.
void apply_merge(std::vector<int>& seq, int a, int b, int id) {
  size_t w = 0;
  for (size_t r = 0; r < seq.size();) {
    if (r + 1 < seq.size() && seq[r] == a && seq[r + 1] == b) {
      seq[w++] = id;
      r += 2;
    } else {
      seq[w++] = seq[r++];
    }
  }
  seq.resize(w);
}

}  // namespace

void BpeModel::rebuild_tokens() {
  token_bytes_.clear();
  token_bytes_.reserve(256 + merges_.size());
  for (int b = 0; b < 256; ++b) token_bytes_.push_back(std::string(1, static_cast<char>(b)));
  for (const auto& [a, b] : merges_) {
    if (a < 0 || b < 0 || a >= static_cast<int>(token_bytes_.size()) ||
        b >= static_cast<int>(token_bytes_.size()))
      throw RangeError("bpe: merge rule references unknown token");
    token_bytes_.push_back(token_bytes_[static_cast<size_t>(a)] +
                           token_bytes_[static_cast<size_t>(b)]);
  }
}

BpeModel BpeModel::from_merges(std::vector<std::pair<int, int>> merges) {
  BpeModel m;
  m.merges_ = std::move(merges);
  m.rebuild_tokens();
  return m;
}

BpeModel BpeModel::train(const std::vector<std::string>& corpus, int target_merges) {
  if (target_merges < 0) throw RangeError("bpe: negative merge target");
  if (corpus.empty()) throw RangeError("bpe: empty corpus");

  BpeModel model;
  model.rebuild_tokens();

  std::vector<std::vector<int>> seqs;
  seqs.reserve(corpus.size());
  for (const auto& s : corpus) {
    std::vector<int> seq;
    seq.reserve(s.size());
    for (unsigned char c : s) seq.push_back(static_cast<int>(c));
    seqs.push_back(std::move(seq));
  }

  for (int r = 0; r < target_merges; ++r) {
    std::map<std::pair<int, int>, long> counts;
    for (const auto& seq : seqs)
      for (size_t i = 0; i + 1 < seq.size(); ++i) ++counts[{seq[i], seq[i + 1]}];

    long best_count = 0;
    std::pair<int, int> best{-1, -1};
    std::pair<std::string, std::string> best_key;
    for (const auto& [pair, count] : counts) {
      if (count < 2) continue;
      std::pair<std::string, std::string> key{model.token_bytes_[static_cast<size_t>(pair.first)],
                                              model.token_bytes_[static_cast<size_t>(pair.second)]};
      if (count > best_count || (count == best_count && key < best_key)) {
        best_count = count;
        best = pair;
        best_key = key;
      }
    }
    if (best_count < 2) break;  // nothing left worth merging

    const int id = 256 + r;
    model.merges_.push_back(best);
    model.token_bytes_.push_back(best_key.first + best_key.second);
    for (auto& seq : seqs) apply_merge(seq, best.first, best.second, id);
  }
  return model;
}

std::vector<int> BpeModel::encode(std::string_view s) const {
  std::vector<int> seq;
  seq.reserve(s.size());
  for (unsigned char c : s) seq.push_back(static_cast<int>(c));
  for (size_t r = 0; r < merges_.size(); ++r)
    apply_merge(seq, merges_[r].first, merges_[r].second, 256 + static_cast<int>(r));
  return seq;
}

std::string BpeModel::decode(const std::vector<int>& ids) const {
  std::string out;
  for (size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || ids[i] >= vocab_size())
      throw ParseError("bpe: token id " + std::to_string(ids[i]) + " outside model vocabulary",
                       static_cast<long>(i));
    out += token_bytes_[static_cast<size_t>(ids[i])];
  }
  return out;
}

const std::string& BpeModel::token_bytes(int id) const {
  if (id < 0 || id >= vocab_size())
    throw RangeError("bpe: token id " + std::to_string(id) + " outside model vocabulary");
  return token_bytes_[static_cast<size_t>(id)];
}

}  // namespace refseq::codec
