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
#include <vector>

#include <json.hpp>

#include "refseq/bpe.hpp"

namespace refseq::codec {

enum class Partition { Special, Text, Bin, KeypointName, ParsingCode, Query };

const char* partition_name(Partition p);

struct KeypointSchema {
  std::vector<std::string> names;
  std::vector<double> sigmas;  // one OKS sigma per name
  int index_of(const std::string& name) const;  // -1 when absent
};

struct VocabConfig {
  int n_bins = 64;
  int n_parsing_codes = 32;
  int n_queries = 12;
  KeypointSchema keypoints;
};

// Partitioned token-id space. Partitions tile [0, size) contiguously in the
// order special | text | bin | keypoint_name | parsing_code | query.
// Special tokens: PAD, BOS, EOS, and BOP (the token that opens the
// parsing-map query block).
class Vocabulary {
 public:
  Vocabulary(BpeModel bpe, VocabConfig cfg);

  struct Range {
    int begin = 0;
    int end = 0;
    int size() const { return end - begin; }
    bool contains(int id) const { return id >= begin && id < end; }
  };

  int size() const { return query_.end; }
  Range range(Partition p) const;
  Partition partition_of(int id) const;  // RangeError outside [0, size)

  int pad() const { return 0; }
  int bos() const { return 1; }
  int eos() const { return 2; }
  int bop() const { return 3; }

  int bin_token(int bin) const;
  int bin_index(int token) const;
  int keypoint_token(int kpt) const;
  int keypoint_index(int token) const;
  int parsing_token(int code) const;
  int parsing_index(int token) const;
  int query_token(int q) const;

  // BPE-backed text codec mapped into the text partition.
  std::vector<int> encode_text(const std::string& text) const;
  std::string decode_text(const std::vector<int>& tokens) const;

  const BpeModel& bpe() const { return bpe_; }
  const VocabConfig& config() const { return cfg_; }
  const KeypointSchema& keypoints() const { return cfg_.keypoints; }

  nlohmann::json to_json() const;  // full manifest, including BPE merges
  static Vocabulary from_json(const nlohmann::json& j);

 private:
  int checked(int local, Partition p, const char* what) const;
  BpeModel bpe_;
  VocabConfig cfg_;
  Range special_, text_, bin_, kpt_, parsing_, query_;
};

}  // namespace refseq::codec
