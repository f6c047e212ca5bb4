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

#include "refseq/vocab.hpp"

#include "refseq/errors.hpp"

namespace refseq::codec {

const char* partition_name(Partition p) {
  switch (p) {
    case Partition::Special: return "special";
    case Partition::Text: return "text";
    case Partition::Bin: return "bin";
    case Partition::KeypointName: return "keypoint_name";
    case Partition::ParsingCode: return "parsing_code";
    case Partition::Query: return "query";
  }
  return "?";
}

int KeypointSchema::index_of(const std::string& name) const {
  for (size_t i = 0; i < names.size(); ++i)
    if (names[i] == name) return static_cast<int>(i);
  return -1;
}

Vocabulary::Vocabulary(BpeModel bpe, VocabConfig cfg) : bpe_(std::move(bpe)), cfg_(std::move(cfg)) {
  if (cfg_.n_bins < 1 || cfg_.n_parsing_codes < 2 || cfg_.n_queries < 1)
    throw RangeError("vocabulary: bad partition sizes");
  if (cfg_.keypoints.names.size() != cfg_.keypoints.sigmas.size())
    throw RangeError("vocabulary: keypoint schema names/sigmas length mismatch");
  for (size_t i = 0; i < cfg_.keypoints.names.size(); ++i)
    for (size_t j = i + 1; j < cfg_.keypoints.names.size(); ++j)
      if (cfg_.keypoints.names[i] == cfg_.keypoints.names[j])
        throw RangeError("vocabulary: duplicate keypoint name '" + cfg_.keypoints.names[i] + "'");

  special_ = {0, 4};
  text_ = {special_.end, special_.end + bpe_.vocab_size()};
  bin_ = {text_.end, text_.end + cfg_.n_bins};
  kpt_ = {bin_.end, bin_.end + static_cast<int>(cfg_.keypoints.names.size())};
  parsing_ = {kpt_.end, kpt_.end + cfg_.n_parsing_codes};
  query_ = {parsing_.end, parsing_.end + cfg_.n_queries};
}

Vocabulary::Range Vocabulary::range(Partition p) const {
  switch (p) {
    case Partition::Special: return special_;
    case Partition::Text: return text_;
    case Partition::Bin: return bin_;
    case Partition::KeypointName: return kpt_;
    case Partition::ParsingCode: return parsing_;
    case Partition::Query: return query_;
  }
  throw RangeError("vocabulary: bad partition");
}

Partition Vocabulary::partition_of(int id) const {
  if (special_.contains(id)) return Partition::Special;
  if (text_.contains(id)) return Partition::Text;
  if (bin_.contains(id)) return Partition::Bin;
  if (kpt_.contains(id)) return Partition::KeypointName;
  if (parsing_.contains(id)) return Partition::ParsingCode;
  if (query_.contains(id)) return Partition::Query;
  throw RangeError("vocabulary: token id " + std::to_string(id) + " outside [0, " +
                   std::to_string(size()) + ")");
}

int Vocabulary::checked(int local, Partition p, const char* what) const {
  const Range r = range(p);
  if (local < 0 || local >= r.size())
    throw RangeError(std::string("vocabulary: ") + what + " index " + std::to_string(local) +
                     " outside partition of " + std::to_string(r.size()));
  return r.begin + local;
}

int Vocabulary::bin_token(int bin) const { return checked(bin, Partition::Bin, "bin"); }
int Vocabulary::keypoint_token(int k) const { return checked(k, Partition::KeypointName, "keypoint"); }
int Vocabulary::parsing_token(int c) const { return checked(c, Partition::ParsingCode, "parsing code"); }
int Vocabulary::query_token(int q) const { return checked(q, Partition::Query, "query"); }

int Vocabulary::bin_index(int token) const {
  if (!bin_.contains(token))
    throw RangeError("vocabulary: token " + std::to_string(token) + " is not a bin token");
  return token - bin_.begin;
}

int Vocabulary::keypoint_index(int token) const {
  if (!kpt_.contains(token))
    throw RangeError("vocabulary: token " + std::to_string(token) + " is not a keypoint name");
  return token - kpt_.begin;
}

int Vocabulary::parsing_index(int token) const {
  if (!parsing_.contains(token))
    throw RangeError("vocabulary: token " + std::to_string(token) + " is not a parsing code");
  return token - parsing_.begin;
}

std::vector<int> Vocabulary::encode_text(const std::string& text) const {
  std::vector<int> out = bpe_.encode(text);
  for (auto& id : out) id += text_.begin;
  return out;
}

std::string Vocabulary::decode_text(const std::vector<int>& tokens) const {
  std::vector<int> local;
  local.reserve(tokens.size());
  for (size_t i = 0; i < tokens.size(); ++i) {
    if (!text_.contains(tokens[i]))
      throw ParseError("vocabulary: token " + std::to_string(tokens[i]) +
                           " outside the text partition",
                       static_cast<long>(i));
    local.push_back(tokens[i] - text_.begin);
  }
  return bpe_.decode(local);
}

nlohmann::json Vocabulary::to_json() const {
  nlohmann::json j;
  j["partitions"] = nlohmann::json::array();
  for (Partition p : {Partition::Special, Partition::Text, Partition::Bin,
                      Partition::KeypointName, Partition::ParsingCode, Partition::Query}) {
    const Range r = range(p);
    j["partitions"].push_back({{"name", partition_name(p)}, {"begin", r.begin}, {"end", r.end}});
  }
  j["special"] = {{"pad", pad()}, {"bos", bos()}, {"eos", eos()}, {"bop", bop()}};
  j["keypoint_schema"] = {{"names", cfg_.keypoints.names}, {"sigmas", cfg_.keypoints.sigmas}};
  j["n_bins"] = cfg_.n_bins;
  j["n_parsing_codes"] = cfg_.n_parsing_codes;
  j["n_queries"] = cfg_.n_queries;
  j["bpe_merges"] = nlohmann::json::array();
  for (const auto& [a, b] : bpe_.merges()) j["bpe_merges"].push_back({a, b});
  return j;
}

Vocabulary Vocabulary::from_json(const nlohmann::json& j) {
  std::vector<std::pair<int, int>> merges;
  for (const auto& m : j.at("bpe_merges")) merges.emplace_back(m.at(0).get<int>(), m.at(1).get<int>());
  VocabConfig cfg;
  cfg.n_bins = j.at("n_bins").get<int>();
  cfg.n_parsing_codes = j.at("n_parsing_codes").get<int>();
  cfg.n_queries = j.at("n_queries").get<int>();
  cfg.keypoints.names = j.at("keypoint_schema").at("names").get<std::vector<std::string>>();
  cfg.keypoints.sigmas = j.at("keypoint_schema").at("sigmas").get<std::vector<double>>();
  return Vocabulary(BpeModel::from_merges(std::move(merges)), std::move(cfg));
}

}  // namespace refseq::codec
