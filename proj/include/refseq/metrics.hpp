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

#include <map>
#include <memory>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "refseq/codecs.hpp"
#include "refseq/parsing_map.hpp"

namespace refseq::metrics {

// Intersection over union of two boxes; 0 when disjoint.
double iou(const codec::Region& a, const codec::Region& b);

struct OksConfig {
  std::vector<double> sigmas;  // per schema keypoint
  double scale = 1.0;          // sqrt(ground-truth box area)
};

// Mean over visible ground-truth keypoints of exp(-d^2 / (2 s^2 k_i^2));
// a missing prediction contributes 0. Requires at least one visible gt point.
double oks(const codec::KeypointSet& pred, const codec::KeypointSet& gt, const OksConfig& cfg);

// Dataset-wide per-class intersection/union sums; classes absent from both
// prediction and ground truth are skipped when averaging.
class MiouAccumulator {
 public:
  void add(const ParsingMap& pred, const ParsingMap& gt);
  void merge(const MiouAccumulator& other);
  double value() const;
  bool empty() const { return inter_.empty(); }

 private:
  std::vector<long> inter_;
  std::vector<long> uni_;
};

// Single-pair convenience wrapper.
double miou(const ParsingMap& pred, const ParsingMap& gt);

// TF-IDF document frequencies over the reference corpus, n-grams n=1..4.
// An image's references count once towards an n-gram's document frequency.
struct CorpusStats {
  static constexpr int kMaxN = 4;
  std::unordered_map<std::string, long> df[kMaxN];
  long n_images = 0;
};

CorpusStats build_corpus_stats(const std::vector<std::vector<std::string>>& refs_per_image);

// Plain CIDEr: for each n, cosine similarity between length-normalized TF-IDF
// n-gram vectors, averaged over references and over n, scaled by 10.
double cider(const std::string& candidate, const std::vector<std::string>& references,
             const CorpusStats& stats);

// --- evaluation records and reporting ---

struct EvalRecord {
  std::string scene_id;
  codec::Task task = codec::Task::Box;
  std::string dimension;  // attribute | spatial | relational | caption
  int index = 0;          // reference or person index within the scene

  std::optional<codec::Region> pred_box, gt_box;
  std::optional<codec::KeypointSet> pred_kpts, gt_kpts;
  double oks_scale = 1.0;
  std::shared_ptr<ParsingMap> pred_map, gt_map;
  std::optional<std::string> pred_text;
  std::vector<std::string> ref_texts;
};

// Fraction of records whose box IoU reaches 0.5 (one prediction per record).
double ap50(const std::vector<EvalRecord>& records);
// Mean over thresholds 0.50:0.05:0.95 of the fraction with OKS >= threshold.
double oks_ap(const std::vector<EvalRecord>& records);

struct MetricCell {
  double value = 0.0;
  long count = 0;
  bool defined = false;  // empty dimensions report null, not 0
};

struct TaskReport {
  std::string metric;  // ap50 | oks_ap | miou | cider
  std::map<std::string, MetricCell> by_dimension;
  MetricCell total;  // computed by merging the dimension accumulators
};

struct Report {
  std::map<std::string, TaskReport> tasks;  // keyed by task name
  nlohmann::json to_json() const;
  std::string to_csv() const;
};

// Builds the per-task, per-dimension table. CIDEr corpus statistics are taken
// over the records' reference texts. Unknown dimension tags raise RangeError.
Report build_report(const std::vector<EvalRecord>& records);

}  // namespace refseq::metrics
