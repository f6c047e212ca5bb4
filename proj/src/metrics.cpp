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

#include "refseq/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <sstream>

#include "refseq/errors.hpp"

namespace refseq::metrics {

double iou(const codec::Region& a, const codec::Region& b) {
  const double ix = std::max(0.0, std::min(a.x2, b.x2) - std::max(a.x1, b.x1));
  const double iy = std::max(0.0, std::min(a.y2, b.y2) - std::max(a.y1, b.y1));
  const double inter = ix * iy;
  const double uni = a.area() + b.area() - inter;
  if (uni <= 0.0) return a.x1 == b.x1 && a.y1 == b.y1 && a.x2 == b.x2 && a.y2 == b.y2 ? 1.0 : 0.0;
  return inter / uni;
}

double oks(const codec::KeypointSet& pred, const codec::KeypointSet& gt, const OksConfig& cfg) {
  if (gt.schema.names != pred.schema.names)
    throw RangeError("oks: prediction and ground truth use different schemas");
  if (cfg.sigmas.size() != gt.schema.names.size())
    throw RangeError("oks: sigma count does not match the schema");
  if (cfg.scale <= 0) throw RangeError("oks: non-positive object scale");
  double total = 0;
  int visible = 0;
  for (size_t i = 0; i < gt.points.size(); ++i) {
    if (!gt.points[i]) continue;
    ++visible;
    if (!pred.points[i]) continue;  // missing prediction scores 0
    const double dx = pred.points[i]->first - gt.points[i]->first;
    const double dy = pred.points[i]->second - gt.points[i]->second;
    const double d2 = dx * dx + dy * dy;
    const double denom = 2.0 * cfg.scale * cfg.scale * cfg.sigmas[i] * cfg.sigmas[i];
    total += std::exp(-d2 / denom);
  }
  if (visible == 0) throw RangeError("oks: no visible ground-truth keypoints");
  return total / visible;
}

void MiouAccumulator::add(const ParsingMap& pred, const ParsingMap& gt) {
  if (pred.height != gt.height || pred.width != gt.width || pred.channels != gt.channels)
    throw ShapeError("miou: prediction and ground truth shapes differ");
  if (inter_.empty()) {
    inter_.assign(static_cast<size_t>(gt.channels), 0);
    uni_.assign(static_cast<size_t>(gt.channels), 0);
  }
  if (static_cast<int>(inter_.size()) != gt.channels)
    throw ShapeError("miou: class count changed between records");
  for (int c = 0; c < gt.channels; ++c) {
    long inter = 0, uni = 0;
    const size_t off = static_cast<size_t>(c) * gt.height * gt.width;
    for (size_t i = 0; i < static_cast<size_t>(gt.height) * gt.width; ++i) {
      const bool p = pred.v[off + i] != 0;
      const bool g = gt.v[off + i] != 0;
      inter += p && g;
      uni += p || g;
    }
    inter_[static_cast<size_t>(c)] += inter;
    uni_[static_cast<size_t>(c)] += uni;
  }
}

void MiouAccumulator::merge(const MiouAccumulator& other) {
  if (other.inter_.empty()) return;
  if (inter_.empty()) {
    inter_ = other.inter_;
    uni_ = other.uni_;
    return;
  }
  if (inter_.size() != other.inter_.size()) throw ShapeError("miou: merging mismatched class counts");
  for (size_t c = 0; c < inter_.size(); ++c) {
    inter_[c] += other.inter_[c];
    uni_[c] += other.uni_[c];
  }
}

double MiouAccumulator::value() const {
  double total = 0;
  int classes = 0;
  for (size_t c = 0; c < inter_.size(); ++c) {
    if (uni_[c] == 0) continue;  // absent from both prediction and ground truth
    total += static_cast<double>(inter_[c]) / static_cast<double>(uni_[c]);
    ++classes;
  }
  if (classes == 0) return 1.0;  // nothing to segment anywhere
  return total / classes;
}

double miou(const ParsingMap& pred, const ParsingMap& gt) {
  MiouAccumulator acc;
  acc.add(pred, gt);
  return acc.value();
}

namespace {

std::vector<std::string> split_words(const std::string& s) {
  std::vector<std::string> out;
  std::istringstream is(s);
  std::string w;
  while (is >> w) out.push_back(w);
  return out;
}

// n-gram counts for one sentence at a given n; key = words joined by '\x1f'.
std::unordered_map<std::string, long> ngram_counts(const std::vector<std::string>& words, int n) {
  std::unordered_map<std::string, long> out;
  if (static_cast<int>(words.size()) < n) return out;
  for (size_t i = 0; i + n <= words.size(); ++i) {
    std::string key = words[i];
    for (int j = 1; j < n; ++j) {
      key += '\x1f';
      key += words[i + j];
    }
    ++out[key];
  }
  return out;
}

// Length-normalized TF-IDF vector for one sentence at one n.
std::unordered_map<std::string, double> tfidf_vec(const std::vector<std::string>& words, int n,
                                                  const CorpusStats& stats) {
  std::unordered_map<std::string, double> vec;
  const auto counts = ngram_counts(words, n);
  long total = 0;
  for (const auto& [k, c] : counts) total += c;
  if (total == 0) return vec;
  for (const auto& [k, c] : counts) {
    const auto it = stats.df[n - 1].find(k);
    const double df = it == stats.df[n - 1].end() ? 0.0 : static_cast<double>(it->second);
    const double idf = std::log(static_cast<double>(stats.n_images) / std::max(1.0, df));
    vec[k] = (static_cast<double>(c) / static_cast<double>(total)) * idf;
  }
  return vec;
}

double cosine(const std::unordered_map<std::string, double>& a,
              const std::unordered_map<std::string, double>& b) {
  double dot = 0, na = 0, nb = 0;
  for (const auto& [k, v] : a) {
    na += v * v;
    const auto it = b.find(k);
    if (it != b.end()) dot += v * it->second;
  }
  for (const auto& [k, v] : b) nb += v * v;
  if (na == 0 || nb == 0) return 0;
  return dot / (std::sqrt(na) * std::sqrt(nb));
}

}  // namespace

CorpusStats build_corpus_stats(const std::vector<std::vector<std::string>>& refs_per_image) {
  CorpusStats stats;
  stats.n_images = static_cast<long>(refs_per_image.size());
  for (const auto& refs : refs_per_image) {
    for (int n = 1; n <= CorpusStats::kMaxN; ++n) {
      std::set<std::string> seen;
      for (const auto& ref : refs)
        for (const auto& [k, c] : ngram_counts(split_words(ref), n)) seen.insert(k);
      for (const auto& k : seen) ++stats.df[n - 1][k];
    }
  }
  return stats;
}

double cider(const std::string& candidate, const std::vector<std::string>& references,
             const CorpusStats& stats) {
  if (references.empty()) throw RangeError("cider: empty reference set");
  if (stats.n_images <= 0) throw RangeError("cider: corpus statistics are empty");
  const auto cand_words = split_words(candidate);
  double score = 0;
  for (int n = 1; n <= CorpusStats::kMaxN; ++n) {
    const auto cand_vec = tfidf_vec(cand_words, n, stats);
    double sn = 0;
    for (const auto& ref : references)
      sn += cosine(cand_vec, tfidf_vec(split_words(ref), n, stats));
    score += sn / static_cast<double>(references.size());
  }
  return 10.0 * score / CorpusStats::kMaxN;
}

namespace {

const std::set<std::string>& known_dimensions() {
  static const std::set<std::string> dims{"attribute", "spatial", "relational", "caption"};
  return dims;
}

struct DimAccumulator {
  // ap50 / oks thresholds
  long n = 0;
  long ap50_pass = 0;
  std::vector<long> oks_pass = std::vector<long>(10, 0);
  MiouAccumulator miou_acc;
  double cider_sum = 0;
};

}  // namespace

double ap50(const std::vector<EvalRecord>& records) {
  if (records.empty()) throw RangeError("ap50: empty record set");
  long pass = 0;
  for (const auto& r : records) {
    if (!r.pred_box || !r.gt_box) throw RangeError("ap50: record without boxes");
    pass += iou(*r.pred_box, *r.gt_box) >= 0.5;
  }
  return static_cast<double>(pass) / static_cast<double>(records.size());
}

double oks_ap(const std::vector<EvalRecord>& records) {
  if (records.empty()) throw RangeError("oks_ap: empty record set");
  double total = 0;
  for (int t = 0; t < 10; ++t) {
    const double thr = 0.50 + 0.05 * t;
    long pass = 0;
    for (const auto& r : records) {
      if (!r.pred_kpts || !r.gt_kpts) throw RangeError("oks_ap: record without keypoints");
      OksConfig cfg{r.gt_kpts->schema.sigmas, r.oks_scale};
      pass += oks(*r.pred_kpts, *r.gt_kpts, cfg) >= thr;
    }
    total += static_cast<double>(pass) / static_cast<double>(records.size());
  }
  return total / 10.0;
}

Report build_report(const std::vector<EvalRecord>& records) {
  // CIDEr corpus: every caption record's reference set counts as one image.
  std::vector<std::vector<std::string>> corpus;
  for (const auto& r : records)
    if (r.task == codec::Task::Caption) corpus.push_back(r.ref_texts);
  CorpusStats stats;
  if (!corpus.empty()) stats = build_corpus_stats(corpus);

  std::map<std::string, std::map<std::string, DimAccumulator>> acc;
  for (const auto& r : records) {
    if (!known_dimensions().count(r.dimension))
      throw RangeError("report: unknown dimension tag '" + r.dimension + "'");
    DimAccumulator& a = acc[codec::task_name(r.task)][r.dimension];
    ++a.n;
    switch (r.task) {
      case codec::Task::Box: {
        if (!r.pred_box || !r.gt_box) throw RangeError("report: box record without boxes");
        a.ap50_pass += iou(*r.pred_box, *r.gt_box) >= 0.5;
        break;
      }
      case codec::Task::Keypoints: {
        if (!r.pred_kpts || !r.gt_kpts)
          throw RangeError("report: keypoint record without keypoints");
        OksConfig cfg{r.gt_kpts->schema.sigmas, r.oks_scale};
        const double v = oks(*r.pred_kpts, *r.gt_kpts, cfg);
        for (int t = 0; t < 10; ++t) a.oks_pass[static_cast<size_t>(t)] += v >= 0.50 + 0.05 * t;
        break;
      }
      case codec::Task::Parsing: {
        if (!r.pred_map || !r.gt_map) throw RangeError("report: parsing record without maps");
        a.miou_acc.add(*r.pred_map, *r.gt_map);
        break;
      }
      case codec::Task::Caption: {
        if (!r.pred_text) throw RangeError("report: caption record without prediction");
        a.cider_sum += cider(*r.pred_text, r.ref_texts, stats);
        break;
      }
    }
  }

  Report report;
  for (const auto& [task, dims] : acc) {
    TaskReport tr;
    const codec::Task t = codec::task_from_name(task);
    tr.metric = t == codec::Task::Box        ? "ap50"
                : t == codec::Task::Keypoints ? "oks_ap"
                : t == codec::Task::Parsing   ? "miou"
                                              : "cider";
    DimAccumulator whole;
    for (const auto& [dim, a] : dims) {
      MetricCell cell;
      cell.count = a.n;
      cell.defined = a.n > 0;
      switch (t) {
        case codec::Task::Box:
          cell.value = static_cast<double>(a.ap50_pass) / a.n;
          whole.ap50_pass += a.ap50_pass;
          break;
        case codec::Task::Keypoints: {
          double total = 0;
          for (int th = 0; th < 10; ++th) {
            total += static_cast<double>(a.oks_pass[static_cast<size_t>(th)]) / a.n;
            whole.oks_pass[static_cast<size_t>(th)] += a.oks_pass[static_cast<size_t>(th)];
          }
          cell.value = total / 10.0;
          break;
        }
        case codec::Task::Parsing:
          cell.value = a.miou_acc.value();
          whole.miou_acc.merge(a.miou_acc);
          break;
        case codec::Task::Caption:
          cell.value = a.cider_sum / a.n;
          whole.cider_sum += a.cider_sum;
          break;
      }
      whole.n += a.n;
      tr.by_dimension[dim] = cell;
    }
    // Every known dimension appears in the table; missing ones stay null.
    for (const auto& dim : known_dimensions())
      if (!tr.by_dimension.count(dim)) tr.by_dimension[dim] = MetricCell{};

    tr.total.count = whole.n;
    tr.total.defined = whole.n > 0;
    switch (t) {
      case codec::Task::Box:
        tr.total.value = static_cast<double>(whole.ap50_pass) / whole.n;
        break;
      case codec::Task::Keypoints: {
        double total = 0;
        for (int th = 0; th < 10; ++th)
          total += static_cast<double>(whole.oks_pass[static_cast<size_t>(th)]) / whole.n;
        tr.total.value = total / 10.0;
        break;
      }
      case codec::Task::Parsing:
        tr.total.value = whole.miou_acc.value();
        break;
      case codec::Task::Caption:
        tr.total.value = whole.cider_sum / whole.n;
        break;
    }
    report.tasks[task] = std::move(tr);
  }
  return report;
}

nlohmann::json Report::to_json() const {
  nlohmann::json j;
  for (const auto& [task, tr] : tasks) {
    nlohmann::json jt;
    jt["metric"] = tr.metric;
    for (const auto& [dim, cell] : tr.by_dimension) {
      if (cell.defined)
        jt["dimensions"][dim] = {{"value", cell.value}, {"count", cell.count}};
      else
        jt["dimensions"][dim] = nullptr;
    }
    jt["total"] = {{"value", tr.total.value}, {"count", tr.total.count}};
    j[task] = jt;
  }
  return j;
}

std::string Report::to_csv() const {
  std::ostringstream os;
  os << "task,metric,dimension,value,count\n";
  os.precision(9);
  os << std::fixed;
  for (const auto& [task, tr] : tasks) {
    for (const auto& [dim, cell] : tr.by_dimension) {
      os << task << "," << tr.metric << "," << dim << ",";
      if (cell.defined)
        os << cell.value << "," << cell.count << "\n";
      else
        os << "," << 0 << "\n";
    }
    os << task << "," << tr.metric << ",total," << tr.total.value << "," << tr.total.count << "\n";
  }
  return os.str();
}

}  // namespace refseq::metrics
