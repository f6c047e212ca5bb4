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

#include <array>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "refseq/codecs.hpp"
#include "refseq/parsing_map.hpp"
#include "refseq/rng.hpp"
#include "refseq/tensor.hpp"

namespace refseq::synth {

// Deterministic multi-person stick-figure scenes with ground-truth boxes,
// named keypoints, body-part rasters, attributes, and unambiguous templated
// referring expressions.

struct Attributes {
  std::string color;     // one of the 8 palette entries
  std::string size;      // small | large
  std::string position;  // left | center | right (box center tercile)
  std::string pose;      // raised | lowered (arm position)
};

struct PersonInstance {
  codec::Region region;
  codec::KeypointSet keypoints;
  // Person-local raster cropped to the integer pixel rect of region; its
  // origin is (floor(region.x1), floor(region.y1)).
  ParsingMap parsing;
  Attributes attributes;
};

// Pastes the person's crop back into an all-background frame.
ParsingMap full_frame_parsing(const PersonInstance& person, int frame_w, int frame_h);

struct ReferExpr {
  std::string text;
  int target = 0;         // person index within the scene
  std::string dimension;  // attribute | spatial | relational
};

struct Scene {
  std::string scene_id;
  int width = 64, height = 64;
  std::vector<float> image;  // [3, H, W], values in [0,1]
  std::vector<PersonInstance> persons;
  std::vector<ReferExpr> references;
  std::vector<std::string> captions;  // one per person
  std::string split;

  Tensor image_tensor() const;
};

struct SceneConfig {
  int width = 64;
  int height = 64;
  int min_persons = 1;
  int max_persons = 4;
  int parsing_channels = 5;  // background, head, torso, arms, legs
  int max_placement_retries = 40;
  double max_pair_iou = 0.3;
  // dataset vocabulary knobs (written into vocab.json)
  int vocab_bins = 32;
  int vocab_merges = 200;

  nlohmann::json to_json() const;
};

// Palette and schema shared by the generator, the caption corpus, and the
// default vocabulary.
const std::vector<std::string>& palette();
const std::vector<std::pair<std::string, std::array<float, 3>>>& palette_rgb();
codec::KeypointSchema keypoint_schema();

// Deterministic scene for (seed, scene_index); persons, references, and
// captions are fully populated and validated. Returns nullopt when placement
// fails after the retry budget (the caller skips the index with a warning).
std::optional<Scene> generate_scene(uint64_t seed, long scene_index, const SceneConfig& cfg);

// Every template whose predicate uniquely selects the person. Throws nothing;
// scenes where some person has no unique expression are rejected by the
// generator (it retries with fresh attributes).
std::vector<ReferExpr> make_references(const Scene& scene);

std::string make_caption(const PersonInstance& person);

// Number of persons matching the expression under the ground-truth predicate
// evaluator; used by tests as the uniqueness oracle.
int count_matches(const Scene& scene, const ReferExpr& expr);

// Scene invariants: box containment, parsing one-hot, keypoints inside boxes,
// pairwise box IoU, reference uniqueness. Throws RangeError on violation.
void validate_scene(const Scene& scene, const SceneConfig& cfg);

// The closed text corpus induced by the template set; BPE trains on this.
std::vector<std::string> canonical_text_corpus();

struct DatasetPaths {
  std::string root;
  std::string manifest() const { return root + "/manifest.json"; }
  std::string images() const { return root + "/images.rseq1"; }
  std::string parsing() const { return root + "/parsing.rseq1"; }
  std::string annotations() const { return root + "/annotations.jsonl"; }
  std::string vocab() const { return root + "/vocab.json"; }
};

struct BuildReport {
  long scenes_written = 0;
  long scenes_skipped = 0;
  nlohmann::json manifest;
};

// Generates n_scenes scenes (seed-derived, scene-id ordered), splits them by
// scene with the given fractions, and serializes the dataset directory:
// manifest.json, images.rseq1, parsing.rseq1, annotations.jsonl, vocab.json.
BuildReport build_dataset(const std::string& out_dir, long n_scenes, uint64_t seed,
                          const std::vector<double>& split_fractions, const SceneConfig& cfg);

// Loads scenes of one split (or all splits when split is empty).
std::vector<Scene> load_dataset(const std::string& dir, const std::string& split);

nlohmann::json load_manifest(const std::string& dir);

}  // namespace refseq::synth
