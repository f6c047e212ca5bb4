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

#include "refseq/synth.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "refseq/errors.hpp"
#include "refseq/hash.hpp"
#include "refseq/metrics.hpp"
#include "refseq/serialize.hpp"

namespace refseq::synth {

namespace fs = std::filesystem;

nlohmann::json SceneConfig::to_json() const {
  return {{"width", width},
          {"height", height},
          {"min_persons", min_persons},
          {"max_persons", max_persons},
          {"parsing_channels", parsing_channels},
          {"max_placement_retries", max_placement_retries},
          {"max_pair_iou", max_pair_iou},
          {"vocab_bins", vocab_bins},
          {"vocab_merges", vocab_merges}};
}

const std::vector<std::string>& palette() {
  static const std::vector<std::string> p{"red",    "green",  "blue", "yellow",
                                          "purple", "orange", "cyan", "white"};
  return p;
}

const std::vector<std::pair<std::string, std::array<float, 3>>>& palette_rgb() {
  static const std::vector<std::pair<std::string, std::array<float, 3>>> p{
      {"red", {1.00f, 0.15f, 0.15f}},    {"green", {0.15f, 1.00f, 0.15f}},
      {"blue", {0.20f, 0.35f, 1.00f}},   {"yellow", {1.00f, 1.00f, 0.20f}},
      {"purple", {0.75f, 0.25f, 1.00f}}, {"orange", {1.00f, 0.60f, 0.15f}},
      {"cyan", {0.20f, 1.00f, 1.00f}},   {"white", {0.95f, 0.95f, 0.95f}}};
  return p;
}

codec::KeypointSchema keypoint_schema() {
  return {{"head", "l_hand", "r_hand", "l_foot", "r_foot"}, {0.08, 0.08, 0.08, 0.08, 0.08}};
}

Tensor Scene::image_tensor() const {
  return Tensor::from_data({3, height, width}, image);
}

// ---------------------------------------------------------------------------
// rendering

namespace {

constexpr float kBackground = 0.08f;
// Per-part brightness keeps parts visually distinct in the image.
constexpr float kPartShade[5] = {0.f, 1.0f, 0.85f, 0.70f, 0.55f};

struct Canvas {
  int w, h;
  std::vector<float>* image;
  ParsingMap* frame_map;
  std::array<float, 3> rgb;

  void paint(int part, int x, int y) {
    if (x < 0 || y < 0 || x >= w || y >= h) return;
    frame_map->paint(part, y, x);
    const float shade = kPartShade[part];
    for (int c = 0; c < 3; ++c)
      (*image)[(static_cast<size_t>(c) * h + y) * w + x] = rgb[static_cast<size_t>(c)] * shade;
  }

  void disk(int part, int cx, int cy, int r) {
    for (int y = cy - r; y <= cy + r; ++y)
      for (int x = cx - r; x <= cx + r; ++x)
        if ((x - cx) * (x - cx) + (y - cy) * (y - cy) <= r * r) paint(part, x, y);
  }

  void line(int part, double x0, double y0, double x1, double y1, double half_t) {
    const int xa = static_cast<int>(std::floor(std::min(x0, x1) - half_t - 1));
    const int xb = static_cast<int>(std::ceil(std::max(x0, x1) + half_t + 1));
    const int ya = static_cast<int>(std::floor(std::min(y0, y1) - half_t - 1));
    const int yb = static_cast<int>(std::ceil(std::max(y0, y1) + half_t + 1));
    const double dx = x1 - x0, dy = y1 - y0;
    const double len2 = dx * dx + dy * dy;
    for (int y = ya; y <= yb; ++y) {
      for (int x = xa; x <= xb; ++x) {
        double t = len2 > 0 ? ((x - x0) * dx + (y - y0) * dy) / len2 : 0.0;
        t = std::clamp(t, 0.0, 1.0);
        const double px = x0 + t * dx, py = y0 + t * dy;
        const double d2 = (x - px) * (x - px) + (y - py) * (y - py);
        if (d2 <= half_t * half_t) paint(part, x, y);
      }
    }
  }
};

struct Figure {
  int cx = 0, cy = 0, body_h = 24;
  bool large = false;
  bool raised = false;

  int head_r() const { return std::max(2, body_h / 7); }
  double half_t() const { return large ? 2.0 : 1.5; }
  int y_top() const { return cy - body_h / 2; }
  int head_cy() const { return y_top() + head_r(); }
  int shoulder_y() const { return y_top() + 2 * head_r() + 1; }
  int hip_y() const { return shoulder_y() + static_cast<int>(body_h * 0.34); }
  int feet_y() const { return y_top() + body_h; }
  int arm_dx() const { return static_cast<int>(body_h * 0.30); }
  int hand_y() const {
    return raised ? shoulder_y() - static_cast<int>(body_h * 0.22)
                  : shoulder_y() + static_cast<int>(body_h * 0.26);
  }
  int leg_dx() const { return static_cast<int>(body_h * 0.20); }
  int half_w() const {
    return std::max({head_r(), arm_dx(), leg_dx()}) + static_cast<int>(half_t()) + 2;
  }
};

// Paints the figure; returns the keypoints in frame coordinates.
codec::KeypointSet draw_figure(Canvas& canvas, const Figure& f) {
  canvas.disk(1, f.cx, f.head_cy(), f.head_r());
  canvas.line(2, f.cx, f.shoulder_y(), f.cx, f.hip_y(), f.half_t());
  canvas.line(3, f.cx, f.shoulder_y(), f.cx - f.arm_dx(), f.hand_y(), f.half_t());
  canvas.line(3, f.cx, f.shoulder_y(), f.cx + f.arm_dx(), f.hand_y(), f.half_t());
  canvas.line(4, f.cx, f.hip_y(), f.cx - f.leg_dx(), f.feet_y(), f.half_t());
  canvas.line(4, f.cx, f.hip_y(), f.cx + f.leg_dx(), f.feet_y(), f.half_t());

  codec::KeypointSet k(keypoint_schema());
  k.points[0] = {static_cast<double>(f.cx), static_cast<double>(f.head_cy())};
  k.points[1] = {static_cast<double>(f.cx - f.arm_dx()), static_cast<double>(f.hand_y())};
  k.points[2] = {static_cast<double>(f.cx + f.arm_dx()), static_cast<double>(f.hand_y())};
  k.points[3] = {static_cast<double>(f.cx - f.leg_dx()), static_cast<double>(f.feet_y())};
  k.points[4] = {static_cast<double>(f.cx + f.leg_dx()), static_cast<double>(f.feet_y())};
  return k;
}

std::string position_of(const codec::Region& r, int frame_w) {
  const double cx = (r.x1 + r.x2) / 2;
  if (cx < frame_w / 3.0) return "left";
  if (cx < 2.0 * frame_w / 3.0) return "center";
  return "right";
}

}  // namespace

ParsingMap full_frame_parsing(const PersonInstance& person, int frame_w, int frame_h) {
  ParsingMap frame(frame_h, frame_w, person.parsing.channels);
  const int x0 = static_cast<int>(std::floor(person.region.x1));
  const int y0 = static_cast<int>(std::floor(person.region.y1));
  for (int y = 0; y < person.parsing.height; ++y)
    for (int x = 0; x < person.parsing.width; ++x) {
      const int label = person.parsing.label(y, x);
      if (label != 0 && y0 + y < frame_h && x0 + x < frame_w) frame.paint(label, y0 + y, x0 + x);
    }
  return frame;
}

std::string make_caption(const PersonInstance& person) {
  const Attributes& a = person.attributes;
  return "the " + a.size + " " + a.color + " person on the " + a.position + " with arms " +
         a.pose + " .";
}

// ---------------------------------------------------------------------------
// referring expressions

namespace {

std::vector<std::string> split_words(const std::string& s) {
  std::vector<std::string> w;
  std::istringstream is(s);
  std::string t;
  while (is >> t) w.push_back(t);
  return w;
}

bool is_color(const std::string& w) {
  return std::find(palette().begin(), palette().end(), w) != palette().end();
}
bool is_size(const std::string& w) { return w == "small" || w == "large"; }
bool is_position(const std::string& w) { return w == "left" || w == "center" || w == "right"; }

double center_dist2(const PersonInstance& a, const PersonInstance& b) {
  const double ax = (a.region.x1 + a.region.x2) / 2, ay = (a.region.y1 + a.region.y2) / 2;
  const double bx = (b.region.x1 + b.region.x2) / 2, by = (b.region.y1 + b.region.y2) / 2;
  return (ax - bx) * (ax - bx) + (ay - by) * (ay - by);
}

std::vector<int> with_color(const Scene& s, const std::string& c) {
  std::vector<int> out;
  for (size_t i = 0; i < s.persons.size(); ++i)
    if (s.persons[i].attributes.color == c) out.push_back(static_cast<int>(i));
  return out;
}

// Persons nearest to anchor; several entries on an exact distance tie.
std::vector<int> nearest_to(const Scene& s, int anchor,
                            const std::optional<std::string>& size_filter) {
  std::vector<int> best;
  double best_d = 0;
  for (size_t i = 0; i < s.persons.size(); ++i) {
    if (static_cast<int>(i) == anchor) continue;
    if (size_filter && s.persons[i].attributes.size != *size_filter) continue;
    const double d = center_dist2(s.persons[static_cast<size_t>(anchor)], s.persons[i]);
    if (best.empty() || d < best_d) {
      best = {static_cast<int>(i)};
      best_d = d;
    } else if (d == best_d) {
      best.push_back(static_cast<int>(i));
    }
  }
  return best;
}

// Ground-truth predicate evaluator over the closed template grammar.
std::vector<bool> evaluate_expression(const Scene& scene, const std::string& text) {
  const auto w = split_words(text);
  std::vector<bool> match(scene.persons.size(), false);
  auto mark_if = [&](auto pred) {
    for (size_t i = 0; i < scene.persons.size(); ++i)
      if (pred(scene.persons[i])) match[i] = true;
  };

  if (w.size() == 2 && w[0] == "the" && w[1] == "person") {
    mark_if([](const PersonInstance&) { return true; });
  } else if (w.size() == 3 && w[0] == "the" && w[2] == "person" && is_color(w[1])) {
    mark_if([&](const PersonInstance& p) { return p.attributes.color == w[1]; });
  } else if (w.size() == 3 && w[0] == "the" && w[2] == "person" && is_size(w[1])) {
    mark_if([&](const PersonInstance& p) { return p.attributes.size == w[1]; });
  } else if (w.size() == 5 && w[0] == "the" && w[1] == "person" && w[2] == "on" && w[3] == "the" &&
             is_position(w[4])) {
    mark_if([&](const PersonInstance& p) { return p.attributes.position == w[4]; });
  } else if (w.size() == 7 && w[0] == "the" && w[1] == "person" && w[2] == "next" &&
             w[3] == "to" && w[4] == "the" && is_color(w[5]) && w[6] == "person") {
    const auto anchors = with_color(scene, w[5]);
    if (anchors.size() == 1)
      for (int i : nearest_to(scene, anchors[0], std::nullopt)) match[static_cast<size_t>(i)] = true;
    else
      for (int anchor : anchors)
        for (int i : nearest_to(scene, anchor, std::nullopt)) match[static_cast<size_t>(i)] = true;
  } else if (w.size() == 8 && w[0] == "the" && is_size(w[1]) && w[2] == "person" &&
             w[3] == "next" && w[4] == "to" && w[5] == "the" && is_color(w[6]) &&
             w[7] == "person") {
    for (int anchor : with_color(scene, w[6]))
      for (int i : nearest_to(scene, anchor, w[1])) match[static_cast<size_t>(i)] = true;
  } else {
    throw RangeError("referring expression does not match any template: '" + text + "'");
  }
  return match;
}

}  // namespace

int count_matches(const Scene& scene, const ReferExpr& expr) {
  const auto match = evaluate_expression(scene, expr.text);
  int n = 0;
  for (bool b : match) n += b;
  return n;
}

std::vector<ReferExpr> make_references(const Scene& scene) {
  std::vector<ReferExpr> out;
  const int n = static_cast<int>(scene.persons.size());
  for (int i = 0; i < n; ++i) {
    const Attributes& a = scene.persons[static_cast<size_t>(i)].attributes;
    std::vector<ReferExpr> candidates;
    candidates.push_back({"the person", i, "spatial"});
    candidates.push_back({"the " + a.color + " person", i, "attribute"});
    candidates.push_back({"the " + a.size + " person", i, "attribute"});
    candidates.push_back({"the person on the " + a.position, i, "spatial"});
    for (int anchor = 0; anchor < n; ++anchor) {
      if (anchor == i) continue;
      const std::string& ac = scene.persons[static_cast<size_t>(anchor)].attributes.color;
      candidates.push_back({"the person next to the " + ac + " person", i, "relational"});
      candidates.push_back(
          {"the " + a.size + " person next to the " + ac + " person", i, "relational"});
    }
    for (const auto& c : candidates) {
      const auto match = evaluate_expression(scene, c.text);
      int count = 0;
      for (bool b : match) count += b;
      if (count == 1 && match[static_cast<size_t>(i)]) out.push_back(c);
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// scene generation

std::optional<Scene> generate_scene(uint64_t seed, long scene_index, const SceneConfig& cfg) {
  Rng rng = Rng(seed, 0x5ce7e).split(static_cast<uint64_t>(scene_index));

  Scene scene;
  scene.width = cfg.width;
  scene.height = cfg.height;
  {
    std::ostringstream id;
    id << "scene_";
    id.width(6);
    id.fill('0');
    id << scene_index;
    scene.scene_id = id.str();
  }
  scene.image.assign(static_cast<size_t>(3) * cfg.height * cfg.width, kBackground);

  const int n_persons = rng.uniform_int(cfg.min_persons, cfg.max_persons);

  // distinct colors keep at least one unique expression per person
  std::vector<std::string> colors = palette();
  for (size_t i = colors.size(); i > 1; --i)
    std::swap(colors[i - 1], colors[static_cast<size_t>(rng.uniform_int(0, static_cast<int>(i) - 1))]);
  colors.resize(static_cast<size_t>(n_persons));

  struct Placed {
    Figure fig;
    codec::Region box;
  };
  std::vector<Placed> placed;

  for (int p = 0; p < n_persons; ++p) {
    bool ok = false;
    for (int attempt = 0; attempt < cfg.max_placement_retries && !ok; ++attempt) {
      Figure f;
      f.large = rng.uniform() < 0.5;
      f.raised = rng.uniform() < 0.5;
      f.body_h = f.large ? rng.uniform_int(30, 38) : rng.uniform_int(20, 26);
      const int hw = f.half_w();
      const int top_pad = 2, bottom_pad = 2;
      const int min_cx = hw + 2, max_cx = cfg.width - 3 - hw;
      const int min_cy = f.body_h / 2 + top_pad, max_cy = cfg.height - 3 - bottom_pad - f.body_h / 2;
      if (min_cx >= max_cx || min_cy >= max_cy) continue;
      f.cx = rng.uniform_int(min_cx, max_cx);
      f.cy = rng.uniform_int(min_cy, max_cy);

      codec::Region box{static_cast<double>(f.cx - hw), static_cast<double>(f.y_top() - 1),
                        static_cast<double>(f.cx + hw + 1), static_cast<double>(f.feet_y() + 2)};
      bool clash = false;
      for (const auto& other : placed)
        if (metrics::iou(box, other.box) >= cfg.max_pair_iou) clash = true;
      if (clash) continue;
      placed.push_back({f, box});
      ok = true;
    }
    if (!ok) return std::nullopt;  // placement failed; caller skips this index
  }

  for (int p = 0; p < n_persons; ++p) {
    const Figure& f = placed[static_cast<size_t>(p)].fig;
    ParsingMap frame_map(cfg.height, cfg.width, cfg.parsing_channels);
    Canvas canvas{cfg.width, cfg.height, &scene.image, &frame_map,
                  [&] {
                    for (const auto& [name, rgb] : palette_rgb())
                      if (name == colors[static_cast<size_t>(p)]) return rgb;
                    throw RangeError("palette: unknown color");
                  }()};
    codec::KeypointSet kpts = draw_figure(canvas, f);

    // exact pixel bounding box of the painted strokes
    int xmin = cfg.width, xmax = -1, ymin = cfg.height, ymax = -1;
    for (int y = 0; y < cfg.height; ++y)
      for (int x = 0; x < cfg.width; ++x)
        if (frame_map.label(y, x) != 0) {
          xmin = std::min(xmin, x);
          xmax = std::max(xmax, x);
          ymin = std::min(ymin, y);
          ymax = std::max(ymax, y);
        }
    if (xmax < 0) return std::nullopt;  // nothing painted (clipped away entirely)

    PersonInstance person;
    person.region = {static_cast<double>(xmin), static_cast<double>(ymin),
                     static_cast<double>(xmax + 1), static_cast<double>(ymax + 1)};
    person.keypoints = kpts;
    // clamp keypoints into the painted box (thin strokes can clip at edges)
    for (auto& pt : person.keypoints.points) {
      if (!pt) continue;
      pt->first = std::clamp(pt->first, person.region.x1, person.region.x2 - 1);
      pt->second = std::clamp(pt->second, person.region.y1, person.region.y2 - 1);
    }
    person.attributes.color = colors[static_cast<size_t>(p)];
    person.attributes.size = f.large ? "large" : "small";
    person.attributes.position = position_of(person.region, cfg.width);
    person.attributes.pose = f.raised ? "raised" : "lowered";

    // person-local crop
    ParsingMap crop(ymax - ymin + 1, xmax - xmin + 1, cfg.parsing_channels);
    for (int y = ymin; y <= ymax; ++y)
      for (int x = xmin; x <= xmax; ++x) crop.paint(frame_map.label(y, x), y - ymin, x - xmin);
    person.parsing = std::move(crop);
    scene.persons.push_back(std::move(person));
  }

  scene.references = make_references(scene);
  // every person must have at least one unique expression
  std::vector<bool> covered(scene.persons.size(), false);
  for (const auto& r : scene.references) covered[static_cast<size_t>(r.target)] = true;
  for (bool c : covered)
    if (!c) return std::nullopt;

  for (const auto& p : scene.persons) scene.captions.push_back(make_caption(p));
  return scene;
}

void validate_scene(const Scene& scene, const SceneConfig& cfg) {
  if (scene.persons.empty() || static_cast<int>(scene.persons.size()) > cfg.max_persons)
    throw RangeError("scene: person count out of range");
  for (size_t i = 0; i < scene.persons.size(); ++i) {
    const PersonInstance& p = scene.persons[i];
    p.region.validate(cfg.width, cfg.height);
    p.parsing.validate();
    if (p.parsing.height != static_cast<int>(p.region.y2 - p.region.y1) ||
        p.parsing.width != static_cast<int>(p.region.x2 - p.region.x1))
      throw RangeError("scene: parsing crop does not match the region rect");
    for (const auto& pt : p.keypoints.points) {
      if (!pt) continue;
      if (pt->first < p.region.x1 || pt->first >= p.region.x2 || pt->second < p.region.y1 ||
          pt->second >= p.region.y2)
        throw RangeError("scene: keypoint outside its region");
    }
    for (size_t j = i + 1; j < scene.persons.size(); ++j)
      if (metrics::iou(p.region, scene.persons[j].region) >= cfg.max_pair_iou)
        throw RangeError("scene: person boxes overlap beyond the limit");
  }
  for (const auto& r : scene.references)
    if (count_matches(scene, r) != 1)
      throw RangeError("scene: ambiguous reference '" + r.text + "'");
  if (scene.captions.size() != scene.persons.size())
    throw RangeError("scene: caption count mismatch");
}

std::vector<std::string> canonical_text_corpus() {
  std::vector<std::string> corpus;
  const std::vector<std::string> sizes{"small", "large"};
  const std::vector<std::string> positions{"left", "center", "right"};
  const std::vector<std::string> poses{"raised", "lowered"};
  for (const auto& color : palette())
    for (const auto& size : sizes)
      for (const auto& position : positions)
        for (const auto& pose : poses)
          corpus.push_back("the " + size + " " + color + " person on the " + position +
                           " with arms " + pose + " .");
  for (const auto& color : palette()) {
    corpus.push_back("the " + color + " person");
    corpus.push_back("the person next to the " + color + " person");
    for (const auto& size : sizes)
      corpus.push_back("the " + size + " person next to the " + color + " person");
  }
  for (const auto& size : sizes) corpus.push_back("the " + size + " person");
  for (const auto& position : positions) corpus.push_back("the person on the " + position);
  corpus.push_back("the person");
  for (codec::Task t : {codec::Task::Box, codec::Task::Keypoints, codec::Task::Parsing,
                        codec::Task::Caption})
    corpus.push_back(codec::instruction_template(t));
  return corpus;
}

// ---------------------------------------------------------------------------
// dataset serialization

namespace {

nlohmann::json region_json(const codec::Region& r) {
  return nlohmann::json::array({r.x1, r.y1, r.x2, r.y2});
}

codec::Region region_from_json(const nlohmann::json& j) {
  return {j.at(0).get<double>(), j.at(1).get<double>(), j.at(2).get<double>(),
          j.at(3).get<double>()};
}

nlohmann::json scene_annotation(const Scene& s) {
  nlohmann::json j;
  j["scene_id"] = s.scene_id;
  j["split"] = s.split;
  j["persons"] = nlohmann::json::array();
  for (const auto& p : s.persons) {
    nlohmann::json jp;
    jp["region"] = region_json(p.region);
    nlohmann::json jk;
    for (size_t k = 0; k < p.keypoints.schema.names.size(); ++k) {
      if (p.keypoints.points[k])
        jk[p.keypoints.schema.names[k]] =
            nlohmann::json::array({p.keypoints.points[k]->first, p.keypoints.points[k]->second});
      else
        jk[p.keypoints.schema.names[k]] = nullptr;
    }
    jp["keypoints"] = jk;
    jp["attributes"] = {{"color", p.attributes.color},
                        {"size", p.attributes.size},
                        {"position", p.attributes.position},
                        {"pose", p.attributes.pose}};
    j["persons"].push_back(jp);
  }
  j["references"] = nlohmann::json::array();
  for (const auto& r : s.references)
    j["references"].push_back({{"text", r.text}, {"target", r.target}, {"dim", r.dimension}});
  j["captions"] = s.captions;
  return j;
}

}  // namespace

BuildReport build_dataset(const std::string& out_dir, long n_scenes, uint64_t seed,
                          const std::vector<double>& split_fractions, const SceneConfig& cfg) {
  if (n_scenes <= 0) throw RangeError("gen-data: scene count must be positive");
  double total = 0;
  for (double f : split_fractions) total += f;
  if (split_fractions.size() != 3 || std::abs(total - 1.0) > 1e-9)
    throw RangeError("gen-data: split fractions must be three values summing to 1");

  fs::create_directories(out_dir);

  std::vector<Scene> scenes;
  long skipped = 0;
  long index = 0;
  const long index_budget = n_scenes * 4;
  while (static_cast<long>(scenes.size()) < n_scenes && index < index_budget) {
    auto scene = generate_scene(seed, index, cfg);
    if (scene) {
      validate_scene(*scene, cfg);
      scenes.push_back(std::move(*scene));
    } else {
      ++skipped;
    }
    ++index;
  }
  if (static_cast<long>(scenes.size()) < n_scenes)
    throw RangeError("gen-data: insufficient valid scenes (" + std::to_string(scenes.size()) +
                     " of " + std::to_string(n_scenes) + ")");

  const long n_train = static_cast<long>(std::llround(n_scenes * split_fractions[0]));
  const long n_val = static_cast<long>(std::llround(n_scenes * split_fractions[1]));
  for (long i = 0; i < n_scenes; ++i) {
    Scene& s = scenes[static_cast<size_t>(i)];
    s.split = i < n_train ? "train" : i < n_train + n_val ? "val" : "test";
  }

  DatasetPaths paths{out_dir};

  {
    std::vector<NamedTensor> entries;
    entries.reserve(scenes.size());
    for (const auto& s : scenes)
      entries.push_back({"image/" + s.scene_id, {3, s.height, s.width}, s.image});
    write_rseq1(paths.images(), entries);
  }
  {
    std::vector<NamedTensor> entries;
    for (const auto& s : scenes)
      for (size_t p = 0; p < s.persons.size(); ++p) {
        const ParsingMap& m = s.persons[p].parsing;
        std::vector<float> data(m.v.begin(), m.v.end());
        entries.push_back({"parsing/" + s.scene_id + "/" + std::to_string(p),
                           {m.channels, m.height, m.width}, std::move(data)});
      }
    write_rseq1(paths.parsing(), entries);
  }
  {
    std::ofstream os(paths.annotations(), std::ios::trunc);
    if (!os) throw IoError("gen-data: cannot write " + paths.annotations());
    for (const auto& s : scenes) os << scene_annotation(s).dump() << "\n";
  }
  {
    codec::VocabConfig vc;
    vc.n_bins = cfg.vocab_bins;
    vc.n_parsing_codes = 32;
    vc.n_queries = 12;
    vc.keypoints = keypoint_schema();
    codec::Vocabulary vocab(codec::BpeModel::train(canonical_text_corpus(), cfg.vocab_merges), vc);
    std::ofstream os(paths.vocab(), std::ios::trunc);
    if (!os) throw IoError("gen-data: cannot write " + paths.vocab());
    os << vocab.to_json().dump(2) << "\n";
  }

  BuildReport report;
  report.scenes_written = n_scenes;
  report.scenes_skipped = skipped;

  nlohmann::json manifest;
  manifest["n_scenes"] = n_scenes;
  manifest["seed"] = seed;
  manifest["skipped_indices"] = skipped;
  manifest["config"] = cfg.to_json();
  manifest["splits"] = nlohmann::json::object();
  for (const std::string split : {"train", "val", "test"}) {
    long n_split = 0, refs = 0, persons = 0;
    for (const auto& s : scenes) {
      if (s.split != split) continue;
      ++n_split;
      refs += static_cast<long>(s.references.size());
      persons += static_cast<long>(s.persons.size());
    }
    manifest["splits"][split] = {{"scenes", n_split},
                                 {"task_counts",
                                  {{"box", refs},
                                   {"keypoints", refs},
                                   {"parsing", refs},
                                   {"caption", persons}}}};
  }
  manifest["config_hash"] =
      fnv1a_hex(cfg.to_json().dump() + "|" + std::to_string(seed) + "|" +
                std::to_string(n_scenes));
  {
    std::ofstream os(paths.manifest(), std::ios::trunc);
    if (!os) throw IoError("gen-data: cannot write " + paths.manifest());
    os << manifest.dump(2) << "\n";
  }
  report.manifest = manifest;
  return report;
}

nlohmann::json load_manifest(const std::string& dir) {
  std::ifstream is(DatasetPaths{dir}.manifest());
  if (!is) throw IoError("dataset: cannot open manifest in " + dir);
  nlohmann::json j;
  is >> j;
  return j;
}

std::vector<Scene> load_dataset(const std::string& dir, const std::string& split) {
  DatasetPaths paths{dir};
  std::ifstream is(paths.annotations());
  if (!is) throw IoError("dataset: cannot open " + paths.annotations());

  std::map<std::string, NamedTensor> images;
  for (auto& e : read_rseq1(paths.images())) images[e.name] = std::move(e);
  std::map<std::string, NamedTensor> parsing;
  for (auto& e : read_rseq1(paths.parsing())) parsing[e.name] = std::move(e);

  std::vector<Scene> scenes;
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    const nlohmann::json j = nlohmann::json::parse(line);
    if (!split.empty() && j.at("split").get<std::string>() != split) continue;
    Scene s;
    s.scene_id = j.at("scene_id").get<std::string>();
    s.split = j.at("split").get<std::string>();
    const auto img_it = images.find("image/" + s.scene_id);
    if (img_it == images.end()) throw IoError("dataset: missing image for " + s.scene_id);
    s.height = img_it->second.shape[1];
    s.width = img_it->second.shape[2];
    s.image = img_it->second.data;
    int person_idx = 0;
    for (const auto& jp : j.at("persons")) {
      PersonInstance p;
      p.region = region_from_json(jp.at("region"));
      p.keypoints = codec::KeypointSet(keypoint_schema());
      for (size_t k = 0; k < p.keypoints.schema.names.size(); ++k) {
        const auto& jk = jp.at("keypoints").at(p.keypoints.schema.names[k]);
        if (!jk.is_null()) p.keypoints.points[k] = {jk.at(0).get<double>(), jk.at(1).get<double>()};
      }
      p.attributes.color = jp.at("attributes").at("color").get<std::string>();
      p.attributes.size = jp.at("attributes").at("size").get<std::string>();
      p.attributes.position = jp.at("attributes").at("position").get<std::string>();
      p.attributes.pose = jp.at("attributes").at("pose").get<std::string>();
      const auto par_it = parsing.find("parsing/" + s.scene_id + "/" + std::to_string(person_idx));
      if (par_it == parsing.end())
        throw IoError("dataset: missing parsing crop for " + s.scene_id + "/" +
                      std::to_string(person_idx));
      const NamedTensor& e = par_it->second;
      ParsingMap m;
      m.channels = e.shape[0];
      m.height = e.shape[1];
      m.width = e.shape[2];
      m.v.resize(e.data.size());
      for (size_t i = 0; i < e.data.size(); ++i) m.v[i] = static_cast<uint8_t>(e.data[i]);
      p.parsing = std::move(m);
      s.persons.push_back(std::move(p));
      ++person_idx;
    }
    for (const auto& jr : j.at("references"))
      s.references.push_back({jr.at("text").get<std::string>(), jr.at("target").get<int>(),
                              jr.at("dim").get<std::string>()});
    s.captions = j.at("captions").get<std::vector<std::string>>();
    scenes.push_back(std::move(s));
  }
  return scenes;
}

}  // namespace refseq::synth
