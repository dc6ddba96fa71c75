#include "vg3d/scenegen.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

namespace vg3d {

namespace {

constexpr double kPlacementGap = 0.05;   // min clearance between boxes
constexpr double kRelationMargin = 0.25; // axis offset for left/right/front/behind
constexpr double kNearDistance = 1.5;
constexpr double kFarDistance = 3.5;
constexpr double kClutterFraction = 0.1;
constexpr double kColorJitterSigma = 0.05;

double center_distance(const Box3& a, const Box3& b) {
  const double dx = a.center.x - b.center.x;
  const double dy = a.center.y - b.center.y;
  const double dz = a.center.z - b.center.z;
  return std::sqrt(dx * dx + dy * dy + dz * dz);
}

bool boxes_clear(const Box3& a, const Box3& b, double gap) {
  const bool sep_x = std::fabs(a.center.x - b.center.x) >= (a.l + b.l) / 2.0 + gap;
  const bool sep_y = std::fabs(a.center.y - b.center.y) >= (a.w + b.w) / 2.0 + gap;
  const bool sep_z = std::fabs(a.center.z - b.center.z) >= (a.h + b.h) / 2.0 + gap;
  return sep_x || sep_y || sep_z;
}

const std::vector<Relation>& all_relations() {
  static const std::vector<Relation> rels = {
      Relation::left_of, Relation::right_of, Relation::in_front_of,
      Relation::behind,  Relation::near,     Relation::far_from};
  return rels;
}

const ObjectSpec* find_object(const SceneSpec& scene, int id) {
  for (const ObjectSpec& o : scene.objects)
    if (o.id == id) return &o;
  return nullptr;
}

// Anchor descriptors are "the <color> <category>"; usable only when that
// pair is unique in the scene.
bool uniquely_describable(const SceneSpec& scene, const ObjectSpec& obj) {
  for (const ObjectSpec& other : scene.objects) {
    if (other.id != obj.id && other.category == obj.category &&
        other.color == obj.color)
      return false;
  }
  return true;
}

}  // namespace

const std::vector<CategoryInfo>& category_vocab() {
  static const std::vector<CategoryInfo> cats = {
      {"chair", 0.50, 0.50, 0.90},  {"table", 1.40, 0.90, 0.75},
      {"sofa", 1.80, 0.85, 0.80},   {"bed", 2.00, 1.50, 0.55},
      {"desk", 1.20, 0.60, 0.75},   {"shelf", 0.80, 0.30, 1.80},
      {"cabinet", 0.90, 0.45, 1.20},{"monitor", 0.55, 0.15, 0.35},
      {"lamp", 0.30, 0.30, 1.50},   {"box", 0.40, 0.40, 0.40}};
  return cats;
}

const std::vector<ColorInfo>& color_vocab() {
  static const std::vector<ColorInfo> colors = {
      {"red", 0.80, 0.10, 0.10},    {"green", 0.10, 0.70, 0.15},
      {"blue", 0.15, 0.20, 0.80},   {"yellow", 0.85, 0.80, 0.10},
      {"white", 0.90, 0.90, 0.90},  {"black", 0.08, 0.08, 0.08}};
  return colors;
}

bool relation_holds(Relation r, const Box3& subject, const Box3& anchor) {
  switch (r) {
    case Relation::left_of:
      return anchor.center.x - subject.center.x >= kRelationMargin;
    case Relation::right_of:
      return subject.center.x - anchor.center.x >= kRelationMargin;
    case Relation::in_front_of:
      return anchor.center.y - subject.center.y >= kRelationMargin;
    case Relation::behind:
      return subject.center.y - anchor.center.y >= kRelationMargin;
    case Relation::near:
      return center_distance(subject, anchor) <= kNearDistance;
    case Relation::far_from:
      return center_distance(subject, anchor) >= kFarDistance;
  }
  return false;
}

const char* relation_phrase(Relation r) {
  switch (r) {
    case Relation::left_of: return "left of";
    case Relation::right_of: return "right of";
    case Relation::in_front_of: return "in front of";
    case Relation::behind: return "behind";
    case Relation::near: return "near";
    case Relation::far_from: return "far from";
  }
  return "near";
}

SceneSpec gen_scene(std::uint64_t seed, const SceneGenConfig& cfg) {
  if (cfg.num_objects < 2)
    throw std::invalid_argument("gen_scene: need at least 2 objects");
  Rng rng(seed ^ 0x5ce9e5ULL);
  const auto& cats = category_vocab();
  const auto& colors = color_vocab();

  for (int attempt = 0; attempt < 40; ++attempt) {
    SceneSpec scene;
    scene.room_l = cfg.room_l;
    scene.room_w = cfg.room_w;
    scene.room_h = cfg.room_h;

    // first two objects share a category so category alone never suffices
    std::vector<int> cat_idx(static_cast<std::size_t>(cfg.num_objects));
    cat_idx[0] = rng.uniform_int(static_cast<int>(cats.size()));
    cat_idx[1] = cat_idx[0];
    for (int i = 2; i < cfg.num_objects; ++i)
      cat_idx[static_cast<std::size_t>(i)] = rng.uniform_int(static_cast<int>(cats.size()));

    std::vector<int> color_idx(static_cast<std::size_t>(cfg.num_objects));
    for (int i = 0; i < cfg.num_objects; ++i)
      color_idx[static_cast<std::size_t>(i)] = rng.uniform_int(static_cast<int>(colors.size()));
    if (rng.uniform() < cfg.same_color_pair_prob) color_idx[1] = color_idx[0];

    bool placed_all = true;
    for (int i = 0; i < cfg.num_objects && placed_all; ++i) {
      const CategoryInfo& cat = cats[static_cast<std::size_t>(cat_idx[static_cast<std::size_t>(i)])];
      bool placed = false;
      for (int tries = 0; tries < 100 && !placed; ++tries) {
        Box3 box;
        box.l = cat.l * rng.uniform(0.9, 1.1);
        box.w = cat.w * rng.uniform(0.9, 1.1);
        box.h = cat.h * rng.uniform(0.9, 1.1);
        box.center.x = rng.uniform(box.l / 2.0 + kPlacementGap, cfg.room_l - box.l / 2.0 - kPlacementGap);
        box.center.y = rng.uniform(box.w / 2.0 + kPlacementGap, cfg.room_w - box.w / 2.0 - kPlacementGap);
        box.center.z = box.h / 2.0;  // furniture rests on the floor
        bool clear = true;
        for (const ObjectSpec& other : scene.objects)
          clear = clear && boxes_clear(box, other.box, kPlacementGap);
        if (!clear) continue;
        ObjectSpec obj;
        obj.id = i;
        obj.category = cat.name;
        obj.color = colors[static_cast<std::size_t>(color_idx[static_cast<std::size_t>(i)])].name;
        obj.box = box;
        scene.objects.push_back(obj);
        placed = true;
      }
      placed_all = placed;
    }
    if (placed_all) return scene;
  }
  throw std::runtime_error("gen_scene: could not place objects without overlap");
}

namespace {

struct TemplatePiece {
  std::string word;
  TokenLabel label;
};

void append_relation(std::vector<TemplatePiece>& pieces, Relation r) {
  // content words of the relation are Relationship, connectives are Other
  std::istringstream phrase(relation_phrase(r));
  std::string word;
  while (phrase >> word) {
    const bool connective = word == "of" || word == "from";
    pieces.push_back({word, connective ? TokenLabel::Other : TokenLabel::Relationship});
  }
}

RenderedUtterance assemble(const std::vector<TemplatePiece>& pieces) {
  RenderedUtterance out;
  std::string text;
  for (const TemplatePiece& p : pieces) {
    if (!text.empty()) text += " ";
    text += p.word;
    out.token_labels.push_back(p.label);
  }
  out.utterance = text;
  return out;
}

std::vector<TemplatePiece> target_phrase(const ObjectSpec& target, bool there_is) {
  std::vector<TemplatePiece> pieces;
  if (there_is) {
    pieces.push_back({"there", TokenLabel::Other});
    pieces.push_back({"is", TokenLabel::Other});
    pieces.push_back({"a", TokenLabel::Other});
  } else {
    pieces.push_back({"the", TokenLabel::Other});
  }
  pieces.push_back({target.color, TokenLabel::Attribute});
  pieces.push_back({target.category, TokenLabel::MainObject});
  return pieces;
}

}  // namespace

RenderedUtterance render_utterance(const SceneSpec& scene, int target_id, Rng& rng) {
  const ObjectSpec* target = find_object(scene, target_id);
  if (!target) throw std::invalid_argument("render_utterance: no such target");

  const bool needs_relation = has_same_category_distractor(scene, target_id);
  const bool use_relation = needs_relation || rng.uniform() < 0.5;
  const bool pronoun_form = use_relation && rng.uniform() < 0.3;
  const bool there_is_form = !pronoun_form && rng.uniform() < 0.3;

  if (!use_relation) {
    auto pieces = target_phrase(*target, there_is_form);
    pieces.push_back({".", TokenLabel::Other});
    RenderedUtterance out = assemble(pieces);
    if (eval_utterance(scene, out.utterance) != target_id)
      throw std::runtime_error("render_utterance: attribute-only reference is ambiguous");
    return out;
  }

  // enumerate (relation, anchor) candidates in a seeded random order
  std::vector<std::pair<Relation, int>> candidates;
  for (Relation r : all_relations())
    for (const ObjectSpec& anchor : scene.objects)
      if (anchor.id != target_id) candidates.emplace_back(r, anchor.id);
  for (std::size_t i = candidates.size(); i > 1; --i)
    std::swap(candidates[i - 1], candidates[static_cast<std::size_t>(rng.uniform_int(static_cast<int>(i)))]);

  for (const auto& [rel, anchor_id] : candidates) {
    const ObjectSpec& anchor = *find_object(scene, anchor_id);
    if (!uniquely_describable(scene, anchor)) continue;
    if (!relation_holds(rel, target->box, anchor.box)) continue;
    bool disambiguates = true;
    for (const ObjectSpec& other : scene.objects) {
      if (other.id != target_id && other.id != anchor_id &&
          other.category == target->category &&
          relation_holds(rel, other.box, anchor.box))
        disambiguates = false;
    }
    if (!disambiguates) continue;

    std::vector<TemplatePiece> pieces;
    if (pronoun_form) {
      pieces = target_phrase(*target, true);
      pieces.push_back({".", TokenLabel::Other});
      pieces.push_back({"it", TokenLabel::Pronoun});
      pieces.push_back({"is", TokenLabel::Other});
    } else {
      pieces = target_phrase(*target, there_is_form);
    }
    append_relation(pieces, rel);
    pieces.push_back({"the", TokenLabel::Other});
    pieces.push_back({anchor.color, TokenLabel::AuxiliaryObject});
    pieces.push_back({anchor.category, TokenLabel::AuxiliaryObject});
    pieces.push_back({".", TokenLabel::Other});
    RenderedUtterance out = assemble(pieces);
    if (eval_utterance(scene, out.utterance) == target_id) return out;
  }
  throw std::runtime_error("render_utterance: no disambiguating relation exists");
}

int eval_utterance(const SceneSpec& scene, const std::string& utterance) {
  const Lexicon lex = default_lexicon();
  const std::vector<std::string> tokens = tokenize(utterance);

  // parse: first (attributes, category) pair is the target descriptor, an
  // optional relation phrase follows, then the anchor descriptor
  std::string target_cat, target_color, anchor_cat, anchor_color;
  std::vector<Relation> rel;
  std::vector<std::string> pending_attrs;
  bool after_relation = false;
  for (const std::string& tok : tokens) {
    if (lex.attribute_words.count(tok)) {
      pending_attrs.push_back(tok);
      continue;
    }
    if (tok == "left") rel.assign(1, Relation::left_of);
    if (tok == "right") rel.assign(1, Relation::right_of);
    if (tok == "front") rel.assign(1, Relation::in_front_of);
    if (tok == "behind") rel.assign(1, Relation::behind);
    if (tok == "near") rel.assign(1, Relation::near);
    if (tok == "far") rel.assign(1, Relation::far_from);
    if (lex.relation_words.count(tok)) {
      after_relation = true;
      pending_attrs.clear();
      continue;
    }
    if (lex.category_nouns.count(tok)) {
      if (!after_relation && target_cat.empty()) {
        target_cat = tok;
        if (!pending_attrs.empty()) target_color = pending_attrs.back();
      } else if (after_relation && anchor_cat.empty()) {
        anchor_cat = tok;
        if (!pending_attrs.empty()) anchor_color = pending_attrs.back();
      }
    }
    pending_attrs.clear();
  }
  if (target_cat.empty()) return -1;

  std::vector<const ObjectSpec*> candidates;
  for (const ObjectSpec& o : scene.objects) {
    if (o.category != target_cat) continue;
    if (!target_color.empty() && o.color != target_color) continue;
    candidates.push_back(&o);
  }
  if (!rel.empty() && !anchor_cat.empty()) {
    const ObjectSpec* anchor = nullptr;
    int anchor_matches = 0;
    for (const ObjectSpec& o : scene.objects) {
      if (o.category != anchor_cat) continue;
      if (!anchor_color.empty() && o.color != anchor_color) continue;
      anchor = &o;
      ++anchor_matches;
    }
    if (anchor_matches != 1) return -1;
    std::vector<const ObjectSpec*> filtered;
    for (const ObjectSpec* c : candidates)
      if (c->id != anchor->id && relation_holds(rel[0], c->box, anchor->box))
        filtered.push_back(c);
    candidates = filtered;
  }
  return candidates.size() == 1 ? candidates[0]->id : -1;
}

PointCloud sample_points(const SceneSpec& scene, int n, double noise_sigma,
                         std::uint64_t seed) {
  const int min_points = static_cast<int>(scene.objects.size()) * 8;
  if (n < min_points)
    throw std::invalid_argument("sample_points: need at least 8 points per object");
  Rng rng(seed ^ 0x9013d5ULL);
  const auto& colors = color_vocab();

  PointCloud cloud;
  cloud.n = n;
  cloud.xyz.reserve(static_cast<std::size_t>(n) * 3);
  cloud.rgb.reserve(static_cast<std::size_t>(n) * 3);

  const int n_clutter = static_cast<int>(std::lround(kClutterFraction * n));
  const int n_object = n - n_clutter;
  cloud.object_points = n_object;

  // area-weighted assignment of points to objects
  std::vector<double> cum_area;
  double total_area = 0.0;
  for (const ObjectSpec& o : scene.objects) {
    const double area = 2.0 * (o.box.l * o.box.w + o.box.l * o.box.h + o.box.w * o.box.h);
    total_area += area;
    cum_area.push_back(total_area);
  }

  auto color_of = [&](const std::string& name) {
    for (const ColorInfo& c : colors)
      if (c.name == name) return c;
    return ColorInfo{"gray", 0.5, 0.5, 0.5};
  };

  for (int i = 0; i < n_object; ++i) {
    const double pick = rng.uniform() * total_area;
    std::size_t oi = 0;
    while (oi + 1 < cum_area.size() && pick > cum_area[oi]) ++oi;
    const ObjectSpec& obj = scene.objects[oi];
    const Box3& b = obj.box;

    // choose a face proportionally to its area, then a uniform point on it
    const double ax = b.w * b.h, ay = b.l * b.h, az = b.l * b.w;
    const double face_pick = rng.uniform() * 2.0 * (ax + ay + az);
    double x, y, z;
    if (face_pick < 2.0 * ax) {
      x = b.center.x + (face_pick < ax ? -1.0 : 1.0) * b.l / 2.0;
      y = b.center.y + rng.uniform(-0.5, 0.5) * b.w;
      z = b.center.z + rng.uniform(-0.5, 0.5) * b.h;
    } else if (face_pick < 2.0 * (ax + ay)) {
      y = b.center.y + (face_pick - 2.0 * ax < ay ? -1.0 : 1.0) * b.w / 2.0;
      x = b.center.x + rng.uniform(-0.5, 0.5) * b.l;
      z = b.center.z + rng.uniform(-0.5, 0.5) * b.h;
    } else {
      z = b.center.z + (face_pick - 2.0 * (ax + ay) < az ? -1.0 : 1.0) * b.h / 2.0;
      x = b.center.x + rng.uniform(-0.5, 0.5) * b.l;
      y = b.center.y + rng.uniform(-0.5, 0.5) * b.w;
    }
    if (noise_sigma > 0.0) {
      x += rng.gaussian(0.0, noise_sigma);
      y += rng.gaussian(0.0, noise_sigma);
      z += rng.gaussian(0.0, noise_sigma);
    }
    cloud.xyz.push_back(x);
    cloud.xyz.push_back(y);
    cloud.xyz.push_back(z);
    const ColorInfo c = color_of(obj.color);
    cloud.rgb.push_back(std::clamp(c.r + rng.gaussian(0.0, kColorJitterSigma), 0.0, 1.0));
    cloud.rgb.push_back(std::clamp(c.g + rng.gaussian(0.0, kColorJitterSigma), 0.0, 1.0));
    cloud.rgb.push_back(std::clamp(c.b + rng.gaussian(0.0, kColorJitterSigma), 0.0, 1.0));
  }

  for (int i = 0; i < n_clutter; ++i) {
    cloud.xyz.push_back(rng.uniform(0.0, scene.room_l));
    cloud.xyz.push_back(rng.uniform(0.0, scene.room_w));
    cloud.xyz.push_back(0.0);
    for (int c = 0; c < 3; ++c)
      cloud.rgb.push_back(std::clamp(0.5 + rng.gaussian(0.0, kColorJitterSigma), 0.0, 1.0));
  }
  return cloud;
}

bool has_same_category_distractor(const SceneSpec& scene, int target_id) {
  const ObjectSpec* target = find_object(scene, target_id);
  if (!target) return false;
  for (const ObjectSpec& o : scene.objects)
    if (o.id != target_id && o.category == target->category) return true;
  return false;
}

std::vector<GroundingSample> gen_dataset(std::uint64_t seed, int num_scenes,
                                         const DatasetConfig& cfg) {
  std::vector<GroundingSample> samples;
  samples.reserve(static_cast<std::size_t>(num_scenes));
  Rng root(seed);
  for (int i = 0; i < num_scenes; ++i) {
    Rng sample_rng = root.fork(static_cast<std::uint64_t>(i) + 1);
    GroundingSample sample;
    for (int attempt = 0;; ++attempt) {
      if (attempt >= 50)
        throw std::runtime_error("gen_dataset: failed to build a resolvable sample");
      try {
        const std::uint64_t scene_seed = sample_rng.next_u64();
        sample.scene = gen_scene(scene_seed, cfg.scene);
        sample.scene.scene_id = i;
        sample.target_id = sample_rng.uniform_int(static_cast<int>(sample.scene.objects.size()));
        RenderedUtterance r = render_utterance(sample.scene, sample.target_id, sample_rng);
        sample.utterance = r.utterance;
        sample.token_labels = r.token_labels;
        break;
      } catch (const std::runtime_error&) {
        continue;  // unresolvable draw, try a fresh scene
      }
    }
    sample.pointcloud_seed = sample_rng.next_u64();
    sample.points = sample_points(sample.scene, cfg.points_per_cloud,
                                  cfg.point_noise_sigma, sample.pointcloud_seed);
    samples.push_back(std::move(sample));
  }
  return samples;
}

void save_dataset(const std::string& path, const std::vector<GroundingSample>& samples) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("save_dataset: cannot open " + path);
  for (const GroundingSample& s : samples) {
    nlohmann::json objects = nlohmann::json::array();
    for (const ObjectSpec& o : s.scene.objects) {
      objects.push_back({{"id", o.id},
                         {"category", o.category},
                         {"color", o.color},
                         {"center", {o.box.center.x, o.box.center.y, o.box.center.z}},
                         {"size", {o.box.l, o.box.w, o.box.h}}});
    }
    nlohmann::json labels = nlohmann::json::array();
    for (TokenLabel l : s.token_labels) labels.push_back(token_label_name(l));
    nlohmann::json rec = {
        {"scene_id", s.scene.scene_id},
        {"room", {s.scene.room_l, s.scene.room_w, s.scene.room_h}},
        {"objects", objects},
        {"utterance", s.utterance},
        {"token_labels", labels},
        {"target_id", s.target_id},
        {"pointcloud_seed", s.pointcloud_seed}};
    out << rec.dump() << "\n";
  }
}

std::vector<GroundingSample> load_dataset(const std::string& path,
                                          int points_per_cloud,
                                          double point_noise_sigma) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("load_dataset: cannot open " + path);
  std::vector<GroundingSample> samples;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    nlohmann::json rec;
    try {
      rec = nlohmann::json::parse(line);
      GroundingSample s;
      s.scene.scene_id = rec.at("scene_id").get<int>();
      const auto& room = rec.at("room");
      s.scene.room_l = room.at(0).get<double>();
      s.scene.room_w = room.at(1).get<double>();
      s.scene.room_h = room.at(2).get<double>();
      for (const auto& jo : rec.at("objects")) {
        ObjectSpec o;
        o.id = jo.at("id").get<int>();
        o.category = jo.at("category").get<std::string>();
        o.color = jo.at("color").get<std::string>();
        o.box.center = {jo.at("center").at(0).get<double>(),
                        jo.at("center").at(1).get<double>(),
                        jo.at("center").at(2).get<double>()};
        o.box.l = jo.at("size").at(0).get<double>();
        o.box.w = jo.at("size").at(1).get<double>();
        o.box.h = jo.at("size").at(2).get<double>();
        s.scene.objects.push_back(o);
      }
      s.utterance = rec.at("utterance").get<std::string>();
      for (const auto& jl : rec.at("token_labels"))
        s.token_labels.push_back(token_label_from_name(jl.get<std::string>()));
      s.target_id = rec.at("target_id").get<int>();
      s.pointcloud_seed = rec.at("pointcloud_seed").get<std::uint64_t>();
      s.points = sample_points(s.scene, points_per_cloud, point_noise_sigma,
                               s.pointcloud_seed);
      samples.push_back(std::move(s));
    } catch (const nlohmann::json::exception& e) {
      throw std::runtime_error("load_dataset: parse error at line " +
                               std::to_string(line_no) + ": " + e.what());
    }
  }
  return samples;
}

}  // namespace vg3d
