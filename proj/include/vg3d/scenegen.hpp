#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "vg3d/geometry.hpp"
#include "vg3d/rng.hpp"
#include "vg3d/textsplit.hpp"

namespace vg3d {

struct ObjectSpec {
  int id = 0;
  std::string category;
  std::string color;
  Box3 box;
};

struct SceneSpec {
  int scene_id = 0;
  std::vector<ObjectSpec> objects;
  double room_l = 8.0, room_w = 8.0, room_h = 3.0;  // [0,l]x[0,w]x[0,h]
};

struct SceneGenConfig {
  int num_objects = 8;
  double room_l = 8.0, room_w = 8.0, room_h = 3.0;
  // probability that the forced same-category pair also shares its color,
  // which makes the utterance resolvable only through the spatial relation
  double same_color_pair_prob = 0.5;
};

// Category vocabulary with characteristic sizes; size is what makes the
// category perceivable from geometry alone.
struct CategoryInfo {
  std::string name;
  double l, w, h;
};
const std::vector<CategoryInfo>& category_vocab();

struct ColorInfo {
  std::string name;
  double r, g, b;
};
const std::vector<ColorInfo>& color_vocab();

struct PointCloud {
  std::vector<double> xyz;  // 3*n
  std::vector<double> rgb;  // 3*n
  int n = 0;
  int object_points = 0;  // object-surface points come first, clutter after
};

struct GroundingSample {
  SceneSpec scene;
  std::string utterance;
  std::vector<TokenLabel> token_labels;
  int target_id = 0;
  std::uint64_t pointcloud_seed = 0;
  PointCloud points;
};

// Spatial relations, evaluated between box centers in the fixed room frame.
enum class Relation { left_of, right_of, in_front_of, behind, near, far_from };
bool relation_holds(Relation r, const Box3& subject, const Box3& anchor);
const char* relation_phrase(Relation r);  // e.g. "left of"

SceneSpec gen_scene(std::uint64_t seed, const SceneGenConfig& cfg);

struct RenderedUtterance {
  std::string utterance;
  std::vector<TokenLabel> token_labels;
};

// Fills a template around the target and, when the scene contains a
// same-category distractor, a disambiguating relation to a uniquely
// describable anchor. Throws if no disambiguating relation exists.
RenderedUtterance render_utterance(const SceneSpec& scene, int target_id, Rng& rng);

// Independent interpreter of the grammar: parses the utterance and resolves
// it against the scene. Returns the object id or -1 when the reference does
// not pick out exactly one object.
int eval_utterance(const SceneSpec& scene, const std::string& utterance);

PointCloud sample_points(const SceneSpec& scene, int n, double noise_sigma,
                         std::uint64_t seed);

struct DatasetConfig {
  SceneGenConfig scene;
  int points_per_cloud = 1024;
  double point_noise_sigma = 0.005;
};

std::vector<GroundingSample> gen_dataset(std::uint64_t seed, int num_scenes,
                                         const DatasetConfig& cfg);

void save_dataset(const std::string& path, const std::vector<GroundingSample>& samples);
std::vector<GroundingSample> load_dataset(const std::string& path,
                                          int points_per_cloud = 1024,
                                          double point_noise_sigma = 0.005);

// True when the scene contains another object of the target's category.
bool has_same_category_distractor(const SceneSpec& scene, int target_id);

}  // namespace vg3d
