#pragma once

#include <map>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

#include "bimanip/geometry.hpp"
#include "bimanip/random.hpp"

namespace bimanip {

/// N x 3 array of workspace-frame points.
struct PointCloud {
  Eigen::Matrix<double, Eigen::Dynamic, 3> points;

  int size() const { return static_cast<int>(points.rows()); }
  bool empty() const { return points.rows() == 0; }
  Eigen::Vector3d mean() const { return points.colwise().mean(); }
};

struct BoxShape {
  Eigen::Vector3d extents = Eigen::Vector3d::Ones();  // full side lengths
};

struct CylinderShape {
  double radius = 0.05;
  double height = 0.1;  // axis along local z
};

struct PointSetShape {
  std::vector<Eigen::Vector3d> points;  // local frame
};

using Shape = std::variant<BoxShape, CylinderShape, PointSetShape>;

struct SceneObject {
  std::string name;
  std::map<std::string, Aabb> part_labels;  // workspace frame
  Pose pose;
  Shape shape;
  std::set<std::string> attributes;  // lowercase

  /// World-frame bounding box of the shape at the current pose.
  Aabb bounding_box() const;
};

struct Scene {
  std::vector<SceneObject> objects;
  std::vector<Aabb> obstacles;
  Aabb workspace;
  std::map<std::string, Aabb> regions;
  uint64_t rng_seed = 0;

  const SceneObject* find_object(const std::string& name) const;
  SceneObject* find_object(const std::string& name);
};

struct Detection {
  std::string caption;
  Aabb box;
  double confidence = 1.0;
  bool ambiguous = false;
  std::string matched_object;               // resolved object name
  std::optional<std::string> matched_part;  // set when the caption hit a part label
};

struct DetectionNoise {
  double p_miss = 0.0;     // probability of returning nothing
  double p_confuse = 0.0;  // probability of returning a different object's box
};

/// Ground-truth noise profile approximating the reported perception error rate.
inline DetectionNoise paper_noise_profile() { return DetectionNoise{0.05, 0.06}; }

struct SegmentationEmpty : std::runtime_error {
  explicit SegmentationEmpty(const std::string& what) : std::runtime_error(what) {}
};

/// Uniform surface samples of the object's shape, transformed by its pose.
/// Deterministic per seed. Throws std::invalid_argument for n_points < 1 or an
/// empty point-set shape.
PointCloud sample_point_cloud(const SceneObject& obj, int n_points, uint64_t seed);

/// Whole-scene cloud: per-object surface samples concatenated in object order.
PointCloud sample_scene_cloud(const Scene& scene, int points_per_object, uint64_t seed);

/// Caption -> box lookup standing in for open-vocabulary detection.
/// Matching order: exact object name, exact part label, then case-insensitive
/// substring over names, attributes and part labels. Ambiguity (two or more
/// objects matching) is broken by distance to the workspace center and flagged.
/// Noise may turn the result into std::nullopt (miss) or another object's box.
std::optional<Detection> detect(const Scene& scene, const std::string& caption,
                                const DetectionNoise& noise, Rng& rng);

inline std::optional<Detection> detect(const Scene& scene, const std::string& caption) {
  Rng rng(0);
  return detect(scene, caption, DetectionNoise{}, rng);
}

/// Points of `cloud` inside `box` dilated by `margin`.
/// Throws SegmentationEmpty when nothing survives the crop.
PointCloud segment_cloud(const PointCloud& cloud, const Aabb& box, double margin);

/// Textual scene state: one "name: region" line per object, sorted by name.
/// Objects outside every region map to "center"; boundary ties go to the
/// region with the nearest center (then lexicographic region name).
std::string get_state(const Scene& scene);

/// Region assignment for a single position (same rule as get_state).
std::string region_of(const Scene& scene, const Eigen::Vector3d& position);

// ---------------------------------------------------------------------------
// Procedural sorting tasks
// ---------------------------------------------------------------------------

struct CatalogEntry {
  std::string name;
  Shape shape;
  std::set<std::string> attributes;
};

/// The 15 tabletop objects used by the sorting benchmark.
const std::vector<CatalogEntry>& object_catalog();

/// Grouping attributes available to the task generator, mapped to the
/// attribute string objects carry.
const std::vector<std::pair<std::string, std::string>>& grouping_attributes();

struct SortingTask {
  Scene scene;
  std::string instruction;
  std::vector<std::string> expected_objects;  // objects carrying the attribute
  std::string attribute;                      // e.g. "red"
  std::string region;                         // e.g. "right side"
};

/// Deterministic per seed. Each task holds 10-15 objects placed at least 8 cm
/// apart; throws std::runtime_error if rejection sampling fails 1000 times.
std::vector<SortingTask> generate_sorting_tasks(int n_tasks, uint64_t seed);

/// Empty desk scene with the standard workspace box and left/right regions.
Scene make_desk_scene();

/// Spawns a catalog object near `position` (resting on the table).
SceneObject spawn_catalog_object(const std::string& name, const Eigen::Vector3d& position,
                                 double yaw = 0.0);

/// Demo scene: screw-cap detergent bottle standing upright, cap labeled.
Scene make_bottle_scene();

/// Demo scene: pedal trash can with lid/pedal part labels plus garbage items.
Scene make_trash_scene(int n_items = 2);

}  // namespace bimanip
