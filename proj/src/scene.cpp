#include "bimanip/scene.hpp"

#include <algorithm>
#include <cctype>
#include <sstream>

namespace bimanip {

namespace {

Aabb local_bounds(const Shape& shape) {
  struct Visitor {
    Aabb operator()(const BoxShape& b) const {
      return Aabb(-0.5 * b.extents, 0.5 * b.extents);
    }
    Aabb operator()(const CylinderShape& c) const {
      return Aabb(Eigen::Vector3d(-c.radius, -c.radius, -0.5 * c.height),
                  Eigen::Vector3d(c.radius, c.radius, 0.5 * c.height));
    }
    Aabb operator()(const PointSetShape& p) const {
      if (p.points.empty()) return Aabb();
      Eigen::Vector3d lo = p.points.front(), hi = p.points.front();
      for (const auto& pt : p.points) {
        lo = lo.cwiseMin(pt);
        hi = hi.cwiseMax(pt);
      }
      return Aabb(lo, hi);
    }
  };
  return std::visit(Visitor{}, shape);
}

std::string to_lower(std::string s) {
  std::transform(s.begin(), s.end(), s.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return s;
}

bool ci_contains(const std::string& haystack, const std::string& needle) {
  return to_lower(haystack).find(to_lower(needle)) != std::string::npos;
}

}  // namespace

Aabb SceneObject::bounding_box() const {
  const Aabb local = local_bounds(shape);
  // transform the 8 corners; conservative for rotated shapes
  Eigen::Vector3d lo = Eigen::Vector3d::Constant(std::numeric_limits<double>::infinity());
  Eigen::Vector3d hi = -lo;
  for (int i = 0; i < 8; ++i) {
    Eigen::Vector3d c((i & 1) ? local.max_corner.x() : local.min_corner.x(),
                      (i & 2) ? local.max_corner.y() : local.min_corner.y(),
                      (i & 4) ? local.max_corner.z() : local.min_corner.z());
    const Eigen::Vector3d w = pose.apply(c);
    lo = lo.cwiseMin(w);
    hi = hi.cwiseMax(w);
  }
  return Aabb(lo, hi);
}

const SceneObject* Scene::find_object(const std::string& name) const {
  for (const auto& o : objects)
    if (o.name == name) return &o;
  return nullptr;
}

SceneObject* Scene::find_object(const std::string& name) {
  for (auto& o : objects)
    if (o.name == name) return &o;
  return nullptr;
}

// ---------------------------------------------------------------------------
// Point cloud sampling
// ---------------------------------------------------------------------------

namespace {

Eigen::Vector3d sample_box_surface(const BoxShape& box, Rng& rng) {
  const Eigen::Vector3d e = box.extents;
  // face areas: x-faces, y-faces, z-faces (two of each)
  const double ax = e.y() * e.z(), ay = e.x() * e.z(), az = e.x() * e.y();
  const double total = 2.0 * (ax + ay + az);
  double pick = rng.uniform() * total;
  int axis = 0;
  double sign = 1.0;
  const double areas[3] = {ax, ay, az};
  for (int i = 0; i < 3; ++i) {
    for (double s : {-1.0, 1.0}) {
      if (pick < areas[i]) {
        axis = i;
        sign = s;
        goto found;
      }
      pick -= areas[i];
    }
  }
found:
  Eigen::Vector3d p;
  p[axis] = sign * 0.5 * e[axis];
  const int u = (axis + 1) % 3, v = (axis + 2) % 3;
  p[u] = (rng.uniform() - 0.5) * e[u];
  p[v] = (rng.uniform() - 0.5) * e[v];
  return p;
}

Eigen::Vector3d sample_cylinder_surface(const CylinderShape& cyl, Rng& rng) {
  const double lateral = 2.0 * M_PI * cyl.radius * cyl.height;
  const double cap = M_PI * cyl.radius * cyl.radius;
  const double pick = rng.uniform() * (lateral + 2.0 * cap);
  if (pick < lateral) {
    const double ang = rng.uniform() * 2.0 * M_PI;
    const double z = (rng.uniform() - 0.5) * cyl.height;
    return {cyl.radius * std::cos(ang), cyl.radius * std::sin(ang), z};
  }
  const double sign = pick < lateral + cap ? 1.0 : -1.0;
  const double r = cyl.radius * std::sqrt(rng.uniform());
  const double ang = rng.uniform() * 2.0 * M_PI;
  return {r * std::cos(ang), r * std::sin(ang), sign * 0.5 * cyl.height};
}

}  // namespace

PointCloud sample_point_cloud(const SceneObject& obj, int n_points, uint64_t seed) {
  if (n_points < 1) throw std::invalid_argument("n_points must be >= 1");
  if (const auto* ps = std::get_if<PointSetShape>(&obj.shape); ps && ps->points.empty())
    throw std::invalid_argument("point_set shape has no points");

  Rng rng(seed);
  PointCloud cloud;
  cloud.points.resize(n_points, 3);
  for (int i = 0; i < n_points; ++i) {
    Eigen::Vector3d local;
    if (const auto* b = std::get_if<BoxShape>(&obj.shape)) {
      local = sample_box_surface(*b, rng);
    } else if (const auto* c = std::get_if<CylinderShape>(&obj.shape)) {
      local = sample_cylinder_surface(*c, rng);
    } else {
      const auto& pts = std::get<PointSetShape>(obj.shape).points;
      local = pts[rng.uniform_index(pts.size())];
    }
    cloud.points.row(i) = obj.pose.apply(local).transpose();
  }
  return cloud;
}

PointCloud sample_scene_cloud(const Scene& scene, int points_per_object, uint64_t seed) {
  PointCloud cloud;
  cloud.points.resize(points_per_object * static_cast<int>(scene.objects.size()), 3);
  Rng seeder(seed);
  int row = 0;
  for (const auto& obj : scene.objects) {
    const PointCloud part = sample_point_cloud(obj, points_per_object, seeder.fork_seed());
    cloud.points.middleRows(row, points_per_object) = part.points;
    row += points_per_object;
  }
  return cloud;
}

// ---------------------------------------------------------------------------
// Detection
// ---------------------------------------------------------------------------

namespace {

struct Match {
  int object_index;
  std::optional<std::string> part;
  int tier;  // lower is better
};

std::vector<Match> best_tier_matches(const Scene& scene, const std::string& caption) {
  std::vector<Match> matches;
  auto add = [&](int idx, std::optional<std::string> part, int tier) {
    matches.push_back({idx, std::move(part), tier});
  };
  for (int i = 0; i < static_cast<int>(scene.objects.size()); ++i) {
    const SceneObject& obj = scene.objects[i];
    if (obj.name == caption) add(i, std::nullopt, 0);
    for (const auto& [part, box] : obj.part_labels)
      if (part == caption) add(i, part, 1);
    if (ci_contains(obj.name, caption)) add(i, std::nullopt, 2);
    for (const auto& [part, box] : obj.part_labels)
      if (ci_contains(part, caption)) add(i, part, 3);
    for (const auto& attr : obj.attributes)
      if (ci_contains(attr, caption) || ci_contains(caption, attr)) add(i, std::nullopt, 4);
  }
  if (matches.empty()) return {};
  const int best =
      std::min_element(matches.begin(), matches.end(), [](const Match& a, const Match& b) {
        return a.tier < b.tier;
      })->tier;
  std::vector<Match> out;
  std::set<int> seen;
  for (const Match& m : matches)
    if (m.tier == best && seen.insert(m.object_index).second) out.push_back(m);
  return out;
}

}  // namespace

std::optional<Detection> detect(const Scene& scene, const std::string& caption,
                                const DetectionNoise& noise, Rng& rng) {
  if (caption.empty()) throw std::invalid_argument("caption must be non-empty");

  if (noise.p_miss > 0.0 && rng.uniform() < noise.p_miss) return std::nullopt;

  std::vector<Match> matches = best_tier_matches(scene, caption);
  if (matches.empty()) return std::nullopt;

  // ambiguity: several objects share the best tier
  const Eigen::Vector3d ws_center = scene.workspace.center();
  std::sort(matches.begin(), matches.end(), [&](const Match& a, const Match& b) {
    const double da = (scene.objects[a.object_index].pose.position - ws_center).norm();
    const double db = (scene.objects[b.object_index].pose.position - ws_center).norm();
    if (da != db) return da < db;
    return scene.objects[a.object_index].name < scene.objects[b.object_index].name;
  });
  const Match chosen = matches.front();

  Detection det;
  det.caption = caption;
  det.ambiguous = matches.size() > 1;
  det.matched_object = scene.objects[chosen.object_index].name;
  det.matched_part = chosen.part;
  det.confidence = chosen.tier == 0 || chosen.tier == 1 ? 1.0 : 0.9;
  det.box = chosen.part
                ? scene.objects[chosen.object_index].part_labels.at(*chosen.part)
                : scene.objects[chosen.object_index].bounding_box();

  if (noise.p_confuse > 0.0 && rng.uniform() < noise.p_confuse && scene.objects.size() >= 2) {
    // mistake one object for another: report some other object's box
    int other = static_cast<int>(rng.uniform_index(scene.objects.size()));
    if (other == chosen.object_index) other = (other + 1) % static_cast<int>(scene.objects.size());
    det.matched_object = scene.objects[other].name;
    det.matched_part = std::nullopt;
    det.box = scene.objects[other].bounding_box();
    det.confidence = 0.5;
  }
  return det;
}

PointCloud segment_cloud(const PointCloud& cloud, const Aabb& box, double margin) {
  if (margin < 0.0) throw std::invalid_argument("margin must be >= 0");
  const Aabb dilated = box.dilated(margin);
  std::vector<int> keep;
  keep.reserve(cloud.size());
  for (int i = 0; i < cloud.size(); ++i) {
    if (dilated.contains(cloud.points.row(i).transpose())) keep.push_back(i);
  }
  if (keep.empty()) throw SegmentationEmpty("no points inside segmentation box");
  PointCloud out;
  out.points.resize(static_cast<int>(keep.size()), 3);
  for (size_t i = 0; i < keep.size(); ++i) out.points.row(static_cast<int>(i)) = cloud.points.row(keep[i]);
  return out;
}

// ---------------------------------------------------------------------------
// State serialization
// ---------------------------------------------------------------------------

std::string region_of(const Scene& scene, const Eigen::Vector3d& position) {
  std::string best;
  double best_dist = std::numeric_limits<double>::infinity();
  for (const auto& [name, box] : scene.regions) {
    if (!box.contains(position)) continue;
    const double d = (box.center() - position).norm();
    // std::map iterates names in order, so equal distances keep the smaller name
    if (d < best_dist) {
      best_dist = d;
      best = name;
    }
  }
  return best.empty() ? "center" : best;
}

std::string get_state(const Scene& scene) {
  std::vector<const SceneObject*> sorted;
  sorted.reserve(scene.objects.size());
  for (const auto& o : scene.objects) sorted.push_back(&o);
  std::sort(sorted.begin(), sorted.end(),
            [](const SceneObject* a, const SceneObject* b) { return a->name < b->name; });
  std::ostringstream os;
  for (const SceneObject* o : sorted)
    os << o->name << ": " << region_of(scene, o->pose.position) << "\n";
  return os.str();
}

// ---------------------------------------------------------------------------
// Catalog and procedural tasks
// ---------------------------------------------------------------------------

const std::vector<CatalogEntry>& object_catalog() {
  static const std::vector<CatalogEntry> catalog = [] {
    auto box = [](double x, double y, double z) { return Shape{BoxShape{{x, y, z}}}; };
    auto cyl = [](double r, double h) { return Shape{CylinderShape{r, h}}; };
    std::vector<CatalogEntry> c;
    c.push_back({"coke can", cyl(0.033, 0.12), {"can", "metallic", "red"}});
    c.push_back({"sprite can", cyl(0.033, 0.12), {"can", "metallic", "green"}});
    c.push_back({"water bottle", cyl(0.035, 0.20), {"container", "plastic"}});
    c.push_back({"banana", box(0.18, 0.04, 0.04), {"fruit", "yellow"}});
    c.push_back({"apple", cyl(0.04, 0.075), {"fruit", "green"}});
    c.push_back({"chalkboard eraser", box(0.13, 0.055, 0.03), {"soft"}});
    c.push_back({"octopus plushie", box(0.10, 0.10, 0.07), {"soft", "toy"}});
    c.push_back({"purple plushie", box(0.09, 0.09, 0.08), {"soft", "toy", "purple"}});
    c.push_back({"pink plushie", box(0.09, 0.09, 0.08), {"soft", "toy", "pink"}});
    c.push_back({"small yellow block", box(0.05, 0.05, 0.05), {"block", "yellow"}});
    c.push_back({"small red block", box(0.05, 0.05, 0.05), {"block", "red"}});
    c.push_back({"green block", box(0.05, 0.05, 0.05), {"block", "green"}});
    c.push_back({"blue block", box(0.06, 0.06, 0.06), {"block", "blue"}});
    c.push_back({"red knife", box(0.20, 0.025, 0.015), {"metallic", "sharp", "red"}});
    c.push_back({"tennis ball", cyl(0.033, 0.066), {"ball", "soft", "yellow"}});
    return c;
  }();
  return catalog;
}

const std::vector<std::pair<std::string, std::string>>& grouping_attributes() {
  static const std::vector<std::pair<std::string, std::string>> groups = {
      {"cans", "can"},           {"blocks", "block"},      {"soft objects", "soft"},
      {"metal objects", "metallic"}, {"red objects", "red"},
  };
  return groups;
}

Scene make_desk_scene() {
  Scene scene;
  scene.workspace = Aabb(Eigen::Vector3d(-0.95, -0.40, 0.0), Eigen::Vector3d(0.95, 0.55, 0.90));
  scene.regions["left side"] =
      Aabb(Eigen::Vector3d(-0.85, 0.05, 0.0), Eigen::Vector3d(-0.30, 0.45, 0.30));
  scene.regions["right side"] =
      Aabb(Eigen::Vector3d(0.30, 0.05, 0.0), Eigen::Vector3d(0.85, 0.45, 0.30));
  return scene;
}

namespace {

double resting_height(const Shape& shape) {
  return -local_bounds(shape).min_corner.z();
}

}  // namespace

SceneObject spawn_catalog_object(const std::string& name, const Eigen::Vector3d& position,
                                 double yaw) {
  for (const CatalogEntry& e : object_catalog()) {
    if (e.name != name) continue;
    SceneObject obj;
    obj.name = e.name;
    obj.shape = e.shape;
    obj.attributes = e.attributes;
    obj.pose.position = Eigen::Vector3d(position.x(), position.y(),
                                        position.z() + resting_height(e.shape));
    obj.pose.orientation = Eigen::Quaterniond(Eigen::AngleAxisd(yaw, Eigen::Vector3d::UnitZ()));
    return obj;
  }
  throw std::invalid_argument("unknown catalog object: " + name);
}

std::vector<SortingTask> generate_sorting_tasks(int n_tasks, uint64_t seed) {
  if (n_tasks < 1) throw std::invalid_argument("n_tasks must be >= 1");
  const auto& catalog = object_catalog();
  const auto& groups = grouping_attributes();

  std::vector<SortingTask> tasks;
  tasks.reserve(n_tasks);
  Rng master(seed);
  for (int t = 0; t < n_tasks; ++t) {
    Rng rng(master.fork_seed());
    SortingTask task;
    task.scene = make_desk_scene();
    task.scene.rng_seed = rng.next_u64();

    const auto& [phrase, attribute] = groups[rng.uniform_index(groups.size())];
    task.attribute = attribute;
    task.region = rng.uniform() < 0.5 ? "left side" : "right side";

    const int count = 10 + static_cast<int>(rng.uniform_index(6));  // 10..15
    std::vector<int> indices(catalog.size());
    for (size_t i = 0; i < catalog.size(); ++i) indices[i] = static_cast<int>(i);
    // Fisher-Yates with our deterministic rng
    for (size_t i = indices.size(); i > 1; --i)
      std::swap(indices[i - 1], indices[rng.uniform_index(i)]);
    indices.resize(count);

    const bool has_carrier = std::any_of(indices.begin(), indices.end(), [&](int i) {
      return catalog[i].attributes.count(attribute) > 0;
    });
    if (!has_carrier) {
      for (size_t i = 0; i < catalog.size(); ++i) {
        if (catalog[i].attributes.count(attribute) &&
            std::find(indices.begin(), indices.end(), static_cast<int>(i)) == indices.end()) {
          indices.back() = static_cast<int>(i);
          break;
        }
      }
    }

    // place with >= 8 cm pairwise separation (rejection sampling)
    std::vector<Eigen::Vector3d> placed;
    for (int idx : indices) {
      bool ok = false;
      for (int attempt = 0; attempt < 1000 && !ok; ++attempt) {
        const Eigen::Vector3d p(rng.uniform(-0.70, 0.70), rng.uniform(0.10, 0.40), 0.0);
        ok = std::all_of(placed.begin(), placed.end(), [&](const Eigen::Vector3d& q) {
          return (p - q).head<2>().norm() >= 0.08;
        });
        if (ok) {
          placed.push_back(p);
          task.scene.objects.push_back(
              spawn_catalog_object(catalog[idx].name, p, rng.uniform(0.0, 2.0 * M_PI)));
        }
      }
      if (!ok) throw std::runtime_error("object placement failed after 1000 rejection samples");
    }

    const char* templates[2] = {"Move the %s to the %s.", "Put the %s on the %s."};
    char buf[128];
    std::snprintf(buf, sizeof(buf), templates[rng.uniform_index(2)], phrase.c_str(),
                  task.region.c_str());
    task.instruction = buf;

    for (const auto& obj : task.scene.objects)
      if (obj.attributes.count(attribute)) task.expected_objects.push_back(obj.name);
    std::sort(task.expected_objects.begin(), task.expected_objects.end());

    tasks.push_back(std::move(task));
  }
  return tasks;
}

Scene make_bottle_scene() {
  Scene scene = make_desk_scene();
  SceneObject bottle;
  bottle.name = "detergent bottle";
  bottle.shape = CylinderShape{0.045, 0.22};
  bottle.attributes = {"container", "plastic"};
  bottle.pose.position = Eigen::Vector3d(0.05, 0.25, 0.11);
  const Eigen::Vector3d p = bottle.pose.position;
  bottle.part_labels["cap"] =
      Aabb(Eigen::Vector3d(p.x() - 0.03, p.y() - 0.03, 0.18),
           Eigen::Vector3d(p.x() + 0.03, p.y() + 0.03, 0.228));
  scene.objects.push_back(bottle);
  return scene;
}

Scene make_trash_scene(int n_items) {
  Scene scene = make_desk_scene();
  SceneObject bin;
  bin.name = "trash can";
  bin.shape = BoxShape{{0.24, 0.24, 0.34}};
  bin.attributes = {"bin", "metallic"};
  bin.pose.position = Eigen::Vector3d(0.0, 0.38, 0.17);
  bin.part_labels["lid"] = Aabb(Eigen::Vector3d(-0.10, 0.28, 0.30), Eigen::Vector3d(0.10, 0.48, 0.345));
  bin.part_labels["push pedal"] =
      Aabb(Eigen::Vector3d(-0.05, 0.25, 0.0), Eigen::Vector3d(0.05, 0.29, 0.05));
  scene.objects.push_back(bin);

  const char* items[4] = {"banana", "apple", "sprite can", "chalkboard eraser"};
  const Eigen::Vector3d spots[4] = {{-0.30, 0.18, 0.0}, {-0.12, 0.14, 0.0},
                                    {-0.45, 0.25, 0.0}, {-0.22, 0.30, 0.0}};
  for (int i = 0; i < std::min(n_items, 4); ++i)
    scene.objects.push_back(spawn_catalog_object(items[i], spots[i]));
  return scene;
}

}  // namespace bimanip
