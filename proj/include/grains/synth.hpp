#pragma once

#include <algorithm>
#include <cmath>
#include <random>
#include <string>
#include <vector>

#include "grains/error.hpp"
#include "grains/hierarchy.hpp"
#include "grains/scene_model.hpp"

namespace grains {

struct Range {
  double lo = 0.0;
  double hi = 0.0;
};

// Footprint and height bounds for one template category.
struct CategorySpec {
  std::string name;
  Range size_x, size_y, size_z;
};

// Procedural bedroom template: a bed flanked by two nightstands (lamps on
// top), a wardrobe, a desk with chair and computer, an optional dresser with
// a tv, and an optional corner plant. Every wall group sits on its own wall.
struct TemplateConfig {
  RoomType room_type = RoomType::bedroom;
  Range room_width{3.6, 5.0};
  Range room_depth{3.6, 5.0};
  double wall_height = 2.7;
  double p_lamp = 0.9;
  double p_wardrobe = 0.85;
  double p_desk = 0.8;
  double p_computer = 0.8;
  double p_dresser = 0.5;
  double p_tv = 0.7;
  double p_plant = 0.4;
  double wall_margin = 0.05;  // clearance from room corners along a wall
  std::size_t max_attempts = 200;
  std::vector<CategorySpec> categories = {
      {"bed", {1.4, 1.8}, {1.9, 2.1}, {0.45, 0.6}},
      {"nightstand", {0.42, 0.5}, {0.38, 0.45}, {0.5, 0.6}},
      {"lamp", {0.25, 0.32}, {0.25, 0.32}, {0.4, 0.55}},
      {"wardrobe", {1.0, 1.6}, {0.55, 0.65}, {1.9, 2.2}},
      {"desk", {1.0, 1.4}, {0.5, 0.7}, {0.72, 0.78}},
      {"chair", {0.42, 0.5}, {0.42, 0.5}, {0.85, 1.0}},
      {"computer", {0.35, 0.5}, {0.15, 0.25}, {0.35, 0.45}},
      {"dresser", {0.9, 1.2}, {0.42, 0.5}, {0.75, 0.9}},
      {"tv", {0.7, 0.85}, {0.12, 0.18}, {0.45, 0.55}},
      {"plant", {0.3, 0.4}, {0.3, 0.4}, {0.6, 1.0}},
  };

  const CategorySpec& spec(const std::string& name) const {
    for (const auto& c : categories) {
      if (c.name == name) return c;
    }
    throw Error("template has no category '" + name + "'");
  }

  std::vector<std::string> category_names() const {
    std::vector<std::string> out;
    for (const auto& c : categories) out.push_back(c.name);
    return out;
  }
};

// Relations the generator put into each scene, by object id.
struct SynthManifest {
  std::vector<std::vector<SupportPair>> support;
  std::vector<std::vector<SurroundGroup>> surround;  // surrounders unordered
};

namespace detail {

class TemplateSampler {
 public:
  TemplateSampler(const TemplateConfig& t, std::uint64_t seed) : t_(t), rng_(seed) {}

  double uniform(Range r) { return r.lo == r.hi ? r.lo : std::uniform_real_distribution<double>(r.lo, r.hi)(rng_); }
  bool chance(double p) { return std::uniform_real_distribution<double>(0.0, 1.0)(rng_) < p; }

  struct Dims {
    double sx, sy, sz;
  };
  Dims dims(const std::string& cat) {
    const auto& s = t_.spec(cat);
    return {uniform(s.size_x), uniform(s.size_y), uniform(s.size_z)};
  }

  std::mt19937_64& rng() { return rng_; }

 private:
  const TemplateConfig& t_;
  std::mt19937_64 rng_;
};

// Group of objects laid out in a wall-aligned frame: x along the wall,
// y into the room, origin at the group's left end on the wall face.
struct GroupItem {
  std::string category;
  double x, y;  // center in group frame
  double sx, sy, sz;
  double elevation;
  double rel_angle;  // w.r.t. the wall frame
  int supporter = -1;  // index within the group
};

struct Group {
  std::string name;
  std::vector<GroupItem> items;
  double extent = 0.0;  // along the wall
  std::vector<std::array<int, 3>> surround;  // central, a, b
};

inline bool footprints_overlap(const OBB& a, const OBB& b) { return footprint_intersection(a, b) > 1e-9; }

inline bool inside_room(const OBB& b, const Room& room) {
  for (auto c : b.corners()) {
    if (c.x < -1e-9 || c.y < -1e-9 || c.x > room.width + 1e-9 || c.y > room.depth + 1e-9) return false;
  }
  return true;
}

}  // namespace detail

inline void check_template(const TemplateConfig& t) {
  if (!(t.room_width.lo > 0 && t.room_width.lo <= t.room_width.hi && t.room_depth.lo > 0 &&
        t.room_depth.lo <= t.room_depth.hi && t.wall_height > 0)) {
    throw Error("infeasible template: room size ranges must be positive and ordered");
  }
  for (const auto& c : t.categories) {
    for (const Range& r : {c.size_x, c.size_y, c.size_z}) {
      if (!(r.lo > 0 && r.lo <= r.hi)) throw Error("infeasible template: size range of '" + c.name + "' must be positive and ordered");
    }
  }
  const double shortest = std::min(t.room_width.lo, t.room_depth.lo);
  const double bed_group = t.spec("bed").size_x.hi + 2 * t.spec("nightstand").size_x.hi + 2 * t.wall_margin;
  if (bed_group > shortest) {
    throw Error("infeasible template: bed with nightstands needs " + std::to_string(bed_group) +
                " m of wall but the shortest wall is " + std::to_string(shortest) + " m");
  }
  if (t.spec("bed").size_y.hi > shortest) {
    throw Error("infeasible template: bed length exceeds the shortest room side");
  }
}

// Deterministic given (template, seed). Returns scenes over a vocabulary
// ordered by category frequency, with the relations the generator placed.
inline std::pair<Corpus, SynthManifest> synthesize_corpus_with_manifest(const TemplateConfig& t, std::uint64_t seed,
                                                                        std::size_t count) {
  if (count == 0) throw Error("synthesize_corpus: count must be positive");
  check_template(t);
  const Vocabulary declared(t.category_names());
  detail::TemplateSampler rs(t, seed);
  Corpus corpus{t.room_type, declared, {}};
  SynthManifest manifest;

  for (std::size_t si = 0; si < count; ++si) {
    using detail::GroupItem;
    const double w = rs.uniform(t.room_width);
    const double d = rs.uniform(t.room_depth);
    Room room = Room::rectangular(w, d, t.wall_height);

    std::vector<detail::Group> groups;
    {
      detail::Group g{"bed", {}, 0.0, {}};
      const auto bed = rs.dims("bed");
      const auto ns = rs.dims("nightstand");
      // Both nightstands share base dimensions up to a small jitter.
      const double j = 0.02;
      const double ns2x = std::clamp(ns.sx + rs.uniform({-j, j}), t.spec("nightstand").size_x.lo, t.spec("nightstand").size_x.hi);
      g.items.push_back({"nightstand", ns.sx / 2, ns.sy / 2, ns.sx, ns.sy, ns.sz, 0.0, 0.0});
      g.items.push_back({"bed", ns.sx + bed.sx / 2, bed.sy / 2, bed.sx, bed.sy, bed.sz, 0.0, 0.0});
      g.items.push_back({"nightstand", ns.sx + bed.sx + ns2x / 2, ns.sy / 2, ns2x, ns.sy, ns.sz, 0.0, 0.0});
      g.surround.push_back({1, 0, 2});
      for (int k : {0, 2}) {
        if (!rs.chance(t.p_lamp)) continue;
        const auto lamp = rs.dims("lamp");
        const auto& base = g.items[static_cast<std::size_t>(k)];
        const double jx = rs.uniform({-0.03, 0.03}), jy = rs.uniform({-0.03, 0.03});
        g.items.push_back({"lamp", base.x + jx, base.y + jy, lamp.sx, lamp.sy, lamp.sz, base.sz, 0.0, k});
      }
      g.extent = ns.sx + bed.sx + ns2x;
      groups.push_back(std::move(g));
    }
    if (rs.chance(t.p_wardrobe)) {
      const auto wr = rs.dims("wardrobe");
      groups.push_back({"wardrobe", {{"wardrobe", wr.sx / 2, wr.sy / 2, wr.sx, wr.sy, wr.sz, 0.0, 0.0}}, wr.sx, {}});
    }
    if (rs.chance(t.p_desk)) {
      detail::Group g{"desk", {}, 0.0, {}};
      const auto desk = rs.dims("desk");
      const auto chair = rs.dims("chair");
      g.items.push_back({"desk", desk.sx / 2, desk.sy / 2, desk.sx, desk.sy, desk.sz, 0.0, 0.0});
      const double gap = rs.chance(0.5) ? 0.0 : rs.uniform({0.1, 0.3});
      const double cx = desk.sx / 2 + rs.uniform({-0.2, 0.2}) * (desk.sx - chair.sx) / desk.sx;
      g.items.push_back({"chair", cx, desk.sy + gap + chair.sy / 2, chair.sx, chair.sy, chair.sz, 0.0, kPi});
      if (rs.chance(t.p_computer)) {
        const auto pc = rs.dims("computer");
        const double px = desk.sx / 2 + rs.uniform({-0.25, 0.25}) * (desk.sx - pc.sx);
        g.items.push_back({"computer", px, pc.sy / 2 + 0.05, pc.sx, pc.sy, pc.sz, desk.sz, 0.0, 0});
      }
      g.extent = desk.sx;
      groups.push_back(std::move(g));
    }
    if (rs.chance(t.p_dresser)) {
      detail::Group g{"dresser", {}, 0.0, {}};
      const auto dr = rs.dims("dresser");
      g.items.push_back({"dresser", dr.sx / 2, dr.sy / 2, dr.sx, dr.sy, dr.sz, 0.0, 0.0});
      if (rs.chance(t.p_tv)) {
        const auto tv = rs.dims("tv");
        g.items.push_back({"tv", dr.sx / 2 + rs.uniform({-0.05, 0.05}), dr.sy / 2, tv.sx, tv.sy, tv.sz, dr.sz, 0.0, 0});
      }
      g.extent = dr.sx;
      groups.push_back(std::move(g));
    }
    const bool want_plant = rs.chance(t.p_plant);
    const auto plant = rs.dims("plant");
    const double plant_angle = rs.uniform({-kPi / 4, kPi / 4});

    std::vector<SceneObject> objects;
    std::vector<SupportPair> support;
    std::vector<SurroundGroup> surround;
    bool placed = false;
    for (std::size_t attempt = 0; attempt < t.max_attempts && !placed; ++attempt) {
      std::vector<int> walls{0, 1, 2, 3};
      std::shuffle(walls.begin(), walls.end(), rs.rng());
      objects.clear();
      support.clear();
      surround.clear();
      bool ok = true;
      for (std::size_t gi = 0; gi < groups.size() && ok; ++gi) {
        const auto& g = groups[gi];
        const OBB& wall = room.walls[static_cast<std::size_t>(walls[gi])];
        const double len = wall.size_x;
        const double slack = len - g.extent - 2 * t.wall_margin;
        if (slack < 0) {
          ok = false;
          break;
        }
        const double s0 = t.wall_margin + rs.uniform({0.0, slack});
        // Wall frame: origin at the wall's inner-face left end.
        const Vec2 face = wall.center() + wall.axis_y() * (0.5 * wall.size_y);
        const Vec2 origin = face - wall.axis_x() * (0.5 * len);
        const std::size_t first = objects.size();
        for (const auto& it : g.items) {
          const Vec2 c = origin + wall.axis_x() * (s0 + it.x) + wall.axis_y() * it.y;
          SceneObject o;
          o.id = "o" + std::to_string(objects.size());
          o.category = *declared.index_of(it.category);
          o.obb = OBB{c.x, c.y, it.elevation, it.sx, it.sy, it.sz, normalize_angle(wall.angle + it.rel_angle)};
          if (!detail::inside_room(o.obb, room)) ok = false;
          objects.push_back(std::move(o));
          if (it.supporter >= 0) support.push_back({objects[first + static_cast<std::size_t>(it.supporter)].id, objects.back().id});
        }
        for (const auto& s : g.surround) {
          surround.push_back({objects[first + static_cast<std::size_t>(s[0])].id, objects[first + static_cast<std::size_t>(s[1])].id,
                              objects[first + static_cast<std::size_t>(s[2])].id});
        }
      }
      if (ok && want_plant) {
        const int corner = static_cast<int>(std::uniform_int_distribution<int>(0, 3)(rs.rng()));
        const double off = 0.05 + 0.5 * std::max(plant.sx, plant.sy) * std::sqrt(2.0);
        const double px = (corner == 1 || corner == 2) ? w - off : off;
        const double py = (corner >= 2) ? d - off : off;
        SceneObject o{"o" + std::to_string(objects.size()), *declared.index_of("plant"),
                      OBB{px, py, 0.0, plant.sx, plant.sy, plant.sz, plant_angle}};
        objects.push_back(std::move(o));
      }
      // Floor-level footprints must not overlap one another.
      for (std::size_t a = 0; a < objects.size() && ok; ++a) {
        if (!detail::inside_room(objects[a].obb, room)) ok = false;
        for (std::size_t b = a + 1; b < objects.size() && ok; ++b) {
          if (objects[a].obb.elevation > 0 || objects[b].obb.elevation > 0) continue;
          if (detail::footprints_overlap(objects[a].obb, objects[b].obb)) ok = false;
        }
      }
      placed = ok;
    }
    if (!placed) {
      throw Error("infeasible template: could not place " + std::to_string(groups.size()) +
                  " wall groups without overlap in a " + std::to_string(w) + " x " + std::to_string(d) +
                  " m room after " + std::to_string(t.max_attempts) + " attempts");
    }
    corpus.scenes.push_back(Scene{room, std::move(objects), t.room_type});
    manifest.support.push_back(std::move(support));
    manifest.surround.push_back(std::move(surround));
  }
  return {remap_corpus(corpus, build_vocabulary(corpus, 0.0)), std::move(manifest)};
}

inline Corpus synthesize_corpus(const TemplateConfig& t, std::uint64_t seed, std::size_t count) {
  return synthesize_corpus_with_manifest(t, seed, count).first;
}

}  // namespace grains
