#pragma once

#include <cmath>
#include <cstdio>
#include <fstream>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "grains/error.hpp"
#include "grains/geometry.hpp"
#include "grains/relpos.hpp"
#include "grains/scene_model.hpp"
#include "grains/synth.hpp"
#include "grains/tree.hpp"

namespace grains {

inline constexpr std::string_view kPlacedFormat = "grains-placed/1";
inline constexpr std::string_view kCatalogFormat = "grains-catalog/1";

struct Placement {
  std::string id;
  std::size_t category = 0;
  OBB obb;  // room frame
  std::optional<std::string> model_ref;

  bool operator==(const Placement&) const = default;
};

// A realized scene: one placement per non-wall/floor leaf, plus the tree it
// came from with leaf boxes set to their realized poses.
struct PlacedScene {
  Room room;
  RoomType room_type = RoomType::bedroom;
  Vocabulary vocab;
  std::vector<Placement> placements;
  SceneTree source_tree;

  bool operator==(const PlacedScene&) const = default;
};

struct RealizeOptions {
  bool snap = true;
  double wall_height = 2.7;
};

namespace detail {

struct LocalLayout {
  std::vector<std::pair<TreePath, OBB>> leaves;  // leaves[0] is the reference leaf
  OBB aggregate;
};

inline void move_layout(LocalLayout& l, const Pose2& motion, double dz) {
  for (auto& [p, b] : l.leaves) {
    b = motion.apply(b);
    b.elevation += dz;
  }
  l.aggregate = motion.apply(l.aggregate);
  l.aggregate.elevation += dz;
}

inline OBB unit_leaf_box(const SceneNode& n, const TreePath& path) {
  const auto& b = n.object.obb;
  if (!(b.size_x > 0 && b.size_y > 0 && b.size_z > 0)) {
    throw Error("cannot realize node '" + path_to_string(path) + "': leaf sizes must be positive");
  }
  return OBB{0.0, 0.0, 0.0, b.size_x, b.size_y, b.size_z, 0.0};
}

// Bottom level of non-reference children: on top of a supporter, on top of
// the floor when the reference chain ends at the floor, else level with the
// reference child.
inline double sibling_bottom(const SceneNode& n, const OBB& ref_aggregate, const OBB& ref_leaf, bool ref_is_floor) {
  if (n.kind == NodeKind::support) return ref_aggregate.top();
  if (ref_is_floor) return ref_leaf.top();
  return ref_aggregate.elevation;
}

// Subtree laid out in its reference child's frame (relative encodings).
inline LocalLayout layout_relative(const SceneNode& n, TreePath& path, PositionMode mode, bool snap,
                                   std::size_t floor_cat) {
  if (n.is_leaf()) {
    const OBB b = unit_leaf_box(n, path);
    return {{{path, b}}, b};
  }
  if (n.relpos.size() + 1 != n.children.size()) {
    throw Error("cannot realize node '" + path_to_string(path) + "': relpos count does not match children");
  }
  path.push_back(0);
  LocalLayout out = layout_relative(n.children[0], path, mode, snap, floor_cat);
  path.pop_back();
  const OBB ref = out.aggregate;
  const OBB ref_leaf = out.leaves.front().second;
  const bool ref_is_floor = reference_leaf(n.children[0]).object.category == floor_cat;
  const double bottom = sibling_bottom(n, ref, ref_leaf, ref_is_floor);
  std::vector<OBB> aggregates{ref};
  for (std::size_t i = 1; i < n.children.size(); ++i) {
    path.push_back(i);
    LocalLayout child = layout_relative(n.children[i], path, mode, snap, floor_cat);
    OBB target;
    try {
      target = place_from_vector(ref, n.relpos[i - 1],
                                 {child.aggregate.size_x, child.aggregate.size_y, child.aggregate.size_z}, mode, snap);
    } catch (const Error& e) {
      throw Error("cannot realize node '" + path_to_string(path) + "': " + e.what());
    }
    path.pop_back();
    const Pose2 motion = pose_of(target).compose(pose_of(child.aggregate).inverse());
    move_layout(child, motion, bottom - child.aggregate.elevation);
    aggregates.push_back(child.aggregate);
    out.leaves.insert(out.leaves.end(), child.leaves.begin(), child.leaves.end());
  }
  out.aggregate = hull_in_frame(aggregates, ref.angle);
  return out;
}

// Absolute encodings: non-reference children carry room-frame poses and a
// reference child inherits the pose given to its parent.
inline void layout_absolute(const SceneNode& n, TreePath& path, Pose2 pose, double bottom, std::size_t floor_cat,
                            std::vector<std::pair<TreePath, OBB>>& out) {
  if (n.is_leaf()) {
    OBB b = unit_leaf_box(n, path);
    b = pose.apply(b);
    b.elevation = bottom;
    out.emplace_back(path, b);
    return;
  }
  if (n.relpos.size() + 1 != n.children.size()) {
    throw Error("cannot realize node '" + path_to_string(path) + "': relpos count does not match children");
  }
  const std::size_t first = out.size();
  path.push_back(0);
  layout_absolute(n.children[0], path, pose, bottom, floor_cat, out);
  path.pop_back();
  std::vector<OBB> ref_boxes;
  for (std::size_t k = first; k < out.size(); ++k) ref_boxes.push_back(out[k].second);
  const OBB ref = hull_in_frame(ref_boxes, ref_boxes.front().angle);
  const bool ref_is_floor = reference_leaf(n.children[0]).object.category == floor_cat;
  const double b = sibling_bottom(n, ref, out[first].second, ref_is_floor);
  for (std::size_t i = 1; i < n.children.size(); ++i) {
    const auto& v = n.relpos[i - 1];
    path.push_back(i);
    layout_absolute(n.children[i], path, Pose2{{v[0], v[1]}, normalize_angle(v[2])}, b, floor_cat, out);
    path.pop_back();
  }
}

}  // namespace detail

// Floor anchored at the room center with its top at height 0; every other
// leaf follows from the relpos vectors. Room dimensions come from the floor.
inline PlacedScene realize_placements(const SceneTree& tree, const Vocabulary& vocab, const RealizeOptions& opts = {}) {
  const std::size_t floor_cat = vocab.floor_index();
  std::vector<std::pair<TreePath, OBB>> leaves;
  TreePath path;
  if (tree.position_mode == PositionMode::absolute) {
    const auto& f = reference_leaf(tree.root).object.obb;
    if (!(f.size_x > 0 && f.size_y > 0 && f.size_z > 0)) throw Error("cannot realize: floor sizes must be positive");
    detail::layout_absolute(tree.root, path, Pose2{{0.5 * f.size_x, 0.5 * f.size_y}, 0.0}, -f.size_z, floor_cat, leaves);
  } else {
    detail::LocalLayout l = detail::layout_relative(tree.root, path, tree.position_mode, opts.snap, floor_cat);
    const OBB f = l.leaves.front().second;
    const Pose2 anchor{{0.5 * f.size_x, 0.5 * f.size_y}, 0.0};
    detail::move_layout(l, anchor.compose(pose_of(f).inverse()), -f.size_z - f.elevation);
    leaves = std::move(l.leaves);
  }
  PlacedScene out;
  out.vocab = vocab;
  out.source_tree = tree;
  const OBB& floor_box = leaves.front().second;
  out.room = Room::rectangular(floor_box.size_x, floor_box.size_y, opts.wall_height);
  for (const auto& [p, b] : leaves) {
    SceneNode& leaf = node_at(out.source_tree.root, p);
    leaf.object.obb = b;
    if (leaf.object.category < vocab.size() && !vocab.is_special(leaf.object.category)) {
      out.placements.push_back({leaf.object.id, leaf.object.category, b, std::nullopt});
    }
  }
  return out;
}

inline std::size_t count_category_leaves(const SceneTree& t, std::size_t category) {
  std::size_t n = 0;
  for (const auto* o : leaf_objects(t.root)) n += o->category == category;
  return n;
}

// Scene view of a placed scene (objects only, room from the floor).
inline Scene to_scene(const PlacedScene& p) {
  Scene s{p.room, {}, p.room_type};
  for (const auto& pl : p.placements) s.objects.push_back({pl.id, pl.category, pl.obb});
  return s;
}

// ---------------------------------------------------------------------------
// Catalog retrieval

struct CatalogEntry {
  std::string id;
  std::string category;
  double size_x, size_y, size_z;
};

struct ModelCatalog {
  std::vector<CatalogEntry> entries;
};

// Same-category entry minimizing squared log-dimension distance; ties go to
// the lexicographically lowest id.
inline std::string retrieve_model(const ModelCatalog& catalog, const std::string& category, double sx, double sy, double sz) {
  const CatalogEntry* best = nullptr;
  double best_d = INFINITY;
  for (const auto& e : catalog.entries) {
    if (e.category != category) continue;
    const double d = std::pow(std::log(sx) - std::log(e.size_x), 2) + std::pow(std::log(sy) - std::log(e.size_y), 2) +
                     std::pow(std::log(sz) - std::log(e.size_z), 2);
    if (d < best_d || (d == best_d && best && e.id < best->id)) {
      best_d = d;
      best = &e;
    }
  }
  if (!best) throw NotFoundError("catalog has no entry of category '" + category + "'");
  return best->id;
}

inline void attach_models(PlacedScene& s, const ModelCatalog& catalog) {
  for (auto& p : s.placements) {
    p.model_ref = retrieve_model(catalog, s.vocab.name(p.category), p.obb.size_x, p.obb.size_y, p.obb.size_z);
  }
}

inline void check_catalog(const ModelCatalog& c) {
  std::set<std::string> ids;
  for (const auto& e : c.entries) {
    if (!ids.insert(e.id).second) throw ParseError("duplicate catalog id '" + e.id + "'");
    if (!(e.size_x > 0 && e.size_y > 0 && e.size_z > 0)) throw ParseError("catalog entry '" + e.id + "' has non-positive dims");
  }
}

inline void save_catalog(const ModelCatalog& c, const std::string& path) {
  std::ofstream os(path);
  if (!os) throw Error("cannot write catalog '" + path + "'");
  os << json{{"format", kCatalogFormat}}.dump() << '\n';
  for (const auto& e : c.entries) {
    os << json{{"id", e.id}, {"category", e.category}, {"dims", {e.size_x, e.size_y, e.size_z}}}.dump() << '\n';
  }
}

inline ModelCatalog load_catalog(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw Error("cannot read catalog '" + path + "'");
  ModelCatalog c;
  std::string line;
  std::size_t line_no = 0;
  bool header = true;
  while (std::getline(is, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const json j = json::parse(line);
      if (header) {
        if (j.at("format").get<std::string>() != kCatalogFormat) throw ParseError("unsupported catalog format");
        header = false;
        continue;
      }
      const auto& d = j.at("dims");
      c.entries.push_back({j.at("id").get<std::string>(), j.at("category").get<std::string>(), d.at(0).get<double>(),
                           d.at(1).get<double>(), d.at(2).get<double>()});
    } catch (const json::exception& e) {
      throw ParseError("catalog line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  check_catalog(c);
  return c;
}

// A few entries per template category with dimensions drawn from its ranges.
inline ModelCatalog synthesize_catalog(const TemplateConfig& t, std::uint64_t seed, std::size_t per_category) {
  std::mt19937_64 rng(seed);
  ModelCatalog c;
  for (const auto& spec : t.categories) {
    for (std::size_t i = 0; i < per_category; ++i) {
      auto u = [&](Range r) { return std::uniform_real_distribution<double>(r.lo, r.hi)(rng); };
      char id[64];
      std::snprintf(id, sizeof id, "%s-%03zu", spec.name.c_str(), i);
      c.entries.push_back({id, spec.name, u(spec.size_x), u(spec.size_y), u(spec.size_z)});
    }
  }
  return c;
}

// ---------------------------------------------------------------------------
// Top-view SVG

namespace detail {

inline std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3f", v);
  return buf;
}

inline std::string xml_escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

inline std::string category_color(std::size_t i) {
  static const char* palette[] = {"#4e79a7", "#f28e2b", "#e15759", "#76b7b2", "#59a14f", "#edc948",
                                  "#b07aa1", "#ff9da7", "#9c755f", "#bab0ac", "#1f77b4", "#aec7e8"};
  return palette[i % (sizeof palette / sizeof palette[0])];
}

}  // namespace detail

struct SvgOptions {
  double pixels_per_meter = 100.0;
  double margin = 20.0;
};

// Room frame y points up; the SVG is flipped so the south wall is at the
// bottom. Objects are drawn bottom-up by elevation so stacked items show.
inline std::string render_topview(const PlacedScene& s, const SvgOptions& o = {}) {
  const double k = o.pixels_per_meter, m = o.margin;
  auto px = [&](Vec2 p) { return std::pair{m + p.x * k, m + (s.room.depth - p.y) * k}; };
  std::ostringstream os;
  const double W = 2 * m + s.room.width * k, H = 2 * m + s.room.depth * k;
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << detail::fmt(W) << "\" height=\"" << detail::fmt(H)
     << "\" viewBox=\"0 0 " << detail::fmt(W) << ' ' << detail::fmt(H) << "\">\n";
  os << "<rect class=\"room\" x=\"" << detail::fmt(m) << "\" y=\"" << detail::fmt(m) << "\" width=\""
     << detail::fmt(s.room.width * k) << "\" height=\"" << detail::fmt(s.room.depth * k)
     << "\" fill=\"#fafafa\" stroke=\"#333\" stroke-width=\"3\"/>\n";
  std::vector<std::size_t> order(s.placements.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return s.placements[a].obb.elevation < s.placements[b].obb.elevation;
  });
  for (auto i : order) {
    const auto& p = s.placements[i];
    const std::string name = s.vocab.name(p.category);
    os << "<g class=\"object\" data-id=\"" << detail::xml_escape(p.id) << "\" data-category=\"" << detail::xml_escape(name)
       << "\">";
    os << "<polygon points=\"";
    const auto corners = p.obb.corners();
    for (std::size_t c = 0; c < 4; ++c) {
      const auto [x, y] = px(corners[c]);
      os << (c ? " " : "") << detail::fmt(x) << ',' << detail::fmt(y);
    }
    os << "\" fill=\"" << detail::category_color(p.category) << "\" fill-opacity=\"0.6\" stroke=\"#222\"/>";
    const auto [tx, ty] = px(p.obb.center());
    os << "<text x=\"" << detail::fmt(tx) << "\" y=\"" << detail::fmt(ty)
       << "\" font-size=\"11\" text-anchor=\"middle\">" << detail::xml_escape(name) << "</text></g>\n";
  }
  os << "</svg>\n";
  return os.str();
}

// ---------------------------------------------------------------------------
// Placed-scene files

inline json placed_to_json(const PlacedScene& s) {
  json pl = json::array();
  for (const auto& p : s.placements) {
    json j = object_to_json({p.id, p.category, p.obb}, s.vocab);
    j["category_index"] = p.category;
    if (p.model_ref) j["model_ref"] = *p.model_ref;
    pl.push_back(std::move(j));
  }
  return json{{"format", kPlacedFormat},
              {"room_type", to_string(s.room_type)},
              {"room", {{"width", s.room.width}, {"depth", s.room.depth}, {"wall_height", s.room.wall_height}}},
              {"category_names", s.vocab.object_names()},
              {"placements", std::move(pl)},
              {"tree", tree_to_json(s.source_tree)}};
}

inline PlacedScene placed_from_json(const json& j) {
  try {
    if (j.at("format").get<std::string>() != kPlacedFormat) {
      throw ParseError("unsupported placed-scene format '" + j.at("format").get<std::string>() + "'");
    }
    PlacedScene s;
    s.room_type = room_type_from_string(j.at("room_type").get<std::string>());
    const auto& r = j.at("room");
    s.room = Room::rectangular(r.at("width").get<double>(), r.at("depth").get<double>(), r.at("wall_height").get<double>());
    s.vocab = Vocabulary(j.at("category_names").get<std::vector<std::string>>());
    for (const auto& pj : j.at("placements")) {
      Placement p;
      p.id = pj.at("id").get<std::string>();
      p.category = pj.at("category_index").get<std::size_t>();
      if (p.category >= s.vocab.size() || s.vocab.name(p.category) != pj.at("category").get<std::string>()) {
        throw ParseError("placement '" + p.id + "' category does not match the vocabulary");
      }
      const auto& c = pj.at("center");
      const auto& z = pj.at("size");
      p.obb = OBB{c.at(0).get<double>(), c.at(1).get<double>(), pj.at("elevation").get<double>(), z.at(0).get<double>(),
                  z.at(1).get<double>(), z.at(2).get<double>(), pj.at("angle").get<double>()};
      if (pj.contains("model_ref")) p.model_ref = pj.at("model_ref").get<std::string>();
      s.placements.push_back(std::move(p));
    }
    s.source_tree = tree_from_json(j.at("tree"));
    return s;
  } catch (const json::exception& e) {
    throw ParseError(std::string("placed-scene record: ") + e.what());
  }
}

inline void export_scene(const PlacedScene& s, const std::string& path) {
  std::ofstream os(path);
  if (!os) throw Error("cannot write scene file '" + path + "'");
  os << placed_to_json(s).dump() << '\n';
}

inline PlacedScene import_scene(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw Error("cannot read scene file '" + path + "'");
  std::stringstream ss;
  ss << is.rdbuf();
  json j;
  try {
    j = json::parse(ss.str());
  } catch (const json::exception& e) {
    throw ParseError("scene file '" + path + "': " + e.what());
  }
  return placed_from_json(j);
}

}  // namespace grains
