#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "grains/error.hpp"
#include "grains/relpos.hpp"
#include "grains/scene_model.hpp"
#include "grains/tree.hpp"

namespace grains {

struct SupportPair {
  std::string supporter;
  std::string supported;
  bool operator==(const SupportPair&) const = default;
  auto operator<=>(const SupportPair&) const = default;
};

struct SurroundGroup {
  std::string central;
  std::string first;   // nearer surrounder
  std::string second;
  bool operator==(const SurroundGroup&) const = default;
};

namespace detail {

inline std::size_t index_of_id(const Scene& s, const std::string& id) {
  for (std::size_t i = 0; i < s.objects.size(); ++i) {
    if (s.objects[i].id == id) return i;
  }
  throw NotFoundError("no object with id '" + id + "'");
}

// supporter index per object (or npos), from id pairs.
inline std::vector<std::size_t> supporter_table(const Scene& s, const std::vector<SupportPair>& pairs) {
  std::vector<std::size_t> sup(s.objects.size(), static_cast<std::size_t>(-1));
  for (const auto& p : pairs) sup[index_of_id(s, p.supported)] = index_of_id(s, p.supporter);
  return sup;
}

// Which side of the central box's long axis a point lies on (-1, 0, +1).
inline int long_axis_side(const OBB& central, Vec2 p) {
  const Vec2 l = central.to_local(p);
  const double v = central.size_x >= central.size_y ? l.y : l.x;
  return v > 0 ? 1 : (v < 0 ? -1 : 0);
}

}  // namespace detail

// Pairs (supporter, supported). Each object has at most one supporter, the
// one with the smallest vertical gap.
inline std::vector<SupportPair> detect_support_pairs(const Scene& scene, const RelationConfig& cfg = {}) {
  std::vector<SupportPair> out;
  const auto& objs = scene.objects;
  for (std::size_t b = 0; b < objs.size(); ++b) {
    std::optional<std::size_t> best;
    double best_key = INFINITY;
    for (std::size_t a = 0; a < objs.size(); ++a) {
      if (a == b) continue;
      const OBB& sa = objs[a].obb;
      const OBB& sb = objs[b].obb;
      const double overlap = footprint_intersection(sa, sb);
      double key;
      if (cfg.support_as_overlap) {
        if (!(sa.footprint_area() > sb.footprint_area())) continue;
        if (overlap < cfg.support_overlap_min * sb.footprint_area()) continue;
        key = -overlap / sb.footprint_area();
      } else {
        const double gap = sb.elevation - sa.top();
        if (std::abs(gap) > cfg.support_gap_max) continue;
        if (overlap < cfg.support_overlap_min * sb.footprint_area()) continue;
        key = std::abs(gap);
      }
      if (key < best_key) {
        best_key = key;
        best = a;
      }
    }
    if (best) out.push_back({objs[*best].id, objs[b].id});
  }
  return out;
}

// Same-category, similar-size pairs flanking a central object on opposite
// sides of its long axis. Supported objects never take part.
inline std::vector<SurroundGroup> detect_surround_groups(const Scene& scene, const RelationConfig& cfg,
                                                         const std::vector<SupportPair>& support) {
  const auto& objs = scene.objects;
  const auto sup = detail::supporter_table(scene, support);
  std::vector<std::size_t> order;
  for (std::size_t i = 0; i < objs.size(); ++i) {
    if (sup[i] == static_cast<std::size_t>(-1)) order.push_back(i);
  }
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return objs[a].obb.footprint_area() > objs[b].obb.footprint_area();
  });
  std::vector<bool> used(objs.size(), false);
  std::vector<SurroundGroup> out;
  for (std::size_t c : order) {
    if (used[c]) continue;
    const OBB& central = objs[c].obb;
    struct Cand {
      std::size_t idx;
      double dist;
      int side;
    };
    std::map<std::size_t, std::vector<Cand>> by_category;
    for (std::size_t b : order) {
      if (b == c || used[b]) continue;
      const double d = distance_to_footprint(central, objs[b].obb.center());
      const int side = detail::long_axis_side(central, objs[b].obb.center());
      if (d > cfg.surround_radius_max || side == 0) continue;
      by_category[objs[b].category].push_back({b, d, side});
    }
    std::optional<std::pair<Cand, Cand>> best;
    double best_score = INFINITY;
    for (auto& [cat, cands] : by_category) {
      std::stable_sort(cands.begin(), cands.end(), [](const Cand& x, const Cand& y) {
        return x.dist != y.dist ? x.dist < y.dist : x.idx < y.idx;
      });
      for (std::size_t i = 0; i < cands.size(); ++i) {
        bool found = false;
        for (std::size_t j = i + 1; j < cands.size(); ++j) {
          if (cands[j].side == cands[i].side) continue;
          const double ratio = objs[cands[j].idx].obb.footprint_area() / objs[cands[i].idx].obb.footprint_area();
          if (ratio < cfg.surround_ratio_min || ratio > cfg.surround_ratio_max) continue;
          const double score = cands[i].dist + cands[j].dist;
          if (score < best_score) {
            best_score = score;
            best = std::pair{cands[i], cands[j]};
          }
          found = true;
          break;
        }
        if (found) break;
      }
    }
    if (best) {
      used[c] = used[best->first.idx] = used[best->second.idx] = true;
      out.push_back({objs[c].id, objs[best->first.idx].id, objs[best->second.idx].id});
    }
  }
  return out;
}

// Perpendicular distance from p to the inner face of a wall.
inline double wall_distance(const OBB& wall, Vec2 p) {
  return wall.to_local(p).y - 0.5 * wall.size_y;
}

// Object id -> wall index. Stacks follow their base object and surround
// members follow the central object's base.
inline std::map<std::string, int> assign_wall_clusters(const Scene& scene, const std::vector<SupportPair>& support,
                                                       const std::vector<SurroundGroup>& surround = {}) {
  const auto& objs = scene.objects;
  const auto sup = detail::supporter_table(scene, support);
  std::vector<std::size_t> anchor(objs.size());
  for (std::size_t i = 0; i < objs.size(); ++i) {
    std::size_t b = i;
    for (std::size_t guard = 0; sup[b] != static_cast<std::size_t>(-1) && guard < objs.size(); ++guard) b = sup[b];
    anchor[i] = b;
  }
  std::map<std::size_t, std::size_t> surrounder_to_central;
  for (const auto& g : surround) {
    const auto c = detail::index_of_id(scene, g.central);
    surrounder_to_central[detail::index_of_id(scene, g.first)] = c;
    surrounder_to_central[detail::index_of_id(scene, g.second)] = c;
  }
  std::map<std::string, int> out;
  for (std::size_t i = 0; i < objs.size(); ++i) {
    std::size_t b = anchor[i];
    if (auto it = surrounder_to_central.find(b); it != surrounder_to_central.end()) b = anchor[it->second];
    const Vec2 p = objs[b].obb.center();
    int best = 0;
    double best_d = INFINITY;
    for (std::size_t w = 0; w < scene.room.walls.size(); ++w) {
      const double d = wall_distance(scene.room.walls[w], p);
      if (d < best_d - 1e-9) {
        best_d = d;
        best = static_cast<int>(w);
      }
    }
    out[objs[i].id] = best;
  }
  return out;
}

// Agglomerative nearest-center merging into binary co-occurrence nodes;
// children sorted by descending aggregate footprint area.
inline SceneNode merge_cooccurrence(std::vector<SceneNode> units, const RelationConfig& cfg) {
  if (units.empty()) throw Error("merge_cooccurrence: no units");
  std::vector<OBB> boxes;
  for (const auto& u : units) boxes.push_back(aggregate_box(u));
  while (units.size() > 1) {
    std::size_t bi = 0, bj = 1;
    double best = INFINITY;
    for (std::size_t i = 0; i < units.size(); ++i) {
      for (std::size_t j = i + 1; j < units.size(); ++j) {
        const double d = norm(boxes[i].center() - boxes[j].center());
        if (d < best) {
          best = d;
          bi = i;
          bj = j;
        }
      }
    }
    const bool swap = boxes[bj].footprint_area() > boxes[bi].footprint_area();
    std::vector<SceneNode> kids;
    kids.push_back(std::move(units[swap ? bj : bi]));
    kids.push_back(std::move(units[swap ? bi : bj]));
    SceneNode merged = make_internal(NodeKind::cooccur, std::move(kids), cfg);
    boxes[bi] = aggregate_box(merged);
    units[bi] = std::move(merged);
    units.erase(units.begin() + static_cast<std::ptrdiff_t>(bj));
    boxes.erase(boxes.begin() + static_cast<std::ptrdiff_t>(bj));
  }
  return std::move(units.front());
}

struct HierarchyInfo {
  std::vector<SupportPair> support;
  std::vector<SurroundGroup> surround;
  std::map<std::string, int> clusters;
};

// Support first, then surround, then co-occurrence, per wall cluster; each
// cluster joins its wall, and the floor plus four walls form the root.
inline SceneTree build_hierarchy(const Scene& scene, const Vocabulary& vocab, const RelationConfig& cfg = {},
                                 HierarchyInfo* info = nullptr) {
  if (scene.room.walls.size() != 4) {
    throw StructuralError("room must have exactly 4 walls, found " + std::to_string(scene.room.walls.size()));
  }
  const auto& objs = scene.objects;
  const auto support = detect_support_pairs(scene, cfg);
  const auto surround = detect_surround_groups(scene, cfg, support);
  const auto clusters = assign_wall_clusters(scene, support, surround);
  const auto sup = detail::supporter_table(scene, support);

  std::vector<std::vector<std::size_t>> supported_by(objs.size());
  for (std::size_t i = 0; i < objs.size(); ++i) {
    if (sup[i] != static_cast<std::size_t>(-1)) supported_by[sup[i]].push_back(i);
  }
  std::function<SceneNode(std::size_t)> stack_node = [&](std::size_t i) -> SceneNode {
    SceneNode leaf = SceneNode::leaf(objs[i]);
    if (supported_by[i].empty()) return leaf;
    std::vector<SceneNode> above;
    for (auto j : supported_by[i]) above.push_back(stack_node(j));
    SceneNode top = above.size() == 1 ? std::move(above.front()) : merge_cooccurrence(std::move(above), cfg);
    std::vector<SceneNode> kids;
    kids.push_back(std::move(leaf));
    kids.push_back(std::move(top));
    return make_internal(NodeKind::support, std::move(kids), cfg);
  };

  std::map<std::size_t, const SurroundGroup*> central_of;
  std::set<std::size_t> surrounders;
  for (const auto& g : surround) {
    central_of[detail::index_of_id(scene, g.central)] = &g;
    surrounders.insert(detail::index_of_id(scene, g.first));
    surrounders.insert(detail::index_of_id(scene, g.second));
  }

  std::vector<std::vector<SceneNode>> cluster_units(4);
  for (std::size_t i = 0; i < objs.size(); ++i) {
    if (sup[i] != static_cast<std::size_t>(-1) || surrounders.count(i)) continue;
    SceneNode unit;
    if (auto it = central_of.find(i); it != central_of.end()) {
      std::vector<SceneNode> kids;
      kids.push_back(stack_node(i));
      kids.push_back(stack_node(detail::index_of_id(scene, it->second->first)));
      kids.push_back(stack_node(detail::index_of_id(scene, it->second->second)));
      unit = make_internal(NodeKind::surround, std::move(kids), cfg);
    } else {
      unit = stack_node(i);
    }
    cluster_units[static_cast<std::size_t>(clusters.at(objs[i].id))].push_back(std::move(unit));
  }

  std::vector<SceneNode> root_kids;
  root_kids.push_back(SceneNode::leaf(floor_object(scene.room, vocab)));
  for (std::size_t w = 0; w < 4; ++w) {
    SceneNode wall = SceneNode::leaf(wall_object(scene.room, w, vocab));
    if (cluster_units[w].empty()) {
      root_kids.push_back(std::move(wall));
      continue;
    }
    std::vector<SceneNode> kids;
    kids.push_back(std::move(wall));
    kids.push_back(merge_cooccurrence(std::move(cluster_units[w]), cfg));
    root_kids.push_back(make_internal(NodeKind::wall, std::move(kids), cfg));
  }
  if (info) *info = {support, surround, clusters};
  return SceneTree{make_internal(NodeKind::root, std::move(root_kids), cfg), PositionMode::relative};
}

// ---------------------------------------------------------------------------
// Validation

struct Violation {
  std::string code;
  std::string path;
  std::string message;
};

struct ValidationReport {
  std::vector<Violation> violations;
  bool ok() const { return violations.empty(); }
  bool has(const std::string& code) const {
    return std::any_of(violations.begin(), violations.end(), [&](const Violation& v) { return v.code == code; });
  }
};

struct ValidationOptions {
  bool semantics = true;  // surround categories/sizes, co-occurrence order
  bool geometry = true;   // relpos consistency against leaf poses
  RelationConfig relation;
  double position_tol = 1e-6;
  // Outside the full layout only generic arity/bit/semantic checks apply.
  WallRootMode layout = WallRootMode::full;
};

inline ValidationOptions structural_only() {
  ValidationOptions o;
  o.semantics = false;
  o.geometry = false;
  return o;
}

// Never throws; every failed check becomes a violation record.
inline ValidationReport validate_tree(const SceneTree& tree, const Vocabulary& vocab,
                                      const ValidationOptions& opts = {}) {
  ValidationReport rep;
  auto add = [&](std::string code, const TreePath& p, std::string msg) {
    rep.violations.push_back({std::move(code), path_to_string(p), std::move(msg)});
  };
  auto is_leaf_cat = [&](const SceneNode& n, std::size_t cat) { return n.is_leaf() && n.object.category == cat; };

  const SceneNode& root = tree.root;
  const bool full = opts.layout == WallRootMode::full;
  if (!full) {
    const NodeKind want = opts.layout == WallRootMode::none ? NodeKind::cooccur : NodeKind::support;
    if (root.kind != want) add("root-kind", {}, "top node must be a " + to_string(want) + " node in " + to_string(opts.layout) + " layout");
  } else if (root.kind != NodeKind::root) {
    add("root-kind", {}, "top node must be a root node");
  } else {
    if (root.children.size() != 5) add("root-arity", {}, "root needs floor + 4 walls, has " + std::to_string(root.children.size()) + " children");
    if (!root.children.empty() && !is_leaf_cat(root.children[0], vocab.floor_index())) add("root-floor", {0}, "first root child must be the floor");
    for (std::size_t i = 1; i < root.children.size(); ++i) {
      const auto& c = root.children[i];
      if (!(is_leaf_cat(c, vocab.wall_index()) || c.kind == NodeKind::wall)) add("root-wall", {i}, "root child must be a wall leaf or wall node");
    }
  }

  std::set<std::string> ids;
  for_each_node(root, [&](const SceneNode& n, const TreePath& p) {
    const bool under_root = p.size() == 1;
    const bool wall_first = p.size() == 2 && p[1] == 0 && node_at(root, {p[0]}).kind == NodeKind::wall;
    if (n.is_leaf()) {
      if (!ids.insert(n.object.id).second) add("duplicate-leaf", p, "leaf id '" + n.object.id + "' repeats");
      if (n.object.category >= vocab.size()) {
        add("leaf-category", p, "category out of range");
      } else if (full && vocab.is_special(n.object.category) && !under_root && !wall_first) {
        add("misplaced-special", p, "wall/floor leaf outside its designated slot");
      }
      const auto& b = n.object.obb;
      if (!(b.size_x > 0 && b.size_y > 0 && b.size_z > 0)) add("leaf-size", p, "leaf sizes must be positive");
      return;
    }
    if (n.relpos.size() + 1 != n.children.size()) add("relpos-count", p, "one relpos per non-reference child required");
    if (tree.position_mode == PositionMode::relative) {
      for (const auto& r : n.relpos) {
        if (!one_hot_groups(r)) add("relpos-bits", p, "relpos bit groups must be exactly one-hot");
      }
    }
    switch (n.kind) {
      case NodeKind::root:
        if (!p.empty() || !full) add("root-position", p, "root node below the top");
        break;
      case NodeKind::wall:
        if (n.children.size() != 2) add("wall-arity", p, "wall node needs 2 children");
        if (!full) break;
        if (!under_root) add("wall-position", p, "wall node must be a root child");
        if (!n.children.empty() && !is_leaf_cat(n.children[0], vocab.wall_index())) add("wall-first", p, "wall node's first child must be a wall leaf");
        break;
      case NodeKind::support:
        if (n.children.size() != 2) add("support-arity", p, "support node needs 2 children");
        if (opts.semantics && !n.children.empty() && !n.children[0].is_leaf()) add("support-supporter", p, "supporter must be an object leaf");
        break;
      case NodeKind::cooccur:
        if (n.children.size() != 2) {
          add("cooccur-arity", p, "co-occurrence node needs 2 children");
        } else if (opts.semantics && full && aggregate_box(n.children[0]).footprint_area() <
                                         aggregate_box(n.children[1]).footprint_area() - 1e-12) {
          add("coocur-order", p, "co-occurrence children must be sorted by descending footprint");
        }
        break;
      case NodeKind::surround:
        if (n.children.size() != 3) {
          add("surround-arity", p, "surround node needs 3 children");
        } else if (opts.semantics) {
          const auto& a = reference_leaf(n.children[1]).object;
          const auto& b = reference_leaf(n.children[2]).object;
          if (a.category != b.category) add("surround-category", p, "surrounders must share a category");
          const double ratio = b.obb.footprint_area() / a.obb.footprint_area();
          if (ratio < opts.relation.surround_ratio_min || ratio > opts.relation.surround_ratio_max) add("surround-size", p, "surrounders must have similar size");
        }
        break;
      case NodeKind::leaf:
        break;
    }
    if (opts.geometry && n.relpos.size() + 1 == n.children.size()) {
      const OBB ref = aggregate_box(n.children[0]);
      for (std::size_t i = 1; i < n.children.size(); ++i) {
        const OBB actual = aggregate_box(n.children[i]);
        const OBB placed = place_from_vector(ref, n.relpos[i - 1], {actual.size_x, actual.size_y, actual.size_z},
                                             tree.position_mode, false);
        const double err = norm(placed.center() - actual.center());
        if (!(err <= opts.position_tol) || !(angle_distance(placed.angle, actual.angle) <= opts.position_tol)) {
          add("relpos-consistency", p, "relpos for child " + std::to_string(i) + " misplaces it by " + std::to_string(err) + " m");
        }
      }
    }
  });
  return rep;
}

// Non-special leaves of a tree, in traversal order.
inline std::vector<SceneObject> tree_scene_objects(const SceneTree& t, const Vocabulary& vocab) {
  std::vector<SceneObject> out;
  for (const auto* o : leaf_objects(t.root)) {
    if (o->category < vocab.size() && !vocab.is_special(o->category)) out.push_back(*o);
  }
  return out;
}

}  // namespace grains
