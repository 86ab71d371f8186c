#pragma once

#include <fstream>
#include <functional>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "grains/error.hpp"
#include "grains/geometry.hpp"
#include "grains/relpos.hpp"
#include "grains/scene_model.hpp"

namespace grains {

inline constexpr std::string_view kTreeFormat = "grains-tree/1";

enum class NodeKind { leaf, support, surround, cooccur, wall, root };

inline std::string to_string(NodeKind k) {
  switch (k) {
    case NodeKind::leaf: return "leaf";
    case NodeKind::support: return "support";
    case NodeKind::surround: return "surround";
    case NodeKind::cooccur: return "cooccur";
    case NodeKind::wall: return "wall";
    case NodeKind::root: return "root";
  }
  return "leaf";
}

inline NodeKind node_kind_from_string(std::string_view s) {
  if (s == "leaf") return NodeKind::leaf;
  if (s == "support") return NodeKind::support;
  if (s == "surround") return NodeKind::surround;
  if (s == "cooccur") return NodeKind::cooccur;
  if (s == "wall") return NodeKind::wall;
  if (s == "root") return NodeKind::root;
  throw ParseError("unknown node type '" + std::string(s) + "'");
}

// How walls and the floor join the hierarchy: a root over floor and four
// wall slots, opposite walls merged pairwise under a floor support node, or
// plain co-occurrence merges all the way up.
enum class WallRootMode { full, wall_only, none };

inline std::string to_string(WallRootMode m) {
  switch (m) {
    case WallRootMode::full: return "full";
    case WallRootMode::wall_only: return "wall_only";
    case WallRootMode::none: return "none";
  }
  return "full";
}

inline WallRootMode wall_root_mode_from_string(std::string_view s) {
  if (s == "full") return WallRootMode::full;
  if (s == "wall_only") return WallRootMode::wall_only;
  if (s == "none") return WallRootMode::none;
  throw Error("unknown wall/root mode '" + std::string(s) + "'");
}

// One node of a scene hierarchy. Internal nodes treat children[0] as the
// reference child: relpos[i] places children[i + 1] relative to it.
struct SceneNode {
  NodeKind kind = NodeKind::leaf;
  SceneObject object;  // leaves only
  std::vector<SceneNode> children;
  std::vector<RelVec> relpos;

  bool is_leaf() const { return kind == NodeKind::leaf; }

  static SceneNode leaf(SceneObject obj) {
    SceneNode n;
    n.object = std::move(obj);
    return n;
  }

  bool operator==(const SceneNode&) const = default;
};

struct SceneTree {
  SceneNode root;
  PositionMode position_mode = PositionMode::relative;

  bool operator==(const SceneTree&) const = default;
};

using TreePath = std::vector<std::size_t>;

inline std::string path_to_string(const TreePath& p) {
  std::string s;
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (i) s += '-';
    s += std::to_string(p[i]);
  }
  return s;
}

// Dash-separated child indices; "" and "root" denote the root.
inline TreePath path_from_string(std::string_view s) {
  TreePath p;
  if (s.empty() || s == "root") return p;
  std::size_t pos = 0;
  while (pos <= s.size()) {
    const auto dash = s.find('-', pos);
    const auto tok = s.substr(pos, dash == std::string_view::npos ? s.npos : dash - pos);
    if (tok.empty() || tok.find_first_not_of("0123456789") != std::string_view::npos) {
      throw NotFoundError("malformed tree path '" + std::string(s) + "'");
    }
    p.push_back(std::stoul(std::string(tok)));
    if (dash == std::string_view::npos) break;
    pos = dash + 1;
  }
  return p;
}

inline const SceneNode& node_at(const SceneNode& root, const TreePath& path) {
  const SceneNode* n = &root;
  for (auto i : path) {
    if (i >= n->children.size()) throw NotFoundError("tree path '" + path_to_string(path) + "' does not resolve");
    n = &n->children[i];
  }
  return *n;
}

inline SceneNode& node_at(SceneNode& root, const TreePath& path) {
  return const_cast<SceneNode&>(node_at(static_cast<const SceneNode&>(root), path));
}

template <class F>
void for_each_node(const SceneNode& n, F&& f, TreePath& path) {
  f(n, static_cast<const TreePath&>(path));
  for (std::size_t i = 0; i < n.children.size(); ++i) {
    path.push_back(i);
    for_each_node(n.children[i], f, path);
    path.pop_back();
  }
}

template <class F>
void for_each_node(const SceneNode& n, F&& f) {
  TreePath p;
  for_each_node(n, f, p);
}

inline std::vector<const SceneObject*> leaf_objects(const SceneNode& n) {
  std::vector<const SceneObject*> out;
  for_each_node(n, [&](const SceneNode& x, const TreePath&) {
    if (x.is_leaf()) out.push_back(&x.object);
  });
  return out;
}

inline std::size_t node_count(const SceneNode& n) {
  std::size_t c = 1;
  for (const auto& ch : n.children) c += node_count(ch);
  return c;
}

inline std::size_t tree_depth(const SceneNode& n) {
  std::size_t d = 0;
  for (const auto& ch : n.children) d = std::max(d, 1 + tree_depth(ch));
  return d;
}

// First leaf reached by following reference children.
inline const SceneNode& reference_leaf(const SceneNode& n) {
  const SceneNode* x = &n;
  while (!x->is_leaf()) x = &x->children.front();
  return *x;
}

// Tight box around `boxes`, axis-aligned in the frame rotated by `angle`.
inline OBB hull_in_frame(const std::vector<OBB>& boxes, double angle) {
  Bounds2 b;
  double bottom = INFINITY, top = -INFINITY;
  for (const auto& box : boxes) {
    for (auto c : box.corners()) b.add(rotate(c, -angle));
    bottom = std::min(bottom, box.elevation);
    top = std::max(top, box.top());
  }
  const Vec2 c = rotate(b.center(), angle);
  return OBB{c.x, c.y, bottom, b.width(), b.height(), top - bottom, normalize_angle(angle)};
}

// Aggregate box of a subtree: hull of its children's aggregates in the frame
// of the reference child.
inline OBB aggregate_box(const SceneNode& n) {
  if (n.is_leaf()) return n.object.obb;
  std::vector<OBB> boxes;
  boxes.reserve(n.children.size());
  for (const auto& c : n.children) boxes.push_back(aggregate_box(c));
  return hull_in_frame(boxes, boxes.front().angle);
}

// Internal node whose relpos vectors are computed from child geometry.
inline SceneNode make_internal(NodeKind kind, std::vector<SceneNode> children,
                               const RelationConfig& cfg, PositionMode mode = PositionMode::relative) {
  SceneNode n;
  n.kind = kind;
  n.children = std::move(children);
  const OBB ref = aggregate_box(n.children.front());
  for (std::size_t i = 1; i < n.children.size(); ++i) {
    n.relpos.push_back(position_vector(ref, aggregate_box(n.children[i]), mode, cfg));
  }
  return n;
}

// Recomputes every relpos vector from leaf geometry.
inline void refresh_relpos(SceneNode& n, const RelationConfig& cfg, PositionMode mode = PositionMode::relative) {
  if (n.is_leaf()) return;
  for (auto& c : n.children) refresh_relpos(c, cfg, mode);
  const OBB ref = aggregate_box(n.children.front());
  n.relpos.clear();
  for (std::size_t i = 1; i < n.children.size(); ++i) {
    n.relpos.push_back(position_vector(ref, aggregate_box(n.children[i]), mode, cfg));
  }
}

// Applies a rigid planar motion and vertical shift to every leaf.
inline void transform_subtree(SceneNode& n, const Pose2& motion, double dz) {
  if (n.is_leaf()) {
    n.object.obb = motion.apply(n.object.obb);
    n.object.obb.elevation += dz;
    return;
  }
  for (auto& c : n.children) transform_subtree(c, motion, dz);
}

// ---------------------------------------------------------------------------
// Serialization: nested records mirroring the node kinds.

inline json tree_object_to_json(const SceneObject& o) {
  return json{{"id", o.id},
              {"category", o.category},
              {"center", {o.obb.center_x, o.obb.center_y}},
              {"elevation", o.obb.elevation},
              {"size", {o.obb.size_x, o.obb.size_y, o.obb.size_z}},
              {"angle", o.obb.angle}};
}

inline SceneObject tree_object_from_json(const json& j) {
  SceneObject o;
  o.id = j.at("id").get<std::string>();
  o.category = j.at("category").get<std::size_t>();
  o.obb.center_x = j.at("center").at(0).get<double>();
  o.obb.center_y = j.at("center").at(1).get<double>();
  o.obb.elevation = j.at("elevation").get<double>();
  o.obb.size_x = j.at("size").at(0).get<double>();
  o.obb.size_y = j.at("size").at(1).get<double>();
  o.obb.size_z = j.at("size").at(2).get<double>();
  o.obb.angle = j.at("angle").get<double>();
  return o;
}

inline json node_to_json(const SceneNode& n) {
  if (n.is_leaf()) return json{{"type", "leaf"}, {"object", tree_object_to_json(n.object)}};
  json children = json::array();
  for (const auto& c : n.children) children.push_back(node_to_json(c));
  json rel = json::array();
  for (const auto& r : n.relpos) rel.push_back(r);
  return json{{"type", to_string(n.kind)}, {"children", std::move(children)}, {"relpos", std::move(rel)}};
}

inline SceneNode node_from_json(const json& j) {
  SceneNode n;
  n.kind = node_kind_from_string(j.at("type").get<std::string>());
  if (n.is_leaf()) {
    n.object = tree_object_from_json(j.at("object"));
    return n;
  }
  for (const auto& c : j.at("children")) n.children.push_back(node_from_json(c));
  for (const auto& r : j.at("relpos")) {
    if (r.size() != kRelPosDim) throw ParseError("relpos record must have 28 components");
    RelVec v{};
    for (std::size_t i = 0; i < kRelPosDim; ++i) v[i] = r[i].get<double>();
    n.relpos.push_back(v);
  }
  if (n.children.empty() || n.relpos.size() + 1 != n.children.size()) {
    throw ParseError("internal node '" + to_string(n.kind) + "' needs one relpos per non-reference child");
  }
  return n;
}

inline json tree_to_json(const SceneTree& t) {
  return json{{"format", kTreeFormat},
              {"position_mode", to_string(t.position_mode)},
              {"root", node_to_json(t.root)}};
}

inline SceneTree tree_from_json(const json& j) {
  try {
    if (j.at("format").get<std::string>() != kTreeFormat) {
      throw ParseError("unsupported tree format '" + j.at("format").get<std::string>() + "'");
    }
    SceneTree t;
    t.position_mode = position_mode_from_string(j.value("position_mode", std::string("relative")));
    t.root = node_from_json(j.at("root"));
    return t;
  } catch (const json::exception& e) {
    throw ParseError(std::string("tree record: ") + e.what());
  }
}

// A corpus of hierarchies plus the vocabulary their leaf categories index.
struct TreeCorpus {
  RoomType room_type = RoomType::bedroom;
  Vocabulary vocab;
  std::vector<SceneTree> trees;
};

inline void save_tree_corpus(const TreeCorpus& c, const std::string& path) {
  std::ofstream os(path);
  if (!os) throw Error("cannot write tree file '" + path + "'");
  json header{{"format", kTreeFormat},
              {"room_type", to_string(c.room_type)},
              {"category_names", c.vocab.object_names()},
              {"tree_count", c.trees.size()}};
  os << header.dump() << '\n';
  for (const auto& t : c.trees) os << tree_to_json(t).dump() << '\n';
}

inline TreeCorpus load_tree_corpus(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw Error("cannot read tree file '" + path + "'");
  TreeCorpus c;
  std::string line;
  std::size_t line_no = 0;
  bool header = true;
  while (std::getline(is, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const json j = json::parse(line);
      if (header) {
        if (j.at("format").get<std::string>() != kTreeFormat) throw ParseError("unsupported tree file format");
        c.room_type = room_type_from_string(j.at("room_type").get<std::string>());
        c.vocab = Vocabulary(j.at("category_names").get<std::vector<std::string>>());
        header = false;
      } else {
        c.trees.push_back(tree_from_json(j));
      }
    } catch (const json::exception& e) {
      throw ParseError("line " + std::to_string(line_no) + ": " + e.what());
    } catch (const ParseError& e) {
      throw ParseError("line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  if (header) throw ParseError("tree file '" + path + "' has no header");
  return c;
}

}  // namespace grains
