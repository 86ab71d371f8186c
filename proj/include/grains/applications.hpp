#pragma once

#include <algorithm>
#include <fstream>
#include <functional>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "grains/analysis.hpp"
#include "grains/error.hpp"
#include "grains/generate.hpp"
#include "grains/hierarchy.hpp"
#include "grains/rvnn.hpp"
#include "grains/synthesis.hpp"

namespace grains {

inline constexpr std::string_view kLayoutFormat = "grains-layout/1";

// ---------------------------------------------------------------------------
// 2D layouts without labels

struct Box2D {
  double center_x = 0.0, center_y = 0.0;
  double size_x = 0.0, size_y = 0.0;
  double angle = 0.0;
  bool operator==(const Box2D&) const = default;
};

struct Layout2D {
  double width = 4.0, depth = 4.0;
  std::vector<Box2D> boxes;
  bool operator==(const Layout2D&) const = default;
};

inline json layout_to_json(const Layout2D& l) {
  json boxes = json::array();
  for (const auto& b : l.boxes) {
    boxes.push_back({{"center", {b.center_x, b.center_y}}, {"size_x", b.size_x}, {"size_y", b.size_y}, {"angle", b.angle}});
  }
  return json{{"format", kLayoutFormat}, {"room", {{"width", l.width}, {"depth", l.depth}}}, {"boxes", std::move(boxes)}};
}

inline Layout2D layout_from_json(const json& j) {
  try {
    if (j.at("format").get<std::string>() != kLayoutFormat) {
      throw ParseError("unsupported layout format '" + j.at("format").get<std::string>() + "'");
    }
    Layout2D l;
    l.width = j.at("room").at("width").get<double>();
    l.depth = j.at("room").at("depth").get<double>();
    for (const auto& bj : j.at("boxes")) {
      Box2D b;
      b.center_x = bj.at("center").at(0).get<double>();
      b.center_y = bj.at("center").at(1).get<double>();
      b.size_x = bj.at("size_x").get<double>();
      b.size_y = bj.at("size_y").get<double>();
      b.angle = bj.value("angle", 0.0);
      l.boxes.push_back(b);
    }
    return l;
  } catch (const json::exception& e) {
    throw ParseError(std::string("layout record: ") + e.what());
  }
}

inline Layout2D load_layout(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw Error("cannot read layout file '" + path + "'");
  try {
    return layout_from_json(json::parse(is));
  } catch (const json::parse_error& e) {
    throw ParseError("layout file '" + path + "': " + e.what());
  }
}

inline void save_layout(const Layout2D& l, const std::string& path) {
  std::ofstream os(path);
  if (!os) throw Error("cannot write layout file '" + path + "'");
  os << layout_to_json(l).dump(2) << '\n';
}

// Top view of a placed scene, labels dropped.
inline Layout2D trace_layout(const PlacedScene& s) {
  Layout2D l{s.room.width, s.room.depth, {}};
  for (const auto& p : s.placements) l.boxes.push_back({p.obb.center_x, p.obb.center_y, p.obb.size_x, p.obb.size_y, p.obb.angle});
  return l;
}

enum class LatentMode { mean, sample };

inline LatentMode latent_mode_from_string(std::string_view s) {
  if (s == "mean") return LatentMode::mean;
  if (s == "sample") return LatentMode::sample;
  throw Error("unknown latent mode '" + std::string(s) + "' (expected mean or sample)");
}

struct LayoutOptions {
  double box_height = 0.5;  // layouts carry no height
  std::size_t max_attempts = 10;
  DecodeLimits limits;
};

// Scene with unlabeled objects and a hierarchy where support means overlap.
inline SceneTree layout_tree(const Layout2D& layout, const ModelParams& p, const LayoutOptions& opts = {}) {
  if (layout.boxes.empty()) throw Error("layout has no boxes");
  if (!(layout.width > 0 && layout.depth > 0)) throw Error("layout room dimensions must be positive");
  Scene s;
  s.room = Room::rectangular(layout.width, layout.depth, 2.7);
  const OBB room = s.room.rectangle();
  for (std::size_t i = 0; i < layout.boxes.size(); ++i) {
    const auto& b = layout.boxes[i];
    if (!(b.size_x > 0 && b.size_y > 0)) throw Error("layout box " + std::to_string(i) + " must have positive size");
    OBB o{b.center_x, b.center_y, 0.0, b.size_x, b.size_y, opts.box_height, normalize_angle(b.angle)};
    if (footprint_intersection(o, room) <= 0.0) throw Error("layout box " + std::to_string(i) + " lies outside the room");
    s.objects.push_back({"b" + std::to_string(i), kUnknownCategory, o});
  }
  RelationConfig rel;
  rel.support_as_overlap = true;
  return prepare_tree(build_hierarchy(s, p.vocab, rel), p.cfg, rel);
}

// Encodes the unlabeled layout, then decodes z = mu (one scene) or
// `n_samples` draws around it; labels come back from the decoder.
inline std::vector<PlacedScene> layout_to_scenes(const ModelParams& p, const Layout2D& layout, std::size_t n_samples,
                                                 LatentMode mode, std::uint64_t seed, const LayoutOptions& opts = {}) {
  const SceneTree t = layout_tree(layout, p, opts);
  const Vec top = encode_top_codes(p, {&t}).col(0);
  const LatentGaussian g = latent_gaussian(p, top);
  const std::size_t count = mode == LatentMode::mean ? 1 : n_samples;
  if (count == 0) throw Error("n_samples must be positive");
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  const Vec sd = (0.5 * g.logvar.array()).exp().matrix();
  std::vector<PlacedScene> out;
  for (std::size_t i = 0; i < count; ++i) {
    std::string last;
    for (std::size_t a = 0; a < opts.max_attempts; ++a) {
      Vec z = g.mu;
      if (mode == LatentMode::sample) {
        for (Eigen::Index k = 0; k < z.size(); ++k) z[k] += sd[k] * normal(rng);
      }
      try {
        out.push_back(realize_placements(decode_tree_free(p, z, opts.limits), p.vocab));
        last.clear();
        break;
      } catch (const GenerationError& e) {
        last = e.what();
        if (mode == LatentMode::mean) break;
      }
    }
    if (!last.empty()) throw GenerationError("layout decoding failed: " + last);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Hierarchy-guided editing. All edits return new trees and validate them.

namespace detail {

inline bool has_special_leaf(const SceneNode& n, const Vocabulary& vocab) {
  for (const auto* o : leaf_objects(n)) {
    if (o->category < vocab.size() && vocab.is_special(o->category)) return true;
  }
  return false;
}

inline void recompute_node_relpos(SceneNode& n, const RelationConfig& rel, PositionMode mode) {
  if (n.is_leaf()) return;
  const OBB ref = aggregate_box(n.children.front());
  n.relpos.clear();
  for (std::size_t i = 1; i < n.children.size(); ++i) n.relpos.push_back(position_vector(ref, aggregate_box(n.children[i]), mode, rel));
}

// Recomputes relpos at `path` and every ancestor, deepest first.
inline void recompute_up(SceneNode& root, TreePath path, const RelationConfig& rel, PositionMode mode) {
  while (true) {
    recompute_node_relpos(node_at(root, path), rel, mode);
    if (path.empty()) break;
    path.pop_back();
  }
}

inline void check_edit(const SceneTree& t, const Vocabulary& vocab, const ValidationOptions& vo, const char* what) {
  const auto rep = validate_tree(t, vocab, vo);
  if (!rep.ok()) {
    throw StructuralError(std::string(what) + " would produce an invalid tree (" + rep.violations[0].code + " at '" +
                          rep.violations[0].path + "')");
  }
}

inline void check_path(const SceneNode& root, const TreePath& path) {
  if (path.empty()) throw Error("the root cannot be edited");
  (void)node_at(root, path);
}

// Disjoint union.
inline void append_graph(SceneGraph& a, const SceneGraph& b) {
  const std::size_t off = a.nodes.size();
  a.nodes.insert(a.nodes.end(), b.nodes.begin(), b.nodes.end());
  for (auto e : b.edges) {
    e.a += off;
    e.b += off;
    a.edges.push_back(e);
  }
}

}  // namespace detail

// Graph of the selected node's siblings (walls and floor included).
inline SceneGraph sibling_context(const SceneNode& root, const TreePath& path, const Vocabulary& vocab) {
  detail::check_path(root, path);
  const SceneNode& parent = node_at(root, TreePath(path.begin(), path.end() - 1));
  SceneGraph g;
  for (std::size_t i = 0; i < parent.children.size(); ++i) {
    if (i != path.back()) detail::append_graph(g, build_scene_graph(parent.children[i], vocab, true));
  }
  return g;
}

struct SubtreeCandidate {
  std::size_t pool_index = 0;
  TreePath path;
  double score = 0.0;
  SceneNode subtree;
};

// Subtrees of the same node kind whose sibling context is most similar to
// the selected node's; ties go to the lower pool index, then path order.
inline std::vector<SubtreeCandidate> candidate_subtrees(const std::vector<SceneTree>& pool, const SceneTree& target,
                                                        const TreePath& path, std::size_t k, const Vocabulary& vocab,
                                                        const KernelConfig& kc = {}) {
  detail::check_path(target.root, path);
  const SceneNode& selected = node_at(target.root, path);
  const SceneGraph ctx = sibling_context(target.root, path, vocab);
  std::vector<SubtreeCandidate> all;
  for (std::size_t i = 0; i < pool.size(); ++i) {
    for_each_node(pool[i].root, [&](const SceneNode& n, const TreePath& p) {
      if (p.empty() || n.kind != selected.kind || detail::has_special_leaf(n, vocab)) return;
      all.push_back({i, p, graph_kernel(ctx, sibling_context(pool[i].root, p, vocab), kc), n});
    });
  }
  std::stable_sort(all.begin(), all.end(), [](const SubtreeCandidate& a, const SubtreeCandidate& b) { return a.score > b.score; });
  if (all.size() > k) all.resize(k);
  return all;
}

struct EditOptions {
  RelationConfig relation;
  std::size_t max_nodes = 128;
  ValidationOptions validation = structural_only();
};

// Splices `donor` in place of the node at `path`. The donor is moved rigidly
// so its reference object takes the replaced reference object's pose.
inline SceneTree replace_subtree(const SceneTree& tree, const TreePath& path, const SceneNode& donor, const Vocabulary& vocab,
                                 const EditOptions& opts = {}) {
  detail::check_path(tree.root, path);
  const SceneNode& old = node_at(tree.root, path);
  if (detail::has_special_leaf(old, vocab)) throw Error("subtree '" + path_to_string(path) + "' holds the floor or a wall and cannot be replaced");
  if (detail::has_special_leaf(donor, vocab)) throw Error("donor subtree holds the floor or a wall");
  if (donor.kind != old.kind) {
    throw Error("donor of kind " + to_string(donor.kind) + " is incompatible with a " + to_string(old.kind) + " slot");
  }
  SceneNode moved = donor;
  // Donor leaves whose ids clash with the kept part of the tree get fresh ids.
  std::set<std::string> taken;
  for (const auto* o : leaf_objects(tree.root)) taken.insert(o->id);
  for (const auto* o : leaf_objects(old)) taken.erase(o->id);
  std::size_t fresh = 0;
  std::function<void(SceneNode&)> reid = [&](SceneNode& n) {
    if (n.is_leaf()) {
      if (taken.count(n.object.id)) {
        while (taken.count("r" + std::to_string(fresh))) ++fresh;
        n.object.id = "r" + std::to_string(fresh);
      }
      taken.insert(n.object.id);
      return;
    }
    for (auto& c : n.children) reid(c);
  };
  reid(moved);
  const OBB& from = reference_leaf(donor).object.obb;
  const OBB& to = reference_leaf(old).object.obb;
  transform_subtree(moved, pose_of(to).compose(pose_of(from).inverse()), to.elevation - from.elevation);
  SceneTree out = tree;
  node_at(out.root, path) = std::move(moved);
  if (node_count(out.root) > opts.max_nodes) {
    throw Error("replacement would grow the tree to " + std::to_string(node_count(out.root)) + " nodes (limit " +
                std::to_string(opts.max_nodes) + ")");
  }
  detail::recompute_up(out.root, TreePath(path.begin(), path.end() - 1), opts.relation, out.position_mode);
  detail::check_edit(out, vocab, opts.validation, "replacement");
  return out;
}

// Removes the node at `path`. A binary parent collapses to the remaining
// child; a surround parent degrades to a co-occurrence of the other two.
inline SceneTree delete_subtree(const SceneTree& tree, const TreePath& path, const Vocabulary& vocab, const EditOptions& opts = {}) {
  detail::check_path(tree.root, path);
  if (detail::has_special_leaf(node_at(tree.root, path), vocab)) {
    throw Error("subtree '" + path_to_string(path) + "' holds the floor or a wall and cannot be deleted");
  }
  SceneTree out = tree;
  const TreePath parent_path(path.begin(), path.end() - 1);
  SceneNode& parent = node_at(out.root, parent_path);
  if (parent.kind == NodeKind::root) throw Error("root slots cannot be deleted");
  std::vector<SceneNode> rest;
  for (std::size_t i = 0; i < parent.children.size(); ++i) {
    if (i != path.back()) rest.push_back(std::move(parent.children[i]));
  }
  if (rest.size() == 1) {
    parent = std::move(rest.front());
  } else {
    parent = make_internal(NodeKind::cooccur, std::move(rest), opts.relation, out.position_mode);
  }
  if (!parent_path.empty()) detail::recompute_up(out.root, TreePath(parent_path.begin(), parent_path.end() - 1), opts.relation, out.position_mode);
  detail::check_edit(out, vocab, opts.validation, "deletion");
  return out;
}

// Sets the relpos of a non-reference child, re-realizes the scene and
// refreshes the ancestors' relpos against the new geometry.
inline SceneTree move_subtree(const SceneTree& tree, const TreePath& path, const RelVec& relpos, const Vocabulary& vocab,
                              const EditOptions& opts = {}) {
  detail::check_path(tree.root, path);
  if (path.back() == 0) throw Error("node '" + path_to_string(path) + "' is its parent's reference child and cannot be moved");
  if (tree.position_mode == PositionMode::relative) RelPos28::parse_strict(relpos);
  SceneTree edited = tree;
  const TreePath parent_path(path.begin(), path.end() - 1);
  node_at(edited.root, parent_path).relpos[path.back() - 1] = relpos;
  SceneTree out = realize_placements(edited, vocab).source_tree;
  if (!parent_path.empty()) detail::recompute_up(out.root, TreePath(parent_path.begin(), parent_path.end() - 1), opts.relation, out.position_mode);
  detail::check_edit(out, vocab, opts.validation, "move");
  return out;
}

}  // namespace grains
