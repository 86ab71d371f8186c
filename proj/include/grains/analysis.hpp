#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "grains/error.hpp"
#include "grains/scene_model.hpp"
#include "grains/synthesis.hpp"
#include "grains/tree.hpp"

namespace grains {

// ---------------------------------------------------------------------------
// Relation graphs

enum class Relation { support = 0, surround = 1, cooccur = 2, against_wall = 3 };
inline constexpr std::size_t kRelationCount = 4;

inline std::string to_string(Relation r) {
  static const char* names[] = {"support", "surround", "cooccur", "against_wall"};
  return names[static_cast<int>(r)];
}

struct GraphNode {
  std::size_t category = 0;
  double area = 0.0;  // footprint
  double diag = 0.0;  // 3D diagonal
};

struct GraphEdge {
  std::size_t a = 0, b = 0;  // a == b for against-wall self loops
  Relation relation = Relation::cooccur;
  bool operator<(const GraphEdge& o) const {
    return std::tie(a, b, relation) < std::tie(o.a, o.b, o.relation);
  }
  bool operator==(const GraphEdge&) const = default;
};

// One node per object; edges follow the hierarchy: support and surround
// nodes link the reference objects of their children, co-occurrence nodes
// link adjacent children, and a group attached to a wall gets an
// against-wall self loop on its reference object.
struct SceneGraph {
  std::vector<GraphNode> nodes;
  std::vector<GraphEdge> edges;

  std::size_t count(Relation r) const {
    return static_cast<std::size_t>(std::count_if(edges.begin(), edges.end(), [&](const GraphEdge& e) { return e.relation == r; }));
  }
};

// `include_special` keeps wall and floor leaves as nodes.
inline SceneGraph build_scene_graph(const SceneNode& root, const Vocabulary& vocab, bool include_special = false) {
  SceneGraph g;
  std::map<const SceneObject*, std::size_t> index;
  for (const SceneObject* o : leaf_objects(root)) {
    if (!include_special && (o->category >= vocab.size() || vocab.is_special(o->category))) continue;
    index[o] = g.nodes.size();
    const auto& b = o->obb;
    g.nodes.push_back({o->category, b.size_x * b.size_y, std::sqrt(b.size_x * b.size_x + b.size_y * b.size_y + b.size_z * b.size_z)});
  }
  std::set<GraphEdge> edges;
  auto link = [&](const SceneNode& x, const SceneNode& y, Relation r) {
    auto ia = index.find(&reference_leaf(x).object);
    auto ib = index.find(&reference_leaf(y).object);
    if (ia == index.end() || ib == index.end() || ia->second == ib->second) return;
    edges.insert({std::min(ia->second, ib->second), std::max(ia->second, ib->second), r});
  };
  std::function<void(const SceneNode&)> visit = [&](const SceneNode& n) {
    switch (n.kind) {
      case NodeKind::support:
        link(n.children[0], n.children[1], Relation::support);
        break;
      case NodeKind::surround:
        link(n.children[0], n.children[1], Relation::surround);
        link(n.children[0], n.children[2], Relation::surround);
        break;
      case NodeKind::cooccur:
        link(n.children[0], n.children[1], Relation::cooccur);
        break;
      case NodeKind::wall: {
        const auto& first = reference_leaf(n.children[0]).object;
        if (first.category == vocab.wall_index()) {
          for (std::size_t i = 1; i < n.children.size(); ++i) {
            auto it = index.find(&reference_leaf(n.children[i]).object);
            if (it != index.end()) edges.insert({it->second, it->second, Relation::against_wall});
          }
        }
        break;
      }
      default:
        break;
    }
    for (const auto& c : n.children) visit(c);
  };
  visit(root);
  g.edges.assign(edges.begin(), edges.end());
  return g;
}

inline SceneGraph build_scene_graph(const SceneTree& t, const Vocabulary& vocab, bool include_special = false) {
  return build_scene_graph(t.root, vocab, include_special);
}

struct KernelConfig {
  double sigma = 0.5;
  std::size_t walk_length = 3;
};

inline double node_kernel(const GraphNode& a, const GraphNode& b, double sigma) {
  if (a.category != b.category) return 0.0;
  const double d = std::log(std::max(a.area, 1e-12)) - std::log(std::max(b.area, 1e-12));
  return std::exp(-d * d / (sigma * sigma));
}

namespace detail {

// Per-relation adjacency; undirected edges are walkable both ways, self
// loops once.
inline std::vector<Eigen::MatrixXd> relation_adjacency(const SceneGraph& g) {
  const auto n = static_cast<Eigen::Index>(g.nodes.size());
  std::vector<Eigen::MatrixXd> adj(kRelationCount, Eigen::MatrixXd::Zero(n, n));
  for (const auto& e : g.edges) {
    auto& m = adj[static_cast<std::size_t>(e.relation)];
    m(static_cast<Eigen::Index>(e.a), static_cast<Eigen::Index>(e.b)) = 1.0;
    m(static_cast<Eigen::Index>(e.b), static_cast<Eigen::Index>(e.a)) = 1.0;
  }
  return adj;
}

// Sum over all walk pairs of length 0..p of the product of node kernels
// along both walks (edge kernel: relation equality).
inline double walk_kernel_raw(const SceneGraph& g1, const SceneGraph& g2, const KernelConfig& cfg) {
  const auto n1 = static_cast<Eigen::Index>(g1.nodes.size()), n2 = static_cast<Eigen::Index>(g2.nodes.size());
  if (n1 == 0 || n2 == 0) return 0.0;
  Eigen::MatrixXd K(n1, n2);
  for (Eigen::Index a = 0; a < n1; ++a) {
    for (Eigen::Index b = 0; b < n2; ++b) K(a, b) = node_kernel(g1.nodes[static_cast<std::size_t>(a)], g2.nodes[static_cast<std::size_t>(b)], cfg.sigma);
  }
  const auto A1 = relation_adjacency(g1), A2 = relation_adjacency(g2);
  // V(a, b): total weight of walk pairs of the current length ending at (a, b).
  Eigen::MatrixXd V = K;
  double total = V.sum();
  for (std::size_t l = 0; l < cfg.walk_length; ++l) {
    Eigen::MatrixXd next = Eigen::MatrixXd::Zero(n1, n2);
    for (std::size_t r = 0; r < kRelationCount; ++r) {
      if (A1[r].isZero() || A2[r].isZero()) continue;
      next.noalias() += A1[r] * V * A2[r];
    }
    V = next.cwiseProduct(K);
    total += V.sum();
  }
  return total;
}

}  // namespace detail

// Normalized random-walk kernel in [0, 1]; exactly symmetric. Two empty
// graphs have similarity 1, an empty and a non-empty graph 0.
inline double graph_kernel(const SceneGraph& a, const SceneGraph& b, const KernelConfig& cfg = {}) {
  if (a.nodes.empty() || b.nodes.empty()) return a.nodes.empty() && b.nodes.empty() ? 1.0 : 0.0;
  const double kab = 0.5 * (detail::walk_kernel_raw(a, b, cfg) + detail::walk_kernel_raw(b, a, cfg));
  const double kaa = detail::walk_kernel_raw(a, a, cfg);
  const double kbb = detail::walk_kernel_raw(b, b, cfg);
  if (kaa <= 0 || kbb <= 0) return 0.0;
  return std::clamp(kab / std::sqrt(kaa * kbb), 0.0, 1.0);
}

struct Neighbor {
  std::size_t index;
  double similarity;
};

// Top-k by similarity; ties go to the lower corpus index.
inline std::vector<Neighbor> nearest_neighbors(const SceneGraph& query, const std::vector<SceneGraph>& corpus, std::size_t k,
                                               const KernelConfig& cfg = {}) {
  std::vector<Neighbor> all;
  all.reserve(corpus.size());
  for (std::size_t i = 0; i < corpus.size(); ++i) all.push_back({i, graph_kernel(query, corpus[i], cfg)});
  std::stable_sort(all.begin(), all.end(), [](const Neighbor& x, const Neighbor& y) { return x.similarity > y.similarity; });
  all.resize(std::min(k, all.size()));
  return all;
}

// ---------------------------------------------------------------------------
// Co-occurrence statistics

using CategorySet = std::set<std::size_t>;

inline std::vector<CategorySet> category_sets(const std::vector<Scene>& scenes) {
  std::vector<CategorySet> out;
  for (const auto& s : scenes) {
    CategorySet c;
    for (const auto& o : s.objects) c.insert(o.category);
    out.push_back(std::move(c));
  }
  return out;
}

inline std::vector<CategorySet> category_sets(const std::vector<PlacedScene>& scenes) {
  std::vector<CategorySet> out;
  for (const auto& s : scenes) {
    CategorySet c;
    for (const auto& p : s.placements) c.insert(p.category);
    out.push_back(std::move(c));
  }
  return out;
}

// P(c1 | c2) = N(c1, c2) / N(c2) over object categories; N counts scenes.
struct CooccurrenceMatrix {
  std::vector<std::string> names;
  std::size_t scenes = 0;
  std::vector<std::size_t> single;  // N(c)
  Eigen::MatrixXd joint;            // N(c1, c2)

  std::size_t size() const { return names.size(); }
  std::optional<double> p(std::size_t c1, std::size_t c2) const {
    if (single[c2] == 0) return std::nullopt;
    return joint(static_cast<Eigen::Index>(c1), static_cast<Eigen::Index>(c2)) / static_cast<double>(single[c2]);
  }
};

inline CooccurrenceMatrix cooccurrence_matrix(const std::vector<CategorySet>& sets, const Vocabulary& vocab) {
  CooccurrenceMatrix m;
  m.names = vocab.object_names();
  const std::size_t k = m.names.size();
  m.scenes = sets.size();
  m.single.assign(k, 0);
  m.joint = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(k));
  for (const auto& s : sets) {
    for (auto a : s) {
      if (a >= k) continue;
      ++m.single[a];
      for (auto b : s) {
        if (b < k) m.joint(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(b)) += 1.0;
      }
    }
  }
  return m;
}

struct SimilarityEntry {
  std::size_t c1, c2;
  double p_train, p_gen, similarity;
};

struct CooccurrenceSimilarity {
  std::vector<std::string> names;
  std::vector<SimilarityEntry> entries;  // retained off-diagonal pairs, row-major
  double mean = 0.0;
};

// s(c1|c2) = 1 - |P_train(c1|c2) - P_gen(c1|c2)| over ordered pairs that
// co-occur in at least `min_support` of the scenes of either corpus. An
// undefined conditional (conditioning category never present) counts as 0.
inline CooccurrenceSimilarity cooccurrence_similarity(const CooccurrenceMatrix& train, const CooccurrenceMatrix& gen,
                                                      double min_support = 0.05) {
  if (train.names != gen.names) throw ConfigMismatchError("co-occurrence matrices use different vocabularies");
  CooccurrenceSimilarity out;
  out.names = train.names;
  const std::size_t k = train.size();
  double sum = 0;
  for (std::size_t c1 = 0; c1 < k; ++c1) {
    for (std::size_t c2 = 0; c2 < k; ++c2) {
      if (c1 == c2) continue;
      const auto i1 = static_cast<Eigen::Index>(c1), i2 = static_cast<Eigen::Index>(c2);
      const double st = train.scenes ? train.joint(i1, i2) / static_cast<double>(train.scenes) : 0.0;
      const double sg = gen.scenes ? gen.joint(i1, i2) / static_cast<double>(gen.scenes) : 0.0;
      if (std::max(st, sg) < min_support) continue;
      const double pt = train.p(c1, c2).value_or(0.0), pg = gen.p(c1, c2).value_or(0.0);
      const double s = 1.0 - std::abs(pt - pg);
      out.entries.push_back({c1, c2, pt, pg, s});
      sum += s;
    }
  }
  out.mean = out.entries.empty() ? 1.0 : sum / static_cast<double>(out.entries.size());
  return out;
}

inline std::string similarity_table(const CooccurrenceSimilarity& s) {
  std::ostringstream os;
  os << "c1\tc2\tp_train\tp_gen\tsimilarity\n";
  char buf[128];
  for (const auto& e : s.entries) {
    std::snprintf(buf, sizeof buf, "\t%.4f\t%.4f\t%.4f\n", e.p_train, e.p_gen, e.similarity);
    os << s.names[e.c1] << '\t' << s.names[e.c2] << buf;
  }
  std::snprintf(buf, sizeof buf, "%.4f", s.mean);
  os << "# mean\t" << buf << '\n';
  return os.str();
}

// Heat map of retained pairs; gray cells were discarded.
inline std::string similarity_svg(const CooccurrenceSimilarity& s, double cell = 28.0) {
  const std::size_t k = s.names.size();
  const double label = 90.0;
  std::ostringstream os;
  const double dim = label + cell * static_cast<double>(k) + 10;
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << detail::fmt(dim) << "\" height=\"" << detail::fmt(dim) << "\">\n";
  std::vector<std::optional<double>> grid(k * k);
  for (const auto& e : s.entries) grid[e.c1 * k + e.c2] = e.similarity;
  for (std::size_t r = 0; r < k; ++r) {
    os << "<text x=\"2\" y=\"" << detail::fmt(label + cell * (static_cast<double>(r) + 0.7)) << "\" font-size=\"10\">"
       << detail::xml_escape(s.names[r]) << "</text>\n";
    for (std::size_t c = 0; c < k; ++c) {
      std::string fill = "#dddddd";
      if (grid[r * k + c]) {
        const int v = static_cast<int>(std::lround(255 * std::clamp(*grid[r * k + c], 0.0, 1.0)));
        char buf[16];
        std::snprintf(buf, sizeof buf, "#%02x%02x%02x", 255 - v, 255 - v / 3, 255);
        fill = buf;
      }
      os << "<rect x=\"" << detail::fmt(label + cell * static_cast<double>(c)) << "\" y=\"" << detail::fmt(label + cell * static_cast<double>(r))
         << "\" width=\"" << detail::fmt(cell) << "\" height=\"" << detail::fmt(cell) << "\" fill=\"" << fill << "\"/>\n";
    }
  }
  os << "</svg>\n";
  return os.str();
}

// ---------------------------------------------------------------------------
// Relative position distributions

struct RelposDistribution {
  std::string reference, target;
  std::vector<Vec2> points;        // target centers in reference frames
  double mean_ref_x = 0.0, mean_ref_y = 0.0;  // mean reference footprint
  std::string notice;
};

inline RelposDistribution relpos_distribution(const std::vector<Scene>& scenes, const Vocabulary& vocab, const std::string& ref_name,
                                              const std::string& tgt_name) {
  RelposDistribution d;
  d.reference = ref_name;
  d.target = tgt_name;
  const auto ref_idx = vocab.index_of(ref_name), tgt_idx = vocab.index_of(tgt_name);
  if (!ref_idx || !tgt_idx) {
    d.notice = "category '" + (ref_idx ? tgt_name : ref_name) + "' is not in the vocabulary";
    return d;
  }
  const std::size_t ref = *ref_idx, tgt = *tgt_idx;
  std::size_t refs = 0;
  for (const auto& s : scenes) {
    for (const auto& a : s.objects) {
      if (a.category != ref) continue;
      bool counted = false;
      for (const auto& b : s.objects) {
        if (&a == &b || b.category != tgt) continue;
        d.points.push_back(a.obb.to_local(b.obb.center()));
        if (!counted) {
          d.mean_ref_x += a.obb.size_x;
          d.mean_ref_y += a.obb.size_y;
          ++refs;
          counted = true;
        }
      }
    }
  }
  if (refs) {
    d.mean_ref_x /= static_cast<double>(refs);
    d.mean_ref_y /= static_cast<double>(refs);
  }
  if (d.points.empty()) d.notice = "no " + ref_name + "/" + tgt_name + " pairs in corpus";
  return d;
}

inline std::string relpos_table(const RelposDistribution& d) {
  std::ostringstream os;
  os << "# reference " << d.reference << " target " << d.target << " mean footprint " << detail::fmt(d.mean_ref_x) << " x "
     << detail::fmt(d.mean_ref_y) << '\n';
  if (!d.notice.empty()) os << "# " << d.notice << '\n';
  os << "x\ty\n";
  for (const auto& p : d.points) os << detail::fmt(p.x) << '\t' << detail::fmt(p.y) << '\n';
  return os.str();
}

inline std::string relpos_svg(const RelposDistribution& d, double px_per_m = 100.0) {
  double extent = std::max(d.mean_ref_x, d.mean_ref_y);
  for (const auto& p : d.points) extent = std::max({extent, 2 * std::abs(p.x), 2 * std::abs(p.y)});
  extent += 0.5;
  const double size = extent * px_per_m;
  auto X = [&](double x) { return detail::fmt(size / 2 + x * px_per_m); };
  auto Y = [&](double y) { return detail::fmt(size / 2 - y * px_per_m); };
  std::ostringstream os;
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << detail::fmt(size) << "\" height=\"" << detail::fmt(size) << "\">\n";
  os << "<rect class=\"reference\" x=\"" << X(-d.mean_ref_x / 2) << "\" y=\"" << Y(d.mean_ref_y / 2) << "\" width=\""
     << detail::fmt(d.mean_ref_x * px_per_m) << "\" height=\"" << detail::fmt(d.mean_ref_y * px_per_m)
     << "\" fill=\"none\" stroke=\"#c03030\"/>\n";
  for (const auto& p : d.points) os << "<circle cx=\"" << X(p.x) << "\" cy=\"" << Y(p.y) << "\" r=\"2\" fill=\"#3050c0\"/>\n";
  os << "</svg>\n";
  return os.str();
}

}  // namespace grains
