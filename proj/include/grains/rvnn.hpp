#pragma once

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "grains/error.hpp"
#include "grains/hierarchy.hpp"
#include "grains/nn.hpp"
#include "grains/relpos.hpp"
#include "grains/scene_model.hpp"
#include "grains/tree.hpp"

namespace grains {

inline constexpr std::string_view kModelFormat = "grains-model/1";

// Node classes predicted by the classifier, in logit order.
enum class NodeClass { box = 0, support = 1, cooccur = 2, surround = 3, wall = 4 };
inline constexpr std::size_t kNodeClasses = 5;

inline std::string to_string(NodeClass c) {
  static const char* names[] = {"box", "support", "cooccur", "surround", "wall"};
  return names[static_cast<int>(c)];
}

inline int class_of(NodeKind k) {
  switch (k) {
    case NodeKind::leaf: return 0;
    case NodeKind::support: return 1;
    case NodeKind::cooccur: return 2;
    case NodeKind::surround: return 3;
    case NodeKind::wall: return 4;
    case NodeKind::root: return -1;
  }
  return -1;
}

inline NodeKind kind_of(NodeClass c) {
  static const NodeKind kinds[] = {NodeKind::leaf, NodeKind::support, NodeKind::cooccur, NodeKind::surround,
                                   NodeKind::wall};
  return kinds[static_cast<int>(c)];
}

inline std::size_t arity(NodeKind k) {
  switch (k) {
    case NodeKind::leaf: return 0;
    case NodeKind::support:
    case NodeKind::cooccur:
    case NodeKind::wall: return 2;
    case NodeKind::surround: return 3;
    case NodeKind::root: return 5;
  }
  return 0;
}

struct ModelConfig {
  std::size_t code_dim = 250;
  std::size_t root_code_dim = 350;
  std::size_t hidden_dim = 750;
  std::size_t root_hidden_dim = 1050;
  std::size_t latent_dim = 350;
  std::size_t leaf_dim = 0;  // 3 + vocabulary size; set from the vocabulary
  std::size_t relpos_dim = kRelPosDim;
  PositionMode position_mode = PositionMode::relative;
  bool labels_enabled = true;
  WallRootMode wall_root_mode = WallRootMode::full;
  double kl_weight = 1e-3;
  double classifier_weight = 1.0;
  double leaf_weight = 1.0;
  double relpos_weight = 1.0;
  // Metric quantities are divided by these before entering the network.
  double size_scale = 6.0;
  double offset_scale = 6.0;
  double init_scale = 0.03;

  // Dimension of the code handed to the VAE head.
  std::size_t top_dim() const { return wall_root_mode == WallRootMode::full ? root_code_dim : code_dim; }

  NodeKind top_kind() const {
    switch (wall_root_mode) {
      case WallRootMode::full: return NodeKind::root;
      case WallRootMode::wall_only: return NodeKind::support;
      case WallRootMode::none: return NodeKind::cooccur;
    }
    return NodeKind::root;
  }

  void check() const {
    if (!(code_dim && root_code_dim && hidden_dim && root_hidden_dim && latent_dim && leaf_dim > 3)) {
      throw Error("model dimensions must be positive (leaf_dim > 3)");
    }
    if (relpos_dim != kRelPosDim) throw Error("relpos_dim must be 28");
    if (!(size_scale > 0 && offset_scale > 0 && init_scale >= 0 && kl_weight >= 0 && classifier_weight >= 0)) {
      throw Error("model scales and loss weights must be non-negative");
    }
  }

  bool operator==(const ModelConfig&) const = default;
};

inline json to_json(const ModelConfig& c) {
  return json{{"code_dim", c.code_dim},
              {"root_code_dim", c.root_code_dim},
              {"hidden_dim", c.hidden_dim},
              {"root_hidden_dim", c.root_hidden_dim},
              {"latent_dim", c.latent_dim},
              {"leaf_dim", c.leaf_dim},
              {"relpos_dim", c.relpos_dim},
              {"position_mode", to_string(c.position_mode)},
              {"labels_enabled", c.labels_enabled},
              {"wall_root_mode", to_string(c.wall_root_mode)},
              {"kl_weight", c.kl_weight},
              {"classifier_weight", c.classifier_weight},
              {"leaf_weight", c.leaf_weight},
              {"relpos_weight", c.relpos_weight},
              {"size_scale", c.size_scale},
              {"offset_scale", c.offset_scale},
              {"init_scale", c.init_scale}};
}

inline ModelConfig model_config_from_json(const json& j) {
  ModelConfig c;
  c.code_dim = j.at("code_dim").get<std::size_t>();
  c.root_code_dim = j.at("root_code_dim").get<std::size_t>();
  c.hidden_dim = j.at("hidden_dim").get<std::size_t>();
  c.root_hidden_dim = j.at("root_hidden_dim").get<std::size_t>();
  c.latent_dim = j.at("latent_dim").get<std::size_t>();
  c.leaf_dim = j.at("leaf_dim").get<std::size_t>();
  c.relpos_dim = j.at("relpos_dim").get<std::size_t>();
  c.position_mode = position_mode_from_string(j.at("position_mode").get<std::string>());
  c.labels_enabled = j.at("labels_enabled").get<bool>();
  c.wall_root_mode = wall_root_mode_from_string(j.at("wall_root_mode").get<std::string>());
  c.kl_weight = j.at("kl_weight").get<double>();
  c.classifier_weight = j.at("classifier_weight").get<double>();
  c.leaf_weight = j.at("leaf_weight").get<double>();
  c.relpos_weight = j.at("relpos_weight").get<double>();
  c.size_scale = j.at("size_scale").get<double>();
  c.offset_scale = j.at("offset_scale").get<double>();
  c.init_scale = j.at("init_scale").get<double>();
  return c;
}

// All trainable networks. The block order of `networks()` is the checkpoint
// order.
struct ModelParams {
  ModelConfig cfg;
  Vocabulary vocab;
  Mlp box_enc, box_dec;
  Mlp supp_enc, supp_dec;
  Mlp cooc_enc, cooc_dec;
  Mlp surr_enc, surr_dec;
  Mlp wall_enc, wall_dec;
  Mlp root_enc, root_dec;
  Mlp vae_mu, vae_logvar, vae_expand;
  Mlp classifier;

  std::vector<std::pair<std::string, Mlp*>> networks() {
    return {{"box_enc", &box_enc},   {"box_dec", &box_dec},       {"supp_enc", &supp_enc},     {"supp_dec", &supp_dec},
            {"cooc_enc", &cooc_enc}, {"cooc_dec", &cooc_dec},     {"surr_enc", &surr_enc},     {"surr_dec", &surr_dec},
            {"wall_enc", &wall_enc}, {"wall_dec", &wall_dec},     {"root_enc", &root_enc},     {"root_dec", &root_dec},
            {"vae_mu", &vae_mu},     {"vae_logvar", &vae_logvar}, {"vae_expand", &vae_expand}, {"classifier", &classifier}};
  }
  std::vector<std::pair<std::string, const Mlp*>> networks() const {
    auto v = const_cast<ModelParams*>(this)->networks();
    return {v.begin(), v.end()};
  }

  const Mlp& encoder(NodeKind k) const { return const_cast<ModelParams*>(this)->encoder(k); }
  const Mlp& decoder(NodeKind k) const { return const_cast<ModelParams*>(this)->decoder(k); }
  Mlp& encoder(NodeKind k) {
    switch (k) {
      case NodeKind::leaf: return box_enc;
      case NodeKind::support: return supp_enc;
      case NodeKind::cooccur: return cooc_enc;
      case NodeKind::surround: return surr_enc;
      case NodeKind::wall: return wall_enc;
      case NodeKind::root: return root_enc;
    }
    return box_enc;
  }
  Mlp& decoder(NodeKind k) {
    switch (k) {
      case NodeKind::leaf: return box_dec;
      case NodeKind::support: return supp_dec;
      case NodeKind::cooccur: return cooc_dec;
      case NodeKind::surround: return surr_dec;
      case NodeKind::wall: return wall_dec;
      case NodeKind::root: return root_dec;
    }
    return box_dec;
  }

  std::vector<ParamRef> param_refs() {
    std::vector<ParamRef> out;
    for (auto& [name, m] : networks()) append_param_refs(*m, out);
    return out;
  }

  std::size_t param_count() const {
    std::size_t n = 0;
    for (const auto& [name, m] : networks()) n += m->param_count();
    return n;
  }

  bool operator==(const ModelParams& o) const {
    if (!(cfg == o.cfg && vocab == o.vocab)) return false;
    auto a = networks();
    auto b = o.networks();
    for (std::size_t i = 0; i < a.size(); ++i) {
      if (!(*a[i].second == *b[i].second)) return false;
    }
    return true;
  }
};

inline ModelParams zeros_like(const ModelParams& p) {
  ModelParams g = p;
  for (auto& [name, m] : g.networks()) set_zero(*m);
  return g;
}

inline void set_zero(ModelParams& g) {
  for (auto& [name, m] : g.networks()) set_zero(*m);
}

inline ModelParams init_model(ModelConfig cfg, const Vocabulary& vocab, std::uint64_t seed) {
  cfg.leaf_dim = leaf_dim(vocab);
  cfg.check();
  using I = Eigen::Index;
  const I n = static_cast<I>(cfg.code_dim), h = static_cast<I>(cfg.hidden_dim), r = static_cast<I>(cfg.relpos_dim);
  const I k = static_cast<I>(cfg.leaf_dim), R = static_cast<I>(cfg.root_code_dim), RH = static_cast<I>(cfg.root_hidden_dim);
  const I L = static_cast<I>(cfg.latent_dim), T = static_cast<I>(cfg.top_dim());
  const auto tt = Activation::tanh, lin = Activation::linear;
  ModelParams p;
  p.cfg = cfg;
  p.vocab = vocab;
  std::uint64_t s = seed * 7919u;
  auto mk = [&](std::vector<I> dims, std::vector<Activation> acts) { return init_mlp(dims, acts, ++s, cfg.init_scale); };
  p.box_enc = mk({k, n}, {tt});
  p.box_dec = mk({n, k}, {tt});
  p.supp_enc = mk({2 * n + r, h, n}, {tt, tt});
  p.supp_dec = mk({n, h, 2 * n + r}, {tt, tt});
  p.cooc_enc = mk({2 * n + r, h, n}, {tt, tt});
  p.cooc_dec = mk({n, h, 2 * n + r}, {tt, tt});
  p.surr_enc = mk({3 * n + 2 * r, h, n}, {tt, tt});
  p.surr_dec = mk({n, h, 3 * n + 2 * r}, {tt, tt});
  p.wall_enc = mk({2 * n + r, h, n}, {tt, tt});
  p.wall_dec = mk({n, h, 2 * n + r}, {tt, tt});
  p.root_enc = mk({5 * n + 4 * r, RH, R}, {tt, tt});
  p.root_dec = mk({R, RH, 5 * n + 4 * r}, {tt, tt});
  p.vae_mu = mk({T, L}, {lin});
  p.vae_logvar = mk({T, L}, {lin});
  p.vae_expand = mk({L, T}, {tt});
  p.classifier = mk({n, h, static_cast<I>(kNodeClasses)}, {tt, lin});
  return p;
}

// ---------------------------------------------------------------------------
// Layout and position-encoding transforms

// Rewrites a full hierarchy (as built) into the configured layout and
// position encoding, recomputing every relpos vector from leaf geometry.
inline SceneTree prepare_tree(const SceneTree& t, const ModelConfig& cfg, const RelationConfig& rel = {}) {
  if (t.root.kind != NodeKind::root || t.root.children.size() != 5) {
    throw StructuralError("prepare_tree expects a hierarchy with a root over floor and four walls");
  }
  SceneNode root = t.root;
  if (cfg.wall_root_mode == WallRootMode::none) {
    std::function<void(SceneNode&)> rename = [&](SceneNode& n) {
      if (n.kind == NodeKind::wall) n.kind = NodeKind::cooccur;
      for (auto& c : n.children) rename(c);
    };
    rename(root);
    SceneNode acc = std::move(root.children[0]);
    for (std::size_t i = 1; i < 5; ++i) {
      std::vector<SceneNode> kids;
      kids.push_back(std::move(acc));
      kids.push_back(std::move(root.children[i]));
      acc = make_internal(NodeKind::cooccur, std::move(kids), rel);
    }
    root = std::move(acc);
  } else if (cfg.wall_root_mode == WallRootMode::wall_only) {
    auto pair = [&](std::size_t a, std::size_t b) {
      std::vector<SceneNode> kids;
      kids.push_back(std::move(root.children[a]));
      kids.push_back(std::move(root.children[b]));
      return make_internal(NodeKind::wall, std::move(kids), rel);
    };
    SceneNode south_north = pair(1, 3);
    SceneNode east_west = pair(2, 4);
    std::vector<SceneNode> walls;
    walls.push_back(std::move(south_north));
    walls.push_back(std::move(east_west));
    std::vector<SceneNode> top;
    top.push_back(std::move(root.children[0]));
    top.push_back(make_internal(NodeKind::wall, std::move(walls), rel));
    root = make_internal(NodeKind::support, std::move(top), rel);
  }
  SceneTree out{std::move(root), cfg.position_mode};
  refresh_relpos(out.root, rel, cfg.position_mode);
  return out;
}

// ---------------------------------------------------------------------------
// Feature scaling

inline Vec relpos_scale(const ModelConfig& c) {
  Vec s = Vec::Ones(static_cast<Eigen::Index>(c.relpos_dim));
  if (c.position_mode == PositionMode::absolute) {
    s[0] = s[1] = c.offset_scale;
    s[2] = kPi;
  } else {
    s[0] = kPi;
    s[1] = s[2] = c.offset_scale;
  }
  return s;
}

// Sizes plus a one-hot label block; an unknown category gets a uniform block.
inline Vec leaf_features(const SceneObject& o, const ModelParams& p) {
  const bool unknown = o.category == kUnknownCategory;
  if (!unknown && o.category >= p.vocab.size()) throw Error("leaf '" + o.id + "' has a category outside the model vocabulary");
  Vec v = Vec::Zero(static_cast<Eigen::Index>(p.cfg.leaf_dim));
  v[0] = o.obb.size_x / p.cfg.size_scale;
  v[1] = o.obb.size_y / p.cfg.size_scale;
  v[2] = o.obb.size_z / p.cfg.size_scale;
  if (!p.cfg.labels_enabled) return v;
  if (unknown) {
    v.tail(static_cast<Eigen::Index>(p.vocab.size())).setConstant(1.0 / static_cast<double>(p.vocab.size()));
  } else {
    v[3 + static_cast<Eigen::Index>(o.category)] = 1.0;
  }
  return v;
}

inline Vec relpos_features(const RelVec& r, const ModelConfig& c) {
  Vec v(static_cast<Eigen::Index>(kRelPosDim));
  const Vec s = relpos_scale(c);
  for (std::size_t i = 0; i < kRelPosDim; ++i) v[static_cast<Eigen::Index>(i)] = r[i] / s[static_cast<Eigen::Index>(i)];
  return v;
}

// Unscaled, hardened relpos: one-hot groups in relative mode, the three
// reals alone otherwise.
inline RelVec relpos_from_features(const Eigen::Ref<const Vec>& v, const ModelConfig& c) {
  const Vec s = relpos_scale(c);
  RelVec r{};
  for (std::size_t i = 0; i < kRelPosDim; ++i) r[i] = v[static_cast<Eigen::Index>(i)] * s[static_cast<Eigen::Index>(i)];
  if (c.position_mode == PositionMode::relative) return RelPos28::harden(r).to_vector();
  RelVec out{};
  out[0] = r[0];
  out[1] = r[1];
  out[2] = r[2];
  return out;
}

// ---------------------------------------------------------------------------
// Batched backpropagation through structure. Trees of a batch are flattened
// into one node table; nodes of the same kind at the same height (encoder)
// or depth (decoder) run through their network as one matrix product.

struct LossBreakdown {
  double recon_leaf = 0.0;
  double recon_relpos = 0.0;
  double classifier = 0.0;
  double kl = 0.0;
  double total = 0.0;
};

namespace detail {

struct FlatNode {
  NodeKind kind = NodeKind::leaf;
  int tree = 0;
  int parent = -1;
  std::vector<int> children;
  int depth = 0;
  int height = 0;
  Eigen::Index leaf_col = -1;  // leaves: column of leaf targets / predictions
  Eigen::Index rel_col = -1;   // internal: first relpos column (one per non-reference child)
  int label = -1;              // class label; -1 for the top node
  TreePath path;
};

struct FlatBatch {
  std::vector<FlatNode> nodes;
  std::vector<int> tops;
  Mat leaf_targets;
  Mat rel_targets;
  std::vector<std::size_t> leaf_category;
  std::vector<double> leaf_count, rel_count, cls_count;  // per tree
  int max_height = 0;
  int max_depth = 0;
};

inline FlatBatch flatten(const ModelParams& p, const std::vector<const SceneTree*>& trees) {
  FlatBatch b;
  std::vector<Vec> leaves, rels;
  b.leaf_count.assign(trees.size(), 0.0);
  b.rel_count.assign(trees.size(), 0.0);
  b.cls_count.assign(trees.size(), 0.0);
  for (std::size_t t = 0; t < trees.size(); ++t) {
    if (trees[t]->position_mode != p.cfg.position_mode) {
      throw ConfigMismatchError("tree position mode '" + to_string(trees[t]->position_mode) + "' differs from the model's '" +
                                to_string(p.cfg.position_mode) + "'");
    }
    if (trees[t]->root.kind != p.cfg.top_kind()) {
      throw StructuralError("tree top node is '" + to_string(trees[t]->root.kind) + "' but the model's layout expects '" +
                            to_string(p.cfg.top_kind()) + "'");
    }
    TreePath path;
    std::function<int(const SceneNode&, int, int)> visit = [&](const SceneNode& n, int parent, int depth) -> int {
      const int id = static_cast<int>(b.nodes.size());
      b.nodes.emplace_back();
      {
        FlatNode& f = b.nodes.back();
        f.kind = n.kind;
        f.tree = static_cast<int>(t);
        f.parent = parent;
        f.depth = depth;
        f.label = parent < 0 ? -1 : class_of(n.kind);
        f.path = path;
      }
      if (parent >= 0) b.cls_count[t] += 1;
      if (n.is_leaf()) {
        b.nodes[static_cast<std::size_t>(id)].leaf_col = static_cast<Eigen::Index>(leaves.size());
        leaves.push_back(leaf_features(n.object, p));
        b.leaf_category.push_back(n.object.category);
        b.leaf_count[t] += 1;
        return id;
      }
      if (n.kind == NodeKind::root && parent >= 0) throw StructuralError("root node below the top");
      if (n.children.size() != arity(n.kind) || n.relpos.size() + 1 != n.children.size()) {
        throw StructuralError("node '" + path_to_string(path) + "' of kind " + to_string(n.kind) + " has " +
                              std::to_string(n.children.size()) + " children and " + std::to_string(n.relpos.size()) +
                              " relpos vectors");
      }
      b.nodes[static_cast<std::size_t>(id)].rel_col = static_cast<Eigen::Index>(rels.size());
      for (const auto& r : n.relpos) rels.push_back(relpos_features(r, p.cfg));
      b.rel_count[t] += static_cast<double>(n.relpos.size());
      int h = 0;
      for (std::size_t i = 0; i < n.children.size(); ++i) {
        path.push_back(i);
        const int c = visit(n.children[i], id, depth + 1);
        path.pop_back();
        b.nodes[static_cast<std::size_t>(id)].children.push_back(c);
        h = std::max(h, b.nodes[static_cast<std::size_t>(c)].height + 1);
      }
      b.nodes[static_cast<std::size_t>(id)].height = h;
      b.max_height = std::max(b.max_height, h);
      b.max_depth = std::max(b.max_depth, depth + 1);
      return id;
    };
    b.tops.push_back(visit(trees[t]->root, -1, 0));
  }
  b.leaf_targets.resize(static_cast<Eigen::Index>(p.cfg.leaf_dim), static_cast<Eigen::Index>(leaves.size()));
  for (std::size_t i = 0; i < leaves.size(); ++i) b.leaf_targets.col(static_cast<Eigen::Index>(i)) = leaves[i];
  b.rel_targets.resize(static_cast<Eigen::Index>(kRelPosDim), static_cast<Eigen::Index>(rels.size()));
  for (std::size_t i = 0; i < rels.size(); ++i) b.rel_targets.col(static_cast<Eigen::Index>(i)) = rels[i];
  return b;
}

struct NodeGroup {
  NodeKind kind;
  std::vector<int> idx;
  MlpCache cache;
};

// Node lists bucketed by (level, kind), in increasing level order.
inline std::vector<std::pair<NodeKind, std::vector<int>>> bucket(const FlatBatch& b, bool by_height, bool internal_only) {
  const int levels = (by_height ? b.max_height : b.max_depth) + 1;
  std::vector<std::array<std::vector<int>, 6>> lv(static_cast<std::size_t>(levels));
  for (std::size_t i = 0; i < b.nodes.size(); ++i) {
    const auto& n = b.nodes[i];
    if (internal_only && n.kind == NodeKind::leaf) continue;
    lv[static_cast<std::size_t>(by_height ? n.height : n.depth)][static_cast<std::size_t>(n.kind)].push_back(static_cast<int>(i));
  }
  std::vector<std::pair<NodeKind, std::vector<int>>> out;
  for (auto& level : lv) {
    for (std::size_t k = 0; k < 6; ++k) {
      if (!level[k].empty()) out.emplace_back(static_cast<NodeKind>(k), std::move(level[k]));
    }
  }
  return out;
}

class Pass {
 public:
  Pass(const ModelParams& p, const FlatBatch& b) : p_(p), b_(b) {
    n_ = static_cast<Eigen::Index>(p.cfg.code_dim);
    r_ = static_cast<Eigen::Index>(kRelPosDim);
    B_ = static_cast<Eigen::Index>(b.tops.size());
  }

  void encode() {
    const auto N = static_cast<Eigen::Index>(b_.nodes.size());
    enc_ = Mat::Zero(n_, N);
    top_ = Mat::Zero(static_cast<Eigen::Index>(p_.cfg.top_dim()), B_);
    for (auto& [kind, idx] : bucket(b_, true, false)) {
      Mat x = kind == NodeKind::leaf ? gather_leaf_targets(idx) : gather_inputs(idx, enc_);
      NodeGroup g{kind, idx, mlp_forward(p_.encoder(kind), x)};
      const Mat& y = g.cache.output();
      for (std::size_t j = 0; j < idx.size(); ++j) {
        const auto& node = b_.nodes[static_cast<std::size_t>(idx[j])];
        if (kind == NodeKind::root) {
          top_.col(node.tree) = y.col(static_cast<Eigen::Index>(j));
        } else {
          enc_.col(idx[j]) = y.col(static_cast<Eigen::Index>(j));
        }
      }
      enc_groups_.push_back(std::move(g));
    }
    if (p_.cfg.wall_root_mode != WallRootMode::full) {
      for (Eigen::Index t = 0; t < B_; ++t) top_.col(t) = enc_.col(b_.tops[static_cast<std::size_t>(t)]);
    }
  }

  // eps: latent x B standard normal draws (zero gives z = mu).
  void vae(const Mat& eps) {
    mu_ = mlp_forward(p_.vae_mu, top_);
    lv_ = mlp_forward(p_.vae_logvar, top_);
    eps_ = eps;
    z_ = mu_.output() + ((0.5 * lv_.output().array()).exp() * eps.array()).matrix();
    kl_ = (0.5 * (lv_.output().array().exp() + mu_.output().array().square() - 1.0 - lv_.output().array()))
              .colwise()
              .sum()
              .transpose()
              .matrix();
  }

  void decode_from(const Mat& z) {
    z_ = z;
    ex_ = mlp_forward(p_.vae_expand, z);
    const auto N = static_cast<Eigen::Index>(b_.nodes.size());
    dec_ = Mat::Zero(n_, N);
    rel_pred_ = Mat::Zero(r_, b_.rel_targets.cols());
    for (auto& [kind, idx] : bucket(b_, false, true)) {
      Mat x(p_.decoder(kind).in_dim(), static_cast<Eigen::Index>(idx.size()));
      for (std::size_t j = 0; j < idx.size(); ++j) x.col(static_cast<Eigen::Index>(j)) = dec_input(idx[j]);
      NodeGroup g{kind, idx, mlp_forward(p_.decoder(kind), x)};
      scatter_outputs(g.idx, g.cache.output());
      dec_groups_.push_back(std::move(g));
    }
    for (std::size_t i = 0; i < b_.nodes.size(); ++i) {
      if (b_.nodes[i].kind == NodeKind::leaf) leaf_nodes_.push_back(static_cast<int>(i));
    }
    Mat xl(n_, static_cast<Eigen::Index>(leaf_nodes_.size()));
    for (std::size_t j = 0; j < leaf_nodes_.size(); ++j) xl.col(static_cast<Eigen::Index>(j)) = dec_.col(leaf_nodes_[j]);
    leaf_c_ = mlp_forward(p_.box_dec, xl);
    for (std::size_t i = 0; i < b_.nodes.size(); ++i) {
      if (b_.nodes[i].label >= 0) cls_nodes_.push_back(static_cast<int>(i));
    }
    Mat xc(n_, static_cast<Eigen::Index>(cls_nodes_.size()));
    for (std::size_t j = 0; j < cls_nodes_.size(); ++j) xc.col(static_cast<Eigen::Index>(j)) = dec_.col(cls_nodes_[j]);
    cls_c_ = mlp_forward(p_.classifier, xc);
  }

  void decode() { decode_from(z_); }

  LossBreakdown loss() {
    const auto& cfg = p_.cfg;
    const double B = static_cast<double>(B_);
    std::vector<double> leaf_t(b_.tops.size(), 0.0), rel_t(b_.tops.size(), 0.0), cls_t(b_.tops.size(), 0.0);
    d_leaf_ = Mat::Zero(leaf_c_.output().rows(), leaf_c_.output().cols());
    for (std::size_t j = 0; j < leaf_nodes_.size(); ++j) {
      const auto& node = b_.nodes[static_cast<std::size_t>(leaf_nodes_[j])];
      const Vec diff = b_.leaf_targets.col(node.leaf_col) - leaf_c_.output().col(static_cast<Eigen::Index>(j));
      const double cnt = b_.leaf_count[static_cast<std::size_t>(node.tree)];
      leaf_t[static_cast<std::size_t>(node.tree)] += diff.squaredNorm() / cnt;
      d_leaf_.col(static_cast<Eigen::Index>(j)) = -2.0 * cfg.leaf_weight / (cnt * B) * diff;
    }
    d_rel_ = Mat::Zero(r_, rel_pred_.cols());
    for (const auto& node : b_.nodes) {
      if (node.kind == NodeKind::leaf) continue;
      const double cnt = b_.rel_count[static_cast<std::size_t>(node.tree)];
      for (std::size_t i = 1; i < node.children.size(); ++i) {
        const Eigen::Index c = node.rel_col + static_cast<Eigen::Index>(i - 1);
        const Vec diff = b_.rel_targets.col(c) - rel_pred_.col(c);
        rel_t[static_cast<std::size_t>(node.tree)] += diff.squaredNorm() / cnt;
        d_rel_.col(c) = -2.0 * cfg.relpos_weight / (cnt * B) * diff;
      }
    }
    d_logits_ = Mat::Zero(static_cast<Eigen::Index>(kNodeClasses), static_cast<Eigen::Index>(cls_nodes_.size()));
    for (std::size_t j = 0; j < cls_nodes_.size(); ++j) {
      const auto& node = b_.nodes[static_cast<std::size_t>(cls_nodes_[j])];
      const auto sx = softmax_xent(cls_c_.output().col(static_cast<Eigen::Index>(j)), static_cast<std::size_t>(node.label));
      const double cnt = b_.cls_count[static_cast<std::size_t>(node.tree)];
      cls_t[static_cast<std::size_t>(node.tree)] += sx.loss / cnt;
      d_logits_.col(static_cast<Eigen::Index>(j)) = cfg.classifier_weight / (cnt * B) * sx.grad;
    }
    LossBreakdown l;
    for (std::size_t t = 0; t < b_.tops.size(); ++t) {
      l.recon_leaf += leaf_t[t] / B;
      l.recon_relpos += rel_t[t] / B;
      l.classifier += cls_t[t] / B;
      l.kl += kl_.size() ? kl_[static_cast<Eigen::Index>(t)] / B : 0.0;
    }
    l.total = cfg.leaf_weight * l.recon_leaf + cfg.relpos_weight * l.recon_relpos + cfg.classifier_weight * l.classifier +
              cfg.kl_weight * l.kl;
    per_tree_.resize(b_.tops.size());
    for (std::size_t t = 0; t < b_.tops.size(); ++t) {
      per_tree_[t] = cfg.leaf_weight * leaf_t[t] + cfg.relpos_weight * rel_t[t] + cfg.classifier_weight * cls_t[t] +
                     cfg.kl_weight * (kl_.size() ? kl_[static_cast<Eigen::Index>(t)] : 0.0);
    }
    return l;
  }

  void backward(ModelParams& g) {
    const auto N = static_cast<Eigen::Index>(b_.nodes.size());
    Mat ddec = Mat::Zero(n_, N);
    Mat dtop_dec = Mat::Zero(static_cast<Eigen::Index>(p_.cfg.top_dim()), B_);
    {
      const Mat dx = mlp_backward(p_.classifier, cls_c_, d_logits_, g.classifier);
      for (std::size_t j = 0; j < cls_nodes_.size(); ++j) ddec.col(cls_nodes_[j]) += dx.col(static_cast<Eigen::Index>(j));
    }
    {
      const Mat dx = mlp_backward(p_.box_dec, leaf_c_, d_leaf_, g.box_dec);
      for (std::size_t j = 0; j < leaf_nodes_.size(); ++j) ddec.col(leaf_nodes_[j]) += dx.col(static_cast<Eigen::Index>(j));
    }
    for (auto it = dec_groups_.rbegin(); it != dec_groups_.rend(); ++it) {
      const Mlp& dec = p_.decoder(it->kind);
      Mat dy(dec.out_dim(), static_cast<Eigen::Index>(it->idx.size()));
      for (std::size_t j = 0; j < it->idx.size(); ++j) {
        const auto& node = b_.nodes[static_cast<std::size_t>(it->idx[j])];
        Eigen::Index off = 0;
        for (std::size_t i = 0; i < node.children.size(); ++i) {
          dy.block(off, static_cast<Eigen::Index>(j), n_, 1) = ddec.col(node.children[i]);
          off += n_;
          if (i == 0) continue;
          dy.block(off, static_cast<Eigen::Index>(j), r_, 1) = d_rel_.col(node.rel_col + static_cast<Eigen::Index>(i - 1));
          off += r_;
        }
      }
      const Mat dx = mlp_backward(dec, it->cache, dy, g.decoder(it->kind));
      for (std::size_t j = 0; j < it->idx.size(); ++j) {
        const auto& node = b_.nodes[static_cast<std::size_t>(it->idx[j])];
        if (node.parent < 0) {
          dtop_dec.col(node.tree) += dx.col(static_cast<Eigen::Index>(j));
        } else {
          ddec.col(it->idx[j]) += dx.col(static_cast<Eigen::Index>(j));
        }
      }
    }
    const Mat dz = mlp_backward(p_.vae_expand, ex_, dtop_dec, g.vae_expand);
    const double kw = p_.cfg.kl_weight / static_cast<double>(B_);
    const Eigen::ArrayXXd lv = lv_.output().array();
    const Eigen::ArrayXXd sd = (0.5 * lv).exp();
    const Mat dmu = dz + kw * mu_.output();
    const Mat dlv = (dz.array() * eps_.array() * 0.5 * sd + kw * 0.5 * (lv.exp() - 1.0)).matrix();
    Mat dtop = mlp_backward(p_.vae_mu, mu_, dmu, g.vae_mu);
    dtop += mlp_backward(p_.vae_logvar, lv_, dlv, g.vae_logvar);

    Mat denc = Mat::Zero(n_, N);
    if (p_.cfg.wall_root_mode != WallRootMode::full) {
      for (Eigen::Index t = 0; t < B_; ++t) denc.col(b_.tops[static_cast<std::size_t>(t)]) += dtop.col(t);
    }
    for (auto it = enc_groups_.rbegin(); it != enc_groups_.rend(); ++it) {
      const Mlp& enc = p_.encoder(it->kind);
      Mat dy(enc.out_dim(), static_cast<Eigen::Index>(it->idx.size()));
      for (std::size_t j = 0; j < it->idx.size(); ++j) {
        const auto& node = b_.nodes[static_cast<std::size_t>(it->idx[j])];
        dy.col(static_cast<Eigen::Index>(j)) = it->kind == NodeKind::root ? dtop.col(node.tree) : denc.col(it->idx[j]);
      }
      const Mat dx = mlp_backward(enc, it->cache, dy, g.encoder(it->kind));
      if (it->kind == NodeKind::leaf) continue;
      for (std::size_t j = 0; j < it->idx.size(); ++j) {
        const auto& node = b_.nodes[static_cast<std::size_t>(it->idx[j])];
        Eigen::Index off = 0;
        for (std::size_t i = 0; i < node.children.size(); ++i) {
          denc.col(node.children[i]) += dx.block(off, static_cast<Eigen::Index>(j), n_, 1);
          off += n_ + (i == 0 ? 0 : r_);
        }
      }
    }
  }

  const Mat& top_codes() const { return top_; }
  const Mat& enc_codes() const { return enc_; }
  const Mat& mu() const { return mu_.output(); }
  const Mat& logvar() const { return lv_.output(); }
  const Mat& z() const { return z_; }
  const Mat& leaf_pred() const { return leaf_c_.output(); }
  const Mat& rel_pred() const { return rel_pred_; }
  const Mat& logits() const { return cls_c_.output(); }
  const std::vector<int>& leaf_nodes() const { return leaf_nodes_; }
  const std::vector<int>& cls_nodes() const { return cls_nodes_; }
  const std::vector<NodeGroup>& enc_groups() const { return enc_groups_; }
  const std::vector<double>& per_tree_loss() const { return per_tree_; }

 private:
  Mat gather_leaf_targets(const std::vector<int>& idx) const {
    Mat x(static_cast<Eigen::Index>(p_.cfg.leaf_dim), static_cast<Eigen::Index>(idx.size()));
    for (std::size_t j = 0; j < idx.size(); ++j) {
      x.col(static_cast<Eigen::Index>(j)) = b_.leaf_targets.col(b_.nodes[static_cast<std::size_t>(idx[j])].leaf_col);
    }
    return x;
  }

  // [x1 x2 r12 x3 r13 ...] per node.
  Mat gather_inputs(const std::vector<int>& idx, const Mat& codes) const {
    const auto& first = b_.nodes[static_cast<std::size_t>(idx.front())];
    const Eigen::Index rows = static_cast<Eigen::Index>(first.children.size()) * n_ +
                              static_cast<Eigen::Index>(first.children.size() - 1) * r_;
    Mat x(rows, static_cast<Eigen::Index>(idx.size()));
    for (std::size_t j = 0; j < idx.size(); ++j) {
      const auto& node = b_.nodes[static_cast<std::size_t>(idx[j])];
      Eigen::Index off = 0;
      for (std::size_t i = 0; i < node.children.size(); ++i) {
        x.block(off, static_cast<Eigen::Index>(j), n_, 1) = codes.col(node.children[i]);
        off += n_;
        if (i == 0) continue;
        x.block(off, static_cast<Eigen::Index>(j), r_, 1) = b_.rel_targets.col(node.rel_col + static_cast<Eigen::Index>(i - 1));
        off += r_;
      }
    }
    return x;
  }

  Vec dec_input(int i) const {
    const auto& node = b_.nodes[static_cast<std::size_t>(i)];
    return node.parent < 0 ? Vec(ex_.output().col(node.tree)) : Vec(dec_.col(i));
  }

  void scatter_outputs(const std::vector<int>& idx, const Mat& y) {
    for (std::size_t j = 0; j < idx.size(); ++j) {
      const auto& node = b_.nodes[static_cast<std::size_t>(idx[j])];
      Eigen::Index off = 0;
      for (std::size_t i = 0; i < node.children.size(); ++i) {
        dec_.col(node.children[i]) = y.block(off, static_cast<Eigen::Index>(j), n_, 1);
        off += n_;
        if (i == 0) continue;
        rel_pred_.col(node.rel_col + static_cast<Eigen::Index>(i - 1)) = y.block(off, static_cast<Eigen::Index>(j), r_, 1);
        off += r_;
      }
    }
  }

  const ModelParams& p_;
  const FlatBatch& b_;
  Eigen::Index n_, r_, B_;
  Mat enc_, top_;
  std::vector<NodeGroup> enc_groups_;
  MlpCache mu_, lv_, ex_;
  Mat eps_, z_;
  Vec kl_;
  Mat dec_, rel_pred_;
  std::vector<NodeGroup> dec_groups_;
  std::vector<int> leaf_nodes_, cls_nodes_;
  MlpCache leaf_c_, cls_c_;
  Mat d_leaf_, d_rel_, d_logits_;
  std::vector<double> per_tree_;
};

}  // namespace detail

// Standard-normal draws, one column per tree, reproducible per seed.
inline Mat sample_eps(std::size_t latent, std::size_t count, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g(0.0, 1.0);
  Mat e(static_cast<Eigen::Index>(latent), static_cast<Eigen::Index>(count));
  for (Eigen::Index c = 0; c < e.cols(); ++c) {
    for (Eigen::Index r = 0; r < e.rows(); ++r) e(r, c) = g(rng);
  }
  return e;
}

// Loss of a batch of prepared trees under the given noise (latent x batch);
// gradients are accumulated into `grads` when provided.
inline LossBreakdown compute_loss(const ModelParams& p, const std::vector<const SceneTree*>& trees, const Mat& eps,
                                  ModelParams* grads = nullptr, std::vector<double>* per_tree = nullptr) {
  if (trees.empty()) throw Error("compute_loss: empty batch");
  if (eps.rows() != static_cast<Eigen::Index>(p.cfg.latent_dim) || eps.cols() != static_cast<Eigen::Index>(trees.size())) {
    throw Error("compute_loss: noise matrix must be latent_dim x batch");
  }
  const detail::FlatBatch b = detail::flatten(p, trees);
  detail::Pass pass(p, b);
  pass.encode();
  pass.vae(eps);
  pass.decode();
  const LossBreakdown l = pass.loss();
  if (per_tree) *per_tree = pass.per_tree_loss();
  if (grads) pass.backward(*grads);
  return l;
}

inline LossBreakdown compute_loss(const ModelParams& p, const std::vector<const SceneTree*>& trees, std::uint64_t seed,
                                  ModelParams* grads = nullptr) {
  return compute_loss(p, trees, sample_eps(p.cfg.latent_dim, trees.size(), seed), grads);
}

inline double kl_divergence(const Vec& mu, const Vec& logvar) {
  return 0.5 * (logvar.array().exp() + mu.array().square() - 1.0 - logvar.array()).sum();
}

struct LatentGaussian {
  Vec mu, logvar;
};

struct VaeSample {
  Vec z;
  LatentGaussian gaussian;
};

inline VaeSample vae_head(const ModelParams& p, const Vec& top_code, std::mt19937_64& rng) {
  if (top_code.size() != static_cast<Eigen::Index>(p.cfg.top_dim())) throw Error("vae_head: code dimension mismatch");
  VaeSample s;
  s.gaussian.mu = mlp_forward(p.vae_mu, top_code);
  s.gaussian.logvar = mlp_forward(p.vae_logvar, top_code);
  std::normal_distribution<double> g(0.0, 1.0);
  Vec eps(s.gaussian.mu.size());
  for (Eigen::Index i = 0; i < eps.size(); ++i) eps[i] = g(rng);
  s.z = s.gaussian.mu + ((0.5 * s.gaussian.logvar.array()).exp() * eps.array()).matrix();
  return s;
}

inline Vec classify_node(const ModelParams& p, const Vec& code) {
  if (code.size() != static_cast<Eigen::Index>(p.cfg.code_dim)) throw Error("classify_node: code dimension mismatch");
  return softmax(mlp_forward(p.classifier, code));
}

struct EncodeTraceEntry {
  TreePath path;
  NodeKind kind;
};

struct EncodeResult {
  Vec top_code;
  std::vector<std::pair<TreePath, Vec>> codes;  // every non-root node, pre-order
  std::vector<EncodeTraceEntry> trace;         // encoder invocations in execution order
};

inline ValidationOptions model_validation(const ModelConfig& cfg) {
  ValidationOptions o;
  o.geometry = false;
  o.layout = cfg.wall_root_mode;
  return o;
}

// Top codes of prepared trees without validation (leaves may carry
// kUnknownCategory).
inline Mat encode_top_codes(const ModelParams& p, const std::vector<const SceneTree*>& trees) {
  const detail::FlatBatch b = detail::flatten(p, trees);
  detail::Pass pass(p, b);
  pass.encode();
  return pass.top_codes();
}

inline LatentGaussian latent_gaussian(const ModelParams& p, const Vec& top_code) {
  if (top_code.size() != static_cast<Eigen::Index>(p.cfg.top_dim())) throw Error("latent_gaussian: code dimension mismatch");
  return {mlp_forward(p.vae_mu, top_code), mlp_forward(p.vae_logvar, top_code)};
}

// Validates a prepared tree (arity, ordering, surround semantics), then runs
// the encoders bottom-up.
inline EncodeResult encode_tree(const ModelParams& p, const SceneTree& tree) {
  const auto rep = validate_tree(tree, p.vocab, model_validation(p.cfg));
  if (!rep.ok()) {
    throw StructuralError("encode_tree: invalid tree (" + rep.violations[0].code + " at '" + rep.violations[0].path +
                          "'): " + rep.violations[0].message);
  }
  const detail::FlatBatch b = detail::flatten(p, {&tree});
  detail::Pass pass(p, b);
  pass.encode();
  EncodeResult r;
  r.top_code = pass.top_codes().col(0);
  for (std::size_t i = 0; i < b.nodes.size(); ++i) {
    if (b.nodes[i].kind != NodeKind::root) r.codes.emplace_back(b.nodes[i].path, pass.enc_codes().col(static_cast<Eigen::Index>(i)));
  }
  for (const auto& g : pass.enc_groups()) {
    for (int i : g.idx) r.trace.push_back({b.nodes[static_cast<std::size_t>(i)].path, g.kind});
  }
  return r;
}

// Decoder outputs along a reference topology, in physical units.
struct TeacherOutput {
  std::vector<std::pair<TreePath, Vec>> leaves;                  // raw leaf features (sizes unscaled)
  std::vector<std::pair<TreePath, std::vector<Vec>>> relpos;     // raw relpos features per internal node
  std::vector<std::pair<TreePath, Vec>> class_probs;             // non-top nodes
};

inline TeacherOutput decode_tree_teacher(const ModelParams& p, const Vec& z, const SceneTree& reference) {
  if (z.size() != static_cast<Eigen::Index>(p.cfg.latent_dim)) throw Error("decode_tree_teacher: latent dimension mismatch");
  const detail::FlatBatch b = detail::flatten(p, {&reference});
  detail::Pass pass(p, b);
  pass.decode_from(Mat(z));
  TeacherOutput out;
  const Vec rs = relpos_scale(p.cfg);
  for (std::size_t j = 0; j < pass.leaf_nodes().size(); ++j) {
    Vec v = pass.leaf_pred().col(static_cast<Eigen::Index>(j));
    v.head(3) *= p.cfg.size_scale;
    out.leaves.emplace_back(b.nodes[static_cast<std::size_t>(pass.leaf_nodes()[j])].path, v);
  }
  for (const auto& node : b.nodes) {
    if (node.kind == NodeKind::leaf) continue;
    std::vector<Vec> rels;
    for (std::size_t i = 1; i < node.children.size(); ++i) {
      rels.push_back(pass.rel_pred().col(node.rel_col + static_cast<Eigen::Index>(i - 1)).cwiseProduct(rs));
    }
    out.relpos.emplace_back(node.path, std::move(rels));
  }
  for (std::size_t j = 0; j < pass.cls_nodes().size(); ++j) {
    out.class_probs.emplace_back(b.nodes[static_cast<std::size_t>(pass.cls_nodes()[j])].path,
                                 softmax(pass.logits().col(static_cast<Eigen::Index>(j))));
  }
  return out;
}

// Reconstruction statistics with z = mu (no sampling noise).
struct TeacherEval {
  LossBreakdown loss;
  std::size_t nodes = 0, nodes_correct = 0;
  std::size_t leaves = 0, leaves_correct = 0;
};

inline TeacherEval evaluate_teacher(const ModelParams& p, const std::vector<const SceneTree*>& trees,
                                    std::size_t chunk = 256) {
  TeacherEval e;
  for (std::size_t s = 0; s < trees.size(); s += chunk) {
    const std::vector<const SceneTree*> part(trees.begin() + static_cast<std::ptrdiff_t>(s),
                                             trees.begin() + static_cast<std::ptrdiff_t>(std::min(trees.size(), s + chunk)));
    const detail::FlatBatch b = detail::flatten(p, part);
    detail::Pass pass(p, b);
    pass.encode();
    pass.vae(Mat::Zero(static_cast<Eigen::Index>(p.cfg.latent_dim), static_cast<Eigen::Index>(part.size())));
    pass.decode();
    const LossBreakdown l = pass.loss();
    const double w = static_cast<double>(part.size()) / static_cast<double>(trees.size());
    e.loss.recon_leaf += w * l.recon_leaf;
    e.loss.recon_relpos += w * l.recon_relpos;
    e.loss.classifier += w * l.classifier;
    e.loss.kl += w * l.kl;
    e.loss.total += w * l.total;
    for (std::size_t j = 0; j < pass.cls_nodes().size(); ++j) {
      Eigen::Index arg;
      pass.logits().col(static_cast<Eigen::Index>(j)).maxCoeff(&arg);
      e.nodes_correct += arg == b.nodes[static_cast<std::size_t>(pass.cls_nodes()[j])].label;
      ++e.nodes;
    }
    const auto k = static_cast<Eigen::Index>(p.vocab.size());
    for (std::size_t j = 0; j < pass.leaf_nodes().size(); ++j) {
      Eigen::Index arg;
      pass.leaf_pred().col(static_cast<Eigen::Index>(j)).segment(3, k).maxCoeff(&arg);
      const auto& node = b.nodes[static_cast<std::size_t>(pass.leaf_nodes()[j])];
      e.leaves_correct += static_cast<std::size_t>(arg) == b.leaf_category[static_cast<std::size_t>(node.leaf_col)];
      ++e.leaves;
    }
  }
  return e;
}

// ---------------------------------------------------------------------------
// Free decoding: the classifier picks each node's decoder. Samples are
// decoded together level by level.

struct DecodeLimits {
  std::size_t max_depth = 12;
  std::size_t max_nodes = 128;
  double min_size = 0.02;  // meters; decoded sizes are clamped to this
};

struct FreeDecodeResult {
  std::optional<SceneTree> tree;
  std::string error;
};

namespace detail {

enum class Role { top, floor_leaf, wall_slot, wall_leaf, group, free };

struct Proto {
  NodeKind kind = NodeKind::leaf;
  std::vector<int> children;
  std::vector<RelVec> relpos;
  SceneObject object;
};

struct Item {
  int sample;
  int proto;
  Role role;
  int depth;
  int slot;  // wall slot index for wall roles
};

inline SceneNode build_from_protos(const std::vector<Proto>& protos, int i) {
  const Proto& pr = protos[static_cast<std::size_t>(i)];
  SceneNode n;
  n.kind = pr.kind;
  n.object = pr.object;
  n.relpos = pr.relpos;
  for (int c : pr.children) n.children.push_back(build_from_protos(protos, c));
  return n;
}

}  // namespace detail

inline std::vector<FreeDecodeResult> decode_trees_free(const ModelParams& p, const Mat& Z, const DecodeLimits& limits = {},
                                                       std::optional<NodeClass> force = std::nullopt) {
  using detail::Item;
  using detail::Role;
  const auto& cfg = p.cfg;
  if (Z.rows() != static_cast<Eigen::Index>(cfg.latent_dim)) throw Error("decode_trees_free: latent dimension mismatch");
  const auto S = static_cast<std::size_t>(Z.cols());
  const bool full = cfg.wall_root_mode == WallRootMode::full;
  const auto n = static_cast<Eigen::Index>(cfg.code_dim), r = static_cast<Eigen::Index>(kRelPosDim);
  const auto vocab_k = static_cast<Eigen::Index>(p.vocab.size());

  std::vector<std::vector<detail::Proto>> protos(S);
  std::vector<std::string> errors(S);
  std::vector<std::size_t> object_counter(S, 0);

  std::vector<Item> items;
  Mat codes = mlp_forward(p.vae_expand, Z).output();
  for (std::size_t s = 0; s < S; ++s) {
    protos[s].emplace_back();
    items.push_back({static_cast<int>(s), 0, Role::top, 0, -1});
  }

  auto fail = [&](int s, const std::string& why) {
    if (errors[static_cast<std::size_t>(s)].empty()) errors[static_cast<std::size_t>(s)] = why;
  };

  while (!items.empty()) {
    // Decide what each frontier code becomes.
    std::vector<NodeKind> kinds(items.size(), NodeKind::leaf);
    std::vector<std::size_t> to_classify;
    for (std::size_t i = 0; i < items.size(); ++i) {
      switch (items[i].role) {
        case Role::top: kinds[i] = cfg.top_kind(); break;
        case Role::floor_leaf:
        case Role::wall_leaf: kinds[i] = NodeKind::leaf; break;
        default: to_classify.push_back(i);
      }
    }
    if (!to_classify.empty()) {
      Mat x(n, static_cast<Eigen::Index>(to_classify.size()));
      for (std::size_t j = 0; j < to_classify.size(); ++j) x.col(static_cast<Eigen::Index>(j)) = codes.col(static_cast<Eigen::Index>(to_classify[j]));
      const Mat logits = mlp_forward(p.classifier, x).output();
      for (std::size_t j = 0; j < to_classify.size(); ++j) {
        const Item& it = items[to_classify[j]];
        Vec l = logits.col(static_cast<Eigen::Index>(j));
        const bool allow_wall = it.role == Role::wall_slot || cfg.wall_root_mode == WallRootMode::wall_only;
        if (!allow_wall) l[static_cast<int>(NodeClass::wall)] = -INFINITY;
        Eigen::Index arg;
        l.maxCoeff(&arg);
        NodeClass c = static_cast<NodeClass>(arg);
        if (force && (allow_wall || *force != NodeClass::wall)) c = *force;
        NodeKind k = kind_of(c);
        if (it.role == Role::wall_slot && k != NodeKind::wall) k = NodeKind::leaf;
        kinds[to_classify[j]] = k;
      }
    }

    // Leaves through the box decoder.
    std::vector<std::size_t> leaf_items;
    for (std::size_t i = 0; i < items.size(); ++i) {
      if (kinds[i] == NodeKind::leaf) leaf_items.push_back(i);
    }
    if (!leaf_items.empty()) {
      Mat x(n, static_cast<Eigen::Index>(leaf_items.size()));
      for (std::size_t j = 0; j < leaf_items.size(); ++j) x.col(static_cast<Eigen::Index>(j)) = codes.col(static_cast<Eigen::Index>(leaf_items[j]));
      const Mat y = mlp_forward(p.box_dec, x).output();
      for (std::size_t j = 0; j < leaf_items.size(); ++j) {
        const Item& it = items[leaf_items[j]];
        const auto s = static_cast<std::size_t>(it.sample);
        auto& pr = protos[s][static_cast<std::size_t>(it.proto)];
        pr.kind = NodeKind::leaf;
        const auto col = y.col(static_cast<Eigen::Index>(j));
        auto& o = pr.object;
        o.obb = OBB{0.0, 0.0, 0.0, std::max(limits.min_size, col[0] * cfg.size_scale),
                    std::max(limits.min_size, col[1] * cfg.size_scale), std::max(limits.min_size, col[2] * cfg.size_scale), 0.0};
        const auto labels = col.segment(3, vocab_k);
        if (it.role == Role::floor_leaf) {
          o.category = p.vocab.floor_index();
          o.id = "floor";
        } else if (it.role == Role::wall_leaf || it.role == Role::wall_slot) {
          o.category = p.vocab.wall_index();
          o.id = "wall" + std::to_string(it.slot);
        } else {
          Eigen::Index arg;
          if (full) {
            labels.head(static_cast<Eigen::Index>(p.vocab.object_count())).maxCoeff(&arg);
          } else {
            labels.maxCoeff(&arg);
          }
          o.category = static_cast<std::size_t>(arg);
          o.id = "n" + std::to_string(object_counter[s]++);
        }
      }
    }

    // Internal nodes through their decoders, one product per kind.
    std::vector<Item> next;
    std::vector<Vec> next_codes;
    for (NodeKind kind : {NodeKind::support, NodeKind::cooccur, NodeKind::surround, NodeKind::wall, NodeKind::root}) {
      std::vector<std::size_t> sel;
      for (std::size_t i = 0; i < items.size(); ++i) {
        if (kinds[i] == kind) sel.push_back(i);
      }
      if (sel.empty()) continue;
      const Mlp& dec = p.decoder(kind);
      Mat x(dec.in_dim(), static_cast<Eigen::Index>(sel.size()));
      for (std::size_t j = 0; j < sel.size(); ++j) x.col(static_cast<Eigen::Index>(j)) = codes.col(static_cast<Eigen::Index>(sel[j])).head(dec.in_dim());
      const Mat y = mlp_forward(dec, x).output();
      const std::size_t ar = arity(kind);
      for (std::size_t j = 0; j < sel.size(); ++j) {
        const Item& it = items[sel[j]];
        const auto s = static_cast<std::size_t>(it.sample);
        if (!errors[s].empty()) continue;
        if (static_cast<std::size_t>(it.depth) + 1 > limits.max_depth) {
          fail(it.sample, "decoded hierarchy exceeds max depth " + std::to_string(limits.max_depth));
          continue;
        }
        if (protos[s].size() + ar > limits.max_nodes) {
          fail(it.sample, "decoded hierarchy exceeds max nodes " + std::to_string(limits.max_nodes));
          continue;
        }
        const int self = it.proto;
        protos[s][static_cast<std::size_t>(self)].kind = kind;
        Eigen::Index off = 0;
        for (std::size_t c = 0; c < ar; ++c) {
          const int child = static_cast<int>(protos[s].size());
          protos[s].emplace_back();
          protos[s][static_cast<std::size_t>(self)].children.push_back(child);
          Role role = full ? Role::group : Role::free;
          int slot = -1;
          if (kind == NodeKind::root) {
            role = c == 0 ? Role::floor_leaf : Role::wall_slot;
            slot = static_cast<int>(c) - 1;
          } else if (kind == NodeKind::wall && full && c == 0) {
            role = Role::wall_leaf;
            slot = it.slot;
          }
          next.push_back({it.sample, child, role, it.depth + 1, slot});
          next_codes.push_back(y.block(off, static_cast<Eigen::Index>(j), n, 1));
          off += n;
          if (c == 0) continue;
          protos[s][static_cast<std::size_t>(self)].relpos.push_back(relpos_from_features(y.block(off, static_cast<Eigen::Index>(j), r, 1), cfg));
          off += r;
        }
      }
    }
    items.clear();
    codes.resize(n, static_cast<Eigen::Index>(next.size()));
    for (std::size_t i = 0; i < next.size(); ++i) {
      if (!errors[static_cast<std::size_t>(next[i].sample)].empty()) continue;
      codes.col(static_cast<Eigen::Index>(items.size())) = next_codes[i];
      items.push_back(next[i]);
    }
    codes.conservativeResize(n, static_cast<Eigen::Index>(items.size()));
  }

  std::vector<FreeDecodeResult> out(S);
  for (std::size_t s = 0; s < S; ++s) {
    if (!errors[s].empty()) {
      out[s].error = errors[s];
      continue;
    }
    out[s].tree = SceneTree{detail::build_from_protos(protos[s], 0), cfg.position_mode};
  }
  return out;
}

inline SceneTree decode_tree_free(const ModelParams& p, const Vec& z, const DecodeLimits& limits = {},
                                  std::optional<NodeClass> force = std::nullopt) {
  auto r = decode_trees_free(p, Mat(z), limits, force);
  if (!r[0].tree) throw GenerationError(r[0].error);
  return std::move(*r[0].tree);
}

// z ~ N(0, I), then free decoding.
inline SceneTree sample_tree(const ModelParams& p, std::mt19937_64& rng, const DecodeLimits& limits = {}) {
  std::normal_distribution<double> g(0.0, 1.0);
  Vec z(static_cast<Eigen::Index>(p.cfg.latent_dim));
  for (Eigen::Index i = 0; i < z.size(); ++i) z[i] = g(rng);
  return decode_tree_free(p, z, limits);
}

// ---------------------------------------------------------------------------
// Checkpoints: a magic line, a little-endian uint64 header length, a JSON
// header (config, vocabulary, block shapes), then little-endian float64
// blocks (weights column-major, then biases) in network order.

inline void save_model(const ModelParams& p, const std::string& path) {
  static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");
  json blocks = json::array();
  for (const auto& [name, m] : p.networks()) {
    for (std::size_t i = 0; i < m->layers.size(); ++i) {
      const auto& l = m->layers[i];
      blocks.push_back({{"name", name + ".W" + std::to_string(i)}, {"rows", l.W.rows()}, {"cols", l.W.cols()},
                        {"activation", l.act == Activation::tanh ? "tanh" : "linear"}});
      blocks.push_back({{"name", name + ".b" + std::to_string(i)}, {"rows", l.b.rows()}, {"cols", 1}});
    }
  }
  const json header{{"format", kModelFormat}, {"config", to_json(p.cfg)}, {"category_names", p.vocab.object_names()},
                    {"blocks", blocks}};
  const std::string h = header.dump();
  std::ofstream os(path, std::ios::binary);
  if (!os) throw Error("cannot write checkpoint '" + path + "'");
  os << kModelFormat << '\n';
  const std::uint64_t len = h.size();
  os.write(reinterpret_cast<const char*>(&len), sizeof len);
  os.write(h.data(), static_cast<std::streamsize>(h.size()));
  for (const auto& [name, m] : p.networks()) {
    for (const auto& l : m->layers) {
      os.write(reinterpret_cast<const char*>(l.W.data()), static_cast<std::streamsize>(sizeof(double) * static_cast<std::size_t>(l.W.size())));
      os.write(reinterpret_cast<const char*>(l.b.data()), static_cast<std::streamsize>(sizeof(double) * static_cast<std::size_t>(l.b.size())));
    }
  }
  if (!os) throw Error("failed writing checkpoint '" + path + "'");
}

inline ModelParams load_model(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error("cannot read checkpoint '" + path + "'");
  std::string magic;
  std::getline(is, magic);
  if (magic != kModelFormat) throw ConfigMismatchError("checkpoint '" + path + "' is not a " + std::string(kModelFormat) + " file");
  std::uint64_t len = 0;
  if (!is.read(reinterpret_cast<char*>(&len), sizeof len) || len > (1u << 26)) {
    throw ParseError("checkpoint '" + path + "' is truncated (header length)");
  }
  std::string h(len, '\0');
  if (!is.read(h.data(), static_cast<std::streamsize>(len))) throw ParseError("checkpoint '" + path + "' is truncated (header)");
  json header;
  try {
    header = json::parse(h);
  } catch (const json::exception& e) {
    throw ParseError("checkpoint header: " + std::string(e.what()));
  }
  if (header.at("format").get<std::string>() != kModelFormat) throw ConfigMismatchError("checkpoint format mismatch");
  const Vocabulary vocab(header.at("category_names").get<std::vector<std::string>>());
  ModelConfig cfg = model_config_from_json(header.at("config"));
  if (cfg.leaf_dim != leaf_dim(vocab)) {
    throw ConfigMismatchError("checkpoint leaf_dim " + std::to_string(cfg.leaf_dim) + " does not match its vocabulary");
  }
  ModelParams p = init_model(cfg, vocab, 0);
  const auto& blocks = header.at("blocks");
  std::size_t bi = 0;
  auto read_block = [&](double* data, Eigen::Index rows, Eigen::Index cols, const std::string& name) {
    if (bi >= blocks.size() || blocks[bi].at("name").get<std::string>() != name ||
        blocks[bi].at("rows").get<Eigen::Index>() != rows || blocks[bi].at("cols").get<Eigen::Index>() != cols) {
      throw ConfigMismatchError("checkpoint block " + std::to_string(bi) + " does not match expected '" + name + "'");
    }
    ++bi;
    if (!is.read(reinterpret_cast<char*>(data), static_cast<std::streamsize>(sizeof(double) * static_cast<std::size_t>(rows * cols)))) {
      throw ParseError("checkpoint '" + path + "' is truncated in block '" + name + "'");
    }
  };
  for (auto& [name, m] : p.networks()) {
    for (std::size_t i = 0; i < m->layers.size(); ++i) {
      auto& l = m->layers[i];
      read_block(l.W.data(), l.W.rows(), l.W.cols(), name + ".W" + std::to_string(i));
      read_block(l.b.data(), l.b.rows(), 1, name + ".b" + std::to_string(i));
    }
  }
  if (bi != blocks.size()) throw ConfigMismatchError("checkpoint lists unexpected extra blocks");
  return p;
}

// Loads and checks the checkpoint against the vocabulary the caller uses.
inline ModelParams load_model(const std::string& path, const Vocabulary& expected) {
  ModelParams p = load_model(path);
  if (p.vocab.size() != expected.size() || !(p.vocab == expected)) {
    throw ConfigMismatchError("checkpoint vocabulary (" + std::to_string(p.vocab.size()) + " entries) does not match the corpus (" +
                              std::to_string(expected.size()) + " entries)");
  }
  return p;
}

}  // namespace grains
