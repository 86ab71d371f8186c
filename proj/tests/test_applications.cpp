#include <gtest/gtest.h>

#include <filesystem>

#include "grains/applications.hpp"
#include "grains/synth.hpp"

using namespace grains;

namespace {

const Corpus& corpus() {
  static const Corpus c = synthesize_corpus(TemplateConfig{}, 21, 40);
  return c;
}

SceneTree tree_of(std::size_t i) { return build_hierarchy(corpus().scenes[i], corpus().vocab); }

std::size_t cat(const std::string& name) { return *corpus().vocab.index_of(name); }

// First node whose kind and reference category match.
std::optional<TreePath> find_node(const SceneTree& t, NodeKind kind, const std::string& ref_category) {
  std::optional<TreePath> hit;
  for_each_node(t.root, [&](const SceneNode& n, const TreePath& p) {
    if (!hit && n.kind == kind && reference_leaf(n).object.category == cat(ref_category)) hit = p;
  });
  return hit;
}

std::map<std::string, OBB> realized(const SceneTree& t) {
  std::map<std::string, OBB> m;
  for (const auto& p : realize_placements(t, corpus().vocab, {.snap = false}).placements) m[p.id] = p.obb;
  return m;
}

void expect_same_scene(const std::map<std::string, OBB>& a, const std::map<std::string, OBB>& b, double tol) {
  ASSERT_EQ(a.size(), b.size());
  for (const auto& [id, x] : a) {
    const OBB& y = b.at(id);
    EXPECT_NEAR(x.center_x, y.center_x, tol) << id;
    EXPECT_NEAR(x.center_y, y.center_y, tol) << id;
    EXPECT_NEAR(x.elevation, y.elevation, tol) << id;
    EXPECT_NEAR(angle_distance(x.angle, y.angle), 0.0, tol) << id;
  }
}

ModelConfig tiny() {
  ModelConfig c;
  c.code_dim = 6;
  c.root_code_dim = 7;
  c.hidden_dim = 8;
  c.root_hidden_dim = 9;
  c.latent_dim = 5;
  return c;
}

}  // namespace

TEST(Layout, JsonRoundTripAndErrors) {
  Layout2D l{4.2, 3.9, {{1.0, 1.0, 2.0, 1.5, 0.0}, {3.0, 2.0, 0.5, 0.5, 1.0}}};
  EXPECT_EQ(layout_from_json(layout_to_json(l)), l);
  json bad = layout_to_json(l);
  bad["format"] = "grains-layout/0";
  EXPECT_THROW(layout_from_json(bad), ParseError);
  const ModelParams p = init_model(tiny(), corpus().vocab, 1);
  EXPECT_THROW(layout_tree(Layout2D{4, 4, {}}, p), Error);
  EXPECT_THROW(layout_tree(Layout2D{4, 4, {{9, 9, 1, 1, 0}}}, p), Error);
}

TEST(Layout, UnlabeledLeavesGetUniformLabels) {
  const ModelParams p = init_model(tiny(), corpus().vocab, 1);
  const SceneTree t = layout_tree(trace_layout(realize_placements(tree_of(0), corpus().vocab)), p);
  std::size_t unknown = 0;
  for (const auto* o : leaf_objects(t.root)) {
    if (o->category != kUnknownCategory) continue;
    ++unknown;
    const Vec f = leaf_features(*o, p);
    EXPECT_NEAR(f.tail(static_cast<Eigen::Index>(p.vocab.size())).sum(), 1.0, 1e-12);
    EXPECT_NEAR(f[3], 1.0 / static_cast<double>(p.vocab.size()), 1e-15);
  }
  EXPECT_EQ(unknown, corpus().scenes[0].objects.size());
}

TEST(Layout, SingleBoxAndDeterministicSamples) {
  const ModelParams p = init_model(tiny(), corpus().vocab, 1);
  const auto one = layout_to_scenes(p, Layout2D{4, 4, {{2, 2, 1.5, 2.0, 0}}}, 1, LatentMode::mean, 1);
  ASSERT_EQ(one.size(), 1u);
  const Layout2D l = trace_layout(realize_placements(tree_of(1), corpus().vocab));
  const auto a = layout_to_scenes(p, l, 5, LatentMode::sample, 9);
  const auto b = layout_to_scenes(p, l, 5, LatentMode::sample, 9);
  ASSERT_EQ(a.size(), 5u);
  for (std::size_t i = 0; i < 5; ++i) {
    EXPECT_EQ(a[i].source_tree, b[i].source_tree);
    for (std::size_t j = i + 1; j < 5; ++j) EXPECT_NE(a[i].source_tree, a[j].source_tree);
  }
}

TEST(Edit, ReplaceWithItselfIsIdentity) {
  const SceneTree t = tree_of(2);
  const auto path = find_node(t, NodeKind::support, "nightstand");
  ASSERT_TRUE(path);
  const SceneTree r = replace_subtree(t, *path, node_at(t.root, *path), corpus().vocab);
  expect_same_scene(realized(t), realized(r), 1e-6);
}

TEST(Edit, ReplaceAcrossScenesKeepsOtherLeaves) {
  const SceneTree t = tree_of(3);
  const auto path = find_node(t, NodeKind::support, "nightstand");
  ASSERT_TRUE(path);
  std::optional<TreePath> donor_path;
  std::size_t donor_scene = 0;
  for (std::size_t i = 0; i < corpus().scenes.size() && !donor_path; ++i) {
    donor_path = find_node(tree_of(i), NodeKind::support, "desk");
    donor_scene = i;
  }
  ASSERT_TRUE(donor_path);
  const SceneTree donor_tree = tree_of(donor_scene);
  const SceneNode& donor = node_at(donor_tree.root, *donor_path);
  const SceneTree r = replace_subtree(t, *path, donor, corpus().vocab);
  EXPECT_TRUE(validate_tree(r, corpus().vocab, structural_only()).ok());
  const auto before = realized(t);
  const auto after = realized(r);
  const auto& removed = node_at(t.root, *path);
  std::set<std::string> gone;
  for (const auto* o : leaf_objects(removed)) gone.insert(o->id);
  for (const auto* o : leaf_objects(t.root)) {
    if (gone.count(o->id) || corpus().vocab.is_special(o->category)) continue;
    ASSERT_TRUE(after.count(o->id)) << o->id;
  }
  EXPECT_EQ(after.size(), before.size() - gone.size() + leaf_objects(donor).size());

  EXPECT_THROW(replace_subtree(t, *path, SceneNode::leaf(corpus().scenes[0].objects[0]), corpus().vocab), Error);
  EXPECT_THROW(replace_subtree(t, *path, donor, corpus().vocab, {.max_nodes = 5}), Error);
}

TEST(Edit, DeleteCollapsesAndDegrades) {
  const SceneTree t = tree_of(4);
  const auto sup = find_node(t, NodeKind::support, "nightstand");
  ASSERT_TRUE(sup);
  TreePath lamp = *sup;
  lamp.push_back(1);
  const SceneTree a = delete_subtree(t, lamp, corpus().vocab);
  const SceneNode& promoted = node_at(a.root, *sup);
  EXPECT_TRUE(promoted.is_leaf());
  EXPECT_EQ(promoted.object.category, cat("nightstand"));

  const auto sur = find_node(t, NodeKind::surround, "bed");
  ASSERT_TRUE(sur);
  TreePath side = *sur;
  side.push_back(2);
  const SceneTree b = delete_subtree(t, side, corpus().vocab);
  EXPECT_EQ(node_at(b.root, *sur).kind, NodeKind::cooccur);
  EXPECT_EQ(node_count(b.root) + node_count(node_at(t.root, side)), node_count(t.root));

  EXPECT_THROW(delete_subtree(t, {0}, corpus().vocab), Error);
  EXPECT_THROW(delete_subtree(t, {1, 0}, corpus().vocab), Error);
  EXPECT_THROW(delete_subtree(t, {}, corpus().vocab), Error);
  EXPECT_THROW(delete_subtree(t, {9}, corpus().vocab), NotFoundError);
}

TEST(Edit, MoveShiftsTarget) {
  const SceneTree t = realize_placements(tree_of(5), corpus().vocab).source_tree;
  const auto sup = find_node(t, NodeKind::support, "nightstand");
  ASSERT_TRUE(sup);
  TreePath lamp = *sup;
  lamp.push_back(1);
  const SceneNode& parent = node_at(t.root, *sup);
  const SceneTree same = move_subtree(t, lamp, parent.relpos[0], corpus().vocab);
  expect_same_scene(realized(t), realized(same), 1e-9);

  RelPos28 rp = RelPos28::harden(parent.relpos[0]);
  rp.attach = Attach::none;
  rp.offset_h += 0.5;
  const SceneTree moved = move_subtree(t, lamp, rp.to_vector(), corpus().vocab);
  const std::string id = reference_leaf(node_at(t.root, lamp)).object.id;
  const std::string stand = reference_leaf(parent).object.id;
  const auto r0 = realized(t), r1 = realized(moved);
  const Vec2 before = r0.at(stand).to_local(r0.at(id).center());
  const Vec2 after = r1.at(stand).to_local(r1.at(id).center());
  EXPECT_NEAR(after.x - before.x, 0.5, 1e-6);
  EXPECT_NEAR(after.y - before.y, 0.0, 1e-6);

  RelVec bad = parent.relpos[0];
  bad[kAttachBitsBegin] = bad[kAttachBitsBegin + 1] = 1.0;
  EXPECT_THROW(move_subtree(t, lamp, bad, corpus().vocab), Error);
  TreePath stand_path = *sup;
  stand_path.push_back(0);
  EXPECT_THROW(move_subtree(t, stand_path, parent.relpos[0], corpus().vocab), Error);
}

TEST(Edit, CandidatesRankOriginalFirst) {
  std::vector<SceneTree> pool;
  for (std::size_t i = 0; i < 20; ++i) pool.push_back(tree_of(i));
  const SceneTree& t = pool[6];
  const auto path = find_node(t, NodeKind::support, "nightstand");
  ASSERT_TRUE(path);
  const auto c = candidate_subtrees(pool, t, *path, 5, corpus().vocab);
  ASSERT_FALSE(c.empty());
  EXPECT_EQ(c[0].pool_index, 6u);
  EXPECT_EQ(c[0].path, *path);
  EXPECT_NEAR(c[0].score, 1.0, 1e-9);
  for (std::size_t i = 1; i < c.size(); ++i) EXPECT_LE(c[i].score, c[i - 1].score);
  for (const auto& x : c) EXPECT_EQ(x.subtree.kind, NodeKind::support);
  EXPECT_TRUE(candidate_subtrees({}, t, *path, 5, corpus().vocab).empty());

  // Brute-force scan agrees with the top score.
  double best = 0;
  for (std::size_t i = 0; i < pool.size(); ++i) {
    for_each_node(pool[i].root, [&](const SceneNode& n, const TreePath& p) {
      if (p.empty() || n.kind != NodeKind::support) return;
      bool special = false;
      for (const auto* o : leaf_objects(n)) special |= corpus().vocab.is_special(o->category);
      if (special) return;
      best = std::max(best, graph_kernel(sibling_context(t.root, *path, corpus().vocab), sibling_context(pool[i].root, p, corpus().vocab)));
    });
  }
  EXPECT_EQ(c[0].score, best);
}
