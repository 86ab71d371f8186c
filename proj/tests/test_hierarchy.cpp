#include <gtest/gtest.h>

#include <algorithm>

#include "grains/hierarchy.hpp"
#include "grains/synth.hpp"

using namespace grains;

namespace {

const Vocabulary kVocab({"bed", "nightstand", "lamp", "wardrobe", "table", "chair"});

std::size_t cat(const char* n) { return *kVocab.index_of(n); }

Scene figure_bedroom() {
  Scene s{Room::rectangular(4, 4, 2.7), {}, RoomType::bedroom};
  s.objects = {
      {"bed", cat("bed"), OBB{2.0, 1.0, 0, 1.6, 2.0, 0.5, 0}},
      {"ns_l", cat("nightstand"), OBB{0.97, 0.2, 0, 0.45, 0.4, 0.55, 0}},
      {"ns_r", cat("nightstand"), OBB{3.05, 0.2, 0, 0.45, 0.4, 0.55, 0}},
      {"lamp_l", cat("lamp"), OBB{0.97, 0.2, 0.55, 0.3, 0.3, 0.5, 0}},
      {"lamp_r", cat("lamp"), OBB{3.05, 0.2, 0.55, 0.3, 0.3, 0.5, 0}},
  };
  return s;
}

}  // namespace

TEST(Support, ExactStacking) {
  const auto pairs = detect_support_pairs(figure_bedroom());
  std::vector<SupportPair> want{{"ns_l", "lamp_l"}, {"ns_r", "lamp_r"}};
  EXPECT_EQ(pairs, want);
}

TEST(Support, FloorObjectsNeverSupport) {
  Scene s{Room::rectangular(4, 4, 2.7), {}, RoomType::bedroom};
  s.objects = {{"a", 0, OBB{1, 1, 0, 1, 1, 0.5, 0}}, {"b", 0, OBB{1.2, 1, 0, 1, 1, 0.5, 0}}};
  EXPECT_TRUE(detect_support_pairs(s).empty());
}

TEST(Support, MatchesGeneratorManifest) {
  const auto [c, manifest] = synthesize_corpus_with_manifest(TemplateConfig{}, 12, 300);
  for (std::size_t i = 0; i < c.scenes.size(); ++i) {
    auto got = detect_support_pairs(c.scenes[i]);
    auto want = manifest.support[i];
    std::sort(got.begin(), got.end());
    std::sort(want.begin(), want.end());
    EXPECT_EQ(got, want) << "scene " << i;
  }
}

TEST(Surround, NightstandsFlankBed) {
  const Scene s = figure_bedroom();
  const auto groups = detect_surround_groups(s, {}, detect_support_pairs(s));
  ASSERT_EQ(groups.size(), 1u);
  EXPECT_EQ(groups[0].central, "bed");
  // ns_l lies 0.02 m closer to the bed boundary.
  EXPECT_EQ(groups[0].first, "ns_l");
  EXPECT_EQ(groups[0].second, "ns_r");
}

TEST(Surround, SingleNightstandIsNoGroup) {
  Scene s = figure_bedroom();
  s.objects.erase(s.objects.begin() + 2);
  s.objects.pop_back();
  EXPECT_TRUE(detect_surround_groups(s, {}, detect_support_pairs(s)).empty());
}

TEST(Surround, ThreeChairsPickTwoNearest) {
  Scene s{Room::rectangular(5, 5, 2.7), {}, RoomType::living};
  const OBB table{2.5, 2.5, 0, 1.6, 0.9, 0.75, 0};
  s.objects = {{"table", cat("table"), table},
               {"c1", cat("chair"), OBB{2.4, 3.3, 0, 0.45, 0.45, 0.9, 0}},
               {"c2", cat("chair"), OBB{2.6, 1.8, 0, 0.45, 0.45, 0.9, 0}},
               {"c3", cat("chair"), OBB{2.5, 3.6, 0, 0.45, 0.45, 0.9, 0}}};
  std::vector<std::pair<double, std::string>> by_dist;
  for (std::size_t i = 1; i < 4; ++i) by_dist.emplace_back(distance_to_footprint(table, s.objects[i].obb.center()), s.objects[i].id);
  std::sort(by_dist.begin(), by_dist.end());
  const auto groups = detect_surround_groups(s, {}, {});
  ASSERT_EQ(groups.size(), 1u);
  EXPECT_EQ(groups[0].central, "table");
  EXPECT_EQ(groups[0].first, by_dist[0].second);
  EXPECT_EQ(groups[0].second, by_dist[1].second);
}

TEST(Surround, MatchesGeneratorManifest) {
  const auto [c, manifest] = synthesize_corpus_with_manifest(TemplateConfig{}, 13, 300);
  for (std::size_t i = 0; i < c.scenes.size(); ++i) {
    const auto got = detect_surround_groups(c.scenes[i], {}, detect_support_pairs(c.scenes[i]));
    ASSERT_EQ(got.size(), manifest.surround[i].size()) << "scene " << i;
    for (std::size_t g = 0; g < got.size(); ++g) {
      const auto& w = manifest.surround[i][g];
      EXPECT_EQ(got[g].central, w.central);
      std::set<std::string> a{got[g].first, got[g].second}, b{w.first, w.second};
      EXPECT_EQ(a, b);
    }
  }
}

TEST(WallClusters, ContactAndTieBreak) {
  Scene s{Room::rectangular(4, 4, 2.7), {}, RoomType::bedroom};
  s.objects = {{"wardrobe", cat("wardrobe"), OBB{2.0, 3.7, 0, 1.2, 0.6, 2.0, kPi}},
               {"center", cat("chair"), OBB{2.0, 2.0, 0, 0.4, 0.4, 0.9, 0.3}}};
  const auto m = assign_wall_clusters(s, {});
  EXPECT_EQ(m.at("wardrobe"), 2);
  EXPECT_EQ(m.at("center"), 0);
}

TEST(WallClusters, StacksFollowBase) {
  const Scene s = figure_bedroom();
  const auto support = detect_support_pairs(s);
  const auto m = assign_wall_clusters(s, support, detect_surround_groups(s, {}, support));
  for (const auto& o : s.objects) EXPECT_EQ(m.at(o.id), 0) << o.id;
}

TEST(Hierarchy, FigureBedroomStructure) {
  const Scene s = figure_bedroom();
  const SceneTree t = build_hierarchy(s, kVocab);
  ASSERT_EQ(t.root.kind, NodeKind::root);
  ASSERT_EQ(t.root.children.size(), 5u);
  const SceneNode& w0 = t.root.children[1];
  ASSERT_EQ(w0.kind, NodeKind::wall);
  const SceneNode& g = w0.children[1];
  ASSERT_EQ(g.kind, NodeKind::surround);
  EXPECT_EQ(g.children[0].object.id, "bed");
  EXPECT_EQ(g.children[1].kind, NodeKind::support);
  EXPECT_EQ(g.children[1].children[1].object.id, "lamp_l");
  EXPECT_EQ(g.children[2].children[1].object.id, "lamp_r");
  for (std::size_t w = 2; w <= 4; ++w) {
    EXPECT_TRUE(t.root.children[w].is_leaf());
    EXPECT_EQ(t.root.children[w].object.category, kVocab.wall_index());
  }
  EXPECT_TRUE(validate_tree(t, kVocab).ok());
}

TEST(Hierarchy, RejectsRoomWithoutFourWalls) {
  Scene s = figure_bedroom();
  s.room.walls.pop_back();
  EXPECT_THROW(build_hierarchy(s, kVocab), StructuralError);
}

TEST(Hierarchy, SyntheticCorpusIsValidAndComplete) {
  const auto c = synthesize_corpus(TemplateConfig{}, 14, 1000);
  for (const auto& s : c.scenes) {
    const SceneTree t = build_hierarchy(s, c.vocab);
    const auto rep = validate_tree(t, c.vocab);
    EXPECT_TRUE(rep.ok()) << (rep.ok() ? "" : rep.violations[0].code + " at " + rep.violations[0].path);
    std::multiset<std::string> leaves, want{"floor", "wall0", "wall1", "wall2", "wall3"};
    for (const auto* o : leaf_objects(t.root)) leaves.insert(o->id);
    for (const auto& o : s.objects) want.insert(o.id);
    EXPECT_EQ(leaves, want);
    std::size_t roots = 0;
    for_each_node(t.root, [&](const SceneNode& n, const TreePath&) { roots += n.kind == NodeKind::root; });
    EXPECT_EQ(roots, 1u);
    EXPECT_EQ(build_hierarchy(s, c.vocab), t);
  }
}

TEST(Hierarchy, PartitionCoversAllObjects) {
  const auto c = synthesize_corpus(TemplateConfig{}, 15, 200);
  for (const auto& s : c.scenes) {
    const auto support = detect_support_pairs(s);
    const auto m = assign_wall_clusters(s, support, detect_surround_groups(s, {}, support));
    EXPECT_EQ(m.size(), s.objects.size());
    for (const auto& [id, w] : m) {
      EXPECT_GE(w, 0);
      EXPECT_LT(w, 4);
    }
  }
}

TEST(Validate, CoOccurOrderViolation) {
  SceneTree t = build_hierarchy(figure_bedroom(), kVocab);
  RelationConfig cfg;
  std::vector<SceneNode> kids;
  kids.push_back(SceneNode::leaf({"small", cat("chair"), OBB{3.5, 3.5, 0, 0.4, 0.4, 0.9, 0}}));
  kids.push_back(SceneNode::leaf({"big", cat("wardrobe"), OBB{2.0, 3.6, 0, 1.2, 0.6, 2.0, kPi}}));
  std::vector<SceneNode> wall_kids;
  wall_kids.push_back(t.root.children[3]);
  wall_kids.push_back(make_internal(NodeKind::cooccur, std::move(kids), cfg));
  t.root.children[3] = make_internal(NodeKind::wall, std::move(wall_kids), cfg);
  t.root = make_internal(NodeKind::root, std::move(t.root.children), cfg);
  const auto rep = validate_tree(t, kVocab);
  EXPECT_TRUE(rep.has("coocur-order"));
}

TEST(Validate, RootArityViolation) {
  SceneTree t = build_hierarchy(figure_bedroom(), kVocab);
  t.root.children.pop_back();
  t.root.relpos.pop_back();
  const auto rep = validate_tree(t, kVocab);
  EXPECT_TRUE(rep.has("root-arity"));
}

TEST(Validate, RelposInconsistencyDetected) {
  SceneTree t = build_hierarchy(figure_bedroom(), kVocab);
  t.root.relpos[0][1] += 0.01;
  EXPECT_TRUE(validate_tree(t, kVocab).has("relpos-consistency"));
  EXPECT_TRUE(validate_tree(t, kVocab, structural_only()).ok());
}

TEST(TreeFormat, JsonRoundTrip) {
  const SceneTree t = build_hierarchy(figure_bedroom(), kVocab);
  EXPECT_EQ(tree_from_json(json::parse(tree_to_json(t).dump())), t);
  json bad = tree_to_json(t);
  bad["format"] = "grains-tree/0";
  EXPECT_THROW(tree_from_json(bad), ParseError);
}

TEST(TreePath, ParseAndResolve) {
  EXPECT_TRUE(path_from_string("").empty());
  EXPECT_EQ(path_from_string("1-0-2"), (TreePath{1, 0, 2}));
  EXPECT_THROW(path_from_string("1--2"), NotFoundError);
  const SceneTree t = build_hierarchy(figure_bedroom(), kVocab);
  EXPECT_EQ(node_at(t.root, path_from_string("1-1-0")).object.id, "bed");
  EXPECT_THROW(node_at(t.root, {9}), NotFoundError);
}
