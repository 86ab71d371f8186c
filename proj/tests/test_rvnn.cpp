#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "grains/hierarchy.hpp"
#include "grains/rvnn.hpp"
#include "grains/synth.hpp"

using namespace grains;

namespace {

ModelConfig tiny_config(PositionMode pm = PositionMode::relative, WallRootMode wm = WallRootMode::full) {
  ModelConfig c;
  c.code_dim = 5;
  c.root_code_dim = 6;
  c.hidden_dim = 7;
  c.root_hidden_dim = 8;
  c.latent_dim = 4;
  c.position_mode = pm;
  c.wall_root_mode = wm;
  c.init_scale = 0.3;
  c.kl_weight = 0.5;
  return c;
}

const Corpus& corpus() {
  static const Corpus c = synthesize_corpus(TemplateConfig{}, 11, 12);
  return c;
}

std::vector<SceneTree> prepared(const ModelConfig& cfg, std::size_t count) {
  std::vector<SceneTree> out;
  for (std::size_t i = 0; i < count; ++i) out.push_back(prepare_tree(build_hierarchy(corpus().scenes[i], corpus().vocab), cfg));
  return out;
}

std::vector<const SceneTree*> ptrs(const std::vector<SceneTree>& v) {
  std::vector<const SceneTree*> p;
  for (const auto& t : v) p.push_back(&t);
  return p;
}

std::string temp_path(const std::string& name) {
  return (std::filesystem::temp_directory_path() / ("grains_rvnn_" + name)).string();
}

}  // namespace

class GradCheck : public ::testing::TestWithParam<std::tuple<PositionMode, WallRootMode>> {};

TEST_P(GradCheck, AnalyticMatchesFiniteDifference) {
  const auto [pm, wm] = GetParam();
  ModelParams p = init_model(tiny_config(pm, wm), corpus().vocab, 3);
  const auto trees = prepared(p.cfg, 3);
  const auto batch = ptrs(trees);
  const Mat eps = sample_eps(p.cfg.latent_dim, batch.size(), 9);
  ModelParams g = zeros_like(p);
  compute_loss(p, batch, eps, &g);
  std::vector<CheckBlock> blocks;
  auto pn = p.networks();
  auto gn = g.networks();
  for (std::size_t i = 0; i < pn.size(); ++i) append_check_blocks(pn[i].first, *pn[i].second, *gn[i].second, blocks);
  const auto rep = gradient_check([&] { return compute_loss(p, batch, eps).total; }, blocks, 1e-6, 40);
  for (const auto& b : rep.blocks) {
    EXPECT_LT(b.rel_error, 1e-4) << b.name;
  }
  // Unused networks of a layout must get exactly zero gradient, others some.
  double classifier_norm = 0;
  for (const auto& l : g.classifier.layers) classifier_norm += l.W.norm();
  EXPECT_GT(classifier_norm, 0.0);
  if (wm != WallRootMode::full) {
    for (const auto& l : g.root_enc.layers) EXPECT_EQ(l.W.norm(), 0.0);
  }
}

INSTANTIATE_TEST_SUITE_P(AllModes, GradCheck,
                         ::testing::Combine(::testing::Values(PositionMode::relative, PositionMode::absolute,
                                                             PositionMode::center_translation),
                                            ::testing::Values(WallRootMode::full, WallRootMode::wall_only,
                                                              WallRootMode::none)));

TEST(Rvnn, PreparedLayoutsValidate) {
  for (auto wm : {WallRootMode::full, WallRootMode::wall_only, WallRootMode::none}) {
    const ModelConfig cfg = tiny_config(PositionMode::relative, wm);
    const auto trees = prepared(cfg, 12);
    for (std::size_t i = 0; i < trees.size(); ++i) {
      const auto& t = trees[i];
      EXPECT_EQ(t.root.kind, cfg.top_kind());
      const auto rep = validate_tree(t, corpus().vocab, model_validation(cfg));
      EXPECT_TRUE(rep.ok()) << to_string(wm) << ": " << (rep.ok() ? "" : rep.violations[0].code);
      EXPECT_EQ(leaf_objects(t.root).size(), corpus().scenes[i].objects.size() + 5);
    }
  }
}

TEST(Rvnn, BatchLossIsMeanOfTreeLosses) {
  const ModelParams p = init_model(tiny_config(), corpus().vocab, 5);
  const auto trees = prepared(p.cfg, 4);
  const Mat eps = sample_eps(p.cfg.latent_dim, 4, 1);
  const double batch = compute_loss(p, ptrs(trees), eps).total;
  double sum = 0;
  for (std::size_t i = 0; i < 4; ++i) sum += compute_loss(p, {&trees[i]}, Mat(eps.col(static_cast<Eigen::Index>(i)))).total;
  EXPECT_NEAR(batch, sum / 4, 1e-10);
}

TEST(Rvnn, EncoderTraceIsBottomUp) {
  const ModelParams p = init_model(tiny_config(), corpus().vocab, 5);
  const SceneTree t = prepared(p.cfg, 1)[0];
  const auto r = encode_tree(p, t);
  EXPECT_EQ(r.top_code.size(), 6);
  EXPECT_EQ(r.trace.size(), node_count(t.root));
  EXPECT_EQ(r.trace.back().kind, NodeKind::root);
  // Every node is encoded after all of its descendants.
  std::map<std::string, std::size_t> order;
  for (std::size_t i = 0; i < r.trace.size(); ++i) order[path_to_string(r.trace[i].path)] = i;
  for (const auto& e : r.trace) {
    if (e.path.empty()) continue;
    TreePath parent(e.path.begin(), e.path.end() - 1);
    EXPECT_LT(order.at(path_to_string(e.path)), order.at(path_to_string(parent)));
  }
}

TEST(Rvnn, EncodeRejectsInvalidTree) {
  const ModelParams p = init_model(tiny_config(), corpus().vocab, 5);
  SceneTree t = prepared(p.cfg, 1)[0];
  t.root.children.pop_back();
  t.root.relpos.pop_back();
  EXPECT_THROW(encode_tree(p, t), StructuralError);
}

TEST(Rvnn, TeacherDecodeShapes) {
  const ModelParams p = init_model(tiny_config(), corpus().vocab, 5);
  const SceneTree t = prepared(p.cfg, 1)[0];
  const Vec z = Vec::Zero(4);
  const auto out = decode_tree_teacher(p, z, t);
  EXPECT_EQ(out.leaves.size(), leaf_objects(t.root).size());
  EXPECT_EQ(out.class_probs.size(), node_count(t.root) - 1);
  for (const auto& [path, probs] : out.class_probs) EXPECT_NEAR(probs.sum(), 1.0, 1e-12);
  EXPECT_THROW(decode_tree_teacher(p, Vec::Zero(3), t), Error);
}

TEST(Rvnn, ForcedBoxGivesFiveLeafRoom) {
  const ModelParams p = init_model(tiny_config(), corpus().vocab, 5);
  const SceneTree t = decode_tree_free(p, Vec::Ones(4), {}, NodeClass::box);
  ASSERT_EQ(t.root.kind, NodeKind::root);
  const auto leaves = leaf_objects(t.root);
  ASSERT_EQ(leaves.size(), 5u);
  EXPECT_EQ(leaves[0]->category, p.vocab.floor_index());
  for (std::size_t i = 1; i < 5; ++i) {
    EXPECT_EQ(leaves[i]->category, p.vocab.wall_index());
    EXPECT_EQ(leaves[i]->id, "wall" + std::to_string(i - 1));
  }
}

TEST(Rvnn, FreeDecodeProducesValidStructure) {
  for (auto wm : {WallRootMode::full, WallRootMode::wall_only, WallRootMode::none}) {
    const ModelParams p = init_model(tiny_config(PositionMode::relative, wm), corpus().vocab, 8);
    const auto res = decode_trees_free(p, sample_eps(4, 20, 2), {.max_depth = 6, .max_nodes = 40});
    for (const auto& r : res) {
      if (!r.tree) {
        EXPECT_NE(r.error.find("exceeds max"), std::string::npos);
        continue;
      }
      EXPECT_LE(tree_depth(r.tree->root), 7u);
      EXPECT_LE(node_count(r.tree->root), 40u);
      ValidationOptions o = structural_only();
      o.layout = wm;
      const auto rep = validate_tree(*r.tree, p.vocab, o);
      EXPECT_TRUE(rep.ok()) << rep.violations[0].code << " " << rep.violations[0].message;
    }
  }
}

TEST(Rvnn, ForcedCooccurHitsLimits) {
  const ModelParams p = init_model(tiny_config(PositionMode::relative, WallRootMode::none), corpus().vocab, 8);
  EXPECT_THROW(decode_tree_free(p, Vec::Zero(4), {.max_depth = 5}, NodeClass::cooccur), GenerationError);
}

TEST(Rvnn, CheckpointRoundTrip) {
  const ModelParams p = init_model(tiny_config(PositionMode::absolute, WallRootMode::wall_only), corpus().vocab, 21);
  const auto path = temp_path("ckpt.bin");
  save_model(p, path);
  const ModelParams q = load_model(path, corpus().vocab);
  EXPECT_TRUE(p == q);
  EXPECT_THROW(load_model(path, Vocabulary({"bed"})), ConfigMismatchError);

  std::string bytes;
  {
    std::ifstream is(path, std::ios::binary);
    bytes.assign(std::istreambuf_iterator<char>(is), {});
  }
  {
    std::ofstream os(path, std::ios::binary);
    os.write(bytes.data(), static_cast<std::streamsize>(bytes.size() - 16));
  }
  EXPECT_THROW(load_model(path), ParseError);
  {
    std::ofstream os(path, std::ios::binary);
    os << "grains-model/0\n" << bytes.substr(bytes.find('\n') + 1);
  }
  EXPECT_THROW(load_model(path), ConfigMismatchError);
  std::filesystem::remove(path);
}

TEST(Rvnn, ConfigJsonRoundTrip) {
  const ModelConfig c = tiny_config(PositionMode::center_translation, WallRootMode::none);
  EXPECT_EQ(model_config_from_json(to_json(c)), c);
}

TEST(Rvnn, RelposFeatureRoundTrip) {
  const ModelConfig c = tiny_config();
  const SceneTree t = prepared(c, 1)[0];
  for (const auto& r : t.root.relpos) {
    const RelVec back = relpos_from_features(relpos_features(r, c), c);
    for (std::size_t i = 0; i < kRelPosDim; ++i) EXPECT_NEAR(back[i], r[i], 1e-12);
  }
}

TEST(Rvnn, LabelsDisabledZeroOneHot) {
  ModelConfig c = tiny_config();
  c.labels_enabled = false;
  const ModelParams p = init_model(c, corpus().vocab, 1);
  const Vec f = leaf_features(corpus().scenes[0].objects[0], p);
  EXPECT_EQ(f.tail(f.size() - 3).norm(), 0.0);
  EXPECT_GT(f.head(3).norm(), 0.0);
}
