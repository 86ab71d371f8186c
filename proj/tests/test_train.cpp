#include <gtest/gtest.h>

#include <filesystem>
#include <limits>
#include <numeric>

#include "grains/hierarchy.hpp"
#include "grains/synth.hpp"
#include "grains/train.hpp"

using namespace grains;

namespace {

ModelConfig small() {
  ModelConfig c;
  c.code_dim = 16;
  c.root_code_dim = 20;
  c.hidden_dim = 24;
  c.root_hidden_dim = 28;
  c.latent_dim = 8;
  return c;
}

struct Fixture {
  Corpus corpus = synthesize_corpus(TemplateConfig{}, 12, 24);
  ModelParams params = init_model(small(), corpus.vocab, 3);
  std::vector<SceneTree> trees;
  Fixture() {
    for (const auto& s : corpus.scenes) trees.push_back(prepare_tree(build_hierarchy(s, corpus.vocab), params.cfg));
  }
};

}  // namespace

TEST(Train, DefaultBatchIsTenthOfCorpus) {
  EXPECT_EQ(default_batch_size(18763), 1876u);
  EXPECT_EQ(default_batch_size(500), 50u);
  EXPECT_EQ(default_batch_size(3), 1u);
}

TEST(Train, HoldoutTakesEveryTenth) {
  std::vector<int> v(25);
  std::iota(v.begin(), v.end(), 0);
  const auto [fit, held] = holdout_split(v);
  EXPECT_EQ(held, (std::vector<int>{9, 19}));
  EXPECT_EQ(fit.size(), 23u);
}

TEST(Train, LossDecreasesAndRunIsDeterministic) {
  Fixture a, b;
  TrainConfig tc;
  tc.epochs = 25;
  tc.batch_size = 6;
  tc.adam.lr = 3e-3;
  std::size_t seen = 0;
  tc.on_epoch = [&](const EpochStats& s) { EXPECT_EQ(s.epoch, ++seen); };
  const auto ra = train(a.params, a.trees, tc);
  tc.on_epoch = nullptr;
  const auto rb = train(b.params, b.trees, tc);
  ASSERT_EQ(ra.curve.size(), 25u);
  EXPECT_EQ(ra.steps, 25u * 4u);
  EXPECT_LT(ra.curve.back().loss.total, 0.5 * ra.curve.front().loss.total);
  EXPECT_EQ(a.params, b.params);
  for (std::size_t i = 0; i < ra.curve.size(); ++i) EXPECT_EQ(ra.curve[i].loss.total, rb.curve[i].loss.total);

  Fixture c;
  tc.seed = 2;
  train(c.params, c.trees, tc);
  EXPECT_FALSE(c.params == a.params);
}

TEST(Train, ZeroLearningRateKeepsParameters) {
  Fixture s;
  TrainConfig tc;
  tc.epochs = 1;
  tc.batch_size = s.trees.size();
  tc.adam.lr = 0.0;
  const ModelParams before = s.params;
  const auto r = train(s.params, s.trees, tc);
  EXPECT_EQ(s.params, before);
  // One full batch with lr 0: the KL term does not depend on the noise draw.
  std::vector<const SceneTree*> ptrs;
  for (const auto& t : s.trees) ptrs.push_back(&t);
  const Mat eps = sample_eps(s.params.cfg.latent_dim, ptrs.size(), 0);
  const LossBreakdown l = compute_loss(s.params, ptrs, eps);
  EXPECT_NEAR(r.curve[0].loss.kl, l.kl, 1e-12);
}

TEST(Train, NonFiniteLossNamesEpochAndTree) {
  Fixture s;
  s.trees[5].root.children[0].object.obb.size_x = std::numeric_limits<double>::quiet_NaN();
  TrainConfig tc;
  tc.epochs = 2;
  tc.batch_size = 4;
  try {
    train(s.params, s.trees, tc);
    FAIL() << "expected TrainingError";
  } catch (const TrainingError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("epoch 1"), std::string::npos) << msg;
    EXPECT_NE(msg.find("tree 5"), std::string::npos) << msg;
  }
  EXPECT_THROW(train(s.params, {}, tc), Error);
}

TEST(Train, CheckpointsEveryNEpochs) {
  Fixture s;
  TrainConfig tc;
  tc.epochs = 4;
  tc.batch_size = 8;
  tc.save_every = 2;
  tc.checkpoint_path = (std::filesystem::temp_directory_path() / "grains_train_ckpt.grains").string();
  std::filesystem::remove(tc.checkpoint_path);
  train(s.params, s.trees, tc);
  ASSERT_TRUE(std::filesystem::exists(tc.checkpoint_path));
  EXPECT_EQ(load_model(tc.checkpoint_path), s.params);
  std::filesystem::remove(tc.checkpoint_path);
}
