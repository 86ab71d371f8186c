#include <gtest/gtest.h>

#include <random>
#include <sstream>

#include "grains/scene_model.hpp"
#include "grains/synth.hpp"

using namespace grains;

namespace {

std::string serialize(const Corpus& c) {
  std::ostringstream os;
  write_corpus(os, c);
  return os.str();
}

Corpus load_string(const std::string& s, const FilterConfig& f) {
  std::istringstream is(s);
  return load_corpus(is, f).first;
}

Scene simple_scene(const std::vector<std::size_t>& cats) {
  Scene s{Room::rectangular(4, 4, 2.7), {}, RoomType::bedroom};
  for (std::size_t i = 0; i < cats.size(); ++i) {
    s.objects.push_back({"o" + std::to_string(i), cats[i], OBB{0.5 + 0.4 * i, 1.0, 0, 0.3, 0.3, 0.5, 0}});
  }
  return s;
}

}  // namespace

TEST(Corpus, HeaderCountsMatchAfterFiltering) {
  std::vector<std::string> names;
  for (int i = 0; i < 20; ++i) names.push_back("cat" + std::to_string(100 + i));
  Corpus c{RoomType::bedroom, Vocabulary(names), {}};
  for (std::size_t i = 0; i < 18763; ++i) {
    c.scenes.push_back(simple_scene({i % 20, (i + 3) % 20, (i + 7) % 20, (i + 11) % 20}));
  }
  std::istringstream is(serialize(c));
  auto [out, report] = load_corpus(is, FilterConfig{});
  EXPECT_EQ(report.scenes_kept, 18763u);
  EXPECT_EQ(report.category_count, 20u);
  ASSERT_TRUE(report.header_scene_count);
  EXPECT_EQ(*report.header_scene_count, 18763u);
  EXPECT_TRUE(report.matches_header());
}

TEST(Corpus, SingleSceneIdentity) {
  Corpus c{RoomType::bedroom, Vocabulary({"bed"}), {simple_scene({0})}};
  std::istringstream is(serialize(c));
  auto [out, report] = load_corpus(is, FilterConfig{1, 20, 0.01});
  ASSERT_EQ(out.scenes.size(), 1u);
  EXPECT_EQ(out.scenes[0], c.scenes[0]);
  EXPECT_EQ(report.dropped_too_few + report.dropped_too_many + report.objects_dropped, 0u);
}

TEST(Corpus, MinObjectsFilterCountsByScan) {
  Corpus c = synthesize_corpus(TemplateConfig{}, 21, 100);
  for (std::size_t i = 0; i < 7; ++i) c.scenes[i * 13].objects.resize(2);
  std::size_t expect = 0;
  for (const auto& s : c.scenes) expect += s.objects.size() >= 3 && s.objects.size() <= 20;
  const Corpus out = load_string(serialize(c), FilterConfig{3, 20, 0.0});
  EXPECT_EQ(expect, 93u);
  EXPECT_EQ(out.scenes.size(), expect);
}

TEST(Corpus, MalformedLineReportsContext) {
  Corpus c = synthesize_corpus(TemplateConfig{}, 1, 3);
  std::string text = serialize(c);
  const auto second = text.find('\n', text.find('\n') + 1);
  text.insert(second + 1, "{not json\n");
  try {
    load_string(text, FilterConfig{1, 20, 0.0});
    FAIL() << "expected a parse error";
  } catch (const ParseError& e) {
    EXPECT_NE(std::string(e.what()).find("line 3"), std::string::npos) << e.what();
  }
}

TEST(Corpus, ObjectOutsideRoomIsRejected) {
  Corpus c{RoomType::bedroom, Vocabulary({"bed"}), {simple_scene({0})}};
  c.scenes[0].objects[0].obb.center_x = 10.0;
  EXPECT_THROW(load_string(serialize(c), FilterConfig{1, 20, 0.0}), ParseError);
}

TEST(Corpus, EmptyAfterFilteringIsExplicit) {
  Corpus c{RoomType::bedroom, Vocabulary({"bed"}), {simple_scene({0})}};
  try {
    load_string(serialize(c), FilterConfig{4, 20, 0.0});
    FAIL() << "expected empty corpus error";
  } catch (const EmptyCorpusError& e) {
    EXPECT_NE(std::string(e.what()).find("empty corpus"), std::string::npos);
  }
}

TEST(Corpus, FilterIsIdempotent) {
  Corpus c = synthesize_corpus(TemplateConfig{}, 4, 60);
  c.scenes[0].objects.resize(2);
  const FilterConfig f{4, 9, 0.3};
  const auto once = apply_filter(c, f).first;
  const auto twice = apply_filter(once, f).first;
  EXPECT_EQ(once, twice);
}

TEST(Corpus, SynthesizedCorpusRoundTrips) {
  const Corpus c = synthesize_corpus(TemplateConfig{}, 9, 40);
  std::istringstream is(serialize(c));
  EXPECT_EQ(parse_corpus(is).first, c);
}

TEST(Vocabulary, FrequencyOrderAndThreshold) {
  Corpus c{RoomType::bedroom, Vocabulary({"bed", "lamp", "rug", "chair"}), {}};
  for (int i = 0; i < 100; ++i) {
    std::vector<std::size_t> cats{0};
    if (i < 50) cats.push_back(3);
    if (i < 50) cats.push_back(1);
    if (i == 0) cats.push_back(2);
    c.scenes.push_back(simple_scene(cats));
  }
  const Vocabulary v = build_vocabulary(c, 0.05);
  EXPECT_EQ(v.names(), (std::vector<std::string>{"bed", "chair", "lamp", "wall", "floor"}));
  EXPECT_FALSE(v.index_of("rug"));
}

TEST(Vocabulary, SyntheticMatchesTemplateCategories) {
  const TemplateConfig t;
  const Corpus c = synthesize_corpus(t, 2, 200);
  const Vocabulary v = build_vocabulary(c, 0.0);
  auto got = v.object_names();
  auto want = t.category_names();
  std::sort(got.begin(), got.end());
  std::sort(want.begin(), want.end());
  EXPECT_EQ(got, want);
  EXPECT_EQ(v.name(v.wall_index()), "wall");
  EXPECT_EQ(v.name(v.floor_index()), "floor");
}

TEST(LeafVector, Layout) {
  std::vector<std::string> names{"bed"};
  for (int i = 1; i < 18; ++i) names.push_back("c" + std::to_string(i));
  const Vocabulary v(names);
  ASSERT_EQ(v.size(), 20u);
  const auto lv = leaf_vector({"b", 0, OBB{0, 0, 0, 2.0, 1.6, 0.5, 0}}, v);
  ASSERT_EQ(lv.size(), 23u);
  std::vector<double> want(23, 0.0);
  want[0] = 2.0;
  want[1] = 1.6;
  want[2] = 0.5;
  want[3] = 1.0;
  EXPECT_EQ(lv, want);
  const auto wv = leaf_vector(wall_object(Room::rectangular(4, 4, 2.7), 0, v), v);
  EXPECT_EQ(wv[3 + v.wall_index()], 1.0);
  EXPECT_THROW(leaf_vector({"x", 99, OBB{}}, v), Error);
}

TEST(LeafVector, RoundTripRandomObjects) {
  const Vocabulary v({"a", "b", "c", "d", "e"});
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> size(0.01, 5.0);
  std::uniform_int_distribution<std::size_t> cat(0, v.size() - 1);
  for (int i = 0; i < 1000; ++i) {
    SceneObject o{"x", cat(rng), OBB{0, 0, 0, size(rng), size(rng), size(rng), 0}};
    const auto p = parse_leaf_vector(leaf_vector(o, v), v);
    EXPECT_EQ(p.size_x, o.obb.size_x);
    EXPECT_EQ(p.size_y, o.obb.size_y);
    EXPECT_EQ(p.size_z, o.obb.size_z);
    EXPECT_EQ(p.category, o.category);
  }
}

TEST(Synth, Deterministic) {
  const TemplateConfig t;
  EXPECT_EQ(serialize(synthesize_corpus(t, 1, 2)), serialize(synthesize_corpus(t, 1, 2)));
  EXPECT_NE(serialize(synthesize_corpus(t, 1, 2)), serialize(synthesize_corpus(t, 2, 2)));
  EXPECT_THROW(synthesize_corpus(t, 1, 0), Error);
}

TEST(Synth, NightstandsFlankEveryBed) {
  const Corpus c = synthesize_corpus(TemplateConfig{}, 3, 300);
  const auto bed = *c.vocab.index_of("bed");
  for (const auto& s : c.scenes) {
    const SceneObject* b = nullptr;
    for (const auto& o : s.objects) {
      if (o.category == bed) b = &o;
    }
    ASSERT_NE(b, nullptr);
    bool flanked = false;
    for (const auto& x : s.objects) {
      for (const auto& y : s.objects) {
        if (&x == b || &y == b || x.category != y.category || x.obb.elevation > 0 || y.obb.elevation > 0) continue;
        const double lx = b->obb.to_local(x.obb.center()).x, ly = b->obb.to_local(y.obb.center()).x;
        flanked |= lx * ly < 0 && std::abs(lx) < b->obb.size_x && std::abs(ly) < b->obb.size_x;
      }
    }
    EXPECT_TRUE(flanked);
  }
}

TEST(Synth, ObjectsInsideFixedRoom) {
  TemplateConfig t;
  t.room_width = {4, 4};
  t.room_depth = {4, 4};
  const Corpus c = synthesize_corpus(t, 8, 200);
  for (const auto& s : c.scenes) {
    EXPECT_EQ(s.room.width, 4.0);
    for (const auto& o : s.objects) {
      for (auto p : o.obb.corners()) {
        EXPECT_GE(p.x, -1e-9);
        EXPECT_GE(p.y, -1e-9);
        EXPECT_LE(p.x, 4 + 1e-9);
        EXPECT_LE(p.y, 4 + 1e-9);
      }
    }
  }
}

TEST(Synth, InfeasibleTemplateNamesConstraint) {
  TemplateConfig t;
  t.room_width = {2, 2};
  t.room_depth = {2, 2};
  try {
    synthesize_corpus(t, 1, 1);
    FAIL() << "expected infeasible template";
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("bed"), std::string::npos) << e.what();
  }
}
