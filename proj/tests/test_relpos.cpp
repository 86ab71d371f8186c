#include <gtest/gtest.h>

#include <random>

#include "grains/relpos.hpp"
#include "grains/scene_model.hpp"

using namespace grains;

namespace {

struct RandomBoxes {
  std::mt19937_64 rng;
  explicit RandomBoxes(std::uint64_t seed) : rng(seed) {}
  double u(double a, double b) { return std::uniform_real_distribution<double>(a, b)(rng); }
  OBB box() { return OBB{u(-3, 3), u(-3, 3), 0.0, u(0.1, 2.5), u(0.1, 2.5), u(0.1, 2.0), normalize_angle(u(-kPi, kPi))}; }
};

// All four (ref edge, tgt edge) pairs; the first minimum wins.
EdgeCase brute_force_case(double r0, double r1, double t0, double t1) {
  const double refs[2] = {r0, r1}, tgts[2] = {t0, t1};
  EdgeCase best{-1, 0.0};
  for (int re = 0; re < 2; ++re) {
    for (int te = 0; te < 2; ++te) {
      const double off = tgts[te] - refs[re];
      if (best.index < 0 || std::abs(off) < std::abs(best.offset)) best = {2 * re + te, off};
    }
  }
  return best;
}

}  // namespace

TEST(RelPos, RelativeAngle) {
  OBB a, b;
  a.angle = b.angle = 0.4;
  EXPECT_EQ(relative_angle(a, b), 0.0);
  a.angle = 0;
  b.angle = kPi / 2;
  EXPECT_DOUBLE_EQ(relative_angle(a, b), kPi / 2);
  a.angle = 3;
  b.angle = -3;
  const double want = -6 + kTwoPi;
  EXPECT_NEAR(relative_angle(a, b), want, 1e-12);
  EXPECT_GT(relative_angle(a, b), -kPi);
  EXPECT_LE(relative_angle(a, b), kPi);
}

TEST(RelPos, EdgeCaseExamples) {
  // Chair fully right of the desk: desk max edge vs chair min edge.
  const auto c = closest_edge_case(-0.6, 0.6, 0.8, 1.3);
  EXPECT_EQ(c.index, 2);
  EXPECT_NEAR(c.offset, 0.2, 1e-12);
  const auto z = closest_edge_case(-1, 1, -1, 1);
  EXPECT_EQ(z.index, 0);
  EXPECT_EQ(z.offset, 0.0);
}

TEST(RelPos, EdgeCaseMatchesBruteForce) {
  RandomBoxes r(17);
  for (int i = 0; i < 10000; ++i) {
    const double r0 = r.u(-2, 2), t0 = r.u(-3, 3);
    const double r1 = r0 + r.u(0.01, 2), t1 = t0 + r.u(0.01, 2);
    const auto got = closest_edge_case(r0, r1, t0, t1);
    const auto want = brute_force_case(r0, r1, t0, t1);
    EXPECT_EQ(got.index, want.index);
    EXPECT_EQ(got.offset, want.offset);
  }
}

TEST(RelPos, IdentityEncoding) {
  const OBB b{1, 2, 0, 1.2, 0.8, 1, 0.3};
  const auto rp = encode_relpos(b, b);
  EXPECT_EQ(rp.angle, 0.0);
  EXPECT_EQ(rp.offset_h, 0.0);
  EXPECT_EQ(rp.offset_v, 0.0);
  EXPECT_EQ(rp.attach, Attach::both);
  EXPECT_EQ(rp.align, Align::deg0);
  EXPECT_EQ(rp.case_h, 0);
  EXPECT_EQ(rp.case_v, 0);
}

TEST(RelPos, BedFlushAgainstWall) {
  const Room room = Room::rectangular(4, 4, 2.7);
  const OBB bed{1.5, 1.0, 0, 1.6, 2.0, 0.5, 0.0};
  const auto rp = encode_relpos(room.walls[0], bed);
  EXPECT_NE(rp.attach, Attach::none);
  EXPECT_EQ(rp.align, Align::deg0);
}

TEST(RelPos, OneBitPerGroup) {
  RandomBoxes r(23);
  for (int i = 0; i < 10000; ++i) {
    const auto v = encode_relpos(r.box(), r.box()).to_vector();
    EXPECT_TRUE(one_hot_groups(v));
  }
}

TEST(RelPos, RoundTripWithoutSnapping) {
  RandomBoxes r(29);
  double max_c = 0, max_a = 0;
  for (int i = 0; i < 10000; ++i) {
    const OBB ref = r.box(), tgt = r.box();
    const OBB d = decode_relpos(ref, RelPos28::harden(encode_relpos(ref, tgt).to_vector()),
                                {tgt.size_x, tgt.size_y, tgt.size_z}, false);
    max_c = std::max(max_c, norm(d.center() - tgt.center()));
    max_a = std::max(max_a, angle_distance(d.angle, tgt.angle));
  }
  EXPECT_LT(max_c, 1e-6);
  EXPECT_LT(max_a, 1e-9);
}

TEST(RelPos, AttachSnapDominatesOffset) {
  const Room room = Room::rectangular(4, 4, 2.7);
  const OBB& wall = room.walls[0];
  const OBB bed{1.5, 1.0, 0, 1.6, 2.0, 0.5, 0.0};
  auto rp = encode_relpos(wall, bed);
  ASSERT_TRUE(rp.attach == Attach::axis_v || rp.attach == Attach::both);
  rp.offset_v += 0.02;
  const OBB d = decode_relpos(wall, rp, {bed.size_x, bed.size_y, bed.size_z});
  EXPECT_NEAR(d.center_y - bed.size_y / 2, 0.0, 1e-12);
}

TEST(RelPos, AlignSnapSetsExactAngle) {
  RelPos28 rp;
  rp.angle = 1.55;
  rp.align = Align::deg90;
  const OBB d = decode_relpos(OBB{}, rp, {1, 1, 1});
  EXPECT_EQ(d.angle, kPi / 2);
}

TEST(RelPos, FrameCovariance) {
  RandomBoxes r(31);
  for (int i = 0; i < 2000; ++i) {
    const OBB ref = r.box(), tgt = r.box();
    const Pose2 m{{r.u(-5, 5), r.u(-5, 5)}, r.u(-kPi, kPi)};
    const auto a = encode_relpos(ref, tgt).to_vector();
    const auto b = encode_relpos(m.apply(ref), m.apply(tgt)).to_vector();
    for (std::size_t k = 0; k < 3; ++k) EXPECT_NEAR(a[k], b[k], 1e-9);
    for (std::size_t k = 3; k < kRelPosDim; ++k) EXPECT_EQ(a[k], b[k]);
  }
}

TEST(RelPos, AttachImpliesContactAfterDecode) {
  RandomBoxes r(37);
  int checked = 0;
  for (int i = 0; i < 5000; ++i) {
    const OBB ref = r.box();
    OBB tgt = r.box();
    tgt.angle = normalize_angle(ref.angle + (i % 4) * kPi / 2 + r.u(-0.05, 0.05));
    // Push the target near contact with the reference's +x face.
    const double ex = (i % 2) ? tgt.size_y : tgt.size_x;
    const Vec2 c = ref.to_world({0.5 * ref.size_x + 0.5 * ex + r.u(-0.04, 0.04), r.u(-0.3, 0.3)});
    tgt.center_x = c.x;
    tgt.center_y = c.y;
    const auto rp = encode_relpos(ref, tgt);
    if (rp.attach == Attach::none) continue;
    const OBB d = decode_relpos(ref, rp, {tgt.size_x, tgt.size_y, tgt.size_z});
    const auto again = encode_relpos(ref, d);
    if (rp.attach == Attach::axis_h || rp.attach == Attach::both) EXPECT_LT(std::abs(again.offset_h), 1e-9);
    if (rp.attach == Attach::axis_v || rp.attach == Attach::both) EXPECT_LT(std::abs(again.offset_v), 1e-9);
    ++checked;
  }
  EXPECT_GT(checked, 1000);
}

TEST(RelPos, DecodeRejectsDegenerateSizes) {
  EXPECT_THROW(decode_relpos(OBB{}, RelPos28{}, {0.0, 1, 1}), Error);
}

TEST(RelPos, StrictParseRejectsTwoAttachBits) {
  auto v = encode_relpos(OBB{}, OBB{}).to_vector();
  v[kAttachBitsBegin] = 1.0;
  EXPECT_THROW(RelPos28::parse_strict(v), Error);
  EXPECT_FALSE(one_hot_groups(v));
}

TEST(RelPos, AlternativeModesRoundTrip) {
  RandomBoxes r(41);
  for (auto mode : {PositionMode::absolute, PositionMode::center_translation}) {
    for (int i = 0; i < 500; ++i) {
      const OBB ref = r.box(), tgt = r.box();
      const OBB d = place_from_vector(ref, position_vector(ref, tgt, mode), {tgt.size_x, tgt.size_y, tgt.size_z}, mode);
      EXPECT_LT(norm(d.center() - tgt.center()), 1e-9);
      EXPECT_LT(angle_distance(d.angle, tgt.angle), 1e-9);
    }
  }
}
