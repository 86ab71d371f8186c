#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <span>
#include <string>

#include "grains/error.hpp"
#include "grains/geometry.hpp"

namespace grains {

// Tolerances for relation detection and relative-position encoding.
struct RelationConfig {
  double support_overlap_min = 0.5;  // fraction of the supported footprint
  double support_gap_max = 0.05;     // meters
  double surround_ratio_min = 0.75;  // footprint-area ratio interval
  double surround_ratio_max = 1.33;
  double surround_radius_max = 1.0;  // meters from the central box boundary
  double attach_tol = 0.05;          // meters
  double align_tol = 5.0 * kPi / 180.0;
  // 2D layouts carry no heights: support becomes footprint overlap.
  bool support_as_overlap = false;

  void check() const {
    if (!(support_overlap_min > 0 && support_gap_max > 0 && surround_radius_max > 0 &&
          attach_tol > 0 && align_tol > 0)) {
      throw Error("relation tolerances must be positive");
    }
    if (!(surround_ratio_min > 0 && surround_ratio_min <= 1.0 && surround_ratio_max >= 1.0)) {
      throw Error("surround ratio interval must contain 1");
    }
  }
};

enum class Attach { none = 0, axis_h = 1, axis_v = 2, both = 3 };
enum class Align { deg0 = 0, deg90 = 1, deg180 = 2, deg270 = 3, other = 4 };

inline constexpr std::size_t kRelPosDim = 28;
inline constexpr std::size_t kEdgeBitsBegin = 3;
inline constexpr std::size_t kAttachBitsBegin = 19;
inline constexpr std::size_t kAlignBitsBegin = 23;

using RelVec = std::array<double, kRelPosDim>;

// 28-component relative position of a target box w.r.t. a reference box:
// angle, two signed offsets between closest edges, a 4x4 edge-pair grid,
// attachment and alignment one-hots.
struct RelPos28 {
  double angle = 0.0;
  double offset_h = 0.0;
  double offset_v = 0.0;
  int case_h = 0;  // 2*(ref edge is max) + (tgt edge is max)
  int case_v = 0;
  Attach attach = Attach::none;
  Align align = Align::other;

  RelVec to_vector() const {
    RelVec v{};
    v[0] = angle;
    v[1] = offset_h;
    v[2] = offset_v;
    v[kEdgeBitsBegin + 4 * case_h + case_v] = 1.0;
    v[kAttachBitsBegin + static_cast<int>(attach)] = 1.0;
    v[kAlignBitsBegin + static_cast<int>(align)] = 1.0;
    return v;
  }

  // Per-group argmax; lowest index wins ties.
  static RelPos28 harden(std::span<const double> v) {
    if (v.size() != kRelPosDim) throw Error("relpos vector must have 28 components");
    auto argmax = [&](std::size_t b, std::size_t n) {
      return static_cast<int>(std::max_element(v.begin() + b, v.begin() + b + n) - (v.begin() + b));
    };
    RelPos28 r;
    r.angle = v[0];
    r.offset_h = v[1];
    r.offset_v = v[2];
    const int edge = argmax(kEdgeBitsBegin, 16);
    r.case_h = edge / 4;
    r.case_v = edge % 4;
    r.attach = static_cast<Attach>(argmax(kAttachBitsBegin, 4));
    r.align = static_cast<Align>(argmax(kAlignBitsBegin, 5));
    return r;
  }

  // Accepts only exact one-hot groups (each group: one 1, rest 0).
  static RelPos28 parse_strict(std::span<const double> v) {
    if (v.size() != kRelPosDim) throw Error("relpos vector must have 28 components");
    auto check_group = [&](std::size_t b, std::size_t n, const char* name) {
      int ones = 0;
      for (std::size_t i = b; i < b + n; ++i) {
        if (v[i] == 1.0) {
          ++ones;
        } else if (v[i] != 0.0) {
          throw Error(std::string("relpos ") + name + " bits must be 0 or 1");
        }
      }
      if (ones != 1) throw Error(std::string("relpos ") + name + " group must have exactly one bit set");
    };
    check_group(kEdgeBitsBegin, 16, "edge-case");
    check_group(kAttachBitsBegin, 4, "attach");
    check_group(kAlignBitsBegin, 5, "align");
    if (!std::isfinite(v[0]) || !std::isfinite(v[1]) || !std::isfinite(v[2])) {
      throw Error("relpos real components must be finite");
    }
    return harden(v);
  }

  bool operator==(const RelPos28&) const = default;
};

inline bool one_hot_groups(std::span<const double> v) {
  try {
    RelPos28::parse_strict(v);
    return true;
  } catch (const Error&) {
    return false;
  }
}

inline double relative_angle(const OBB& ref, const OBB& tgt) {
  return normalize_angle(tgt.angle - ref.angle);
}

struct EdgeCase {
  int index = 0;
  double offset = 0.0;  // tgt_edge - ref_edge
};

// Among the four (ref edge, tgt edge) pairs along one axis, the pair with the
// smallest absolute separation; ties go to the lowest case index.
inline EdgeCase closest_edge_case(double ref_min, double ref_max, double tgt_min,
                                  double tgt_max) {
  const double ref_edges[2] = {ref_min, ref_max};
  const double tgt_edges[2] = {tgt_min, tgt_max};
  EdgeCase best{0, tgt_min - ref_min};
  for (int c = 1; c < 4; ++c) {
    const double off = tgt_edges[c & 1] - ref_edges[c >> 1];
    if (std::abs(off) < std::abs(best.offset)) best = {c, off};
  }
  return best;
}

enum class Axis { h, v };

inline EdgeCase closest_edge_case(const Bounds2& ref, const Bounds2& tgt, Axis axis) {
  return axis == Axis::h ? closest_edge_case(ref.min_x, ref.max_x, tgt.min_x, tgt.max_x)
                         : closest_edge_case(ref.min_y, ref.max_y, tgt.min_y, tgt.max_y);
}

inline Align detect_align(double rel_angle, double tol) {
  for (int k = 0; k < 4; ++k) {
    if (angle_distance(rel_angle, k * kPi / 2) <= tol) return static_cast<Align>(k);
  }
  return Align::other;
}

namespace detail {

// Extents of the target along the reference axes once de-rotated. An aligned
// target keeps its quarter-turn, so odd quarter-turns swap its extents.
inline std::pair<double, double> target_extents(double sx, double sy, Align align) {
  const bool swap = align == Align::deg90 || align == Align::deg270;
  return swap ? std::pair{sy, sx} : std::pair{sx, sy};
}

}  // namespace detail

inline RelPos28 encode_relpos(const OBB& ref, const OBB& tgt, const RelationConfig& cfg = {}) {
  RelPos28 r;
  r.angle = relative_angle(ref, tgt);
  r.align = detect_align(r.angle, cfg.align_tol);
  const Vec2 c = ref.to_local(tgt.center());
  const auto [ex, ey] = detail::target_extents(tgt.size_x, tgt.size_y, r.align);
  const double rx = 0.5 * ref.size_x, ry = 0.5 * ref.size_y;
  const EdgeCase h = closest_edge_case(-rx, rx, c.x - 0.5 * ex, c.x + 0.5 * ex);
  const EdgeCase v = closest_edge_case(-ry, ry, c.y - 0.5 * ey, c.y + 0.5 * ey);
  r.case_h = h.index;
  r.case_v = v.index;
  r.offset_h = h.offset;
  r.offset_v = v.offset;
  if (r.align != Align::other) {
    const bool ah = std::abs(h.offset) <= cfg.attach_tol;
    const bool av = std::abs(v.offset) <= cfg.attach_tol;
    r.attach = ah && av ? Attach::both : ah ? Attach::axis_h : av ? Attach::axis_v : Attach::none;
  }
  return r;
}

struct TargetSizes {
  double size_x, size_y, size_z;
};

// Places the target in the room frame. Elevation is left at 0; vertical
// placement belongs to the caller.
inline OBB decode_relpos(const OBB& ref, const RelPos28& rp, TargetSizes sizes, bool snap = true) {
  if (!(sizes.size_x > 0 && sizes.size_y > 0 && sizes.size_z > 0)) {
    throw Error("decode_relpos: target sizes must be positive");
  }
  double angle = rp.angle;
  double off_h = rp.offset_h, off_v = rp.offset_v;
  if (snap) {
    if (rp.align != Align::other) angle = static_cast<int>(rp.align) * kPi / 2;
    if (rp.attach == Attach::axis_h || rp.attach == Attach::both) off_h = 0.0;
    if (rp.attach == Attach::axis_v || rp.attach == Attach::both) off_v = 0.0;
  }
  const auto [ex, ey] = detail::target_extents(sizes.size_x, sizes.size_y, rp.align);
  auto place = [](int c, double ref_half, double off, double ext) {
    const double ref_edge = (c >> 1) ? ref_half : -ref_half;
    const double tgt_edge = ref_edge + off;
    return (c & 1) ? tgt_edge - 0.5 * ext : tgt_edge + 0.5 * ext;
  };
  const Vec2 local{place(rp.case_h, 0.5 * ref.size_x, off_h, ex),
                   place(rp.case_v, 0.5 * ref.size_y, off_v, ey)};
  const Vec2 c = ref.to_world(local);
  return OBB{c.x, c.y, 0.0, sizes.size_x, sizes.size_y, sizes.size_z,
             normalize_angle(ref.angle + angle)};
}

// ---------------------------------------------------------------------------
// Alternative position encodings used by the ablation modes.

enum class PositionMode { relative, absolute, center_translation };

inline std::string to_string(PositionMode m) {
  switch (m) {
    case PositionMode::relative: return "relative";
    case PositionMode::absolute: return "absolute";
    case PositionMode::center_translation: return "center_translation";
  }
  return "relative";
}

inline PositionMode position_mode_from_string(const std::string& s) {
  if (s == "relative") return PositionMode::relative;
  if (s == "absolute") return PositionMode::absolute;
  if (s == "center_translation") return PositionMode::center_translation;
  throw Error("unknown position mode '" + s + "'");
}

inline RelVec position_vector(const OBB& ref, const OBB& tgt, PositionMode mode,
                              const RelationConfig& cfg = {}) {
  switch (mode) {
    case PositionMode::relative:
      return encode_relpos(ref, tgt, cfg).to_vector();
    case PositionMode::absolute: {
      RelVec v{};
      v[0] = tgt.center_x;
      v[1] = tgt.center_y;
      v[2] = tgt.angle;
      return v;
    }
    case PositionMode::center_translation: {
      RelVec v{};
      const Vec2 d = ref.to_local(tgt.center());
      v[0] = relative_angle(ref, tgt);
      v[1] = d.x;
      v[2] = d.y;
      return v;
    }
  }
  return {};
}

inline OBB place_from_vector(const OBB& ref, const RelVec& v, TargetSizes sizes, PositionMode mode,
                             bool snap = true) {
  switch (mode) {
    case PositionMode::relative:
      return decode_relpos(ref, RelPos28::harden(v), sizes, snap);
    case PositionMode::absolute:
      return OBB{v[0], v[1], 0.0, sizes.size_x, sizes.size_y, sizes.size_z, normalize_angle(v[2])};
    case PositionMode::center_translation: {
      const Vec2 c = ref.to_world({v[1], v[2]});
      return OBB{c.x, c.y, 0.0, sizes.size_x, sizes.size_y, sizes.size_z,
                 normalize_angle(ref.angle + v[0])};
    }
  }
  return {};
}

}  // namespace grains
