#pragma once

#include <algorithm>
#include <cstddef>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "json.hpp"

#include "grains/error.hpp"
#include "grains/geometry.hpp"

namespace grains {

using json = nlohmann::json;

inline constexpr std::string_view kCorpusFormat = "grains-scene/1";
inline constexpr std::string_view kWallName = "wall";
inline constexpr std::string_view kFloorName = "floor";
inline constexpr double kWallThickness = 0.1;
inline constexpr double kFloorThickness = 0.1;
inline constexpr std::size_t kUnknownCategory = static_cast<std::size_t>(-1);

enum class RoomType { bedroom, living, kitchen, office, custom };

inline std::string to_string(RoomType t) {
  switch (t) {
    case RoomType::bedroom: return "bedroom";
    case RoomType::living: return "living";
    case RoomType::kitchen: return "kitchen";
    case RoomType::office: return "office";
    case RoomType::custom: return "custom";
  }
  return "custom";
}

inline RoomType room_type_from_string(std::string_view s) {
  if (s == "bedroom") return RoomType::bedroom;
  if (s == "living") return RoomType::living;
  if (s == "kitchen") return RoomType::kitchen;
  if (s == "office") return RoomType::office;
  if (s == "custom") return RoomType::custom;
  throw ParseError("unknown room_type '" + std::string(s) + "'");
}

struct SceneObject {
  std::string id;
  std::size_t category = 0;
  OBB obb;

  bool operator==(const SceneObject&) const = default;
};

// Rectangular room spanning [0,width] x [0,depth]. Walls are thin boxes
// outside the rectangle, ordered anticlockwise seen from the top
// (south, east, north, west); each wall's local +y faces the interior.
struct Room {
  double width = 4.0;
  double depth = 4.0;
  double wall_height = 2.7;
  std::vector<OBB> walls;
  OBB floor;

  static Room rectangular(double width, double depth, double wall_height) {
    Room r;
    r.width = width;
    r.depth = depth;
    r.wall_height = wall_height;
    const double t = kWallThickness;
    r.walls = {
        OBB{width / 2, -t / 2, 0.0, width, t, wall_height, 0.0},
        OBB{width + t / 2, depth / 2, 0.0, depth, t, wall_height, kPi / 2},
        OBB{width / 2, depth + t / 2, 0.0, width, t, wall_height, kPi},
        OBB{-t / 2, depth / 2, 0.0, depth, t, wall_height, -kPi / 2},
    };
    r.floor = OBB{width / 2, depth / 2, -kFloorThickness, width, depth,
                  kFloorThickness, 0.0};
    return r;
  }

  OBB rectangle() const {
    return OBB{width / 2, depth / 2, 0.0, width, depth, wall_height, 0.0};
  }

  bool operator==(const Room&) const = default;
};

struct Scene {
  Room room;
  std::vector<SceneObject> objects;
  RoomType room_type = RoomType::bedroom;

  bool operator==(const Scene&) const = default;
};

// Ordered category names; the last two entries are always "wall" and "floor".
class Vocabulary {
 public:
  Vocabulary() : names_{std::string(kWallName), std::string(kFloorName)} {}

  explicit Vocabulary(const std::vector<std::string>& object_categories) {
    std::set<std::string> seen;
    for (const auto& n : object_categories) {
      if (n == kWallName || n == kFloorName) continue;
      if (!seen.insert(n).second) {
        throw Error("duplicate category name '" + n + "'");
      }
      names_.push_back(n);
    }
    names_.emplace_back(kWallName);
    names_.emplace_back(kFloorName);
  }

  std::size_t size() const { return names_.size(); }
  std::size_t object_count() const { return names_.size() - 2; }
  const std::vector<std::string>& names() const { return names_; }
  std::vector<std::string> object_names() const {
    return {names_.begin(), names_.end() - 2};
  }
  const std::string& name(std::size_t i) const { return names_.at(i); }
  std::size_t wall_index() const { return names_.size() - 2; }
  std::size_t floor_index() const { return names_.size() - 1; }
  bool is_special(std::size_t i) const { return i >= wall_index(); }

  std::optional<std::size_t> index_of(std::string_view name) const {
    for (std::size_t i = 0; i < names_.size(); ++i) {
      if (names_[i] == name) return i;
    }
    return std::nullopt;
  }

  bool operator==(const Vocabulary&) const = default;

 private:
  std::vector<std::string> names_;
};

struct FilterConfig {
  std::size_t min_objects = 4;
  std::size_t max_objects = 20;
  double min_category_frequency = 0.01;

  void check() const {
    if (min_objects == 0 || min_objects > max_objects) {
      throw Error("filter requires 0 < min_objects <= max_objects");
    }
  }
};

struct FilterReport {
  std::size_t scenes_read = 0;
  std::size_t scenes_kept = 0;
  std::size_t dropped_too_few = 0;
  std::size_t dropped_too_many = 0;
  std::size_t objects_dropped = 0;
  std::vector<std::string> categories_dropped;
  std::size_t category_count = 0;  // object categories after filtering
  std::optional<std::size_t> header_scene_count;
  std::optional<std::size_t> header_category_count;

  bool matches_header() const {
    return (!header_scene_count || *header_scene_count == scenes_kept) &&
           (!header_category_count || *header_category_count == category_count);
  }
};

struct Corpus {
  RoomType room_type = RoomType::bedroom;
  Vocabulary vocab;
  std::vector<Scene> scenes;

  bool operator==(const Corpus&) const = default;
};

// ---------------------------------------------------------------------------
// Vocabulary

inline std::map<std::string, std::size_t> category_scene_counts(const Corpus& c) {
  std::map<std::string, std::size_t> counts;
  for (const auto& s : c.scenes) {
    std::set<std::size_t> present;
    for (const auto& o : s.objects) present.insert(o.category);
    for (auto cat : present) ++counts[c.vocab.name(cat)];
  }
  return counts;
}

// Categories ordered by descending scene frequency, then name.
inline Vocabulary build_vocabulary(const Corpus& corpus, double min_frequency) {
  const auto counts = category_scene_counts(corpus);
  const double n = static_cast<double>(std::max<std::size_t>(corpus.scenes.size(), 1));
  std::vector<std::pair<std::string, std::size_t>> kept;
  for (const auto& [name, cnt] : counts) {
    if (name == kWallName || name == kFloorName) continue;
    if (static_cast<double>(cnt) / n >= min_frequency) kept.emplace_back(name, cnt);
  }
  std::sort(kept.begin(), kept.end(), [](const auto& a, const auto& b) {
    return a.second != b.second ? a.second > b.second : a.first < b.first;
  });
  std::vector<std::string> names;
  for (auto& [name, cnt] : kept) names.push_back(name);
  return Vocabulary(names);
}

// Re-express every object category in `target` vocabulary (by name).
inline Corpus remap_corpus(const Corpus& corpus, const Vocabulary& target) {
  Corpus out{corpus.room_type, target, {}};
  out.scenes.reserve(corpus.scenes.size());
  for (const auto& s : corpus.scenes) {
    Scene ns = s;
    ns.objects.clear();
    for (const auto& o : s.objects) {
      auto idx = target.index_of(corpus.vocab.name(o.category));
      if (!idx) continue;
      SceneObject no = o;
      no.category = *idx;
      ns.objects.push_back(std::move(no));
    }
    out.scenes.push_back(std::move(ns));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Filtering. Iterated to a fixed point, so applying it twice is a no-op.

inline std::pair<Corpus, FilterReport> apply_filter(const Corpus& input,
                                                    const FilterConfig& cfg) {
  cfg.check();
  FilterReport report;
  report.scenes_read = input.scenes.size();
  std::set<std::string> dropped_categories;
  Corpus current = input;
  for (;;) {
    // Drop rare categories.
    const auto counts = category_scene_counts(current);
    const double n = static_cast<double>(std::max<std::size_t>(current.scenes.size(), 1));
    std::set<std::size_t> rare;
    for (std::size_t i = 0; i < current.vocab.object_count(); ++i) {
      auto it = counts.find(current.vocab.name(i));
      const double f = it == counts.end() ? 0.0 : static_cast<double>(it->second) / n;
      if (f < cfg.min_category_frequency) rare.insert(i);
    }
    bool changed = false;
    for (auto& s : current.scenes) {
      auto before = s.objects.size();
      std::erase_if(s.objects, [&](const SceneObject& o) { return rare.count(o.category) > 0; });
      report.objects_dropped += before - s.objects.size();
      changed |= before != s.objects.size();
    }
    for (auto r : rare) {
      if (counts.count(current.vocab.name(r))) dropped_categories.insert(current.vocab.name(r));
    }
    // Drop scenes with too few / too many objects.
    std::vector<Scene> kept;
    for (auto& s : current.scenes) {
      if (s.objects.size() < cfg.min_objects) {
        ++report.dropped_too_few;
        changed = true;
      } else if (s.objects.size() > cfg.max_objects) {
        ++report.dropped_too_many;
        changed = true;
      } else {
        kept.push_back(std::move(s));
      }
    }
    current.scenes = std::move(kept);
    if (!changed) break;
  }
  Corpus out = remap_corpus(current, build_vocabulary(current, 0.0));
  report.scenes_kept = out.scenes.size();
  report.category_count = out.vocab.object_count();
  report.categories_dropped.assign(dropped_categories.begin(), dropped_categories.end());
  return {std::move(out), std::move(report)};
}

// ---------------------------------------------------------------------------
// Scene validation

inline void check_scene(const Scene& s, const Vocabulary& vocab, const std::string& ctx) {
  if (s.room.width <= 0 || s.room.depth <= 0 || s.room.wall_height <= 0) {
    throw ParseError(ctx + ": room dimensions must be positive");
  }
  const OBB rect = s.room.rectangle();
  std::set<std::string> ids;
  for (const auto& o : s.objects) {
    if (!ids.insert(o.id).second) throw ParseError(ctx + ": duplicate object id '" + o.id + "'");
    if (o.category >= vocab.size()) throw ParseError(ctx + ": category out of range");
    if (!(o.obb.size_x > 0 && o.obb.size_y > 0 && o.obb.size_z > 0)) {
      throw ParseError(ctx + ": object '" + o.id + "' has non-positive size");
    }
    if (!o.obb.valid()) {
      throw ParseError(ctx + ": object '" + o.id + "' has non-finite values or angle outside (-pi, pi]");
    }
    if (footprint_intersection(o.obb, rect) <= 0.0) {
      throw ParseError(ctx + ": object '" + o.id + "' lies outside the room");
    }
  }
}

// ---------------------------------------------------------------------------
// Scene Corpus Format: JSON Lines. Line 1 is the header record, then one
// record per scene.

inline json object_to_json(const SceneObject& o, const Vocabulary& vocab) {
  return json{{"id", o.id},
              {"category", vocab.name(o.category)},
              {"center", {o.obb.center_x, o.obb.center_y}},
              {"elevation", o.obb.elevation},
              {"size", {o.obb.size_x, o.obb.size_y, o.obb.size_z}},
              {"angle", o.obb.angle}};
}

inline json scene_to_json(const Scene& s, const Vocabulary& vocab) {
  json objs = json::array();
  for (const auto& o : s.objects) objs.push_back(object_to_json(o, vocab));
  return json{{"room", {{"width", s.room.width}, {"depth", s.room.depth},
                        {"wall_height", s.room.wall_height}}},
              {"objects", std::move(objs)}};
}

inline SceneObject object_from_json(const json& j, const Vocabulary& vocab) {
  SceneObject o;
  o.id = j.at("id").get<std::string>();
  const auto cat = j.at("category").get<std::string>();
  auto idx = vocab.index_of(cat);
  if (!idx || vocab.is_special(*idx)) {
    throw ParseError("object '" + o.id + "' has undeclared category '" + cat + "'");
  }
  o.category = *idx;
  const auto& c = j.at("center");
  const auto& sz = j.at("size");
  if (c.size() != 2 || sz.size() != 3) throw ParseError("object '" + o.id + "': center needs 2 and size 3 components");
  o.obb.center_x = c[0].get<double>();
  o.obb.center_y = c[1].get<double>();
  o.obb.elevation = j.at("elevation").get<double>();
  o.obb.size_x = sz[0].get<double>();
  o.obb.size_y = sz[1].get<double>();
  o.obb.size_z = sz[2].get<double>();
  o.obb.angle = j.at("angle").get<double>();
  return o;
}

inline Scene scene_from_json(const json& j, const Vocabulary& vocab, RoomType type) {
  const auto& r = j.at("room");
  Scene s;
  s.room = Room::rectangular(r.at("width").get<double>(), r.at("depth").get<double>(),
                             r.at("wall_height").get<double>());
  s.room_type = type;
  for (const auto& o : j.at("objects")) s.objects.push_back(object_from_json(o, vocab));
  return s;
}

inline void write_corpus(std::ostream& os, const Corpus& corpus) {
  json header{{"format_version", kCorpusFormat},
              {"room_type", to_string(corpus.room_type)},
              {"category_names", corpus.vocab.object_names()},
              {"scene_count", corpus.scenes.size()},
              {"category_count", corpus.vocab.object_count()}};
  os << header.dump() << '\n';
  for (const auto& s : corpus.scenes) os << scene_to_json(s, corpus.vocab).dump() << '\n';
}

inline void save_corpus(const Corpus& corpus, const std::string& path) {
  std::ofstream os(path);
  if (!os) throw Error("cannot write corpus file '" + path + "'");
  write_corpus(os, corpus);
}

// Parses without filtering; vocabulary is the header's declared order.
inline std::pair<Corpus, FilterReport> parse_corpus(std::istream& is) {
  std::string line;
  std::size_t line_no = 0;
  auto next_record = [&]() -> std::optional<json> {
    while (std::getline(is, line)) {
      ++line_no;
      if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
      try {
        return json::parse(line);
      } catch (const json::exception& e) {
        throw ParseError("line " + std::to_string(line_no) + ": " + e.what());
      }
    }
    return std::nullopt;
  };
  auto header = next_record();
  if (!header) throw ParseError("line 1: missing header record");
  Corpus corpus;
  FilterReport report;
  try {
    const auto fmt = header->at("format_version").get<std::string>();
    if (fmt != kCorpusFormat) {
      throw ParseError("line " + std::to_string(line_no) + ": unsupported format_version '" + fmt + "'");
    }
    corpus.room_type = room_type_from_string(header->at("room_type").get<std::string>());
    corpus.vocab = Vocabulary(header->at("category_names").get<std::vector<std::string>>());
    if (header->contains("scene_count")) report.header_scene_count = header->at("scene_count").get<std::size_t>();
    if (header->contains("category_count")) report.header_category_count = header->at("category_count").get<std::size_t>();
  } catch (const json::exception& e) {
    throw ParseError("line " + std::to_string(line_no) + " (header): " + e.what());
  }
  std::size_t record = 0;
  while (auto rec = next_record()) {
    const std::string ctx = "line " + std::to_string(line_no) + " (scene record " + std::to_string(record) + ")";
    try {
      Scene s = scene_from_json(*rec, corpus.vocab, corpus.room_type);
      check_scene(s, corpus.vocab, ctx);
      corpus.scenes.push_back(std::move(s));
    } catch (const ParseError& e) {
      if (std::string_view(e.what()).starts_with("line ")) throw;
      throw ParseError(ctx + ": " + e.what());
    } catch (const json::exception& e) {
      throw ParseError(ctx + ": " + e.what());
    }
    ++record;
  }
  report.scenes_read = corpus.scenes.size();
  return {std::move(corpus), std::move(report)};
}

inline std::pair<Corpus, FilterReport> load_corpus(std::istream& is, const FilterConfig& filter) {
  auto [raw, header_report] = parse_corpus(is);
  auto [corpus, report] = apply_filter(raw, filter);
  report.header_scene_count = header_report.header_scene_count;
  report.header_category_count = header_report.header_category_count;
  if (corpus.scenes.empty()) throw EmptyCorpusError();
  return {std::move(corpus), std::move(report)};
}

inline std::pair<Corpus, FilterReport> load_corpus(const std::string& path, const FilterConfig& filter) {
  std::ifstream is(path);
  if (!is) throw Error("cannot read corpus file '" + path + "'");
  return load_corpus(is, filter);
}

// ---------------------------------------------------------------------------
// Leaf vectors: [size_x, size_y, size_z] ++ one-hot(category).

using LeafVector = std::vector<double>;

inline std::size_t leaf_dim(const Vocabulary& vocab) { return 3 + vocab.size(); }

inline LeafVector leaf_vector(const SceneObject& obj, const Vocabulary& vocab) {
  if (obj.category >= vocab.size()) {
    throw Error("leaf_vector: unknown category for object '" + obj.id + "'");
  }
  LeafVector v(leaf_dim(vocab), 0.0);
  v[0] = obj.obb.size_x;
  v[1] = obj.obb.size_y;
  v[2] = obj.obb.size_z;
  v[3 + obj.category] = 1.0;
  return v;
}

struct ParsedLeaf {
  double size_x, size_y, size_z;
  std::size_t category;
};

// Inverse of leaf_vector; category recovered by argmax (lowest index on ties).
inline ParsedLeaf parse_leaf_vector(const LeafVector& v, const Vocabulary& vocab) {
  if (v.size() != leaf_dim(vocab)) throw Error("parse_leaf_vector: dimension mismatch");
  auto first = v.begin() + 3;
  const auto cat = static_cast<std::size_t>(std::max_element(first, v.end()) - first);
  return {v[0], v[1], v[2], cat};
}

// Walls and floor as leaf objects sharing the object pipeline.
inline SceneObject wall_object(const Room& room, std::size_t i, const Vocabulary& vocab) {
  return {"wall" + std::to_string(i), vocab.wall_index(), room.walls.at(i)};
}

inline SceneObject floor_object(const Room& room, const Vocabulary& vocab) {
  return {"floor", vocab.floor_index(), room.floor};
}

}  // namespace grains
