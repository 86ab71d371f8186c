#pragma once

#include <chrono>
#include <random>
#include <string>
#include <vector>

#include "grains/error.hpp"
#include "grains/hierarchy.hpp"
#include "grains/rvnn.hpp"
#include "grains/synthesis.hpp"

namespace grains {

// z ~ N(0, I), free decoding, hardened leaves.
inline SceneTree sample_scene(const ModelParams& p, std::mt19937_64& rng, const DecodeLimits& limits = {}) {
  return sample_tree(p, rng, limits);
}

struct GenerationReport {
  std::vector<SceneTree> trees;      // successfully decoded, in sample order
  std::vector<std::string> failures;  // one message per failed sample
  std::size_t attempted = 0;
  std::size_t structurally_valid = 0;
  double decode_seconds = 0.0;
};

// Decodes `count` latent draws without resampling; failures are recorded,
// not retried.
inline GenerationReport generate_trees(const ModelParams& p, std::size_t count, std::uint64_t seed,
                                       const DecodeLimits& limits = {}, std::size_t chunk = 256) {
  GenerationReport r;
  r.attempted = count;
  ValidationOptions vo = structural_only();
  vo.layout = p.cfg.wall_root_mode;
  for (std::size_t s = 0; s < count; s += chunk) {
    const std::size_t n = std::min(chunk, count - s);
    const Mat Z = sample_eps(p.cfg.latent_dim, n, seed + s);
    const auto t0 = std::chrono::steady_clock::now();
    auto res = decode_trees_free(p, Z, limits);
    r.decode_seconds += std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    for (auto& x : res) {
      if (!x.tree) {
        r.failures.push_back(x.error);
        continue;
      }
      r.structurally_valid += validate_tree(*x.tree, p.vocab, vo).ok();
      r.trees.push_back(std::move(*x.tree));
    }
  }
  return r;
}

inline std::size_t count_walls(const SceneTree& t, const Vocabulary& vocab) { return count_category_leaves(t, vocab.wall_index()); }

// Placed scenes for `count` draws; failed draws are resampled up to
// `max_attempts` times each.
inline std::vector<PlacedScene> generate_scenes(const ModelParams& p, std::size_t count, std::uint64_t seed,
                                                const DecodeLimits& limits = {}, std::size_t max_attempts = 10,
                                                RoomType room_type = RoomType::bedroom) {
  std::vector<PlacedScene> out;
  std::mt19937_64 rng(seed);
  for (std::size_t i = 0; i < count; ++i) {
    std::string last;
    bool done = false;
    for (std::size_t a = 0; a < max_attempts && !done; ++a) {
      try {
        PlacedScene s = realize_placements(sample_scene(p, rng, limits), p.vocab);
        s.room_type = room_type;
        out.push_back(std::move(s));
        done = true;
      } catch (const GenerationError& e) {
        last = e.what();
      }
    }
    if (!done) throw GenerationError("sample " + std::to_string(i) + " failed " + std::to_string(max_attempts) + " times: " + last);
  }
  return out;
}

}  // namespace grains
