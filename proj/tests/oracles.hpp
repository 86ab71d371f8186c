#pragma once

// Independent reference implementations used by unit and acceptance tests.

#include <cmath>
#include <functional>
#include <random>
#include <vector>

#include "grains/analysis.hpp"

namespace grains::oracle {

struct Walk {
  std::vector<std::size_t> nodes;
  std::vector<Relation> rels;
};

inline std::vector<Walk> enumerate_walks(const SceneGraph& g, std::size_t max_len) {
  std::vector<Walk> out;
  std::function<void(Walk&)> extend = [&](Walk& w) {
    out.push_back(w);
    if (w.rels.size() == max_len) return;
    const std::size_t at = w.nodes.back();
    for (const auto& e : g.edges) {
      std::vector<std::size_t> next;
      if (e.a == at) next.push_back(e.b);
      if (e.b == at && e.a != e.b) next.push_back(e.a);
      for (auto n : next) {
        w.nodes.push_back(n);
        w.rels.push_back(e.relation);
        extend(w);
        w.nodes.pop_back();
        w.rels.pop_back();
      }
    }
  };
  for (std::size_t s = 0; s < g.nodes.size(); ++s) {
    Walk w{{s}, {}};
    extend(w);
  }
  return out;
}

// Sum over all pairs of equal-length walks with identical relation
// sequences of the product of node kernels along them.
inline double walk_kernel_brute(const SceneGraph& a, const SceneGraph& b, const KernelConfig& cfg) {
  const auto wa = enumerate_walks(a, cfg.walk_length), wb = enumerate_walks(b, cfg.walk_length);
  double total = 0;
  for (const auto& x : wa) {
    for (const auto& y : wb) {
      if (x.rels != y.rels) continue;
      double prod = 1;
      for (std::size_t i = 0; i < x.nodes.size(); ++i) prod *= node_kernel(a.nodes[x.nodes[i]], b.nodes[y.nodes[i]], cfg.sigma);
      total += prod;
    }
  }
  return total;
}

// Every graph on 1..max_nodes nodes whose pairs carry no edge, a support
// edge or a co-occurrence edge, with an optional against-wall loop on node 0.
// Categories alternate between two values; areas come from `rng`.
inline std::vector<SceneGraph> small_graphs(std::size_t max_nodes, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> area(0.2, 2.0);
  std::vector<SceneGraph> out;
  for (std::size_t n = 1; n <= max_nodes; ++n) {
    std::vector<std::pair<std::size_t, std::size_t>> pairs;
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = i + 1; j < n; ++j) pairs.emplace_back(i, j);
    }
    std::size_t combos = 1;
    for (std::size_t i = 0; i < pairs.size(); ++i) combos *= 3;
    for (std::size_t loop = 0; loop < 2; ++loop) {
      for (std::size_t c = 0; c < combos; ++c) {
        SceneGraph g;
        for (std::size_t i = 0; i < n; ++i) g.nodes.push_back({i % 2, area(rng), 1.0});
        std::size_t code = c;
        for (const auto& [i, j] : pairs) {
          const std::size_t r = code % 3;
          code /= 3;
          if (r == 1) g.edges.push_back({i, j, Relation::support});
          if (r == 2) g.edges.push_back({i, j, Relation::cooccur});
        }
        if (loop) g.edges.push_back({0, 0, Relation::against_wall});
        out.push_back(std::move(g));
      }
    }
  }
  return out;
}

}  // namespace grains::oracle
