#pragma once

#include <chrono>
#include <cmath>
#include <functional>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include "grains/error.hpp"
#include "grains/nn.hpp"
#include "grains/rvnn.hpp"

namespace grains {

inline std::size_t default_batch_size(std::size_t corpus_size) { return std::max<std::size_t>(1, corpus_size / 10); }

struct EpochStats {
  std::size_t epoch = 0;  // 1-based
  LossBreakdown loss;     // mean over the epoch's trees
  double seconds = 0.0;
};

struct TrainConfig {
  std::size_t epochs = 500;
  std::size_t batch_size = 0;  // 0: default_batch_size
  AdamConfig adam;
  std::uint64_t seed = 1;
  std::size_t save_every = 0;  // epochs; 0 disables
  std::string checkpoint_path;
  std::function<void(const EpochStats&)> on_epoch;
};

struct TrainResult {
  std::vector<EpochStats> curve;
  std::size_t steps = 0;
  double seconds = 0.0;
};

// Minibatch Adam over prepared trees. Trees are reshuffled every epoch; the
// run is deterministic for a given seed.
inline TrainResult train(ModelParams& p, const std::vector<SceneTree>& trees, const TrainConfig& cfg) {
  if (trees.empty()) throw Error("training corpus is empty");
  const std::size_t bs = cfg.batch_size ? cfg.batch_size : default_batch_size(trees.size());
  std::mt19937_64 rng(cfg.seed);
  ModelParams grads = zeros_like(p);
  const auto params = p.param_refs();
  const auto grad_refs = grads.param_refs();
  AdamState adam = adam_init(params, cfg.adam);
  std::vector<std::size_t> order(trees.size());
  std::iota(order.begin(), order.end(), 0);

  TrainResult result;
  const auto start = std::chrono::steady_clock::now();
  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    std::shuffle(order.begin(), order.end(), rng);
    EpochStats stats;
    stats.epoch = epoch;
    for (std::size_t s = 0; s < order.size(); s += bs) {
      std::vector<const SceneTree*> batch;
      std::vector<std::size_t> ids;
      for (std::size_t i = s; i < std::min(order.size(), s + bs); ++i) {
        batch.push_back(&trees[order[i]]);
        ids.push_back(order[i]);
      }
      set_zero(grads);
      std::vector<double> per_tree;
      const Mat eps = sample_eps(p.cfg.latent_dim, batch.size(), rng());
      const LossBreakdown l = compute_loss(p, batch, eps, &grads, &per_tree);
      if (!std::isfinite(l.total)) {
        std::size_t bad = ids.front();
        for (std::size_t i = 0; i < per_tree.size(); ++i) {
          if (!std::isfinite(per_tree[i])) {
            bad = ids[i];
            break;
          }
        }
        throw TrainingError("non-finite loss at epoch " + std::to_string(epoch) + ", step " + std::to_string(result.steps + 1) +
                            " (tree " + std::to_string(bad) + ")");
      }
      adam_step(adam, params, grad_refs);
      ++result.steps;
      const double w = static_cast<double>(batch.size()) / static_cast<double>(trees.size());
      stats.loss.recon_leaf += w * l.recon_leaf;
      stats.loss.recon_relpos += w * l.recon_relpos;
      stats.loss.classifier += w * l.classifier;
      stats.loss.kl += w * l.kl;
      stats.loss.total += w * l.total;
    }
    stats.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    result.curve.push_back(stats);
    if (cfg.on_epoch) cfg.on_epoch(stats);
    if (cfg.save_every && !cfg.checkpoint_path.empty() && epoch % cfg.save_every == 0) save_model(p, cfg.checkpoint_path);
  }
  result.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return result;
}

// Deterministic split: every `stride`-th tree is held out.
template <class T>
std::pair<std::vector<T>, std::vector<T>> holdout_split(const std::vector<T>& items, std::size_t stride = 10) {
  std::pair<std::vector<T>, std::vector<T>> out;
  for (std::size_t i = 0; i < items.size(); ++i) (i % stride == stride - 1 ? out.second : out.first).push_back(items[i]);
  return out;
}

}  // namespace grains
