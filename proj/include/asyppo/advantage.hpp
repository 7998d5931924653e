// Advantage estimation: GAE over the ensemble-aggregated values (single
// reverse sweep per trajectory), and the group-normalized terminal-reward
// baseline used by the critic-free comparison driver.
#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "asyppo/common.hpp"
#include "asyppo/ensemble.hpp"
#include "asyppo/rollout.hpp"

namespace asyppo {

enum class AdvantageSource { gae_ensemble, group_baseline };

struct AdvantageTable {
  std::vector<double> adv;  // aligned with TrajectoryBatch rows
  double gamma = 1.0;
  double lambda = 1.0;
  AdvantageSource source = AdvantageSource::gae_ensemble;
};

// A_t = sum_l (gamma*lambda)^l delta_{t+l} with
// delta_t = r_t + gamma * vbar(s_{t+1}) - vbar(s_t); the value past the last
// token is the trajectory's bootstrap (0 at true terminals).
inline AdvantageTable gae(const TrajectoryBatch& batch, const ValueTable& values, double gamma,
                          double lambda) {
  if (gamma < 0.0 || gamma > 1.0 || lambda < 0.0 || lambda > 1.0) {
    throw ConfigError("gae: gamma and lambda must be in [0,1]");
  }
  if (values.n_rows != batch.n_rows() || values.traj_bootstrap.size() != batch.n_trajectories()) {
    throw ShapeError("gae: value table not aligned with batch");
  }
  AdvantageTable t;
  t.gamma = gamma;
  t.lambda = lambda;
  t.source = AdvantageSource::gae_ensemble;
  t.adv.assign(batch.n_rows(), 0.0);
  for (std::size_t traj = 0; traj < batch.n_trajectories(); ++traj) {
    const std::size_t lo = batch.traj_offset[traj];
    const std::size_t hi = batch.traj_offset[traj + 1];
    double acc = 0.0;
    for (std::size_t r = hi; r-- > lo;) {
      const double v_next = (r + 1 < hi) ? values.vbar[r + 1] : values.traj_bootstrap[traj];
      const double delta = batch.rewards[r] + gamma * v_next - values.vbar[r];
      acc = delta + gamma * lambda * acc;
      t.adv[r] = acc;
    }
  }
  return t;
}

// Per response: A = (R - mean_group(R)) / (std_group(R) + 1e-8), broadcast to
// every token of the response. Zero-variance groups get zero advantage.
inline AdvantageTable group_baseline_advantage(const TrajectoryBatch& batch) {
  if (batch.group_size < 2) {
    throw ConfigError("group_baseline_advantage: group size must be >= 2");
  }
  constexpr double kStdEps = 1e-8;
  AdvantageTable t;
  t.source = AdvantageSource::group_baseline;
  t.adv.assign(batch.n_rows(), 0.0);
  const std::size_t G = batch.group_size;
  for (std::size_t p = 0; p < batch.prompts.size(); ++p) {
    std::vector<double> rewards(G);
    double mean = 0.0;
    for (std::size_t g = 0; g < G; ++g) {
      rewards[g] = batch.total_reward(batch.traj_index(p, g));
      mean += rewards[g];
    }
    mean /= static_cast<double>(G);
    double ss = 0.0;
    for (double r : rewards) ss += (r - mean) * (r - mean);
    const double sd = std::sqrt(ss / static_cast<double>(G));
    for (std::size_t g = 0; g < G; ++g) {
      const double a = (rewards[g] - mean) / (sd + kStdEps);
      const std::size_t traj = batch.traj_index(p, g);
      for (std::size_t r = batch.traj_offset[traj]; r < batch.traj_offset[traj + 1]; ++r) {
        t.adv[r] = a;
      }
    }
  }
  return t;
}

// Batch-level whitening; an ablation knob, off by default.
inline void whiten(AdvantageTable& t) {
  if (t.adv.empty()) return;
  double mean = 0.0;
  for (double a : t.adv) mean += a;
  mean /= static_cast<double>(t.adv.size());
  double ss = 0.0;
  for (double a : t.adv) ss += (a - mean) * (a - mean);
  const double sd = std::sqrt(ss / static_cast<double>(t.adv.size()));
  for (double& a : t.adv) a = (a - mean) / (sd + 1e-8);
}

}  // namespace asyppo
