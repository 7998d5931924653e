// Mini-critic ensemble: per-prompt non-overlapping shard assignment, per-shard
// regression to returns, value aggregation, and the per-token value-std that
// downstream masking ranks on.
#pragma once

#include <algorithm>
#include <cstdint>
#include <string>
#include <vector>

#include "asyppo/approximator.hpp"
#include "asyppo/common.hpp"
#include "asyppo/rollout.hpp"

namespace asyppo {

enum class Aggregation { mean, min };

inline Aggregation aggregation_from_string(const std::string& s) {
  if (s == "mean") return Aggregation::mean;
  if (s == "min") return Aggregation::min;
  throw ConfigError("value_aggregation_strategy must be \"mean\" or \"min\", got \"" + s + "\"");
}

struct CriticEnsemble {
  std::vector<ApproximatorParams> critics;
  std::vector<Optimizer> optimizers;
  double learning_rate = 1e-2;

  std::size_t size() const { return critics.size(); }
};

// Critics share one layer layout and are initialized from sibling seeds; the
// shard mechanism, not the initialization, carries the ensemble's diversity.
inline CriticEnsemble make_ensemble(std::size_t M, const std::vector<int>& layer_sizes,
                                    std::uint64_t seed, double learning_rate,
                                    OptimizerKind optimizer = OptimizerKind::adam) {
  if (M < 1) throw ConfigError("make_ensemble: need at least one critic");
  if (layer_sizes.back() != 1) throw ConfigError("make_ensemble: critics must have scalar output");
  CriticEnsemble e;
  e.learning_rate = learning_rate;
  for (std::size_t m = 0; m < M; ++m) {
    e.critics.push_back(init_params(layer_sizes, seed_stream(seed, 0x637269ULL, m)));
    e.optimizers.push_back(Optimizer{optimizer, {}});
  }
  return e;
}

// (prompt, response) -> critic index. Within every prompt the responses are
// dealt round-robin after a seeded permutation, so per-prompt share sizes
// differ by at most one and the shards partition the batch.
struct ShardAssignment {
  std::uint32_t group_size = 0;
  std::size_t n_critics = 0;
  std::vector<std::size_t> critic_of_traj;  // indexed by prompt_idx * G + response_idx

  std::size_t critic_of(std::size_t prompt_idx, std::size_t response_idx) const {
    return critic_of_traj[prompt_idx * group_size + response_idx];
  }
};

inline ShardAssignment assign_shards(const TrajectoryBatch& batch, std::size_t M,
                                     std::uint64_t seed) {
  if (M < 1) throw ConfigError("assign_shards: need at least one critic");
  if (batch.group_size < M) {
    throw ConfigError("assign_shards: group size " + std::to_string(batch.group_size) +
                      " < number of critics " + std::to_string(M) +
                      " (some critic would receive no data for some prompt)");
  }
  ShardAssignment a;
  a.group_size = batch.group_size;
  a.n_critics = M;
  a.critic_of_traj.assign(batch.n_trajectories(), 0);
  for (std::size_t p = 0; p < batch.prompts.size(); ++p) {
    std::vector<std::size_t> perm(batch.group_size);
    for (std::size_t g = 0; g < perm.size(); ++g) perm[g] = g;
    Rng rng = make_rng(seed, 0x7368617264ULL, batch.prompts[p].prompt_id);  // tag: "shard"
    shuffle_inplace(perm, rng);
    for (std::size_t i = 0; i < perm.size(); ++i) {
      a.critic_of_traj[p * batch.group_size + perm[i]] = i % M;
    }
  }
  return a;
}

namespace detail {

// Rows of critic m's shard in natural batch order. Iteration order is
// independent of the shard permutation, so M=1 reduces exactly to a plain
// full-batch pass.
inline std::vector<std::size_t> shard_rows(const TrajectoryBatch& batch,
                                           const ShardAssignment& a, std::size_t m) {
  std::vector<std::size_t> rows;
  for (std::size_t traj = 0; traj < batch.n_trajectories(); ++traj) {
    if (a.critic_of_traj[traj] != m) continue;
    for (std::size_t r = batch.traj_offset[traj]; r < batch.traj_offset[traj + 1]; ++r) {
      rows.push_back(r);
    }
  }
  return rows;
}

}  // namespace detail

// Each critic minimizes mean squared error against the return over its own
// shard only. Returns the per-critic loss trace (loss evaluated before each
// update), length `steps` per critic.
inline std::vector<std::vector<double>> train_critics(CriticEnsemble& ensemble,
                                                      const TrajectoryBatch& batch,
                                                      const ShardAssignment& assignment,
                                                      const std::vector<double>& returns,
                                                      std::uint32_t steps) {
  if (returns.size() != batch.n_rows()) {
    throw ShapeError("train_critics: returns not aligned with batch rows");
  }
  if (assignment.critic_of_traj.size() != batch.n_trajectories() ||
      assignment.n_critics != ensemble.size()) {
    throw ContractError("train_critics: assignment does not match batch/ensemble");
  }
  std::vector<std::vector<double>> traces(ensemble.size());
  for (std::size_t m = 0; m < ensemble.size(); ++m) {
    const std::vector<std::size_t> rows = detail::shard_rows(batch, assignment, m);
    if (rows.empty()) continue;
    const double inv_n = 1.0 / static_cast<double>(rows.size());
    for (std::uint32_t s = 0; s < steps; ++s) {
      double loss = 0.0;
      std::vector<double> grad(ensemble.critics[m].weights.size(), 0.0);
      for (std::size_t r : rows) {
        ValueForward vf = value_forward(ensemble.critics[m], batch.encoding(r));
        const double err = vf.value - returns[r];
        loss += err * err * inv_n;
        const double upstream[1] = {2.0 * err * inv_n};
        std::vector<double> g = backward(ensemble.critics[m], vf.record, upstream);
        for (std::size_t i = 0; i < grad.size(); ++i) grad[i] += g[i];
      }
      if (!std::isfinite(loss)) {
        throw TrainingDiverged("train_critics: non-finite loss for critic " + std::to_string(m) +
                               " at step " + std::to_string(s));
      }
      traces[m].push_back(loss);
      ensemble.optimizers[m].step(ensemble.critics[m], grad, ensemble.learning_rate);
    }
  }
  return traces;
}

// Per-token values from every critic, the aggregate, the cross-critic
// population std, and the per-trajectory bootstrap under the terminal
// convention (0 at true terminals, aggregated value at horizon truncations).
struct ValueTable {
  std::size_t n_critics = 0;
  std::size_t n_rows = 0;
  std::vector<double> values;  // n_critics x n_rows, critic-major
  std::vector<double> vbar;
  std::vector<double> sigma;
  std::vector<double> traj_bootstrap;

  double value(std::size_t critic, std::size_t row) const {
    return values[critic * n_rows + row];
  }
};

namespace detail {

inline double aggregate(const std::vector<double>& vals, Aggregation mode) {
  if (mode == Aggregation::min) return *std::min_element(vals.begin(), vals.end());
  double s = 0.0;
  for (double v : vals) s += v;
  return s / static_cast<double>(vals.size());
}

inline double population_std(const std::vector<double>& vals) {
  double mean = 0.0;
  for (double v : vals) mean += v;
  mean /= static_cast<double>(vals.size());
  double ss = 0.0;
  for (double v : vals) ss += (v - mean) * (v - mean);
  return std::sqrt(ss / static_cast<double>(vals.size()));
}

}  // namespace detail

inline double bootstrap_value(const CriticEnsemble& ensemble, std::span<const double> encoding,
                              bool truncated, Aggregation mode = Aggregation::mean) {
  if (!truncated) return 0.0;
  std::vector<double> vals(ensemble.size());
  for (std::size_t m = 0; m < ensemble.size(); ++m) {
    vals[m] = value_forward(ensemble.critics[m], encoding).value;
  }
  return detail::aggregate(vals, mode);
}

inline ValueTable evaluate(const CriticEnsemble& ensemble, const TrajectoryBatch& batch,
                           Aggregation mode = Aggregation::mean) {
  ValueTable t;
  t.n_critics = ensemble.size();
  t.n_rows = batch.n_rows();
  t.values.assign(t.n_critics * t.n_rows, 0.0);
  for (std::size_t m = 0; m < t.n_critics; ++m) {
    for (std::size_t r = 0; r < t.n_rows; ++r) {
      t.values[m * t.n_rows + r] = value_forward(ensemble.critics[m], batch.encoding(r)).value;
    }
  }
  t.vbar.resize(t.n_rows);
  t.sigma.resize(t.n_rows);
  std::vector<double> vals(t.n_critics);
  for (std::size_t r = 0; r < t.n_rows; ++r) {
    for (std::size_t m = 0; m < t.n_critics; ++m) vals[m] = t.values[m * t.n_rows + r];
    t.vbar[r] = detail::aggregate(vals, mode);
    t.sigma[r] = detail::population_std(vals);
  }
  t.traj_bootstrap.resize(batch.n_trajectories());
  for (std::size_t traj = 0; traj < batch.n_trajectories(); ++traj) {
    t.traj_bootstrap[traj] =
        bootstrap_value(ensemble, batch.final_encoding(traj), batch.traj_truncated[traj] != 0, mode);
  }
  return t;
}

}  // namespace asyppo
