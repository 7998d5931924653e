// Grouped trajectory collection: G responses per prompt under the current
// policy, stored flat row-major with an explicit (prompt, response, t) -> row
// map so batch-global rankings can run over plain arrays.
#pragma once

#include <algorithm>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "asyppo/approximator.hpp"
#include "asyppo/common.hpp"
#include "asyppo/envs.hpp"

namespace asyppo {

struct TokenStep {
  std::vector<double> state_encoding;
  int action = 0;
  double behavior_log_prob = 0.0;
  double reward = 0.0;
  bool done = false;
};

// Flat token storage. Row r corresponds to one (prompt, response, t) triple;
// trajectory t owns rows [traj_offset[t], traj_offset[t+1]).
struct TrajectoryBatch {
  std::vector<PromptSpec> prompts;
  std::uint32_t group_size = 0;
  std::size_t encoding_dim = 0;

  std::vector<double> encodings;  // n_rows x encoding_dim
  std::vector<int> actions;
  std::vector<double> behavior_log_probs;
  std::vector<double> rewards;
  std::vector<std::uint8_t> done;

  std::vector<std::size_t> traj_offset;      // CSR, size n_trajectories()+1
  std::vector<std::uint8_t> traj_truncated;  // horizon cutoff (vs true terminal)
  std::vector<double> final_encodings;       // boundary state per trajectory
  std::vector<std::size_t> row_traj;         // row -> trajectory index

  std::size_t n_rows() const { return actions.size(); }
  std::size_t n_trajectories() const { return traj_offset.empty() ? 0 : traj_offset.size() - 1; }

  std::size_t traj_index(std::size_t prompt_idx, std::size_t response_idx) const {
    return prompt_idx * group_size + response_idx;
  }
  std::size_t traj_len(std::size_t traj) const {
    return traj_offset[traj + 1] - traj_offset[traj];
  }
  // The flat index map: (prompt, response, t) -> row.
  std::size_t row(std::size_t prompt_idx, std::size_t response_idx, std::size_t t) const {
    const std::size_t traj = traj_index(prompt_idx, response_idx);
    if (traj >= n_trajectories() || t >= traj_len(traj)) {
      throw ContractError("row: (prompt, response, t) outside batch");
    }
    return traj_offset[traj] + t;
  }

  std::span<const double> encoding(std::size_t row) const {
    return {encodings.data() + row * encoding_dim, encoding_dim};
  }
  std::span<const double> final_encoding(std::size_t traj) const {
    return {final_encodings.data() + traj * encoding_dim, encoding_dim};
  }

  void push_trajectory(const std::vector<TokenStep>& steps, bool truncated,
                       const std::vector<double>& final_encoding) {
    if (steps.empty()) throw ContractError("push_trajectory: empty trajectory");
    if (traj_offset.empty()) traj_offset.push_back(0);
    const std::size_t traj = n_trajectories();
    for (const TokenStep& s : steps) {
      if (s.state_encoding.size() != encoding_dim) {
        throw ShapeError("push_trajectory: encoding length mismatch");
      }
      encodings.insert(encodings.end(), s.state_encoding.begin(), s.state_encoding.end());
      actions.push_back(s.action);
      behavior_log_probs.push_back(s.behavior_log_prob);
      rewards.push_back(s.reward);
      done.push_back(s.done ? 1 : 0);
      row_traj.push_back(traj);
    }
    traj_offset.push_back(actions.size());
    traj_truncated.push_back(truncated ? 1 : 0);
    if (final_encoding.size() != encoding_dim) {
      throw ShapeError("push_trajectory: final encoding length mismatch");
    }
    final_encodings.insert(final_encodings.end(), final_encoding.begin(), final_encoding.end());
  }

  double total_reward(std::size_t traj) const {
    double r = 0.0;
    for (std::size_t i = traj_offset[traj]; i < traj_offset[traj + 1]; ++i) r += rewards[i];
    return r;
  }

  void validate() const {
    if (n_trajectories() != prompts.size() * group_size) {
      throw ContractError("batch: trajectory count != prompts x group_size");
    }
    if (encodings.size() != n_rows() * encoding_dim) {
      throw ContractError("batch: encoding storage inconsistent");
    }
  }
};

inline int sample_categorical(std::span<const double> log_probs, Rng& rng) {
  const double u = uniform01(rng);
  double cum = 0.0;
  for (std::size_t a = 0; a < log_probs.size(); ++a) {
    cum += std::exp(log_probs[a]);
    if (u < cum) return static_cast<int>(a);
  }
  return static_cast<int>(log_probs.size()) - 1;  // u landed in rounding slack
}

// Sample G responses per prompt under `policy_params`, recording behavior
// log-probs at sampling time. Each (prompt, response) pair gets its own RNG
// stream derived from (seed, prompt_id, response_index), so a parallel
// collector would produce the identical batch.
inline TrajectoryBatch collect(const ApproximatorParams& policy_params, const Environment& env,
                               const std::vector<PromptSpec>& prompts, std::uint32_t G,
                               std::uint64_t seed) {
  if (G < 1) throw ConfigError("collect: group size must be >= 1");
  TrajectoryBatch batch;
  batch.prompts = prompts;
  batch.group_size = G;
  batch.encoding_dim = static_cast<std::size_t>(env.encoding_dim());
  for (const PromptSpec& prompt : prompts) {
    for (std::uint32_t g = 0; g < G; ++g) {
      Rng rng = make_rng(seed, prompt.prompt_id, g);
      EnvState state = env.reset(prompt);
      std::vector<TokenStep> steps;
      bool truncated = false;
      while (!state.done) {
        TokenStep tok;
        tok.state_encoding = env.encode_state(prompt, state);
        PolicyForward fwd = policy_forward(policy_params, tok.state_encoding);
        tok.action = sample_categorical(fwd.log_probs, rng);
        tok.behavior_log_prob = fwd.log_probs[static_cast<std::size_t>(tok.action)];
        StepResult sr = env.step(prompt, state, tok.action);
        tok.reward = sr.reward;
        tok.done = sr.done;
        steps.push_back(std::move(tok));
        truncated = sr.truncated;
        state = std::move(sr.next_state);
      }
      batch.push_trajectory(steps, truncated, env.encode_state(prompt, state));
    }
  }
  batch.validate();
  return batch;
}

// Discounted return-to-go R_t = sum_{l>=t} gamma^{l-t} r_l per trajectory.
inline std::vector<double> returns_to_go(const TrajectoryBatch& batch, double gamma) {
  if (gamma < 0.0 || gamma > 1.0) throw ConfigError("returns_to_go: gamma must be in [0,1]");
  std::vector<double> ret(batch.n_rows(), 0.0);
  for (std::size_t traj = 0; traj < batch.n_trajectories(); ++traj) {
    double acc = 0.0;
    for (std::size_t i = batch.traj_offset[traj + 1]; i-- > batch.traj_offset[traj];) {
      acc = batch.rewards[i] + gamma * acc;
      ret[i] = acc;
    }
  }
  return ret;
}

// Deterministic row minibatches: each epoch is a fresh seeded permutation
// chopped into `size` chunks, so every row appears exactly `epochs` times.
inline std::vector<std::vector<std::size_t>> minibatches(std::size_t n_rows, std::size_t size,
                                                         std::uint32_t epochs, std::uint64_t seed) {
  if (size < 1) throw ConfigError("minibatches: size must be >= 1");
  if (epochs < 1) throw ConfigError("minibatches: epochs must be >= 1");
  std::vector<std::vector<std::size_t>> out;
  for (std::uint32_t e = 0; e < epochs; ++e) {
    std::vector<std::size_t> perm(n_rows);
    for (std::size_t i = 0; i < n_rows; ++i) perm[i] = i;
    Rng rng = make_rng(seed, 0x6d62ULL, e);  // tag: "mb"
    shuffle_inplace(perm, rng);
    for (std::size_t start = 0; start < n_rows; start += size) {
      const std::size_t stop = std::min(n_rows, start + size);
      out.emplace_back(perm.begin() + static_cast<std::ptrdiff_t>(start),
                       perm.begin() + static_cast<std::ptrdiff_t>(stop));
    }
  }
  return out;
}

inline std::vector<std::vector<std::size_t>> minibatches(const TrajectoryBatch& batch,
                                                         std::size_t size, std::uint32_t epochs,
                                                         std::uint64_t seed) {
  return minibatches(batch.n_rows(), size, epochs, seed);
}

}  // namespace asyppo
