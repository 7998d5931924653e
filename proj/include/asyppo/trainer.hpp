// End-to-end training drivers.
//
// Per step: rollout -> critic updates on disjoint shards -> aggregated values
// and value-std -> corrected advantages -> batch-global masks -> clipped
// policy updates over ppo_epochs. A vanilla-PPO driver (single critic, no
// masks) and a critic-free GRPO-style driver run the same loop shape for
// comparison.
#pragma once

#include <chrono>
#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "asyppo/advantage.hpp"
#include "asyppo/approximator.hpp"
#include "asyppo/common.hpp"
#include "asyppo/ensemble.hpp"
#include "asyppo/envs.hpp"
#include "asyppo/objective.hpp"
#include "asyppo/rollout.hpp"

namespace asyppo {

inline OptimizerKind optimizer_kind_from_string(const std::string& s) {
  if (s == "adam") return OptimizerKind::adam;
  if (s == "sgd") return OptimizerKind::sgd;
  throw ConfigError("optimizer must be \"adam\" or \"sgd\", got \"" + s + "\"");
}

// Full run configuration. Key names in the config file mirror these fields;
// where a conventional experiment-config name exists (gamma, lambd,
// ppo_epochs, entropy_loss_coef, gradient_mask_percentage,
// entropy_filter_mask_percentage, value_aggregation_strategy,
// num_return_sequences, rollout_batch_size, max_steps, init_kl_coef, seed)
// the file key uses it; see xio.hpp for the full key table.
struct TrainConfig {
  std::string algorithm = "asyppo";  // asyppo | ppo | grpo
  double gamma = 1.0;
  double lambda = 1.0;
  double epsilon_clip = 0.2;
  double entropy_coef = 0.01;        // beta
  double adv_mask_fraction = 0.2;    // k: lowest-sigma fraction masked from the surrogate
  double ent_filter_fraction = 0.2;  // h: highest-sigma fraction filtered from entropy
  std::string aggregation = "mean";  // mean | min
  double init_kl_coef = 0.0;         // accepted for config parity; must stay 0

  std::uint32_t num_critics = 2;      // M
  std::uint32_t group_size = 32;      // G, responses per prompt
  std::uint32_t rollout_batch_size = 64;  // prompts per step
  std::uint32_t ppo_epochs = 4;
  std::uint32_t minibatch_size = 0;  // rows per policy update; 0 = full batch
  std::uint32_t max_steps = 300;
  std::uint32_t critic_steps = 1;  // critic passes over its shard per batch
  // Regression target for the critics: discounted Monte-Carlo return-to-go,
  // or the lambda-return built from the pre-update value estimates. The two
  // coincide at gamma = lambda = 1 on fully terminated trajectories.
  std::string critic_target = "mc_return";  // mc_return | lambda_return

  // Defaults sized for the desk-scale networks below, not for LLM fine-tuning.
  double actor_lr = 3e-3;
  double critic_lr = 1e-2;
  std::string optimizer = "adam";
  bool advantage_whitening = false;

  std::uint64_t seed = 42;
  std::uint64_t dataset_seed = 7;
  std::uint32_t dataset_size = 256;

  std::string env = "digit_chain";  // digit_chain | micro
  std::uint32_t env_horizon = 24;
  std::uint32_t env_max_depth = 4;
  std::uint32_t env_filler_tokens = 4;

  std::vector<int> actor_hidden = {32, 32};
  std::vector<int> critic_hidden = {16, 16};

  std::uint32_t eval_episodes = 512;
  bool deterministic = false;  // zero wall-clock fields so runs compare byte-for-byte

  friend bool operator==(const TrainConfig&, const TrainConfig&) = default;

  void validate() const {
    if (algorithm != "asyppo" && algorithm != "ppo" && algorithm != "grpo") {
      throw ConfigError("algorithm must be asyppo, ppo, or grpo, got \"" + algorithm + "\"");
    }
    if (gamma < 0.0 || gamma > 1.0) throw ConfigError("gamma must be in [0,1]");
    if (lambda < 0.0 || lambda > 1.0) throw ConfigError("lambd must be in [0,1]");
    if (!(epsilon_clip > 0.0 && epsilon_clip < 1.0)) throw ConfigError("epsilon_clip must be in (0,1)");
    if (entropy_coef < 0.0) throw ConfigError("entropy_loss_coef must be >= 0");
    if (adv_mask_fraction < 0.0 || adv_mask_fraction >= 1.0) {
      throw ConfigError("gradient_mask_percentage must be in [0,1)");
    }
    if (ent_filter_fraction < 0.0 || ent_filter_fraction >= 1.0) {
      throw ConfigError("entropy_filter_mask_percentage must be in [0,1)");
    }
    if (init_kl_coef != 0.0) {
      throw ConfigError("init_kl_coef must be 0.0 (no KL penalty term is implemented)");
    }
    aggregation_from_string(aggregation);
    optimizer_kind_from_string(optimizer);
    if (num_critics < 1) throw ConfigError("num_critics must be >= 1");
    if (group_size < 1) throw ConfigError("num_return_sequences must be >= 1");
    if (algorithm == "asyppo" && group_size < num_critics) {
      throw ConfigError("num_return_sequences must be >= num_critics");
    }
    if (algorithm == "grpo" && group_size < 2) {
      throw ConfigError("grpo needs num_return_sequences >= 2");
    }
    if (rollout_batch_size < 1) throw ConfigError("rollout_batch_size must be >= 1");
    if (ppo_epochs < 1) throw ConfigError("ppo_epochs must be >= 1");
    if (critic_target != "mc_return" && critic_target != "lambda_return") {
      throw ConfigError("critic_target must be mc_return or lambda_return, got \"" + critic_target + "\"");
    }
    if (!(actor_lr > 0.0)) throw ConfigError("actor_learning_rate must be > 0");
    if (!(critic_lr > 0.0)) throw ConfigError("critic_learning_rate must be > 0");
    if (dataset_size < 1) throw ConfigError("dataset_size must be >= 1");
    if (env != "digit_chain" && env != "micro") {
      throw ConfigError("env must be digit_chain or micro, got \"" + env + "\"");
    }
    if (env_horizon < 2) throw ConfigError("env_horizon must be >= 2");
    if (env_max_depth < 1) throw ConfigError("env_max_depth must be >= 1");
    if (actor_hidden.empty() || critic_hidden.empty()) {
      throw ConfigError("actor_hidden and critic_hidden need at least one layer");
    }
    for (int s : actor_hidden) {
      if (s < 1) throw ConfigError("actor_hidden sizes must be >= 1");
    }
    for (int s : critic_hidden) {
      if (s < 1) throw ConfigError("critic_hidden sizes must be >= 1");
    }
    if (eval_episodes < 1) throw ConfigError("eval_episodes must be >= 1");
  }

  Environment make_env() const {
    if (env == "micro") {
      MicroMdpConfig c;
      c.max_depth = static_cast<int>(env_max_depth);
      return Environment::micro(c);
    }
    DigitChainConfig c;
    c.max_depth = static_cast<int>(env_max_depth);
    c.horizon = static_cast<int>(env_horizon);
    c.filler_tokens = static_cast<int>(env_filler_tokens);
    return Environment::digit_chain(c);
  }

  std::vector<int> actor_layers(const Environment& e) const {
    std::vector<int> ls{e.encoding_dim()};
    ls.insert(ls.end(), actor_hidden.begin(), actor_hidden.end());
    ls.push_back(e.vocab_size());
    return ls;
  }
  std::vector<int> critic_layers(const Environment& e) const {
    std::vector<int> ls{e.encoding_dim()};
    ls.insert(ls.end(), critic_hidden.begin(), critic_hidden.end());
    ls.push_back(1);
    return ls;
  }
};

struct StepReport {
  std::uint32_t step = 0;
  double mean_return = 0.0;
  double policy_entropy = 0.0;
  std::vector<double> critic_loss;  // post-update MSE per critic; empty for grpo
  double sigma_mean = 0.0;
  double sigma_q25 = 0.0;
  double sigma_q50 = 0.0;
  double sigma_q75 = 0.0;
  double clip_fraction = 0.0;
  std::uint64_t masked_adv_count = 0;
  std::uint64_t filtered_ent_count = 0;
  std::uint64_t wall_time_ms = 0;
};

struct TrainResult {
  ApproximatorParams actor;
  std::optional<CriticEnsemble> critics;  // nullopt for the critic-free driver
  std::vector<StepReport> reports;
};

using StepCallback = std::function<void(const StepReport&)>;

namespace detail {

inline constexpr std::uint64_t kTagActor = 0x6163746fULL;
inline constexpr std::uint64_t kTagCritic = 0x63726974ULL;
inline constexpr std::uint64_t kTagRollout = 0x726f6c6cULL;
inline constexpr std::uint64_t kTagShard = 0x73686172ULL;
inline constexpr std::uint64_t kTagMinibatch = 0x6d626174ULL;
inline constexpr std::uint64_t kTagPrompts = 0x70726f6dULL;
inline constexpr std::uint64_t kTagEval = 0x6576616cULL;

inline std::vector<PromptSpec> select_prompts(const std::vector<PromptSpec>& dataset,
                                              std::uint32_t n, std::uint64_t seed,
                                              std::uint32_t step) {
  if (dataset.size() <= n) return dataset;
  std::vector<std::size_t> idx(dataset.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  Rng rng = make_rng(seed, kTagPrompts, step);
  shuffle_inplace(idx, rng);
  idx.resize(n);
  std::sort(idx.begin(), idx.end());
  std::vector<PromptSpec> out;
  out.reserve(n);
  for (std::size_t i : idx) out.push_back(dataset[i]);
  return out;
}

inline double mean_batch_entropy(const ApproximatorParams& actor, const TrajectoryBatch& batch) {
  double acc = 0.0;
  for (std::size_t r = 0; r < batch.n_rows(); ++r) {
    acc += entropy(policy_forward(actor, batch.encoding(r)).log_probs);
  }
  return batch.n_rows() == 0 ? 0.0 : acc / static_cast<double>(batch.n_rows());
}

inline double critic_mse(const ApproximatorParams& critic, const TrajectoryBatch& batch,
                         const std::vector<std::size_t>& rows, const std::vector<double>& returns) {
  if (rows.empty()) return 0.0;
  double loss = 0.0;
  for (std::size_t r : rows) {
    const double err = value_forward(critic, batch.encoding(r)).value - returns[r];
    loss += err * err;
  }
  return loss / static_cast<double>(rows.size());
}

// Plain full-batch value regression for the vanilla-PPO driver. Accumulation
// order matches train_critics row-for-row, so the M=1 ensemble path and this
// one produce bit-identical training traces.
inline void train_value_net(ApproximatorParams& critic, Optimizer& opt,
                            const TrajectoryBatch& batch, const std::vector<double>& returns,
                            std::uint32_t steps, double learning_rate) {
  const std::size_t n = batch.n_rows();
  if (n == 0) return;
  const double inv_n = 1.0 / static_cast<double>(n);
  for (std::uint32_t s = 0; s < steps; ++s) {
    double loss = 0.0;
    std::vector<double> grad(critic.weights.size(), 0.0);
    for (std::size_t r = 0; r < n; ++r) {
      ValueForward vf = value_forward(critic, batch.encoding(r));
      const double err = vf.value - returns[r];
      loss += err * err * inv_n;
      const double upstream[1] = {2.0 * err * inv_n};
      std::vector<double> g = backward(critic, vf.record, upstream);
      for (std::size_t i = 0; i < grad.size(); ++i) grad[i] += g[i];
    }
    if (!std::isfinite(loss)) {
      throw TrainingDiverged("train_value_net: non-finite loss at step " + std::to_string(s));
    }
    opt.step(critic, grad, learning_rate);
  }
}

// Abort rules for a policy update: any non-finite loss, or mean |ratio-1|
// above 10 over the minibatch.
inline void check_update_health(const LossBreakdown& b, std::size_t scope, std::uint32_t step) {
  if (!std::isfinite(b.total)) {
    throw TrainingDiverged("train: non-finite policy loss at step " + std::to_string(step) +
                           " (last good step " + std::to_string(static_cast<int>(step) - 1) + ")");
  }
  if (scope > 0 && b.ratio_dev_sum / static_cast<double>(scope) > 10.0) {
    throw TrainingDiverged("train: mean |ratio-1| exceeded 10 at step " + std::to_string(step) +
                           " (last good step " + std::to_string(static_cast<int>(step) - 1) + ")");
  }
}

inline double quantile(std::vector<double> sorted_copy, double q) {
  if (sorted_copy.empty()) return 0.0;
  std::sort(sorted_copy.begin(), sorted_copy.end());
  const double pos = q * static_cast<double>(sorted_copy.size() - 1);
  const auto lo = static_cast<std::size_t>(pos);
  const double frac = pos - static_cast<double>(lo);
  if (lo + 1 >= sorted_copy.size()) return sorted_copy.back();
  return sorted_copy[lo] * (1.0 - frac) + sorted_copy[lo + 1] * frac;
}

}  // namespace detail

inline TrainResult train(const TrainConfig& cfg, const StepCallback& on_step = {}) {
  cfg.validate();
  const Environment env = cfg.make_env();
  const std::vector<PromptSpec> dataset = env.sample_prompts(cfg.dataset_seed, cfg.dataset_size);

  TrainResult result;
  result.actor = init_params(cfg.actor_layers(env), seed_stream(cfg.seed, detail::kTagActor));
  Optimizer actor_opt{optimizer_kind_from_string(cfg.optimizer), {}};

  const bool is_grpo = cfg.algorithm == "grpo";
  const bool is_asyppo = cfg.algorithm == "asyppo";
  if (!is_grpo) {
    const std::size_t M = is_asyppo ? cfg.num_critics : 1;
    result.critics = make_ensemble(M, cfg.critic_layers(env), seed_stream(cfg.seed, detail::kTagCritic),
                                   cfg.critic_lr, optimizer_kind_from_string(cfg.optimizer));
  }
  const Aggregation agg = aggregation_from_string(cfg.aggregation);

  for (std::uint32_t step = 0; step < cfg.max_steps; ++step) {
    const auto t0 = std::chrono::steady_clock::now();
    const std::vector<PromptSpec> prompts =
        detail::select_prompts(dataset, cfg.rollout_batch_size, cfg.seed, step);
    const TrajectoryBatch batch =
        collect(result.actor, env, prompts, cfg.group_size, seed_stream(cfg.seed, detail::kTagRollout, step));

    StepReport rep;
    rep.step = step;
    double ret = 0.0;
    for (std::size_t t = 0; t < batch.n_trajectories(); ++t) ret += batch.total_reward(t);
    rep.mean_return = ret / static_cast<double>(batch.n_trajectories());
    rep.policy_entropy = detail::mean_batch_entropy(result.actor, batch);

    AdvantageTable adv;
    MaskVectors masks;
    if (is_grpo) {
      adv = group_baseline_advantage(batch);
      masks = all_ones_masks(batch.n_rows());
    } else {
      std::vector<double> returns = returns_to_go(batch, cfg.gamma);
      CriticEnsemble& ens = *result.critics;
      if (cfg.critic_target == "lambda_return") {
        // lambda-return from the pre-update values: target_t = A_t + vbar_t
        const ValueTable pre = evaluate(ens, batch, agg);
        const AdvantageTable pre_adv = gae(batch, pre, cfg.gamma, cfg.lambda);
        for (std::size_t r = 0; r < returns.size(); ++r) {
          returns[r] = pre_adv.adv[r] + pre.vbar[r];
        }
      }
      if (is_asyppo) {
        const ShardAssignment assignment =
            assign_shards(batch, ens.size(), seed_stream(cfg.seed, detail::kTagShard, step));
        train_critics(ens, batch, assignment, returns, cfg.critic_steps);
        for (std::size_t m = 0; m < ens.size(); ++m) {
          rep.critic_loss.push_back(
              detail::critic_mse(ens.critics[m], batch, detail::shard_rows(batch, assignment, m), returns));
        }
      } else {
        detail::train_value_net(ens.critics[0], ens.optimizers[0], batch, returns, cfg.critic_steps,
                                cfg.critic_lr);
        std::vector<std::size_t> all_rows(batch.n_rows());
        for (std::size_t r = 0; r < all_rows.size(); ++r) all_rows[r] = r;
        rep.critic_loss.push_back(detail::critic_mse(ens.critics[0], batch, all_rows, returns));
      }
      const ValueTable vt = evaluate(ens, batch, agg);
      adv = gae(batch, vt, cfg.gamma, cfg.lambda);
      // The vanilla driver never masks; only the ensemble driver ranks sigma.
      masks = is_asyppo ? build_masks(vt.sigma, cfg.adv_mask_fraction, cfg.ent_filter_fraction)
                        : all_ones_masks(batch.n_rows());
      double smean = 0.0;
      for (double s : vt.sigma) smean += s;
      rep.sigma_mean = vt.sigma.empty() ? 0.0 : smean / static_cast<double>(vt.sigma.size());
      rep.sigma_q25 = detail::quantile(vt.sigma, 0.25);
      rep.sigma_q50 = detail::quantile(vt.sigma, 0.50);
      rep.sigma_q75 = detail::quantile(vt.sigma, 0.75);
    }
    if (cfg.advantage_whitening) whiten(adv);
    rep.masked_adv_count = masks.masked_adv_count();
    rep.filtered_ent_count = masks.filtered_ent_count();

    const std::size_t mb_size = cfg.minibatch_size == 0 ? batch.n_rows() : cfg.minibatch_size;
    const auto mbs = minibatches(batch.n_rows(), mb_size, cfg.ppo_epochs,
                                 seed_stream(cfg.seed, detail::kTagMinibatch, step));
    std::size_t clipped = 0;
    std::size_t scope = 0;
    for (const auto& mb : mbs) {
      PolicyLossResult res = policy_loss(batch, adv, masks, result.actor, cfg.epsilon_clip,
                                         cfg.entropy_coef, mb);
      detail::check_update_health(res.breakdown, mb.size(), step);
      actor_opt.step(result.actor, res.gradient, cfg.actor_lr);
      clipped += res.breakdown.clipped_count;
      scope += mb.size();
    }
    rep.clip_fraction = scope == 0 ? 0.0 : static_cast<double>(clipped) / static_cast<double>(scope);

    const auto t1 = std::chrono::steady_clock::now();
    rep.wall_time_ms = cfg.deterministic
                           ? 0
                           : static_cast<std::uint64_t>(
                                 std::chrono::duration_cast<std::chrono::milliseconds>(t1 - t0).count());
    result.reports.push_back(rep);
    if (on_step) on_step(result.reports.back());
  }
  return result;
}

// ---------------------------------------------------------------------------
// evaluation

enum class EvalMode { sampled, greedy };

struct DifficultyStat {
  std::uint32_t episodes = 0;
  double mean_return = 0.0;
};

struct EvalReport {
  double mean_return = 0.0;
  std::uint32_t episodes = 0;
  std::map<std::uint32_t, DifficultyStat> per_difficulty;
};

// Side-effect free rollout of `episodes` episodes, cycling through prompts.
inline EvalReport evaluate_policy(const Environment& env, const ApproximatorParams& params,
                                  const std::vector<PromptSpec>& prompts, std::uint32_t episodes,
                                  std::uint64_t seed, EvalMode mode = EvalMode::sampled) {
  if (episodes < 1) throw ConfigError("evaluate_policy: episodes must be >= 1");
  if (prompts.empty()) throw ConfigError("evaluate_policy: no prompts");
  EvalReport rep;
  rep.episodes = episodes;
  std::map<std::uint32_t, std::pair<std::uint32_t, double>> acc;  // difficulty -> (count, sum)
  for (std::uint32_t e = 0; e < episodes; ++e) {
    const PromptSpec& prompt = prompts[e % prompts.size()];
    Rng rng = make_rng(seed, detail::kTagEval, e);
    EnvState state = env.reset(prompt);
    double total = 0.0;
    while (!state.done) {
      const std::vector<double> enc = env.encode_state(prompt, state);
      const PolicyForward fwd = policy_forward(params, enc);
      int action;
      if (mode == EvalMode::greedy) {
        action = static_cast<int>(
            std::max_element(fwd.log_probs.begin(), fwd.log_probs.end()) - fwd.log_probs.begin());
      } else {
        action = sample_categorical(fwd.log_probs, rng);
      }
      StepResult sr = env.step(prompt, state, action);
      total += sr.reward;
      state = std::move(sr.next_state);
    }
    rep.mean_return += total;
    auto& slot = acc[prompt.difficulty];
    slot.first += 1;
    slot.second += total;
  }
  rep.mean_return /= static_cast<double>(episodes);
  for (const auto& [difficulty, stat] : acc) {
    rep.per_difficulty[difficulty] =
        DifficultyStat{stat.first, stat.second / static_cast<double>(stat.first)};
  }
  return rep;
}

}  // namespace asyppo
