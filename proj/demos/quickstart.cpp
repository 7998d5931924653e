// Minimal programmatic training run: two mini-critics on the micro-MDP,
// with advantage masking and entropy filtering at the default fractions.
#include <cstdio>

#include "asyppo/asyppo.hpp"

using namespace asyppo;

int main() {
  TrainConfig cfg;
  cfg.algorithm = "asyppo";
  cfg.env = "micro";
  cfg.env_max_depth = 3;
  cfg.dataset_size = 8;
  cfg.rollout_batch_size = 8;
  cfg.group_size = 8;
  cfg.num_critics = 2;
  cfg.max_steps = 60;
  cfg.actor_hidden = {32, 32};
  cfg.critic_hidden = {12, 12};
  cfg.seed = 1;

  auto result = train(cfg, [](const StepReport& r) {
    if (r.step % 10 == 0) {
      std::printf("step %3u  return %.3f  entropy %.3f  sigma_mean %.4f  clip %.3f\n", r.step,
                  r.mean_return, r.policy_entropy, r.sigma_mean, r.clip_fraction);
    }
  });

  const Environment env = cfg.make_env();
  const auto prompts = env.sample_prompts(cfg.dataset_seed, cfg.dataset_size);
  const auto greedy = evaluate_policy(env, result.actor, prompts, 64, 99, EvalMode::greedy);
  std::printf("greedy evaluation after %u steps: mean return %.3f over %u episodes\n",
              cfg.max_steps, greedy.mean_return, greedy.episodes);
  for (const auto& [difficulty, stat] : greedy.per_difficulty) {
    std::printf("  depth %u: %.3f (%u episodes)\n", difficulty, stat.mean_return, stat.episodes);
  }
  return 0;
}
