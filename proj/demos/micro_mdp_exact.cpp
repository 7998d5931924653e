// Enumerates a micro-MDP prompt and prints its exact tabular quantities:
// optimal values from value iteration, the uniform-policy values, and a
// Monte-Carlo cross-check. This is the oracle machinery the acceptance
// suite leans on, in a runnable form.
#include <cstdio>

#include "asyppo/asyppo.hpp"

using namespace asyppo;

int main() {
  const MicroMdpEnv env{MicroMdpConfig{3, 2}};
  const auto prompts = env.sample_prompts(7, 3);

  for (const PromptSpec& prompt : prompts) {
    const TabularMdp mdp = enumerate_micro_mdp(env, prompt);
    const auto vstar = value_iteration(mdp, 1.0);
    const auto vuni = uniform_policy_values(mdp, 1.0);

    std::printf("prompt %u (depth %u, target", prompt.prompt_id, prompt.difficulty);
    for (int a : prompt.target) std::printf(" %d", a);
    std::printf("): %zu states, V*(root) = %.3f, V_uniform(root) = %.5f\n", mdp.states.size(),
                vstar[0], vuni[0]);

    Rng rng = make_rng(prompt.prompt_id, 0xdecafULL);
    double mc = 0.0;
    const int episodes = 200000;
    for (int e = 0; e < episodes; ++e) {
      EnvState s = env.reset(prompt);
      while (!s.done) {
        auto r = env.step(prompt, s, static_cast<int>(uniform_index(rng, 2)));
        mc += r.reward;
        s = std::move(r.next_state);
      }
    }
    mc /= episodes;
    std::printf("  uniform-policy Monte-Carlo over %d episodes: %.5f (exact %.5f)\n", episodes, mc,
                vuni[0]);
  }
  return 0;
}
