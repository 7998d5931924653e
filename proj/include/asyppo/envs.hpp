// Toy sequence-generation MDPs with sparse terminal rewards.
//
// Two environments share one interface:
//   - digit_chain: the prompt encodes a short modular-arithmetic chain; the
//     agent must emit each running value in order, then an end token. Filler
//     tokens never affect correctness, so decision-irrelevant states exist.
//   - micro: a fully enumerable prefix-tree MDP (exact value iteration fits
//     in a few hundred states), used for oracle-grade checks.
//
// Rewards are sparse: zero everywhere except the terminal step, which pays 1
// exactly when the emitted sequence solves the prompt.
#pragma once

#include <algorithm>
#include <cstdint>
#include <string>
#include <variant>
#include <vector>

#include "asyppo/common.hpp"

namespace asyppo {

struct PromptSpec {
  std::uint32_t prompt_id = 0;
  std::uint32_t difficulty = 1;
  std::vector<int> problem;  // env-specific problem encoding (empty for micro)
  std::vector<int> target;   // token sequence the checker expects
};

struct EnvState {
  std::uint32_t prompt_id = 0;
  std::vector<int> emitted;
  std::uint32_t step = 0;
  bool done = false;
};

struct StepResult {
  EnvState next_state;
  double reward = 0.0;
  bool done = false;
  bool truncated = false;  // done solely because the horizon ran out
};

// ---------------------------------------------------------------------------
// digit-chain arithmetic

struct DigitChainConfig {
  int max_depth = 4;      // chain length (= difficulty) ranges over 1..max_depth
  int horizon = 24;       // H_max
  int filler_tokens = 4;  // tokens with no effect on correctness
  int window = 3;         // trailing-token window in the state encoding
};

class DigitChainEnv {
 public:
  explicit DigitChainEnv(DigitChainConfig cfg = {}) : cfg_(cfg) {
    if (cfg_.max_depth < 1 || cfg_.horizon < 2 || cfg_.filler_tokens < 0 || cfg_.window < 1) {
      throw ConfigError("digit_chain: invalid environment parameters");
    }
  }

  const DigitChainConfig& config() const { return cfg_; }
  int vocab_size() const { return 11 + cfg_.filler_tokens; }  // 10 digits + end + fillers
  int end_token() const { return 10; }
  int horizon() const { return cfg_.horizon; }

  int encoding_dim() const {
    return 10 + cfg_.max_depth * 14 + (cfg_.max_depth + 2) + 1 + cfg_.window * (vocab_size() + 1);
  }

  // problem = [v0, op_1, x_1, ..., op_d, x_d]; ops are {add, sub, mul} mod 10.
  std::vector<PromptSpec> sample_prompts(std::uint64_t dataset_seed, std::uint32_t n) const {
    if (n == 0) throw ConfigError("sample_prompts: n must be >= 1");
    Rng rng = make_rng(dataset_seed, 0x70726f6dULL);  // tag: "prom"
    std::vector<PromptSpec> out;
    out.reserve(n);
    for (std::uint32_t i = 0; i < n; ++i) {
      PromptSpec p;
      p.prompt_id = i;
      p.difficulty = 1 + (i % static_cast<std::uint32_t>(cfg_.max_depth));
      int v = static_cast<int>(uniform_index(rng, 10));
      p.problem.push_back(v);
      for (std::uint32_t d = 0; d < p.difficulty; ++d) {
        const int op = static_cast<int>(uniform_index(rng, 3));
        const int x = static_cast<int>(uniform_index(rng, 10));
        p.problem.push_back(op);
        p.problem.push_back(x);
        v = apply_op(v, op, x);
        p.target.push_back(v);
      }
      out.push_back(std::move(p));
    }
    return out;
  }

  EnvState reset(const PromptSpec& prompt) const {
    return EnvState{prompt.prompt_id, {}, 0, false};
  }

  StepResult step(const PromptSpec& prompt, const EnvState& state, int action) const {
    check_state(prompt, state);
    if (state.done) throw ContractError("step: state is already done");
    if (action < 0 || action >= vocab_size()) {
      throw ContractError("step: action " + std::to_string(action) + " outside vocabulary");
    }
    StepResult r;
    r.next_state = state;
    r.next_state.emitted.push_back(action);
    r.next_state.step += 1;
    if (action == end_token()) {
      r.done = true;
    } else if (static_cast<int>(r.next_state.step) >= cfg_.horizon) {
      r.done = true;
      r.truncated = true;  // ran out of budget; no end token was emitted
    }
    r.next_state.done = r.done;
    if (r.done) r.reward = solved(prompt, r.next_state.emitted) ? 1.0 : 0.0;
    return r;
  }

  // Ends with the end token and the emitted digit subsequence equals the
  // target exactly. Filler tokens are ignored by construction.
  bool solved(const PromptSpec& prompt, const std::vector<int>& emitted) const {
    if (emitted.empty() || emitted.back() != end_token()) return false;
    std::vector<int> digits;
    for (int t : emitted) {
      if (t < 10) digits.push_back(t);
    }
    return digits == prompt.target;
  }

  std::vector<double> encode_state(const PromptSpec& prompt, const EnvState& state) const {
    check_state(prompt, state);
    std::vector<double> f;
    f.reserve(static_cast<std::size_t>(encoding_dim()));
    // prompt features: start digit + one slot per chain position
    push_one_hot(f, prompt.problem.empty() ? 0 : prompt.problem[0], 10);
    for (int d = 0; d < cfg_.max_depth; ++d) {
      const bool used = d < static_cast<int>(prompt.difficulty);
      f.push_back(used ? 1.0 : 0.0);
      push_one_hot(f, used ? prompt.problem[1 + 2 * static_cast<std::size_t>(d)] : -1, 3);
      push_one_hot(f, used ? prompt.problem[2 + 2 * static_cast<std::size_t>(d)] : -1, 10);
    }
    // positional features: digits emitted so far, and normalized step
    int digits_emitted = 0;
    for (int t : state.emitted) {
      if (t < 10) ++digits_emitted;
    }
    push_one_hot(f, std::min(digits_emitted, cfg_.max_depth + 1), cfg_.max_depth + 2);
    f.push_back(static_cast<double>(state.step) / static_cast<double>(cfg_.horizon));
    // trailing-token window, most recent last; -1 marks "before start"
    for (int w = cfg_.window; w >= 1; --w) {
      const int idx = static_cast<int>(state.emitted.size()) - w;
      push_one_hot(f, idx >= 0 ? state.emitted[static_cast<std::size_t>(idx)] + 1 : 0,
                   vocab_size() + 1);
    }
    return f;
  }

 private:
  static int apply_op(int v, int op, int x) {
    switch (op) {
      case 0: return (v + x) % 10;
      case 1: return ((v - x) % 10 + 10) % 10;
      default: return (v * x) % 10;
    }
  }

  static void push_one_hot(std::vector<double>& f, int idx, int n) {
    for (int i = 0; i < n; ++i) f.push_back(i == idx ? 1.0 : 0.0);
  }

  void check_state(const PromptSpec& prompt, const EnvState& state) const {
    if (prompt.prompt_id != state.prompt_id) {
      throw ContractError("state prompt_id does not match prompt");
    }
    if (state.step != state.emitted.size()) {
      throw ContractError("state step counter inconsistent with emitted tokens");
    }
  }

  DigitChainConfig cfg_;
};

// ---------------------------------------------------------------------------
// micro-MDP

struct MicroMdpConfig {
  int max_depth = 4;  // target lengths span max(1, max_depth-2)..max_depth
  int n_actions = 2;
};

class MicroMdpEnv {
 public:
  explicit MicroMdpEnv(MicroMdpConfig cfg = {}) : cfg_(cfg) {
    if (cfg_.max_depth < 1 || cfg_.n_actions < 2) {
      throw ConfigError("micro: invalid environment parameters");
    }
  }

  const MicroMdpConfig& config() const { return cfg_; }
  int vocab_size() const { return cfg_.n_actions; }
  int min_depth() const { return std::max(1, cfg_.max_depth - 2); }
  int horizon() const { return cfg_.max_depth; }

  int encoding_dim() const {
    const int slot = cfg_.n_actions + 1;  // used flag + action one-hot
    return cfg_.max_depth * slot + (cfg_.max_depth + 1) + cfg_.max_depth * slot;
  }

  std::vector<PromptSpec> sample_prompts(std::uint64_t dataset_seed, std::uint32_t n) const {
    if (n == 0) throw ConfigError("sample_prompts: n must be >= 1");
    Rng rng = make_rng(dataset_seed, 0x6d696372ULL);  // tag: "micr"
    const std::uint32_t levels = static_cast<std::uint32_t>(cfg_.max_depth - min_depth() + 1);
    std::vector<PromptSpec> out;
    out.reserve(n);
    for (std::uint32_t i = 0; i < n; ++i) {
      PromptSpec p;
      p.prompt_id = i;
      p.difficulty = static_cast<std::uint32_t>(min_depth()) + (i % levels);
      for (std::uint32_t d = 0; d < p.difficulty; ++d) {
        p.target.push_back(static_cast<int>(uniform_index(rng, static_cast<std::uint64_t>(cfg_.n_actions))));
      }
      out.push_back(std::move(p));
    }
    return out;
  }

  EnvState reset(const PromptSpec& prompt) const {
    return EnvState{prompt.prompt_id, {}, 0, false};
  }

  StepResult step(const PromptSpec& prompt, const EnvState& state, int action) const {
    check_state(prompt, state);
    if (state.done) throw ContractError("step: state is already done");
    if (action < 0 || action >= cfg_.n_actions) {
      throw ContractError("step: action " + std::to_string(action) + " outside vocabulary");
    }
    StepResult r;
    r.next_state = state;
    r.next_state.emitted.push_back(action);
    r.next_state.step += 1;
    if (r.next_state.step >= prompt.difficulty) {
      // The episode is complete by construction, not cut off: every sequence
      // of exactly `difficulty` actions is a terminal state of this MDP.
      r.done = true;
      r.next_state.done = true;
      r.reward = (r.next_state.emitted == prompt.target) ? 1.0 : 0.0;
    }
    return r;
  }

  std::vector<double> encode_state(const PromptSpec& prompt, const EnvState& state) const {
    check_state(prompt, state);
    std::vector<double> f;
    f.reserve(static_cast<std::size_t>(encoding_dim()));
    for (int d = 0; d < cfg_.max_depth; ++d) {
      const bool used = d < static_cast<int>(prompt.difficulty);
      f.push_back(used ? 1.0 : 0.0);
      for (int a = 0; a < cfg_.n_actions; ++a) {
        f.push_back(used && prompt.target[static_cast<std::size_t>(d)] == a ? 1.0 : 0.0);
      }
    }
    for (int d = 0; d <= cfg_.max_depth; ++d) {
      f.push_back(static_cast<int>(state.step) == d ? 1.0 : 0.0);
    }
    // trailing window of max_depth tokens covers the whole history, so
    // distinct states always encode distinctly
    for (int w = cfg_.max_depth; w >= 1; --w) {
      const int idx = static_cast<int>(state.emitted.size()) - w;
      const int tok = idx >= 0 ? state.emitted[static_cast<std::size_t>(idx)] : -1;
      f.push_back(tok < 0 ? 1.0 : 0.0);
      for (int a = 0; a < cfg_.n_actions; ++a) f.push_back(tok == a ? 1.0 : 0.0);
    }
    return f;
  }

 private:
  void check_state(const PromptSpec& prompt, const EnvState& state) const {
    if (prompt.prompt_id != state.prompt_id) {
      throw ContractError("state prompt_id does not match prompt");
    }
    if (state.step != state.emitted.size()) {
      throw ContractError("state step counter inconsistent with emitted tokens");
    }
  }

  MicroMdpConfig cfg_;
};

// ---------------------------------------------------------------------------
// facade

class Environment {
 public:
  explicit Environment(DigitChainEnv env) : impl_(std::move(env)) {}
  explicit Environment(MicroMdpEnv env) : impl_(std::move(env)) {}

  static Environment digit_chain(DigitChainConfig cfg = {}) {
    return Environment(DigitChainEnv(cfg));
  }
  static Environment micro(MicroMdpConfig cfg = {}) { return Environment(MicroMdpEnv(cfg)); }

  int vocab_size() const {
    return std::visit([](const auto& e) { return e.vocab_size(); }, impl_);
  }
  int encoding_dim() const {
    return std::visit([](const auto& e) { return e.encoding_dim(); }, impl_);
  }
  int horizon() const {
    return std::visit([](const auto& e) { return e.horizon(); }, impl_);
  }
  std::vector<PromptSpec> sample_prompts(std::uint64_t dataset_seed, std::uint32_t n) const {
    return std::visit([&](const auto& e) { return e.sample_prompts(dataset_seed, n); }, impl_);
  }
  EnvState reset(const PromptSpec& prompt) const {
    return std::visit([&](const auto& e) { return e.reset(prompt); }, impl_);
  }
  StepResult step(const PromptSpec& prompt, const EnvState& state, int action) const {
    return std::visit([&](const auto& e) { return e.step(prompt, state, action); }, impl_);
  }
  std::vector<double> encode_state(const PromptSpec& prompt, const EnvState& state) const {
    return std::visit([&](const auto& e) { return e.encode_state(prompt, state); }, impl_);
  }

  const MicroMdpEnv* micro_env() const { return std::get_if<MicroMdpEnv>(&impl_); }
  const DigitChainEnv* digit_chain_env() const { return std::get_if<DigitChainEnv>(&impl_); }

 private:
  std::variant<DigitChainEnv, MicroMdpEnv> impl_;
};

// ---------------------------------------------------------------------------
// exact tabular tools for the micro-MDP

// Full transition/reward table over the prefix tree of one prompt.
// State 0 is the empty prefix; states are ordered by prefix length.
struct TabularMdp {
  int n_actions = 0;
  std::vector<std::vector<int>> states;
  std::vector<std::uint8_t> terminal;
  std::vector<std::vector<std::size_t>> next_state;  // [state][action]
  std::vector<std::vector<double>> reward;           // [state][action]
};

inline TabularMdp enumerate_micro_mdp(const MicroMdpEnv& env, const PromptSpec& prompt) {
  const int A = env.vocab_size();
  const int L = static_cast<int>(prompt.difficulty);
  // Geometric series 1 + A + ... + A^L.
  double count = 0.0;
  for (int d = 0; d <= L; ++d) count = count * A + 1;
  if (count > 500.0) {
    throw ConfigError("enumerate_micro_mdp: state space exceeds 500 states");
  }

  TabularMdp mdp;
  mdp.n_actions = A;
  mdp.states.push_back({});
  for (std::size_t i = 0; i < mdp.states.size(); ++i) {
    const std::vector<int> prefix = mdp.states[i];  // copy: states vector reallocates
    const bool term = static_cast<int>(prefix.size()) >= L;
    mdp.terminal.push_back(term ? 1 : 0);
    mdp.next_state.emplace_back();
    mdp.reward.emplace_back();
    if (term) continue;
    EnvState st{prompt.prompt_id, prefix, static_cast<std::uint32_t>(prefix.size()), false};
    for (int a = 0; a < A; ++a) {
      StepResult r = env.step(prompt, st, a);
      std::vector<int> child = prefix;
      child.push_back(a);
      mdp.states.push_back(std::move(child));
      mdp.next_state[i].push_back(mdp.states.size() - 1);
      mdp.reward[i].push_back(r.reward);
    }
  }
  mdp.terminal.resize(mdp.states.size(), 1);
  mdp.next_state.resize(mdp.states.size());
  mdp.reward.resize(mdp.states.size());
  return mdp;
}

// Exact optimal state values via one backward sweep (states are ordered by
// prefix length, so children always come after parents).
inline std::vector<double> value_iteration(const TabularMdp& mdp, double gamma) {
  std::vector<double> v(mdp.states.size(), 0.0);
  for (std::size_t i = mdp.states.size(); i-- > 0;) {
    if (mdp.terminal[i]) continue;
    double best = -1e300;
    for (std::size_t a = 0; a < mdp.next_state[i].size(); ++a) {
      best = std::max(best, mdp.reward[i][a] + gamma * v[mdp.next_state[i][a]]);
    }
    v[i] = best;
  }
  return v;
}

// Exact value of a fixed stochastic policy; `probs(state_index)` returns the
// action distribution at a non-terminal state.
template <typename PolicyFn>
std::vector<double> policy_state_values(const TabularMdp& mdp, double gamma, PolicyFn&& probs) {
  std::vector<double> v(mdp.states.size(), 0.0);
  for (std::size_t i = mdp.states.size(); i-- > 0;) {
    if (mdp.terminal[i]) continue;
    const std::vector<double> pi = probs(i);
    double acc = 0.0;
    for (std::size_t a = 0; a < mdp.next_state[i].size(); ++a) {
      acc += pi[a] * (mdp.reward[i][a] + gamma * v[mdp.next_state[i][a]]);
    }
    v[i] = acc;
  }
  return v;
}

inline std::vector<double> uniform_policy_values(const TabularMdp& mdp, double gamma) {
  return policy_state_values(mdp, gamma, [&](std::size_t) {
    return std::vector<double>(static_cast<std::size_t>(mdp.n_actions),
                               1.0 / static_cast<double>(mdp.n_actions));
  });
}

}  // namespace asyppo
