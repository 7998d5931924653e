// Minimal feedforward networks with exact reverse-mode gradients.
//
// Two heads share one body: a categorical policy head (log-softmax over the
// last layer) and a scalar value head (raw last-layer output). Hidden layers
// are tanh. Parameters live in one flat vector so optimizers and
// finite-difference checks can treat the network as a plain R^n function.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <span>
#include <string>
#include <vector>

#include "asyppo/common.hpp"

namespace asyppo {

// Flat parameter vector plus layer layout. Layer l maps layer_sizes[l] ->
// layer_sizes[l+1] and owns (fan_in+1)*fan_out entries: weights row-major
// [out][in], then biases [out].
struct ApproximatorParams {
  std::vector<int> layer_sizes;
  std::vector<double> weights;
  std::uint64_t seed = 0;

  int input_dim() const { return layer_sizes.front(); }
  int output_dim() const { return layer_sizes.back(); }
};

inline std::size_t param_count(const std::vector<int>& layer_sizes) {
  std::size_t n = 0;
  for (std::size_t l = 0; l + 1 < layer_sizes.size(); ++l) {
    n += static_cast<std::size_t>(layer_sizes[l] + 1) * static_cast<std::size_t>(layer_sizes[l + 1]);
  }
  return n;
}

namespace detail {

// FNV-1a over a strided sample of the weights (at most 64 probes plus the
// length). Cheap enough to run on every forward; any optimizer step perturbs
// essentially every coordinate, so a stale record is caught in practice.
inline std::uint64_t weights_fingerprint(const std::vector<double>& w) {
  std::uint64_t h = 1469598103934665603ULL;
  auto eat = [&h](std::uint64_t v) {
    for (int b = 0; b < 8; ++b) {
      h ^= (v >> (8 * b)) & 0xff;
      h *= 1099511628211ULL;
    }
  };
  eat(static_cast<std::uint64_t>(w.size()));
  if (w.empty()) return h;
  std::size_t stride = std::max<std::size_t>(1, w.size() / 63);
  for (std::size_t i = 0; i < w.size(); i += stride) {
    std::uint64_t bits;
    std::memcpy(&bits, &w[i], sizeof bits);
    eat(bits);
  }
  std::uint64_t last;
  std::memcpy(&last, &w.back(), sizeof last);
  eat(last);
  return h;
}

}  // namespace detail

enum class HeadKind { policy, value };

// Activations recorded during a forward pass; together with the parameters
// used at forward time they determine the exact reverse-mode gradient.
struct ForwardRecord {
  HeadKind kind = HeadKind::value;
  std::vector<int> layer_sizes;
  std::uint64_t fingerprint = 0;
  // activations[0] is the input; activations[l] for hidden layers is the
  // post-tanh output; activations.back() is the raw (pre-softmax) output.
  std::vector<std::vector<double>> activations;
  std::vector<double> log_probs;  // policy head only
};

struct PolicyForward {
  std::vector<double> log_probs;
  ForwardRecord record;
};

struct ValueForward {
  double value = 0.0;
  ForwardRecord record;
};

// Deterministic init: weights uniform in +-1/sqrt(fan_in), biases zero.
inline ApproximatorParams init_params(const std::vector<int>& layer_sizes, std::uint64_t seed) {
  if (layer_sizes.size() < 2) {
    throw ConfigError("init_params: need at least 2 layer sizes, got " +
                      std::to_string(layer_sizes.size()));
  }
  for (int s : layer_sizes) {
    if (s < 1) throw ConfigError("init_params: layer sizes must be >= 1, got " + std::to_string(s));
  }
  ApproximatorParams p;
  p.layer_sizes = layer_sizes;
  p.seed = seed;
  p.weights.assign(param_count(layer_sizes), 0.0);
  Rng rng = make_rng(seed, 0x6e6574ULL);  // tag: "net"
  std::size_t off = 0;
  for (std::size_t l = 0; l + 1 < layer_sizes.size(); ++l) {
    const int fan_in = layer_sizes[l];
    const int fan_out = layer_sizes[l + 1];
    const double scale = 1.0 / std::sqrt(static_cast<double>(fan_in));
    for (int i = 0; i < fan_out * fan_in; ++i) {
      p.weights[off + static_cast<std::size_t>(i)] = uniform(rng, -scale, scale);
    }
    off += static_cast<std::size_t>(fan_out) * static_cast<std::size_t>(fan_in);
    off += static_cast<std::size_t>(fan_out);  // biases stay zero
  }
  return p;
}

namespace detail {

inline void forward_body(const ApproximatorParams& p, std::span<const double> state,
                         std::vector<std::vector<double>>& acts) {
  if (static_cast<int>(state.size()) != p.input_dim()) {
    throw ShapeError("forward: state length " + std::to_string(state.size()) +
                     " does not match input layer " + std::to_string(p.input_dim()));
  }
  const std::size_t n_layers = p.layer_sizes.size() - 1;
  acts.clear();
  acts.reserve(n_layers + 1);
  acts.emplace_back(state.begin(), state.end());
  std::size_t off = 0;
  for (std::size_t l = 0; l < n_layers; ++l) {
    const int fan_in = p.layer_sizes[l];
    const int fan_out = p.layer_sizes[l + 1];
    const std::vector<double>& in = acts.back();
    std::vector<double> out(static_cast<std::size_t>(fan_out));
    const double* w = p.weights.data() + off;
    const double* b = w + static_cast<std::size_t>(fan_out) * static_cast<std::size_t>(fan_in);
    for (int i = 0; i < fan_out; ++i) {
      double z = b[i];
      const double* wrow = w + static_cast<std::size_t>(i) * static_cast<std::size_t>(fan_in);
      for (int j = 0; j < fan_in; ++j) z += wrow[j] * in[static_cast<std::size_t>(j)];
      out[static_cast<std::size_t>(i)] = (l + 1 == n_layers) ? z : std::tanh(z);
    }
    acts.push_back(std::move(out));
    off += static_cast<std::size_t>(fan_out) * static_cast<std::size_t>(fan_in + 1);
  }
}

inline std::vector<double> log_softmax(const std::vector<double>& logits) {
  double mx = *std::max_element(logits.begin(), logits.end());
  double sum = 0.0;
  for (double z : logits) sum += std::exp(z - mx);
  const double lse = mx + std::log(sum);
  std::vector<double> lp(logits.size());
  for (std::size_t i = 0; i < logits.size(); ++i) lp[i] = logits[i] - lse;
  return lp;
}

}  // namespace detail

inline PolicyForward policy_forward(const ApproximatorParams& p, std::span<const double> state) {
  PolicyForward r;
  r.record.kind = HeadKind::policy;
  r.record.layer_sizes = p.layer_sizes;
  r.record.fingerprint = detail::weights_fingerprint(p.weights);
  detail::forward_body(p, state, r.record.activations);
  r.record.log_probs = detail::log_softmax(r.record.activations.back());
  r.log_probs = r.record.log_probs;
  return r;
}

inline ValueForward value_forward(const ApproximatorParams& p, std::span<const double> state) {
  if (p.output_dim() != 1) {
    throw ShapeError("value_forward: output layer must be scalar, got " +
                     std::to_string(p.output_dim()));
  }
  ValueForward r;
  r.record.kind = HeadKind::value;
  r.record.layer_sizes = p.layer_sizes;
  r.record.fingerprint = detail::weights_fingerprint(p.weights);
  detail::forward_body(p, state, r.record.activations);
  r.value = r.record.activations.back()[0];
  return r;
}

// Exact gradient of <upstream, head_output> w.r.t. the flat parameter vector.
// For the policy head the upstream is w.r.t. log-probabilities; for the value
// head it is a single scalar.
inline std::vector<double> backward(const ApproximatorParams& p, const ForwardRecord& rec,
                                    std::span<const double> upstream) {
  if (rec.layer_sizes != p.layer_sizes) {
    throw ContractError("backward: record layer layout does not match params");
  }
  if (rec.fingerprint != detail::weights_fingerprint(p.weights)) {
    throw ContractError("backward: record is stale (params changed since forward)");
  }
  const int out_dim = p.output_dim();
  if (static_cast<int>(upstream.size()) != out_dim) {
    throw ShapeError("backward: upstream length " + std::to_string(upstream.size()) +
                     " does not match output dim " + std::to_string(out_dim));
  }

  std::vector<double> grad(p.weights.size(), 0.0);
  std::vector<double> delta(upstream.begin(), upstream.end());
  if (rec.kind == HeadKind::policy) {
    // Through log-softmax: d/dz_j = g_j - softmax_j * sum(g).
    double gsum = 0.0;
    for (double g : delta) gsum += g;
    for (int j = 0; j < out_dim; ++j) {
      delta[static_cast<std::size_t>(j)] -= std::exp(rec.log_probs[static_cast<std::size_t>(j)]) * gsum;
    }
  }

  const std::size_t n_layers = p.layer_sizes.size() - 1;
  // Offsets of each layer's block in the flat vector.
  std::vector<std::size_t> offs(n_layers);
  {
    std::size_t off = 0;
    for (std::size_t l = 0; l < n_layers; ++l) {
      offs[l] = off;
      off += static_cast<std::size_t>(p.layer_sizes[l] + 1) * static_cast<std::size_t>(p.layer_sizes[l + 1]);
    }
  }

  for (std::size_t l = n_layers; l-- > 0;) {
    const int fan_in = p.layer_sizes[l];
    const int fan_out = p.layer_sizes[l + 1];
    const std::vector<double>& in = rec.activations[l];
    double* gw = grad.data() + offs[l];
    double* gb = gw + static_cast<std::size_t>(fan_out) * static_cast<std::size_t>(fan_in);
    for (int i = 0; i < fan_out; ++i) {
      const double d = delta[static_cast<std::size_t>(i)];
      double* gwrow = gw + static_cast<std::size_t>(i) * static_cast<std::size_t>(fan_in);
      for (int j = 0; j < fan_in; ++j) gwrow[j] += d * in[static_cast<std::size_t>(j)];
      gb[i] += d;
    }
    if (l > 0) {
      const double* w = p.weights.data() + offs[l];
      std::vector<double> prev(static_cast<std::size_t>(fan_in), 0.0);
      for (int i = 0; i < fan_out; ++i) {
        const double d = delta[static_cast<std::size_t>(i)];
        const double* wrow = w + static_cast<std::size_t>(i) * static_cast<std::size_t>(fan_in);
        for (int j = 0; j < fan_in; ++j) prev[static_cast<std::size_t>(j)] += wrow[j] * d;
      }
      // in == post-tanh activation of layer l, so tanh' = 1 - a^2.
      for (int j = 0; j < fan_in; ++j) {
        prev[static_cast<std::size_t>(j)] *= 1.0 - in[static_cast<std::size_t>(j)] * in[static_cast<std::size_t>(j)];
      }
      delta = std::move(prev);
    }
  }
  return grad;
}

inline ApproximatorParams sgd_step(const ApproximatorParams& p, const std::vector<double>& gradient,
                                   double learning_rate) {
  if (gradient.size() != p.weights.size()) {
    throw ShapeError("sgd_step: gradient length does not match parameter count");
  }
  if (!(learning_rate > 0.0)) {
    throw ConfigError("sgd_step: learning_rate must be > 0");
  }
  if (!all_finite(gradient)) {
    throw TrainingDiverged("sgd_step: non-finite gradient");
  }
  ApproximatorParams out = p;
  for (std::size_t i = 0; i < out.weights.size(); ++i) {
    out.weights[i] -= learning_rate * gradient[i];
  }
  return out;
}

// Adam-style adaptive update with conventional constants. The appendix-style
// learning rates presuppose an adaptive optimizer, so this is the default
// mode in training; plain SGD remains available for probes and tests.
struct AdamState {
  std::vector<double> m;
  std::vector<double> v;
  std::uint64_t t = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

inline void adam_step(ApproximatorParams& p, AdamState& s, const std::vector<double>& gradient,
                      double learning_rate) {
  if (gradient.size() != p.weights.size()) {
    throw ShapeError("adam_step: gradient length does not match parameter count");
  }
  if (!(learning_rate > 0.0)) {
    throw ConfigError("adam_step: learning_rate must be > 0");
  }
  if (!all_finite(gradient)) {
    throw TrainingDiverged("adam_step: non-finite gradient");
  }
  if (s.m.empty()) {
    s.m.assign(p.weights.size(), 0.0);
    s.v.assign(p.weights.size(), 0.0);
  }
  if (s.m.size() != p.weights.size()) {
    throw ShapeError("adam_step: optimizer state does not match parameter count");
  }
  s.t += 1;
  const double bc1 = 1.0 - std::pow(s.beta1, static_cast<double>(s.t));
  const double bc2 = 1.0 - std::pow(s.beta2, static_cast<double>(s.t));
  for (std::size_t i = 0; i < p.weights.size(); ++i) {
    s.m[i] = s.beta1 * s.m[i] + (1.0 - s.beta1) * gradient[i];
    s.v[i] = s.beta2 * s.v[i] + (1.0 - s.beta2) * gradient[i] * gradient[i];
    const double mhat = s.m[i] / bc1;
    const double vhat = s.v[i] / bc2;
    p.weights[i] -= learning_rate * mhat / (std::sqrt(vhat) + s.eps);
  }
}

enum class OptimizerKind { sgd, adam };

// Owns per-network adaptive state; one Optimizer per trained network.
struct Optimizer {
  OptimizerKind kind = OptimizerKind::adam;
  AdamState adam;

  void step(ApproximatorParams& p, const std::vector<double>& gradient, double learning_rate) {
    if (kind == OptimizerKind::sgd) {
      p = sgd_step(p, gradient, learning_rate);
    } else {
      adam_step(p, adam, gradient, learning_rate);
    }
  }
};

}  // namespace asyppo
