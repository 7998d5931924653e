// Clipped-surrogate policy loss with value-std-ranked advantage masking and
// entropy filtering.
//
// Masks are built once per rollout batch from the batch-global value-std
// ranking: the lowest-sigma fraction k of tokens drops out of the surrogate,
// the highest-sigma fraction h drops out of the entropy bonus. Masked tokens
// stay in the per-response 1/|o| denominator.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "asyppo/advantage.hpp"
#include "asyppo/approximator.hpp"
#include "asyppo/common.hpp"
#include "asyppo/rollout.hpp"

namespace asyppo {

struct MaskVectors {
  std::vector<std::uint8_t> adv_mask;  // 0 = surrogate masked out
  std::vector<std::uint8_t> ent_mask;  // 0 = excluded from entropy bonus
  double k = 0.0;
  double h = 0.0;

  std::size_t masked_adv_count() const {
    return adv_mask.size() - static_cast<std::size_t>(
                                 std::count(adv_mask.begin(), adv_mask.end(), std::uint8_t{1}));
  }
  std::size_t filtered_ent_count() const {
    return ent_mask.size() - static_cast<std::size_t>(
                                 std::count(ent_mask.begin(), ent_mask.end(), std::uint8_t{1}));
  }
};

// Batch-global ranking of sigma. The floor(k*N) lowest-sigma tokens lose
// their advantage term; the floor(h*N) highest-sigma tokens lose their
// entropy term. Ties break by flat row index ascending.
inline MaskVectors build_masks(std::span<const double> sigma, double k, double h) {
  if (k < 0.0 || k >= 1.0 || h < 0.0 || h >= 1.0) {
    throw ConfigError("build_masks: mask fractions must be in [0,1)");
  }
  const std::size_t n = sigma.size();
  MaskVectors m;
  m.k = k;
  m.h = h;
  m.adv_mask.assign(n, 1);
  m.ent_mask.assign(n, 1);

  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});

  const auto count_low = static_cast<std::size_t>(std::floor(k * static_cast<double>(n)));
  if (count_low > 0) {
    std::vector<std::size_t> order = idx;
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return sigma[a] < sigma[b]; });
    for (std::size_t i = 0; i < count_low; ++i) m.adv_mask[order[i]] = 0;
  }
  const auto count_top = static_cast<std::size_t>(std::floor(h * static_cast<double>(n)));
  if (count_top > 0) {
    std::vector<std::size_t> order = idx;
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return sigma[a] > sigma[b]; });
    for (std::size_t i = 0; i < count_top; ++i) m.ent_mask[order[i]] = 0;
  }
  return m;
}

inline MaskVectors all_ones_masks(std::size_t n) {
  MaskVectors m;
  m.adv_mask.assign(n, 1);
  m.ent_mask.assign(n, 1);
  return m;
}

// Categorical entropy -sum p log p from normalized log-probabilities.
inline double entropy(std::span<const double> log_probs) {
  double h = 0.0;
  for (double lp : log_probs) h -= std::exp(lp) * lp;
  return h;
}

struct LossBreakdown {
  double surrogate = 0.0;     // masked clipped-surrogate term (maximization sign)
  double entropy_term = 0.0;  // filtered entropy bonus, unweighted by beta
  double total = 0.0;         // minimized: -surrogate - beta * entropy_term
  double clip_fraction = 0.0;
  std::size_t masked_adv_count = 0;
  std::size_t filtered_ent_count = 0;
  // divergence diagnostics over the evaluated rows
  std::size_t clipped_count = 0;
  double ratio_dev_sum = 0.0;  // sum of |ratio - 1|
};

struct PolicyLossResult {
  LossBreakdown breakdown;
  std::vector<double> gradient;  // d total / d params
};

namespace detail {

struct TokenForward {
  ForwardRecord record;
  double ratio = 1.0;
  double entropy = 0.0;
};

inline TokenForward eval_token(const ApproximatorParams& params, const TrajectoryBatch& batch,
                               std::size_t row) {
  TokenForward t;
  PolicyForward fwd = policy_forward(params, batch.encoding(row));
  const auto action = static_cast<std::size_t>(batch.actions[row]);
  t.ratio = std::exp(fwd.log_probs[action] - batch.behavior_log_probs[row]);
  if (!std::isfinite(t.ratio)) {
    throw TrainingDiverged("policy_loss: non-finite importance ratio at row " +
                           std::to_string(row) + " (log_prob " + std::to_string(fwd.log_probs[action]) +
                           ", behavior " + std::to_string(batch.behavior_log_probs[row]) + ")");
  }
  t.entropy = entropy(fwd.log_probs);
  t.record = std::move(fwd.record);
  return t;
}

// Reduction over pre-evaluated tokens. This is the single real computation
// path (policy_loss delegates here); tests drive it directly to check that
// masked tokens contribute nothing.
inline PolicyLossResult reduce_tokens(const TrajectoryBatch& batch, const AdvantageTable& adv,
                                      const MaskVectors& masks, const ApproximatorParams& params,
                                      double epsilon, double beta,
                                      std::span<const std::size_t> rows,
                                      std::span<const TokenForward> evals) {
  if (!(epsilon > 0.0 && epsilon < 1.0)) {
    throw ConfigError("policy_loss: epsilon must be in (0,1)");
  }
  if (beta < 0.0) throw ConfigError("policy_loss: beta must be >= 0");
  if (adv.adv.size() != batch.n_rows() || masks.adv_mask.size() != batch.n_rows() ||
      masks.ent_mask.size() != batch.n_rows()) {
    throw ShapeError("policy_loss: advantage/mask tables not aligned with batch");
  }

  PolicyLossResult out;
  out.gradient.assign(params.weights.size(), 0.0);
  const double inv_responses = 1.0 / static_cast<double>(batch.n_trajectories());
  std::size_t clipped = 0;

  std::vector<double> upstream;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const std::size_t row = rows[i];
    const TokenForward& tok = evals[i];
    const std::size_t traj = batch.row_traj[row];
    const double w = inv_responses / static_cast<double>(batch.traj_len(traj));
    const auto action = static_cast<std::size_t>(batch.actions[row]);

    if (tok.ratio < 1.0 - epsilon || tok.ratio > 1.0 + epsilon) ++clipped;
    out.breakdown.ratio_dev_sum += std::abs(tok.ratio - 1.0);

    upstream.assign(tok.record.log_probs.size(), 0.0);
    bool any_upstream = false;

    if (masks.adv_mask[row]) {
      const double a = adv.adv[row];
      const double unclipped = tok.ratio * a;
      const double clipped_term = std::clamp(tok.ratio, 1.0 - epsilon, 1.0 + epsilon) * a;
      out.breakdown.surrogate += w * std::min(unclipped, clipped_term);
      if (unclipped <= clipped_term) {
        upstream[action] += w * a * tok.ratio;
        any_upstream = true;
      }
    } else {
      out.breakdown.masked_adv_count += 1;
    }

    if (masks.ent_mask[row]) {
      out.breakdown.entropy_term += w * tok.entropy;
      if (beta > 0.0) {
        // dH/d log_prob_j = -p_j (log_prob_j + 1)
        for (std::size_t j = 0; j < upstream.size(); ++j) {
          const double lp = tok.record.log_probs[j];
          upstream[j] += w * beta * (-std::exp(lp) * (lp + 1.0));
        }
        any_upstream = true;
      }
    } else {
      out.breakdown.filtered_ent_count += 1;
    }

    if (any_upstream) {
      const std::vector<double> g = backward(params, tok.record, upstream);
      for (std::size_t j = 0; j < g.size(); ++j) out.gradient[j] += g[j];
    }
  }

  // The objective is maximized; the returned loss and gradient are negated.
  out.breakdown.total = -out.breakdown.surrogate - beta * out.breakdown.entropy_term;
  for (double& g : out.gradient) g = -g;
  out.breakdown.clipped_count = clipped;
  out.breakdown.clip_fraction =
      rows.empty() ? 0.0 : static_cast<double>(clipped) / static_cast<double>(rows.size());
  return out;
}

}  // namespace detail

// Loss over a row subset; weights use full-batch normalization (1/|o| within
// a response, 1/n_responses across), so the subset losses of a partition sum
// to the full-batch loss.
inline PolicyLossResult policy_loss(const TrajectoryBatch& batch, const AdvantageTable& adv,
                                    const MaskVectors& masks, const ApproximatorParams& params,
                                    double epsilon, double beta,
                                    std::span<const std::size_t> rows) {
  std::vector<detail::TokenForward> evals;
  evals.reserve(rows.size());
  for (std::size_t row : rows) evals.push_back(detail::eval_token(params, batch, row));
  return detail::reduce_tokens(batch, adv, masks, params, epsilon, beta, rows, evals);
}

inline PolicyLossResult policy_loss(const TrajectoryBatch& batch, const AdvantageTable& adv,
                                    const MaskVectors& masks, const ApproximatorParams& params,
                                    double epsilon, double beta) {
  std::vector<std::size_t> rows(batch.n_rows());
  std::iota(rows.begin(), rows.end(), std::size_t{0});
  return policy_loss(batch, adv, masks, params, epsilon, beta, rows);
}

}  // namespace asyppo
