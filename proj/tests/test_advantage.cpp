#include <catch2/catch_amalgamated.hpp>

#include "asyppo/advantage.hpp"
#include "oracles.hpp"

using namespace asyppo;

namespace {

TrajectoryBatch one_traj_batch(const std::vector<double>& rewards) {
  TrajectoryBatch batch;
  batch.group_size = 1;
  batch.encoding_dim = 1;
  batch.prompts.push_back({0, 1, {}, {}});
  std::vector<TokenStep> steps(rewards.size());
  for (std::size_t t = 0; t < rewards.size(); ++t) {
    steps[t].state_encoding = {0.0};
    steps[t].reward = rewards[t];
    steps[t].done = t + 1 == rewards.size();
  }
  batch.push_trajectory(steps, false, {0.0});
  return batch;
}

ValueTable table_for(const TrajectoryBatch& batch, const std::vector<double>& vbar,
                     const std::vector<double>& bootstrap) {
  ValueTable t;
  t.n_critics = 1;
  t.n_rows = batch.n_rows();
  t.values = vbar;
  t.vbar = vbar;
  t.sigma.assign(batch.n_rows(), 0.0);
  t.traj_bootstrap = bootstrap;
  return t;
}

}  // namespace

TEST_CASE("gae hand-checked cases", "[advantage]") {
  auto batch = one_traj_batch({0.0, 0.0, 1.0});
  auto vt = table_for(batch, {0.5, 0.5, 0.5}, {0.0});

  auto a = gae(batch, vt, 1.0, 1.0);
  CHECK(a.adv[0] == Catch::Approx(0.5).margin(1e-15));
  CHECK(a.adv[1] == Catch::Approx(0.5).margin(1e-15));
  CHECK(a.adv[2] == Catch::Approx(0.5).margin(1e-15));

  auto zero_vt = table_for(batch, {0.0, 0.0, 0.0}, {0.0});
  auto batch_zero = one_traj_batch({0.0, 0.0, 0.0});
  auto z = gae(batch_zero, zero_vt, 1.0, 1.0);
  for (double x : z.adv) CHECK(x == 0.0);

  // lambda = 0 collapses to the one-step TD residual
  auto vt2 = table_for(batch, {0.3, -0.2, 0.1}, {0.0});
  auto td0 = gae(batch, vt2, 0.9, 0.0);
  CHECK(td0.adv[0] == Catch::Approx(0.0 + 0.9 * -0.2 - 0.3).margin(1e-15));
  CHECK(td0.adv[1] == Catch::Approx(0.0 + 0.9 * 0.1 - -0.2).margin(1e-15));
  CHECK(td0.adv[2] == Catch::Approx(1.0 + 0.0 - 0.1).margin(1e-15));

  CHECK_THROWS_AS(gae(batch, vt, 1.2, 1.0), ConfigError);
  CHECK_THROWS_AS(gae(batch, vt, 1.0, -0.1), ConfigError);
}

TEST_CASE("gae matches the literal double sum on random instances", "[advantage]") {
  Rng rng = make_rng(808);
  auto behavior = init_params({2, 3, 2}, 1);
  for (int trial = 0; trial < 25; ++trial) {
    auto batch = oracles::synthetic_batch(behavior, 10, 4, 10, rng);
    for (double& r : batch.rewards) r = uniform(rng, -1.0, 1.0);
    std::vector<double> vbar(batch.n_rows());
    for (double& v : vbar) v = uniform(rng, -1.0, 1.0);
    std::vector<double> bootstrap(batch.n_trajectories());
    for (std::size_t t = 0; t < bootstrap.size(); ++t) {
      const bool truncated = uniform01(rng) < 0.3;
      batch.traj_truncated[t] = truncated ? 1 : 0;
      bootstrap[t] = truncated ? uniform(rng, -1.0, 1.0) : 0.0;
    }
    auto vt = table_for(batch, vbar, bootstrap);
    const double gamma = uniform01(rng);
    const double lambda = uniform01(rng);
    auto fast = gae(batch, vt, gamma, lambda);

    for (std::size_t traj = 0; traj < batch.n_trajectories(); ++traj) {
      const std::size_t lo = batch.traj_offset[traj];
      const std::size_t hi = batch.traj_offset[traj + 1];
      std::vector<double> rewards(batch.rewards.begin() + static_cast<std::ptrdiff_t>(lo),
                                  batch.rewards.begin() + static_cast<std::ptrdiff_t>(hi));
      std::vector<double> values(vbar.begin() + static_cast<std::ptrdiff_t>(lo),
                                 vbar.begin() + static_cast<std::ptrdiff_t>(hi));
      auto slow = oracles::gae_double_sum(rewards, values, bootstrap[traj], gamma, lambda);
      for (std::size_t t = 0; t < slow.size(); ++t) {
        CHECK(std::abs(fast.adv[lo + t] - slow[t]) < 1e-10);
      }
    }
  }
}

TEST_CASE("gamma=lambda=1 with terminal bootstrap reduces to return minus value", "[advantage]") {
  Rng rng = make_rng(909);
  auto behavior = init_params({2, 3, 2}, 2);
  for (int trial = 0; trial < 25; ++trial) {
    auto batch = oracles::synthetic_batch(behavior, 8, 5, 10, rng);
    for (double& r : batch.rewards) r = uniform(rng, -1.0, 1.0);
    std::vector<double> vbar(batch.n_rows());
    for (double& v : vbar) v = uniform(rng, -1.0, 1.0);
    auto vt = table_for(batch, vbar, std::vector<double>(batch.n_trajectories(), 0.0));

    auto adv = gae(batch, vt, 1.0, 1.0);
    auto rtg = returns_to_go(batch, 1.0);
    for (std::size_t r = 0; r < batch.n_rows(); ++r) {
      CHECK(std::abs(adv.adv[r] - (rtg[r] - vbar[r])) < 1e-10);
    }
  }
}

TEST_CASE("group baseline normalizes terminal rewards within each group", "[advantage]") {
  Rng rng = make_rng(4242);
  auto behavior = init_params({2, 3, 2}, 3);
  auto batch = oracles::synthetic_batch(behavior, 1, 4, 3, rng, 0.0);
  // rewards [1, 0, 0, 0] across the four responses
  batch.rewards[batch.traj_offset[1] - 1] = 1.0;

  auto adv = group_baseline_advantage(batch);
  const double expect_pos = 0.75 / (std::sqrt(0.1875) + 1e-8);
  const double expect_neg = -0.25 / (std::sqrt(0.1875) + 1e-8);
  CHECK(expect_pos == Catch::Approx(1.732).margin(1e-3));
  CHECK(expect_neg == Catch::Approx(-0.577).margin(1e-3));
  for (std::size_t traj = 0; traj < 4; ++traj) {
    const double expected = traj == 0 ? expect_pos : expect_neg;
    for (std::size_t r = batch.traj_offset[traj]; r < batch.traj_offset[traj + 1]; ++r) {
      CHECK(adv.adv[r] == Catch::Approx(expected).margin(1e-12));
    }
  }
}

TEST_CASE("group baseline properties: zero variance, centering, shift invariance", "[advantage]") {
  Rng rng = make_rng(515);
  auto behavior = init_params({2, 3, 2}, 4);
  auto batch = oracles::synthetic_batch(behavior, 6, 8, 5, rng);

  // all-equal groups give exactly zero advantage
  auto flat = batch;
  for (double& r : flat.rewards) r = 0.0;
  for (std::size_t traj = 0; traj < flat.n_trajectories(); ++traj) {
    flat.rewards[flat.traj_offset[traj + 1] - 1] = 0.25;
  }
  for (double a : group_baseline_advantage(flat).adv) CHECK(a == 0.0);

  // per-group mean of per-response advantages is zero
  auto adv = group_baseline_advantage(batch);
  for (std::size_t p = 0; p < batch.prompts.size(); ++p) {
    double mean = 0.0;
    for (std::size_t g = 0; g < batch.group_size; ++g) {
      const std::size_t traj = batch.traj_index(p, g);
      mean += adv.adv[batch.traj_offset[traj]];
    }
    mean /= batch.group_size;
    CHECK(std::abs(mean) < 1e-12);
  }

  // adding a constant to every group member's terminal reward changes nothing
  auto shifted = batch;
  for (std::size_t traj = 0; traj < shifted.n_trajectories(); ++traj) {
    shifted.rewards[shifted.traj_offset[traj + 1] - 1] += 3.25;
  }
  auto adv_shifted = group_baseline_advantage(shifted);
  for (std::size_t r = 0; r < batch.n_rows(); ++r) {
    CHECK(adv_shifted.adv[r] == Catch::Approx(adv.adv[r]).margin(1e-9));
  }

  TrajectoryBatch tiny;
  tiny.group_size = 1;
  tiny.encoding_dim = 1;
  tiny.prompts.push_back({0, 1, {}, {}});
  TokenStep s;
  s.state_encoding = {0.0};
  s.done = true;
  tiny.push_trajectory({s}, false, {0.0});
  CHECK_THROWS_AS(group_baseline_advantage(tiny), ConfigError);
}

TEST_CASE("whitening centers and scales the table", "[advantage]") {
  AdvantageTable t;
  t.adv = {1.0, 2.0, 3.0, 4.0};
  whiten(t);
  double mean = 0.0;
  for (double a : t.adv) mean += a;
  CHECK(std::abs(mean) < 1e-12);
  double ss = 0.0;
  for (double a : t.adv) ss += a * a;
  CHECK(std::sqrt(ss / 4.0) == Catch::Approx(1.0).margin(1e-6));
}
