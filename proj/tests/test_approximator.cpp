#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <cstring>

#include "asyppo/approximator.hpp"
#include "oracles.hpp"

using namespace asyppo;

TEST_CASE("init_params layout and determinism", "[approximator]") {
  auto p = init_params({4, 8, 3}, 42);
  CHECK(p.weights.size() == (4 + 1) * 8 + (8 + 1) * 3);  // 67
  CHECK(all_finite(p.weights));

  auto q = init_params({4, 8, 3}, 42);
  REQUIRE(q.weights.size() == p.weights.size());
  CHECK(std::memcmp(p.weights.data(), q.weights.data(), p.weights.size() * sizeof(double)) == 0);

  auto r = init_params({4, 8, 3}, 43);
  CHECK(p.weights != r.weights);

  CHECK_THROWS_AS(init_params({4}, 1), ConfigError);
  CHECK_THROWS_AS(init_params({}, 1), ConfigError);
  CHECK_THROWS_AS(init_params({4, 0, 3}, 1), ConfigError);
}

TEST_CASE("init_params scale and zero biases", "[approximator]") {
  auto p = init_params({9, 5, 2}, 7);
  const double bound0 = 1.0 / 3.0;
  for (std::size_t i = 0; i < 45; ++i) {
    CHECK(std::abs(p.weights[i]) <= bound0);
  }
  for (std::size_t i = 45; i < 50; ++i) CHECK(p.weights[i] == 0.0);  // first-layer biases
}

TEST_CASE("policy_forward uniform at zero weights", "[approximator]") {
  auto p = init_params({4, 8, 3}, 1);
  std::fill(p.weights.begin(), p.weights.end(), 0.0);
  std::vector<double> state{0.3, -0.2, 0.9, 0.0};
  auto fwd = policy_forward(p, state);
  for (double lp : fwd.log_probs) {
    CHECK(lp == Catch::Approx(-std::log(3.0)).epsilon(1e-12));
  }
}

TEST_CASE("policy_forward normalization over random nets", "[approximator]") {
  Rng rng = make_rng(123);
  for (int trial = 0; trial < 100; ++trial) {
    auto p = init_params({5, 12, 7}, rng());
    std::vector<double> state(5);
    for (double& x : state) x = uniform(rng, -2.0, 2.0);
    auto fwd = policy_forward(p, state);
    double sum = 0.0;
    for (double lp : fwd.log_probs) {
      CHECK(std::isfinite(lp));
      sum += std::exp(lp);
    }
    CHECK(sum == Catch::Approx(1.0).margin(1e-9));
  }
}

TEST_CASE("policy_forward single-logit perturbation is monotone and local", "[approximator]") {
  auto base = init_params({4, 6, 3}, 9);
  std::vector<double> state{0.5, -0.5, 0.25, 1.0};
  // bias of logit 1 in the output layer
  const std::size_t first_layer = (4 + 1) * 6;
  const std::size_t bias1 = first_layer + 3 * 6 + 1;

  double prev_p1 = -1.0;
  double ratio02_ref = 0.0;
  for (int k = 0; k < 4; ++k) {
    auto p = base;
    p.weights[bias1] += 0.3 * k;
    auto fwd = policy_forward(p, state);
    const double p0 = std::exp(fwd.log_probs[0]);
    const double p1 = std::exp(fwd.log_probs[1]);
    const double p2 = std::exp(fwd.log_probs[2]);
    CHECK(p1 > prev_p1);
    prev_p1 = p1;
    if (k == 0) {
      ratio02_ref = p0 / p2;
    } else {
      CHECK(p0 / p2 == Catch::Approx(ratio02_ref).epsilon(1e-10));
    }
  }
}

TEST_CASE("policy_forward rejects dimension mismatch", "[approximator]") {
  auto p = init_params({4, 8, 3}, 1);
  std::vector<double> bad{1.0, 2.0};
  CHECK_THROWS_AS(policy_forward(p, bad), ShapeError);
}

TEST_CASE("value_forward zero net, purity, reference oracle", "[approximator]") {
  auto p = init_params({6, 4, 1}, 3);
  std::fill(p.weights.begin(), p.weights.end(), 0.0);
  std::vector<double> state{1, 2, 3, 4, 5, 6};
  CHECK(value_forward(p, state).value == 0.0);

  Rng rng = make_rng(77);
  for (int trial = 0; trial < 20; ++trial) {
    auto q = init_params({6, 9, 5, 1}, rng());
    std::vector<double> s(6);
    for (double& x : s) x = uniform(rng, -2.0, 2.0);
    const double a = value_forward(q, s).value;
    const double b = value_forward(q, s).value;
    CHECK(a == b);
    CHECK(std::isfinite(a));
    CHECK(a == Catch::Approx(oracles::value_forward_reference(q, s)).margin(1e-12));
  }

  auto pol = init_params({6, 4, 2}, 3);
  std::vector<double> s6{1, 2, 3, 4, 5, 6};
  CHECK_THROWS_AS(value_forward(pol, s6), ShapeError);
}

TEST_CASE("backward zero upstream and output-bias identity", "[approximator]") {
  auto p = init_params({5, 7, 1}, 11);
  std::vector<double> state{0.1, 0.2, 0.3, 0.4, 0.5};
  auto vf = value_forward(p, state);

  const double zero[1] = {0.0};
  auto g0 = backward(p, vf.record, zero);
  for (double g : g0) CHECK(g == 0.0);

  const double one[1] = {1.0};
  auto g1 = backward(p, vf.record, one);
  CHECK(g1.back() == 1.0);  // the final entry is the output bias
}

TEST_CASE("backward matches central finite differences", "[approximator]") {
  Rng rng = make_rng(2024);
  const std::vector<std::vector<int>> shapes = {{3, 4, 1}, {8, 16, 16, 1}, {5, 10, 1}};
  for (const auto& shape : shapes) {
    auto p = init_params(shape, rng());
    std::vector<double> state(static_cast<std::size_t>(shape.front()));
    for (double& x : state) x = uniform(rng, -1.5, 1.5);
    auto vf = value_forward(p, state);
    const double one[1] = {1.0};
    auto analytic = backward(p, vf.record, one);
    auto loss = [&](const ApproximatorParams& q) { return value_forward(q, state).value; };
    for (int c = 0; c < 50; ++c) {
      const std::size_t coord = uniform_index(rng, p.weights.size());
      const double fd = oracles::central_difference(p, loss, coord, 1e-5);
      CHECK(oracles::grad_close(analytic[coord], fd, 1e-4));
    }
  }
}

TEST_CASE("backward matches finite differences through the policy head", "[approximator]") {
  Rng rng = make_rng(555);
  const std::vector<std::vector<int>> shapes = {{4, 6, 3}, {8, 16, 16, 8}};
  for (const auto& shape : shapes) {
    auto p = init_params(shape, rng());
    std::vector<double> state(static_cast<std::size_t>(shape.front()));
    for (double& x : state) x = uniform(rng, -1.0, 1.0);
    std::vector<double> coeff(static_cast<std::size_t>(shape.back()));
    for (double& c : coeff) c = uniform(rng, -1.0, 1.0);

    auto fwd = policy_forward(p, state);
    auto analytic = backward(p, fwd.record, coeff);
    auto loss = [&](const ApproximatorParams& q) {
      auto f = policy_forward(q, state);
      double acc = 0.0;
      for (std::size_t j = 0; j < coeff.size(); ++j) acc += coeff[j] * f.log_probs[j];
      return acc;
    };
    for (int c = 0; c < 50; ++c) {
      const std::size_t coord = uniform_index(rng, p.weights.size());
      const double fd = oracles::central_difference(p, loss, coord, 1e-5);
      CHECK(oracles::grad_close(analytic[coord], fd, 1e-4));
    }
  }
}

TEST_CASE("backward rejects stale or mismatched records", "[approximator]") {
  auto p = init_params({4, 5, 1}, 8);
  std::vector<double> state{1, 0, -1, 0.5};
  auto vf = value_forward(p, state);
  const double one[1] = {1.0};

  // mismatched layout
  auto other = init_params({4, 6, 1}, 8);
  CHECK_THROWS_AS(backward(other, vf.record, one), ContractError);

  // stale: params moved on since the forward pass
  std::vector<double> grad(p.weights.size(), 1.0);
  auto stepped = sgd_step(p, grad, 0.1);
  CHECK_THROWS_AS(backward(stepped, vf.record, one), ContractError);

  // matching record still works
  CHECK_NOTHROW(backward(p, vf.record, one));
}

TEST_CASE("sgd_step identities and errors", "[approximator]") {
  auto p = init_params({3, 4, 1}, 5);
  std::vector<double> zero(p.weights.size(), 0.0);
  auto same = sgd_step(p, zero, 0.5);
  CHECK(same.weights == p.weights);

  ApproximatorParams origin = p;
  std::fill(origin.weights.begin(), origin.weights.end(), 0.0);
  std::vector<double> g(p.weights.size());
  Rng rng = make_rng(6);
  for (double& x : g) x = uniform(rng, -1.0, 1.0);
  auto stepped = sgd_step(origin, g, 1.0);
  for (std::size_t i = 0; i < g.size(); ++i) CHECK(stepped.weights[i] == -g[i]);

  std::vector<double> bad = g;
  bad[3] = std::nan("");
  CHECK_THROWS_AS(sgd_step(p, bad, 0.1), TrainingDiverged);
  CHECK_THROWS_AS(sgd_step(p, g, 0.0), ConfigError);
  std::vector<double> short_g(3, 0.0);
  CHECK_THROWS_AS(sgd_step(p, short_g, 0.1), ShapeError);
}

TEST_CASE("plain SGD strictly decreases a convex quadratic probe", "[approximator]") {
  // L(w) = 0.5 |w - c|^2 treated as a loss over the flat parameter vector
  auto p = init_params({3, 3, 1}, 1);
  std::vector<double> target(p.weights.size());
  Rng rng = make_rng(44);
  for (double& c : target) c = uniform(rng, -1.0, 1.0);
  auto loss = [&](const ApproximatorParams& q) {
    double acc = 0.0;
    for (std::size_t i = 0; i < q.weights.size(); ++i) {
      acc += 0.5 * (q.weights[i] - target[i]) * (q.weights[i] - target[i]);
    }
    return acc;
  };
  double prev = loss(p);
  for (int s = 0; s < 10; ++s) {
    std::vector<double> g(p.weights.size());
    for (std::size_t i = 0; i < g.size(); ++i) g[i] = p.weights[i] - target[i];
    p = sgd_step(p, g, 0.2);
    const double cur = loss(p);
    CHECK(cur < prev);
    prev = cur;
  }
}

TEST_CASE("adam mode decreases the same probe and is deterministic", "[approximator]") {
  auto run = [] {
    auto p = init_params({3, 3, 1}, 1);
    AdamState st;
    std::vector<double> target(p.weights.size(), 0.7);
    for (int s = 0; s < 50; ++s) {
      std::vector<double> g(p.weights.size());
      for (std::size_t i = 0; i < g.size(); ++i) g[i] = p.weights[i] - target[i];
      adam_step(p, st, g, 0.05);
    }
    return p;
  };
  auto a = run();
  auto b = run();
  CHECK(a.weights == b.weights);
  double err = 0.0;
  for (double w : a.weights) err = std::max(err, std::abs(w - 0.7));
  CHECK(err < 0.1);
}
