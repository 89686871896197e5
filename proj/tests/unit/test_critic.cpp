#include <cmath>

#include "doctest.h"
#include "dmo/critic.hpp"
#include "dmo/errors.hpp"
#include "oracles.hpp"

using namespace dmo;
using dmo::testing::lambda_return_bruteforce;
using dmo::testing::random_tensor;

namespace {

struct TdCase {
  std::size_t H, N;
  Tensor rewards, values;
  std::vector<std::uint8_t> dones;
};

TdCase random_td_case(CounterRng& rng, double done_prob) {
  TdCase c{1 + rng.below(8), 1 + rng.below(4), {}, {}, {}};
  c.rewards = random_tensor(rng, {c.H, c.N}, -2, 2);
  c.values = random_tensor(rng, {c.H + 1, c.N}, -10, 10);
  c.dones.resize(c.H * c.N);
  for (auto& d : c.dones) d = rng.uniform() < done_prob;
  return c;
}

double oracle(const TdCase& c, std::size_t t, std::size_t col, double gamma, double lambda) {
  std::vector<double> r(c.H), v(c.H + 1);
  std::vector<int> d(c.H);
  for (std::size_t h = 0; h < c.H; ++h) r[h] = c.rewards.at(h, col), d[h] = c.dones[h * c.N + col];
  for (std::size_t h = 0; h <= c.H; ++h) v[h] = c.values.at(h, col);
  return lambda_return_bruteforce(r, v, d, t, gamma, lambda);
}

Critic make_critic(std::size_t ensemble, bool target, double tau = 0.8) {
  CriticConfig cfg;
  cfg.hidden = {16, 16};
  cfg.ensemble = ensemble;
  cfg.use_target = target;
  cfg.tau = tau;
  CounterRng init(0, StreamRole::init, 1);
  return Critic(2, cfg, init);
}

// Zeroes the output weights of a head so it returns its output bias.
void set_constant(Mlp& head, double v) {
  auto& p = head.params();
  for (double& w : p[p.size() - 2].storage()) w = 0.0;
  p.back()[0] = v;
}

}  // namespace

TEST_CASE("lambda-returns match brute-force enumeration") {
  CounterRng rng(0, StreamRole::test, 500);
  for (double lambda : {0.0, 0.3, 0.5, 0.95, 1.0}) {
    for (int trial = 0; trial < 200; ++trial) {
      const TdCase c = random_td_case(rng, trial % 2 ? 0.25 : 0.0);
      const double gamma = rng.uniform(0.5, 0.999);
      const ValueTargetBatch out = td_lambda_targets(c.rewards, c.values, c.dones, gamma, lambda);
      for (std::size_t t = 0; t < c.H; ++t) {
        for (std::size_t col = 0; col < c.N; ++col) {
          CHECK(std::fabs(out.targets.at(t, col) - oracle(c, t, col, gamma, lambda)) <= 1e-12);
        }
      }
    }
  }
}

TEST_CASE("three-step hand example") {
  const Tensor rewards = Tensor::matrix(3, 1, {1, 1, 1});
  const Tensor values = Tensor::matrix(4, 1, {0, 0, 0, 10});
  const std::vector<std::uint8_t> dones(3, 0);
  const ValueTargetBatch out = td_lambda_targets(rewards, values, dones, 0.9, 0.5);
  // V1 = 1, V2 = 1.9, V3 = 2.71 + 7.29 = 10; 0.5 * (1 + 0.5 * 1.9) + 0.25 * 10
  CHECK(std::fabs(out.targets.at(0, 0) - 3.475) <= 1e-12);
}

TEST_CASE("lambda extremes collapse to Monte-Carlo and one-step targets") {
  CounterRng rng(1, StreamRole::test, 501);
  for (int trial = 0; trial < 50; ++trial) {
    const TdCase c = random_td_case(rng, 0.0);
    const double gamma = 0.97;
    const ValueTargetBatch mc = td_lambda_targets(c.rewards, c.values, c.dones, gamma, 1.0);
    const ValueTargetBatch one = td_lambda_targets(c.rewards, c.values, c.dones, gamma, 0.0);
    for (std::size_t col = 0; col < c.N; ++col) {
      for (std::size_t t = 0; t < c.H; ++t) {
        double g = 0.0;
        for (std::size_t n = t; n < c.H; ++n) g += std::pow(gamma, double(n - t)) * c.rewards.at(n, col);
        g += std::pow(gamma, double(c.H - t)) * c.values.at(c.H, col);
        CHECK(std::fabs(mc.targets.at(t, col) - g) <= 1e-12);
        CHECK(std::fabs(one.targets.at(t, col) - (c.rewards.at(t, col) + gamma * c.values.at(t + 1, col))) <= 1e-12);
      }
    }
  }
}

TEST_CASE("targets before a done ignore values after it") {
  CounterRng rng(2, StreamRole::test, 502);
  for (int trial = 0; trial < 100; ++trial) {
    TdCase c = random_td_case(rng, 0.0);
    if (c.H < 2) continue;
    const std::size_t col = rng.below(c.N);
    const std::size_t d = rng.below(c.H - 1);
    c.dones[d * c.N + col] = 1;
    const ValueTargetBatch base = td_lambda_targets(c.rewards, c.values, c.dones, 0.99, 0.95);
    for (std::size_t h = d + 1; h <= c.H; ++h) c.values.at(h, col) += rng.uniform(-100, 100);
    const ValueTargetBatch moved = td_lambda_targets(c.rewards, c.values, c.dones, 0.99, 0.95);
    for (std::size_t t = 0; t <= d; ++t) CHECK(moved.targets.at(t, col) == base.targets.at(t, col));
  }
}

TEST_CASE("lambda-return arguments are validated") {
  const Tensor r({2, 1});
  const Tensor v({3, 1});
  const std::vector<std::uint8_t> d(2, 0);
  CHECK_THROWS_AS(td_lambda_targets(r, v, d, 1.0, 0.5), std::invalid_argument);
  CHECK_THROWS_AS(td_lambda_targets(r, v, d, 0.0, 0.5), std::invalid_argument);
  CHECK_THROWS_AS(td_lambda_targets(r, v, d, 0.9, 1.5), std::invalid_argument);
  CHECK_THROWS_AS(td_lambda_targets(r, Tensor({2, 1}), d, 0.9, 0.5), ShapeError);
}

TEST_CASE("critic update with zero learning rate keeps parameters") {
  Critic c = make_critic(1, true);
  const auto before = c.heads()[0].params();
  const auto target_before = c.target_heads()[0].params();
  CounterRng rng(3, StreamRole::test, 503);
  const Tensor feats = random_tensor(rng, {32, 2});
  c.update(feats, Tensor::filled({32}, 1.0), 0.0, 4, rng);
  CHECK(c.heads()[0].params() == before);
  CHECK(c.target_heads()[0].params() == target_before);
}

TEST_CASE("polyak factor 1 copies the online heads into the targets") {
  Critic c = make_critic(1, true, 1.0);
  CounterRng rng(4, StreamRole::test, 504);
  const Tensor feats = random_tensor(rng, {32, 2});
  c.update(feats, Tensor::filled({32}, 1.0), 1e-2, 2, rng);
  CHECK(c.target_heads()[0].params() == c.heads()[0].params());
}

TEST_CASE("target copy lags the online head") {
  Critic c = make_critic(1, true, 0.5);
  CounterRng rng(5, StreamRole::test, 505);
  const Tensor feats = random_tensor(rng, {32, 2});
  const auto old_online = c.heads()[0].params();
  c.update(feats, Tensor::filled({32}, 3.0), 1e-2, 2, rng);
  const auto& online = c.heads()[0].params();
  const auto& target = c.target_heads()[0].params();
  for (std::size_t i = 0; i < online.size(); ++i) {
    for (std::size_t j = 0; j < online[i].size(); ++j) {
      CHECK(target[i][j] == doctest::Approx(0.5 * old_online[i][j] + 0.5 * online[i][j]).epsilon(1e-12));
    }
  }
}

TEST_CASE("critic regresses to constant targets") {
  Critic c = make_critic(2, false);
  CounterRng rng(6, StreamRole::test, 506);
  const Tensor feats = random_tensor(rng, {64, 2});
  for (int round = 0; round < 30; ++round) {
    c.update(feats, Tensor::filled({64}, 2.5), round < 20 ? 5e-3 : 5e-4, 16, rng);
  }
  const Tensor heads = c.head_values(feats, false);
  for (std::size_t i = 0; i < heads.size(); ++i) CHECK(std::fabs(heads[i] - 2.5) < 1e-2);
}

TEST_CASE("ensemble value is the minimum over heads") {
  Critic c = make_critic(2, false);
  set_constant(c.heads()[0], 3.0);
  set_constant(c.heads()[1], 5.0);
  const std::vector<double> s{0.2, -0.4};
  CHECK(c.ensemble_value(s) == 3.0);

  set_constant(c.heads()[1], 3.0);
  CHECK(c.ensemble_value(s) == 3.0);

  Critic ten = make_critic(10, false);
  CounterRng rng(7, StreamRole::test, 507);
  const Tensor feats = random_tensor(rng, {9, 2});
  const Tensor per_head = ten.head_values(feats, false);
  const Tensor mins = ten.values(feats, false);
  Tape t;
  const Tensor on_tape = t.value(ten.value_on_tape(t, t.constant(feats), false));
  for (std::size_t n = 0; n < 9; ++n) {
    double m = per_head.at(0, n);
    for (std::size_t h = 1; h < 10; ++h) m = std::min(m, per_head.at(h, n));
    CHECK(mins[n] == m);
    CHECK(on_tape[n] == m);
  }
}

TEST_CASE("critic constructor rejects empty ensembles and bad tau") {
  CriticConfig cfg;
  CounterRng init(0, StreamRole::init, 1);
  cfg.ensemble = 0;
  CHECK_THROWS(Critic(2, cfg, init));
  cfg.ensemble = 1;
  cfg.tau = 0.0;
  CHECK_THROWS(Critic(2, cfg, init));
}

TEST_CASE("critic checkpoint round trip") {
  Critic c = make_critic(2, true);
  CounterRng rng(8, StreamRole::test, 508);
  const Tensor feats = random_tensor(rng, {16, 2});
  c.update(feats, Tensor::filled({16}, 1.0), 1e-2, 1, rng);
  Archive ar;
  c.save(ar, "critic");
  Critic back = make_critic(2, true);
  back.load(Archive::deserialize(ar.serialize()), "critic");
  CHECK(bitwise_equal(back.values(feats, true), c.values(feats, true)));
  CHECK(bitwise_equal(back.values(feats, false), c.values(feats, false)));
}
