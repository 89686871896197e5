#include <cmath>

#include "doctest.h"
#include "dmo/algorithms.hpp"
#include "dmo/diagnostics.hpp"
#include "dmo/errors.hpp"
#include "oracles.hpp"
#include "toy_env.hpp"

using namespace dmo;
using dmo::testing::random_tensor;
using dmo::testing::ToyEnv;

namespace {

Actor small_actor(const Env& env, std::uint64_t seed, double output_scale = 1.0, bool state_std = false) {
  ActorConfig cfg;
  cfg.hidden = {8, 8};
  cfg.output_scale = output_scale;
  cfg.state_dependent_std = state_std;
  CounterRng init(seed, StreamRole::init, 0);
  return Actor(env, cfg, init);
}

Critic small_critic(const Env& env, std::size_t heads, std::uint64_t seed) {
  CriticConfig cfg;
  cfg.hidden = {8, 8};
  cfg.ensemble = heads;
  cfg.use_target = heads == 1;
  CounterRng init(seed, StreamRole::init, 1);
  return Critic(env.feature_dim(), cfg, init);
}

// Closed-form least-squares fit on random transitions of a linear env.
LinearModel fitted_linear(const Env& env, std::uint64_t seed) {
  CounterRng rng(seed, StreamRole::test, 700);
  const std::size_t ds = env.spec().state_dim;
  const std::size_t da = env.spec().action_dim;
  const Tensor s = random_tensor(rng, {40, ds}, -2, 2);
  const Tensor a = random_tensor(rng, {40, da}, -1, 1);
  Tape t;
  const Tensor next = t.value(env.step_on_tape(t, t.constant(s), t.constant(a)).next);
  LinearModel m(ds, da);
  REQUIRE(m.fit(s, a, next) < 1e-12);
  return m;
}

void set_constant(Mlp& head, double v) {
  auto& p = head.params();
  for (double& w : p[p.size() - 2].storage()) w = 0.0;
  p.back()[0] = v;
}

double max_abs(const std::vector<double>& a, const std::vector<double>& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::fabs(a[i] - b[i]));
  return m;
}

ExperimentConfig tiny_config(AlgoVariant v, const std::string& env = "double_integrator") {
  ExperimentConfig c;
  c.variant = v;
  c.env = env;
  c.num_actors = 4;
  c.horizon = 4;
  c.total_env_steps = 4 * 4 * 6;
  c.actor_hidden = {8, 8};
  c.critic_hidden = {8, 8};
  c.model_hidden = {8, 8};
  c.model_batch_size = 8;
  c.model_minibatches = 2;
  c.critic_mini_epochs = 2;
  c.critic_minibatches = 2;
  c.buffer_capacity = 1000;
  return c;
}

}  // namespace

TEST_CASE("one-step critic loss example") {
  ToyEnv env(1, 1, 1.0, 1.0);
  Critic critic = small_critic(env, 1, 0);
  set_constant(critic.heads()[0], 10.0);
  set_constant(critic.target_heads()[0], 10.0);
  TrajectoryWindow w;
  w.horizon = 1;
  w.num_actors = 1;
  w.state_nodes = {w.tape.constant(Tensor::matrix(1, 1, {0.0})), w.tape.constant(Tensor::matrix(1, 1, {0.5}))};
  w.reward_nodes = {w.tape.constant(Tensor::matrix(1, 1, {2.0}))};
  w.entropy_nodes = {w.tape.constant(Tensor::matrix(1, 1, {0.0}))};
  w.dones = {0};
  LossSettings s;
  s.variant = AlgoVariant::shac_true;
  s.gamma = 0.9;
  CHECK(w.tape.value(policy_loss(w, s, env, &critic)).item() == doctest::Approx(-11.0).epsilon(1e-15));
  s.variant = AlgoVariant::bptt_true;
  CHECK(w.tape.value(policy_loss(w, s, env, nullptr)).item() == -2.0);
  s.variant = AlgoVariant::dmo_shac;
  CHECK_THROWS_AS(policy_loss(w, s, env, nullptr), ConfigError);
}

TEST_CASE("window losses match brute-force discounted returns") {
  DoubleIntegrator env;
  CounterRng rng(1, StreamRole::test, 701);
  const Actor actor = small_actor(env, 1);
  const Critic critic = small_critic(env, 1, 1);
  for (int trial = 0; trial < 6; ++trial) {
    BatchState batch = env.make_batch(5, trial);
    // some rows hit the time limit inside the window
    for (std::size_t r = 0; r < 5; ++r) batch.steps_elapsed[r] = env.spec().max_episode_steps - 1 - rng.below(10);
    const std::size_t H = 8;
    const auto noise = window_noise(trial, 0, H, 5, 1);
    TrajectoryWindow w = rollout_true(env, actor, batch, noise);
    for (bool boot : {true, false}) {
      LossSettings s;
      s.variant = AlgoVariant::shac_true;
      s.gamma = 0.95;
      s.bootstrap_on_timeout = boot;
      const double loss = w.tape.value(policy_loss(w, s, env, &critic)).item();
      double total = 0.0;
      for (std::size_t r = 0; r < 5; ++r) {
        double disc = 1.0;
        for (std::size_t h = 0; h < H; ++h) {
          total += disc * w.rewards.at(h, r);
          disc *= 0.95;
          if (w.dones[h * 5 + r]) {
            if (boot) {
              const Tensor term = Tensor::matrix(1, 2, {w.terminal_states[h].at(r, 0), w.terminal_states[h].at(r, 1)});
              total += disc * critic.values(term, true)[0];
            }
            disc = 1.0;
          }
        }
        const Tensor last = Tensor::matrix(1, 2, {w.states[H].at(r, 0), w.states[H].at(r, 1)});
        total += disc * critic.values(last, true)[0];
      }
      CHECK(loss == doctest::Approx(-total / 5.0).epsilon(1e-12));

      s.variant = AlgoVariant::bptt_true;
      s.bptt_discount = 1.0;
      double plain = 0.0;
      for (double r : w.rewards.storage()) plain += r;
      CHECK(w.tape.value(policy_loss(w, s, env, nullptr)).item() == doctest::Approx(-plain / 5.0).epsilon(1e-12));
    }
  }
}

TEST_CASE("entropy-free maximum-entropy loss equals the critic loss with the ensemble minimum") {
  Pendulum env;
  const Actor actor = small_actor(env, 2, 1.0, true);
  const Critic critic = small_critic(env, 3, 2);
  BatchState batch = env.make_batch(4, 3);
  const auto noise = window_noise(3, 0, 5, 4, 1);
  TrajectoryWindow w = rollout_true(env, actor, batch, noise);
  LossSettings s;
  s.variant = AlgoVariant::dmo_sapo;
  s.alpha = 0.0;
  const double sapo = w.tape.value(policy_loss(w, s, env, &critic)).item();
  s.variant = AlgoVariant::shac_true;
  CHECK(sapo == w.tape.value(policy_loss(w, s, env, &critic)).item());

  // with alpha > 0 the loss drops by alpha times the discounted entropy
  s.variant = AlgoVariant::dmo_sapo;
  s.alpha = 0.3;
  const double with_entropy = w.tape.value(policy_loss(w, s, env, &critic)).item();
  double bonus = 0.0;
  for (std::size_t h = 0; h < 5; ++h) {
    for (double e : w.tape.value(w.entropy_nodes[h]).storage()) bonus += std::pow(s.gamma, double(h)) * e;
  }
  CHECK(with_entropy == doctest::Approx(sapo - 0.3 * bonus / 4.0).epsilon(1e-12));
}

TEST_CASE("zero rewards and zero values give zero loss") {
  ToyEnv env(2, 1, 1.0, 0.0);
  const Actor actor = small_actor(env, 3);
  Critic critic = small_critic(env, 1, 3);
  set_constant(critic.heads()[0], 0.0);
  set_constant(critic.target_heads()[0], 0.0);
  BatchState batch = env.make_batch(3, 0);
  TrajectoryWindow w = rollout_true(env, actor, batch, window_noise(0, 0, 6, 3, 1));
  LossSettings s;
  s.variant = AlgoVariant::shac_true;
  CHECK(w.tape.value(policy_loss(w, s, env, &critic)).item() == 0.0);
}

TEST_CASE("decoupled rollouts keep simulator values regardless of the model") {
  for (const std::string& name : env_names()) {
    CAPTURE(name);
    const auto env = make_env(name);
    const Actor actor = small_actor(*env, 4);
    CounterRng init(4, StreamRole::init, 2);
    DynamicsModel model(*env, {}, init);  // untrained
    BatchState b1 = env->make_batch(6, 4);
    b1.steps_elapsed[2] = env->spec().max_episode_steps - 3;
    BatchState b2 = b1;
    const auto noise = window_noise(4, 0, 8, 6, 1);
    ReplayBuffer buf(1000, env->spec().state_dim, 1);
    const TrajectoryWindow real = rollout_true(*env, actor, b1, noise);
    const TrajectoryWindow dec = rollout_decoupled(*env, model, actor, b2, noise, 1, &buf);
    CHECK(bitwise_equal(real.rewards, dec.rewards));
    CHECK(real.dones == dec.dones);
    for (std::size_t h = 0; h <= 8; ++h) {
      CHECK(bitwise_equal(real.states[h], dec.states[h]));
      CHECK(bitwise_equal(dec.tape.value(dec.state_nodes[h]), real.states[h]));
    }
    CHECK(bitwise_equal(b1.states, b2.states));
    // the buffer only ever sees simulator transitions
    REQUIRE(buf.size() == 8 * 6);
    for (std::size_t h = 0; h < 8; ++h) {
      for (std::size_t r = 0; r < 6; ++r) {
        const Transition t = buf.at(h * 6 + r);
        for (std::size_t j = 0; j < env->spec().state_dim; ++j) {
          CHECK(t.state[j] == real.states[h].at(r, j));
          CHECK(t.next_state[j] == real.terminal_states[h].at(r, j));
        }
      }
    }
  }
}

TEST_CASE("exact linear model reproduces the simulator gradient") {
  DoubleIntegrator env;
  const LinearModel model = fitted_linear(env, 5);
  const Actor actor = small_actor(env, 5);
  const Critic critic = small_critic(env, 1, 5);
  LossSettings s;
  s.variant = AlgoVariant::shac_true;
  for (std::size_t H : {2u, 16u}) {
    for (bool with_reset : {false, true}) {
      CAPTURE(H);
      CAPTURE(with_reset);
      BatchState batch = env.make_batch(4, 6);
      if (with_reset) batch.steps_elapsed[1] = env.spec().max_episode_steps - 1;
      const auto noise = window_noise(6, 0, H, 4, 1);
      BatchState b1 = batch, b2 = batch;
      TrajectoryWindow wt = rollout_true(env, actor, b1, noise);
      TrajectoryWindow wd = rollout_decoupled(env, model, actor, b2, noise);
      const auto gt = policy_gradient(wt, policy_loss(wt, s, env, &critic), actor);
      const auto gd = policy_gradient(wd, policy_loss(wd, s, env, &critic), actor);
      CHECK(max_abs(gt, gd) <= 1e-8);

      const GradientTriplet g = gradient_triplet(env, model, actor, &critic, batch, noise, s);
      CHECK(std::fabs(cosine_similarity(g.g_dmo, g.g_true).value - 1.0) <= 1e-8);
      CHECK(std::fabs(cosine_similarity(g.g_forward, g.g_true).value - 1.0) <= 1e-8);
    }
  }
}

TEST_CASE("zero-reward environment yields zero gradients") {
  ToyEnv env(2, 1, 1.0, 0.0);
  const LinearModel model = fitted_linear(env, 6);
  const Actor actor = small_actor(env, 6);
  BatchState batch = env.make_batch(3, 1);
  const auto noise = window_noise(1, 0, 5, 3, 1);
  LossSettings s;
  s.variant = AlgoVariant::bptt_true;
  const GradientTriplet g = gradient_triplet(env, model, actor, nullptr, batch, noise, s);
  for (const auto* v : {&g.g_true, &g.g_dmo, &g.g_forward}) {
    for (double x : *v) CHECK(x == 0.0);
  }
}

TEST_CASE("model-forward error compounds a constant bias through the dynamics") {
  DoubleIntegrator env;
  LinearModel model = fitted_linear(env, 7);
  const Tensor bias = Tensor::vector({0.01, -0.02});
  model.set_offset(Tensor::vector({model.offset()[0] + bias[0], model.offset()[1] + bias[1]}));
  // zero output layer: the action depends only on the noise
  const Actor actor = small_actor(env, 7, 0.0);
  const std::size_t H = 12;
  const BatchState batch = env.make_batch(3, 2);
  const auto noise = window_noise(2, 0, H, 3, 1);
  BatchState b = batch;
  const TrajectoryWindow real = rollout_true(env, actor, b, noise);
  const TrajectoryWindow fwd = rollout_model_forward(env, model, actor, batch, noise);
  // e_{h+1} = e_h A + bias
  double e[2] = {0.0, 0.0};
  const Tensor& A = model.state_matrix();
  for (std::size_t h = 1; h <= H; ++h) {
    const double e0 = e[0] * A.at(0, 0) + e[1] * A.at(1, 0) + bias[0];
    const double e1 = e[0] * A.at(0, 1) + e[1] * A.at(1, 1) + bias[1];
    e[0] = e0, e[1] = e1;
    for (std::size_t r = 0; r < 3; ++r) {
      CHECK(fwd.states[h].at(r, 0) - real.states[h].at(r, 0) == doctest::Approx(e[0]).epsilon(1e-9));
      CHECK(fwd.states[h].at(r, 1) - real.states[h].at(r, 1) == doctest::Approx(e[1]).epsilon(1e-9));
    }
  }
  // the velocity error grows linearly, H * bias
  CHECK(std::fabs(e[1]) > 10 * std::fabs(bias[1]));
}

TEST_CASE("gradients do not cross window boundaries") {
  Pendulum env;
  const Actor actor = small_actor(env, 8);
  const Critic critic = small_critic(env, 1, 8);
  LossSettings s;
  s.variant = AlgoVariant::shac_true;
  BatchState batch = env.make_batch(4, 8);
  rollout_true(env, actor, batch, window_noise(8, 0, 6, 4, 1));  // history
  const BatchState snapshot = batch;
  const auto noise = window_noise(8, 1, 6, 4, 1);
  TrajectoryWindow after_history = rollout_true(env, actor, batch, noise);
  CHECK_FALSE(after_history.tape.node(after_history.state_nodes[0]).requires_grad);
  BatchState fresh = snapshot;
  TrajectoryWindow no_history = rollout_true(env, actor, fresh, noise);
  const auto g1 = policy_gradient(after_history, policy_loss(after_history, s, env, &critic), actor);
  const auto g2 = policy_gradient(no_history, policy_loss(no_history, s, env, &critic), actor);
  CHECK(g1 == g2);
}

TEST_CASE("zero learning rates leave every component unchanged") {
  for (AlgoVariant v : {AlgoVariant::dmo_shac, AlgoVariant::dmo_sapo, AlgoVariant::dmo_bptt}) {
    CAPTURE(variant_name(v));
    ExperimentConfig c = tiny_config(v);
    c.actor_lr = c.critic_lr = c.model_lr = c.entropy_lr = 0.0;
    Trainer t(c, 0);
    const auto actor0 = t.actor().params();
    const auto model0 = t.model()->net().params();
    std::vector<std::vector<Tensor>> critic0;
    if (t.critic()) {
      for (const Mlp& h : t.critic()->heads()) critic0.push_back(h.params());
    }
    const double alpha0 = t.temperature().alpha;
    for (int i = 0; i < 4; ++i) {
      const EpochMetrics m = t.train_epoch();
      CHECK(m.policy_loss.has_value());
      CHECK(m.grad_norm.has_value());
    }
    CHECK(t.actor().params() == actor0);
    CHECK(t.model()->net().params() == model0);
    for (std::size_t i = 0; i < critic0.size(); ++i) CHECK(t.critic()->heads()[i].params() == critic0[i]);
    CHECK(t.temperature().alpha == alpha0);
  }
}

TEST_CASE("every variant trains a few epochs with finite metrics") {
  for (const std::string& name : variant_names()) {
    for (const std::string& env : env_names()) {
      CAPTURE(name);
      CAPTURE(env);
      Trainer t(tiny_config(parse_variant(name), env), 1);
      while (!t.finished()) {
        const EpochMetrics m = t.train_epoch(variant_uses_model(parse_variant(name)));
        CHECK(std::isfinite(*m.policy_loss));
        CHECK(m.critic_loss.has_value() == variant_uses_critic(parse_variant(name)));
        CHECK(m.alpha.has_value() == variant_is_sapo(parse_variant(name)));
      }
      CHECK(t.env_steps() == 96);
    }
  }
}

TEST_CASE("single-row batches train") {
  ExperimentConfig c = tiny_config(AlgoVariant::dmo_bptt);
  c.num_actors = 1;
  c.total_env_steps = 64;
  Trainer t(c, 2);
  while (!t.finished()) CHECK(std::isfinite(*t.train_epoch().policy_loss));
  CHECK(t.epoch() == 16);
}

TEST_CASE("training is deterministic per seed") {
  for (AlgoVariant v : {AlgoVariant::dmo_shac, AlgoVariant::dmo_sapo, AlgoVariant::model_forward}) {
    CAPTURE(variant_name(v));
    Trainer a(tiny_config(v, "pendulum"), 3);
    Trainer b(tiny_config(v, "pendulum"), 3);
    while (!a.finished()) {
      const EpochMetrics ma = a.train_epoch(true);
      const EpochMetrics mb = b.train_epoch(true);
      CHECK(format_csv_row(ma) == format_csv_row(mb));
    }
    CHECK(a.actor().params() == b.actor().params());
  }
}

TEST_CASE("model-forward training stores only simulator transitions") {
  ExperimentConfig c = tiny_config(AlgoVariant::model_forward);
  Trainer t(c, 4);
  for (int i = 0; i < 3; ++i) t.train_epoch();
  CHECK(t.buffer()->size() == 3 * c.steps_per_epoch());
}

TEST_CASE("shac with a critic needs the critic") {
  ExperimentConfig c = tiny_config(AlgoVariant::dmo_sapo);
  c.num_critics = 1;
  CHECK_THROWS_AS(Trainer(c, 0), ConfigError);
}

TEST_CASE("non-finite parameters surface as divergence") {
  Trainer t(tiny_config(AlgoVariant::dmo_shac), 5);
  auto p = t.actor().params();
  p[0][0] = std::nan("");
  t.actor().set_params(p);
  CHECK_THROWS_AS(t.train_epoch(), DivergenceError);
}

TEST_CASE("policy evaluation") {
  ToyEnv zero(2, 1, 1.0, 0.0);
  const Actor actor = small_actor(zero, 9);
  const EvalResult r = evaluate_policy(zero, actor, 3, 0.99, 0);
  CHECK(r.mean_return == 0.0);
  CHECK(r.mean_discounted_return == 0.0);
  CHECK(r.returns.size() == 3);

  DoubleIntegrator env;
  const Actor a2 = small_actor(env, 9);
  const EvalResult e1 = evaluate_policy(env, a2, 4, 0.99, 1);
  const EvalResult e2 = evaluate_policy(env, a2, 4, 0.5, 1);
  CHECK(e1.mean_return == e2.mean_return);
  CHECK(e1.mean_discounted_return < 0.0);
  CHECK(e1.mean_discounted_return > e1.mean_return);
  CHECK(e2.mean_discounted_return > e1.mean_discounted_return);
  CHECK(evaluate_policy(env, a2, 4, 0.99, 1).returns == e1.returns);
}
