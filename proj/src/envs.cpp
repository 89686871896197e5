#include "dmo/envs.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>
#include <thread>

#include "dmo/errors.hpp"
#include "dmo/rng.hpp"

namespace dmo {

namespace {

bool finite(std::span<const double> v) {
  for (double x : v) {
    if (!std::isfinite(x)) return false;
  }
  return true;
}

NodeId column(Tape& tape, NodeId s, std::size_t c) { return tape.slice(s, c, c + 1); }

// 0.001 * sum_i a_i^2 per row
NodeId control_cost(Tape& tape, NodeId a, double weight) {
  return tape.scale(tape.row_sum(tape.square(a)), weight);
}

}  // namespace

double wrap_to_pi(double angle) {
  constexpr double two_pi = 2.0 * std::numbers::pi;
  double r = std::fmod(angle + std::numbers::pi, two_pi);
  if (r < 0.0) r += two_pi;
  // r in [0, 2 pi) maps to (-pi, pi]
  double w = r - std::numbers::pi;
  if (w == -std::numbers::pi) w = std::numbers::pi;
  return w;
}

NodeId Env::clip_on_tape(Tape& tape, NodeId a) const {
  const auto& sp = spec();
  bool uniform = true;
  for (std::size_t i = 1; i < sp.action_dim; ++i) {
    uniform = uniform && sp.action_low[i] == sp.action_low[0] && sp.action_high[i] == sp.action_high[0];
  }
  if (uniform) return tape.clamp(a, sp.action_low[0], sp.action_high[0]);
  std::vector<NodeId> parts;
  for (std::size_t i = 0; i < sp.action_dim; ++i) {
    parts.push_back(tape.clamp(column(tape, a, i), sp.action_low[i], sp.action_high[i]));
  }
  return tape.concat(parts);
}

TapeStep Env::step_on_tape(Tape& tape, NodeId s, NodeId a) const {
  const auto& sp = spec();
  const Tensor& sv = tape.value(s);
  const Tensor& av = tape.value(a);
  if (sv.cols() != sp.state_dim || av.cols() != sp.action_dim || sv.rows() != av.rows()) {
    throw ShapeError(std::string(name()) + ": state " + shape_str(sv.shape()) + " / action " +
                     shape_str(av.shape()) + " do not match env dimensions");
  }
  if (!sv.all_finite() || !av.all_finite()) {
    throw std::invalid_argument(std::string(name()) + ": non-finite state or action");
  }
  const NodeId clipped = clip_on_tape(tape, a);
  return {dynamics(tape, s, clipped), reward(tape, s, clipped)};
}

NodeId Env::reward_on_tape(Tape& tape, NodeId s, NodeId a) const {
  return reward(tape, s, clip_on_tape(tape, a));
}

StepResult Env::step(const EnvState& state, std::span<const double> action) const {
  const auto& sp = spec();
  if (state.values.size() != sp.state_dim || action.size() != sp.action_dim) {
    throw ShapeError(std::string(name()) + ": step dimension mismatch");
  }
  if (!finite(state.values) || !finite(action)) {
    throw std::invalid_argument(std::string(name()) + ": non-finite state or action");
  }
  Tape tape;
  const NodeId s = tape.constant(Tensor::matrix(1, sp.state_dim, state.values));
  const NodeId a = tape.constant(Tensor::matrix(1, sp.action_dim, {action.begin(), action.end()}));
  const TapeStep ts = step_on_tape(tape, s, a);
  StepResult out;
  out.next.values = tape.value(ts.next).storage();
  out.next.steps_elapsed = state.steps_elapsed + 1;
  out.reward = tape.value(ts.reward).item();
  out.done = state.steps_elapsed + 1 >= sp.max_episode_steps;
  return out;
}

void Env::reset_row(std::uint64_t seed, std::size_t row, std::uint64_t episode, std::span<double> state) const {
  CounterRng rng(seed, StreamRole::reset, row, episode);
  sample_initial(rng, state);
}

EnvState Env::reset(std::uint64_t seed) const {
  EnvState s;
  s.values.assign(spec().state_dim, 0.0);
  reset_row(seed, 0, 0, s.values);
  return s;
}

BatchState Env::make_batch(std::size_t num_rows, std::uint64_t seed) const {
  if (num_rows == 0) throw std::invalid_argument("make_batch: need at least one row");
  BatchState b;
  b.states = Tensor({num_rows, spec().state_dim});
  b.steps_elapsed.assign(num_rows, 0);
  b.episodes.assign(num_rows, 0);
  b.seed = seed;
  for (std::size_t r = 0; r < num_rows; ++r) reset_row(seed, r, 0, b.states.row(r));
  return b;
}

BatchStepResult Env::batch_step(BatchState& batch, const Tensor& actions, std::size_t threads) const {
  const auto& sp = spec();
  const std::size_t n = batch.size();
  if (actions.rank() != 2 || actions.shape()[0] != n || actions.shape()[1] != sp.action_dim) {
    throw ShapeError(std::string(name()) + ": batch_step actions " + shape_str(actions.shape()) +
                     " expected (" + std::to_string(n) + "," + std::to_string(sp.action_dim) + ")");
  }
  BatchStepResult out;
  out.terminal_states = Tensor({n, sp.state_dim});
  out.rewards.assign(n, 0.0);
  out.dones.assign(n, 0);

  auto run_rows = [&](std::size_t lo, std::size_t hi) {
    const std::size_t m = hi - lo;
    Tensor s({m, sp.state_dim});
    Tensor a({m, sp.action_dim});
    for (std::size_t r = 0; r < m; ++r) {
      std::copy(batch.states.row(lo + r).begin(), batch.states.row(lo + r).end(), s.row(r).begin());
      std::copy(actions.row(lo + r).begin(), actions.row(lo + r).end(), a.row(r).begin());
    }
    Tape tape;
    const TapeStep ts = step_on_tape(tape, tape.constant(std::move(s)), tape.constant(std::move(a)));
    const Tensor& next = tape.value(ts.next);
    const Tensor& rew = tape.value(ts.reward);
    for (std::size_t r = 0; r < m; ++r) {
      std::copy(next.row(r).begin(), next.row(r).end(), out.terminal_states.row(lo + r).begin());
      out.rewards[lo + r] = rew[r];
    }
  };

  const std::size_t workers = std::min<std::size_t>(std::max<std::size_t>(threads, 1), n);
  if (workers <= 1) {
    run_rows(0, n);
  } else {
    std::vector<std::thread> pool;
    const std::size_t chunk = (n + workers - 1) / workers;
    for (std::size_t lo = 0; lo < n; lo += chunk) pool.emplace_back(run_rows, lo, std::min(n, lo + chunk));
    for (auto& t : pool) t.join();
  }

  out.next_states = out.terminal_states;
  for (std::size_t r = 0; r < n; ++r) {
    batch.steps_elapsed[r] += 1;
    if (batch.steps_elapsed[r] >= sp.max_episode_steps) {
      out.dones[r] = 1;
      batch.steps_elapsed[r] = 0;
      batch.episodes[r] += 1;
      reset_row(batch.seed, r, batch.episodes[r], out.next_states.row(r));
    }
  }
  batch.states = out.next_states;
  return out;
}

Tensor Env::features_of(const Tensor& states) const {
  Tape tape;
  return tape.value(features(tape, tape.constant(states)));
}

Tensor Env::clip_actions(const Tensor& actions) const {
  Tape tape;
  return tape.value(clip_on_tape(tape, tape.constant(actions)));
}

// ---------------------------------------------------------------------------

DoubleIntegrator::DoubleIntegrator() {
  spec_.state_dim = 2;
  spec_.action_dim = 1;
  spec_.dt = 0.05;
  spec_.action_low = {-5.0};
  spec_.action_high = {5.0};
  spec_.max_episode_steps = 192;
}

NodeId DoubleIntegrator::dynamics(Tape& tape, NodeId s, NodeId a) const {
  const NodeId x = column(tape, s, 0);
  const NodeId v = column(tape, s, 1);
  const NodeId v_next = tape.add(v, tape.scale(a, spec_.dt));
  const NodeId x_next = tape.add(x, tape.scale(v_next, spec_.dt));
  const NodeId parts[2] = {x_next, v_next};
  return tape.concat(parts);
}

NodeId DoubleIntegrator::reward(Tape& tape, NodeId s, NodeId a) const {
  const NodeId x = column(tape, s, 0);
  const NodeId v = column(tape, s, 1);
  const NodeId cost = tape.add(tape.add(tape.square(x), tape.scale(tape.square(v), 0.1)), control_cost(tape, a, 0.001));
  return tape.neg(cost);
}

void DoubleIntegrator::sample_initial(CounterRng& rng, std::span<double> state) const {
  state[0] = rng.uniform(-1.0, 1.0);
  state[1] = rng.uniform(-1.0, 1.0);
}

// ---------------------------------------------------------------------------

Pendulum::Pendulum() {
  spec_.state_dim = 2;
  spec_.action_dim = 1;
  spec_.dt = 0.05;
  spec_.action_low = {-10.0};
  spec_.action_high = {10.0};
  spec_.max_episode_steps = 192;
}

NodeId Pendulum::dynamics(Tape& tape, NodeId s, NodeId a) const {
  const NodeId th = column(tape, s, 0);
  const NodeId thd = column(tape, s, 1);
  const NodeId acc = tape.add(tape.scale(tape.sin(th), -kGravity / kLength),
                              tape.scale(a, 1.0 / (kMass * kLength * kLength)));
  const NodeId thd_next = tape.add(thd, tape.scale(acc, spec_.dt));
  const NodeId th_next = tape.add(th, tape.scale(thd_next, spec_.dt));
  const NodeId parts[2] = {th_next, thd_next};
  return tape.concat(parts);
}

NodeId Pendulum::reward(Tape& tape, NodeId s, NodeId a) const {
  const NodeId th = column(tape, s, 0);
  const NodeId thd = column(tape, s, 1);
  const NodeId angle = tape.scale(tape.add_scalar(tape.cos(th), 1.0), kAngleWeight);
  const NodeId cost = tape.add(tape.add(angle, tape.scale(tape.square(thd), 0.1)), control_cost(tape, a, 0.001));
  return tape.neg(cost);
}

NodeId Pendulum::features(Tape& tape, NodeId s) const {
  const NodeId th = column(tape, s, 0);
  const NodeId parts[3] = {tape.cos(th), tape.sin(th), column(tape, s, 1)};
  return tape.concat(parts);
}

void Pendulum::sample_initial(CounterRng& rng, std::span<double> state) const {
  // pi - 2 pi u with u in [0, 1) covers (-pi, pi]
  state[0] = std::numbers::pi - 2.0 * std::numbers::pi * rng.uniform();
  state[1] = rng.uniform(-1.0, 1.0);
}

// ---------------------------------------------------------------------------

CartPole::CartPole() {
  spec_.state_dim = 4;
  spec_.action_dim = 1;
  spec_.dt = 0.05;
  spec_.action_low = {-10.0};
  spec_.action_high = {10.0};
  spec_.max_episode_steps = 192;
}

NodeId CartPole::dynamics(Tape& tape, NodeId s, NodeId a) const {
  constexpr double total = kCartMass + kPoleMass;
  constexpr double pml = kPoleMass * kHalfLength;
  const NodeId x = column(tape, s, 0);
  const NodeId xd = column(tape, s, 1);
  const NodeId th = column(tape, s, 2);
  const NodeId thd = column(tape, s, 3);
  const NodeId sn = tape.sin(th);
  const NodeId cs = tape.cos(th);
  // temp = (F - m_p l thd^2 sin) / M
  const NodeId temp = tape.scale(tape.sub(a, tape.scale(tape.mul(tape.square(thd), sn), pml)), 1.0 / total);
  // thdd = (-g sin + cos temp) / (l (4/3 - m_p cos^2 / M))
  const NodeId num = tape.add(tape.scale(sn, -kGravity), tape.mul(cs, temp));
  const NodeId den = tape.scale(tape.add_scalar(tape.scale(tape.square(cs), -kPoleMass / total), 4.0 / 3.0), kHalfLength);
  const NodeId thdd = tape.div(num, den);
  // xdd = temp + m_p l thdd cos / M
  const NodeId xdd = tape.add(temp, tape.scale(tape.mul(thdd, cs), pml / total));
  const NodeId xd_next = tape.add(xd, tape.scale(xdd, spec_.dt));
  const NodeId x_next = tape.add(x, tape.scale(xd_next, spec_.dt));
  const NodeId thd_next = tape.add(thd, tape.scale(thdd, spec_.dt));
  const NodeId th_next = tape.add(th, tape.scale(thd_next, spec_.dt));
  const NodeId parts[4] = {x_next, xd_next, th_next, thd_next};
  return tape.concat(parts);
}

NodeId CartPole::reward(Tape& tape, NodeId s, NodeId a) const {
  const NodeId x = column(tape, s, 0);
  const NodeId th = column(tape, s, 2);
  const NodeId upright = tape.add_scalar(tape.cos(th), 1.0);
  const NodeId cost = tape.add(tape.add(upright, tape.scale(tape.square(x), 0.01)), control_cost(tape, a, 0.001));
  return tape.neg(cost);
}

NodeId CartPole::features(Tape& tape, NodeId s) const {
  const NodeId th = column(tape, s, 2);
  const NodeId parts[5] = {column(tape, s, 0), column(tape, s, 1), tape.cos(th), tape.sin(th), column(tape, s, 3)};
  return tape.concat(parts);
}

void CartPole::sample_initial(CounterRng& rng, std::span<double> state) const {
  for (double& v : state) v = rng.uniform(-0.1, 0.1);
}

// ---------------------------------------------------------------------------

std::unique_ptr<Env> make_env(std::string_view name) {
  if (name == "double_integrator") return std::make_unique<DoubleIntegrator>();
  if (name == "pendulum" || name == "pendulum_swingup") return std::make_unique<Pendulum>();
  if (name == "cartpole" || name == "cartpole_swingup") return std::make_unique<CartPole>();
  throw ConfigError("unknown environment '" + std::string(name) + "' (expected double_integrator, pendulum or cartpole)");
}

std::vector<std::string> env_names() { return {"double_integrator", "pendulum", "cartpole"}; }

}  // namespace dmo
