#include "dmo/algorithms.hpp"

#include <cmath>
#include <stdexcept>

#include "dmo/diagnostics.hpp"
#include "dmo/errors.hpp"

namespace dmo {

namespace {

Tensor stack_rows(const std::vector<Tensor>& parts, std::size_t begin, std::size_t end) {
  std::size_t rows = 0;
  for (std::size_t i = begin; i < end; ++i) rows += parts[i].rows();
  const std::size_t cols = parts[begin].cols();
  Tensor out({rows, cols});
  std::size_t r = 0;
  for (std::size_t i = begin; i < end; ++i) {
    for (std::size_t k = 0; k < parts[i].rows(); ++k, ++r) {
      std::copy(parts[i].row(k).begin(), parts[i].row(k).end(), out.row(r).begin());
    }
  }
  return out;
}

TrajectoryWindow rollout(GradientPath path, const Env& env, const TransitionModel* model, const Actor& actor,
                         BatchState& batch, std::span<const Tensor> noise, std::size_t threads,
                         ReplayBuffer* buffer) {
  const auto& sp = env.spec();
  const std::size_t H = noise.size();
  const std::size_t N = batch.size();
  if (H == 0) throw std::invalid_argument("rollout: horizon must be at least 1");
  if (path != GradientPath::simulator && model == nullptr) throw std::invalid_argument("rollout: model required");
  for (const Tensor& e : noise) {
    if (e.rank() != 2 || e.rows() != N || e.cols() != sp.action_dim) {
      throw ShapeError("rollout: noise " + shape_str(e.shape()) + " expected (" + std::to_string(N) + "," +
                       std::to_string(sp.action_dim) + ")");
    }
  }
  if (!batch.states.all_finite()) throw DivergenceError("rollout: non-finite initial state");

  TrajectoryWindow w;
  w.horizon = H;
  w.num_actors = N;
  w.rewards = Tensor({H, N});
  w.dones.assign(H * N, 0);
  Tape& tape = w.tape;
  w.actor = actor.bind(tape);

  NodeId s = tape.constant(batch.states);
  w.state_nodes.push_back(s);
  w.states.push_back(batch.states);

  for (std::size_t h = 0; h < H; ++h) {
    const NodeId feats = env.features(tape, s);
    const Actor::TapeAction act = actor.act_on_tape(tape, w.actor, feats, noise[h]);
    w.action_nodes.push_back(act.action);
    w.entropy_nodes.push_back(actor.entropy_on_tape(tape, act, N));
    const NodeId a = env.clip_on_tape(tape, act.action);
    const Tensor applied = tape.value(a);
    if (!applied.all_finite()) throw DivergenceError("rollout: non-finite action at step " + std::to_string(h));

    NodeId terminal{};
    NodeId reward{};
    Tensor terminal_value;
    Tensor next_value;
    std::vector<std::uint8_t> dones(N, 0);

    if (path == GradientPath::model) {
      reward = env.reward_on_tape(tape, s, a);
      terminal = model->mean_on_tape(tape, s, a);
      terminal_value = tape.value(terminal);
      next_value = terminal_value;
      for (std::size_t r = 0; r < N; ++r) {
        batch.steps_elapsed[r] += 1;
        if (batch.steps_elapsed[r] >= sp.max_episode_steps) {
          dones[r] = 1;
          batch.steps_elapsed[r] = 0;
          batch.episodes[r] += 1;
          env.reset_row(batch.seed, r, batch.episodes[r], next_value.row(r));
        }
      }
      batch.states = next_value;
    } else {
      BatchStepResult res;
      if (path == GradientPath::simulator) {
        const TapeStep ts = env.step_on_tape(tape, s, a);
        terminal = ts.next;
        reward = ts.reward;
        res = env.batch_step(batch, applied, threads);
      } else {
        reward = env.reward_on_tape(tape, s, a);
        res = env.batch_step(batch, applied, threads);
        terminal = tape.grad_swap(model->mean_on_tape(tape, s, a), res.terminal_states);
      }
      terminal_value = std::move(res.terminal_states);
      next_value = std::move(res.next_states);
      dones = std::move(res.dones);
      if (buffer) {
        const Tensor& rv = tape.value(reward);
        buffer->push_batch(w.states[h], applied, terminal_value, rv.data(), dones);
      }
    }
    if (!terminal_value.all_finite()) {
      throw DivergenceError("rollout: non-finite state after step " + std::to_string(h));
    }

    const Tensor& rv = tape.value(reward);
    bool any_done = false;
    for (std::size_t r = 0; r < N; ++r) {
      w.rewards.at(h, r) = rv[r];
      w.dones[h * N + r] = dones[r];
      any_done = any_done || dones[r];
    }
    w.reward_nodes.push_back(reward);
    w.terminal_nodes.push_back(terminal);
    w.terminal_states.push_back(terminal_value);
    w.actions.push_back(applied);

    if (any_done) {
      std::vector<std::uint8_t> keep(N);
      for (std::size_t r = 0; r < N; ++r) keep[r] = !dones[r];
      s = tape.row_select(keep, terminal, tape.constant(next_value));
    } else {
      s = terminal;
    }
    w.state_nodes.push_back(s);
    w.states.push_back(std::move(next_value));
  }
  return w;
}

}  // namespace

std::vector<Tensor> window_noise(std::uint64_t seed, std::uint64_t epoch, std::size_t horizon, std::size_t rows,
                                 std::size_t action_dim) {
  CounterRng rng(seed, StreamRole::action_noise, epoch);
  std::vector<Tensor> out;
  out.reserve(horizon);
  for (std::size_t h = 0; h < horizon; ++h) {
    Tensor e({rows, action_dim});
    for (double& v : e.storage()) v = rng.normal();
    out.push_back(std::move(e));
  }
  return out;
}

TrajectoryWindow rollout_true(const Env& env, const Actor& actor, BatchState& batch, std::span<const Tensor> noise,
                              std::size_t threads, ReplayBuffer* buffer) {
  return rollout(GradientPath::simulator, env, nullptr, actor, batch, noise, threads, buffer);
}

TrajectoryWindow rollout_decoupled(const Env& env, const TransitionModel& model, const Actor& actor,
                                   BatchState& batch, std::span<const Tensor> noise, std::size_t threads,
                                   ReplayBuffer* buffer) {
  return rollout(GradientPath::decoupled, env, &model, actor, batch, noise, threads, buffer);
}

TrajectoryWindow rollout_model_forward(const Env& env, const TransitionModel& model, const Actor& actor,
                                       BatchState batch, std::span<const Tensor> noise) {
  return rollout(GradientPath::model, env, &model, actor, batch, noise, 1, nullptr);
}

NodeId policy_loss(TrajectoryWindow& w, const LossSettings& settings, const Env& env, const Critic* critic) {
  const AlgoVariant v = settings.variant;
  const bool use_critic = variant_uses_critic(v);
  if (use_critic && critic == nullptr) {
    throw ConfigError("policy_loss: variant " + variant_name(v) + " needs a critic for the bootstrap");
  }
  const bool sapo = variant_is_sapo(v);
  const double gamma = variant_is_bptt(v) ? settings.bptt_discount : settings.gamma;
  const std::size_t H = w.horizon;
  const std::size_t N = w.num_actors;
  Tape& tape = w.tape;

  std::vector<double> disc(N, 1.0);
  NodeId total{};
  bool have = false;
  auto accumulate = [&](NodeId per_row, const std::vector<double>& weights) {
    const NodeId term = tape.sum(tape.mul(per_row, tape.constant(Tensor::matrix(N, 1, weights))));
    total = have ? tape.add(total, term) : term;
    have = true;
  };

  for (std::size_t h = 0; h < H; ++h) {
    NodeId r = w.reward_nodes[h];
    if (sapo && settings.alpha != 0.0) r = tape.add(r, tape.scale(w.entropy_nodes[h], settings.alpha));
    accumulate(r, disc);
    for (double& d : disc) d *= gamma;
    bool any_done = false;
    for (std::size_t k = 0; k < N; ++k) any_done = any_done || w.dones[h * N + k];
    if (!any_done) continue;
    if (use_critic && settings.bootstrap_on_timeout) {
      std::vector<double> wd(N, 0.0);
      for (std::size_t k = 0; k < N; ++k) wd[k] = w.dones[h * N + k] ? disc[k] : 0.0;
      accumulate(critic->value_on_tape(tape, env.features(tape, w.terminal_nodes[h]), true), wd);
    }
    for (std::size_t k = 0; k < N; ++k) {
      if (w.dones[h * N + k]) disc[k] = 1.0;
    }
  }
  if (use_critic) accumulate(critic->value_on_tape(tape, env.features(tape, w.state_nodes[H]), true), disc);
  return tape.scale(total, -1.0 / static_cast<double>(N));
}

std::vector<double> policy_gradient(TrajectoryWindow& w, NodeId loss, const Actor& actor) {
  return flatten(actor.gather(w.tape.backward(loss), w.actor));
}

GradientTriplet gradient_triplet(const Env& env, const TransitionModel& model, const Actor& actor,
                                 const Critic* critic, const BatchState& batch, std::span<const Tensor> noise,
                                 const LossSettings& settings) {
  GradientTriplet out;
  {
    BatchState b = batch;
    TrajectoryWindow w = rollout_true(env, actor, b, noise);
    out.g_true = policy_gradient(w, policy_loss(w, settings, env, critic), actor);
  }
  {
    BatchState b = batch;
    TrajectoryWindow w = rollout_decoupled(env, model, actor, b, noise);
    out.g_dmo = policy_gradient(w, policy_loss(w, settings, env, critic), actor);
  }
  {
    TrajectoryWindow w = rollout_model_forward(env, model, actor, batch, noise);
    out.g_forward = policy_gradient(w, policy_loss(w, settings, env, critic), actor);
  }
  return out;
}

// ---------------------------------------------------------------------------

Trainer::Trainer(ExperimentConfig cfg, std::uint64_t seed) : cfg_(std::move(cfg)), seed_(seed) {
  if (variant_is_sapo(cfg_.variant) && cfg_.resolved_num_critics() < 2) {
    throw ConfigError("num_critics: dmo_sapo needs an ensemble of at least 2 critics");
  }
  env_ = make_env(cfg_.env);
  const auto& sp = env_->spec();
  const AdamConfig adam{cfg_.adam_beta1, cfg_.adam_beta2, 1e-8, cfg_.weight_decay};

  CounterRng actor_rng(seed_, StreamRole::init, 0);
  ActorConfig ac;
  ac.hidden = cfg_.actor_hidden;
  ac.act = parse_activation(cfg_.resolved_actor_activation());
  ac.state_dependent_std = variant_is_sapo(cfg_.variant);
  ac.init_log_std = cfg_.actor_init_log_std;
  ac.adam = adam;
  actor_ = std::make_unique<Actor>(*env_, ac, actor_rng);

  if (variant_uses_critic(cfg_.variant)) {
    CounterRng critic_rng(seed_, StreamRole::init, 1);
    CriticConfig cc;
    cc.hidden = cfg_.critic_hidden;
    cc.act = parse_activation(cfg_.resolved_critic_activation());
    cc.ensemble = cfg_.resolved_num_critics();
    cc.use_target = !variant_is_sapo(cfg_.variant);
    cc.tau = cfg_.tau;
    cc.minibatches = cfg_.critic_minibatches;
    cc.adam = adam;
    critic_ = std::make_unique<Critic>(env_->feature_dim(), cc, critic_rng);
  }
  if (variant_uses_model(cfg_.variant)) {
    CounterRng model_rng(seed_, StreamRole::init, 2);
    DynamicsModelConfig mc;
    mc.hidden = cfg_.model_hidden;
    mc.act = parse_activation(cfg_.model_activation);
    mc.adam = adam;
    model_ = std::make_unique<DynamicsModel>(*env_, mc, model_rng);
    buffer_ = std::make_unique<ReplayBuffer>(cfg_.buffer_capacity, sp.state_dim, sp.action_dim);
  }
  temperature_.alpha = cfg_.alpha_init;
  temperature_.target_entropy = cfg_.target_entropy(sp.action_dim);
  temperature_.lr = cfg_.entropy_lr;

  batch_ = env_->make_batch(cfg_.num_actors, seed_);
  running_return_.assign(cfg_.num_actors, 0.0);
  last_return_.assign(cfg_.num_actors, 0.0);
  has_return_.assign(cfg_.num_actors, 0);
}

double Trainer::lr_factor() const {
  if (cfg_.lr_schedule != "linear") return 1.0;
  const std::uint64_t total = cfg_.total_epochs();
  if (total == 0) return 1.0;
  return 1.0 - static_cast<double>(epoch_) / static_cast<double>(total);
}

LossSettings Trainer::loss_settings() const {
  LossSettings s;
  s.variant = cfg_.variant;
  s.gamma = cfg_.gamma;
  s.bptt_discount = cfg_.bptt_discount;
  s.bootstrap_on_timeout = cfg_.bootstrap_on_timeout;
  s.alpha = variant_is_sapo(cfg_.variant) ? temperature_.alpha : 0.0;
  return s;
}

EpochMetrics Trainer::train_epoch(bool triplet) {
  const auto t0 = std::chrono::steady_clock::now();
  const auto& sp = env_->spec();
  const std::size_t H = cfg_.horizon;
  const std::size_t N = cfg_.num_actors;
  const double f = lr_factor();
  const LossSettings settings = loss_settings();
  EpochMetrics m;

  // model fit on everything collected so far
  if (model_ && cfg_.model_minibatches > 0 && buffer_->size() >= cfg_.model_batch_size) {
    CounterRng rng(seed_, StreamRole::model_sample, epoch_);
    m.model_nll = model_->update(*buffer_, cfg_.model_batch_size, cfg_.model_minibatches, cfg_.model_lr, rng).mean_nll;
  }

  const std::vector<Tensor> noise = window_noise(seed_, epoch_, H, N, sp.action_dim);
  const BatchState start = batch_;
  TrajectoryWindow w = variant_is_decoupled(cfg_.variant)
                           ? rollout_decoupled(*env_, *model_, *actor_, batch_, noise, cfg_.threads, buffer_.get())
                           : rollout_true(*env_, *actor_, batch_, noise, cfg_.threads, buffer_.get());
  std::optional<TrajectoryWindow> forward;
  if (cfg_.variant == AlgoVariant::model_forward) {
    forward.emplace(rollout_model_forward(*env_, *model_, *actor_, start, noise));
  }
  TrajectoryWindow& lw = forward ? *forward : w;

  const NodeId loss = policy_loss(lw, settings, *env_, critic_.get());
  m.policy_loss = lw.tape.value(loss).item();
  std::vector<Tensor> grads = actor_->gather(lw.tape.backward(loss), lw.actor);

  if (triplet && model_) {
    std::vector<double> g_dmo;
    if (variant_is_decoupled(cfg_.variant)) {
      g_dmo = flatten(grads);
    } else {
      BatchState b = start;
      TrajectoryWindow wd = rollout_decoupled(*env_, *model_, *actor_, b, noise);
      g_dmo = policy_gradient(wd, policy_loss(wd, settings, *env_, critic_.get()), *actor_);
    }
    BatchState b = start;
    TrajectoryWindow wt = rollout_true(*env_, *actor_, b, noise);
    const std::vector<double> g_true = policy_gradient(wt, policy_loss(wt, settings, *env_, critic_.get()), *actor_);
    TrajectoryWindow wf = rollout_model_forward(*env_, *model_, *actor_, start, noise);
    const std::vector<double> g_fwd = policy_gradient(wf, policy_loss(wf, settings, *env_, critic_.get()), *actor_);
    m.cos_dmo_true = cosine_similarity(g_dmo, g_true).value;
    m.cos_fwd_true = cosine_similarity(g_fwd, g_true).value;
    last_triplet_ = GradientTriplet{g_true, g_dmo, g_fwd};
  }

  m.grad_norm = actor_->apply_gradients(std::move(grads), cfg_.actor_lr * f, cfg_.grad_clip);

  // critic regression on simulator states of the real window
  if (critic_) {
    Tensor rewards = w.rewards;
    if (variant_is_sapo(cfg_.variant)) {
      for (std::size_t h = 0; h < H; ++h) {
        const Tensor& ent = w.tape.value(w.entropy_nodes[h]);
        for (std::size_t r = 0; r < N; ++r) rewards.at(h, r) += temperature_.alpha * ent[r];
      }
    }
    Tensor values({H + 1, N});
    for (std::size_t h = 0; h <= H; ++h) {
      const Tensor v = critic_->values(env_->features_of(w.states[h]), true);
      for (std::size_t r = 0; r < N; ++r) values.at(h, r) = v[r];
    }
    if (cfg_.bootstrap_on_timeout) {
      for (std::size_t h = 0; h < H; ++h) {
        bool any = false;
        for (std::size_t r = 0; r < N; ++r) any = any || w.dones[h * N + r];
        if (!any) continue;
        const Tensor vt = critic_->values(env_->features_of(w.terminal_states[h]), true);
        for (std::size_t r = 0; r < N; ++r) {
          if (w.dones[h * N + r]) rewards.at(h, r) += cfg_.gamma * vt[r];
        }
      }
    }
    const ValueTargetBatch tb = td_lambda_targets(rewards, values, w.dones, cfg_.gamma, cfg_.lambda);
    const Tensor feats = env_->features_of(stack_rows(w.states, 0, H));
    Tensor targets({H * N});
    for (std::size_t i = 0; i < H * N; ++i) targets[i] = tb.targets[i];
    CounterRng rng(seed_, StreamRole::critic_shuffle, epoch_);
    m.critic_loss = critic_->update(feats, targets, cfg_.critic_lr * f, cfg_.critic_mini_epochs, rng).mean_loss;
  }

  if (variant_is_sapo(cfg_.variant)) {
    double total = 0.0;
    for (std::size_t h = 0; h < H; ++h) {
      for (double e : w.tape.value(w.entropy_nodes[h]).data()) total += e;
    }
    temperature_update(temperature_, total / static_cast<double>(H * N));
    m.alpha = temperature_.alpha;
  }

  if (model_) {
    model_->observe(stack_rows(w.states, 0, H), stack_rows(w.actions, 0, H), stack_rows(w.terminal_states, 0, H));
  }

  for (std::size_t h = 0; h < H; ++h) {
    for (std::size_t r = 0; r < N; ++r) {
      running_return_[r] += w.rewards.at(h, r);
      if (w.dones[h * N + r]) {
        last_return_[r] = running_return_[r];
        has_return_[r] = 1;
        running_return_[r] = 0.0;
      }
    }
  }
  double sum = 0.0;
  std::size_t count = 0;
  for (std::size_t r = 0; r < N; ++r) {
    if (has_return_[r]) {
      sum += last_return_[r];
      ++count;
    }
  }
  if (count) m.episodic_return = sum / static_cast<double>(count);

  epoch_ += 1;
  env_steps_ += cfg_.steps_per_epoch();
  m.epoch = epoch_;
  m.env_steps = env_steps_;
  wallclock_ += std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  if (cfg_.log_wallclock) m.wallclock_s = wallclock_;

  for (const auto& v : {m.episodic_return, m.policy_loss, m.critic_loss, m.model_nll, m.grad_norm, m.cos_dmo_true,
                        m.cos_fwd_true, m.alpha}) {
    if (v && !std::isfinite(*v)) throw DivergenceError("non-finite metric at epoch " + std::to_string(epoch_));
  }
  return m;
}

Archive Trainer::to_archive() const {
  Archive ar;
  ar.put_text("config", serialize_config(cfg_));
  ar.put_u64("seed", seed_);
  ar.put_u64("epoch", epoch_);
  ar.put_u64("env_steps", env_steps_);
  ar.put("batch.states", batch_.states);
  Tensor steps({batch_.size()});
  Tensor episodes({batch_.size()});
  Tensor has({batch_.size()});
  for (std::size_t r = 0; r < batch_.size(); ++r) {
    steps[r] = batch_.steps_elapsed[r];
    episodes[r] = static_cast<double>(batch_.episodes[r]);
    has[r] = has_return_[r];
  }
  ar.put("batch.steps_elapsed", steps);
  ar.put("batch.episodes", episodes);
  ar.put_u64("batch.seed", batch_.seed);
  ar.put("returns.running", Tensor::vector(running_return_));
  ar.put("returns.last", Tensor::vector(last_return_));
  ar.put("returns.has", has);
  ar.put_scalar("alpha", temperature_.alpha);
  ar.put_scalar("wallclock", wallclock_);
  actor_->save(ar, "actor");
  if (critic_) critic_->save(ar, "critic");
  if (model_) model_->save(ar, "model");
  if (buffer_) buffer_->save(ar, "buffer");
  return ar;
}

void Trainer::restore(const Archive& ar) {
  if (ar.get_u64("seed") != seed_) throw IoError("checkpoint seed does not match the trainer");
  epoch_ = ar.get_u64("epoch");
  env_steps_ = ar.get_u64("env_steps");
  const Tensor& states = ar.get("batch.states");
  if (states.shape() != batch_.states.shape()) throw IoError("checkpoint batch shape does not match the config");
  batch_.states = states;
  const Tensor& steps = ar.get("batch.steps_elapsed");
  const Tensor& episodes = ar.get("batch.episodes");
  const Tensor& has = ar.get("returns.has");
  for (std::size_t r = 0; r < batch_.size(); ++r) {
    batch_.steps_elapsed[r] = static_cast<std::uint32_t>(steps[r]);
    batch_.episodes[r] = static_cast<std::uint64_t>(episodes[r]);
    has_return_[r] = static_cast<std::uint8_t>(has[r]);
  }
  batch_.seed = ar.get_u64("batch.seed");
  running_return_ = ar.get("returns.running").storage();
  last_return_ = ar.get("returns.last").storage();
  temperature_.alpha = ar.get_scalar("alpha");
  wallclock_ = ar.get_scalar("wallclock");
  actor_->load(ar, "actor");
  if (critic_) critic_->load(ar, "critic");
  if (model_) model_->load(ar, "model");
  if (buffer_) buffer_->load(ar, "buffer");
}

Trainer Trainer::load(const std::string& path) {
  const Archive ar = Archive::read(path);
  Trainer t(parse_config_text(ar.get_text("config"), path, false), ar.get_u64("seed"));
  t.restore(ar);
  return t;
}

EvalResult evaluate_policy(const Env& env, const Actor& actor, std::size_t episodes, double gamma,
                           std::uint64_t seed) {
  if (episodes == 0) throw std::invalid_argument("evaluate_policy: need at least one episode");
  const auto& sp = env.spec();
  if (actor.action_dim() != sp.action_dim) throw ShapeError("evaluate_policy: actor does not match env actions");
  Tensor states({episodes, sp.state_dim});
  for (std::size_t e = 0; e < episodes; ++e) {
    CounterRng rng(seed, StreamRole::eval, e);
    env.sample_initial(rng, states.row(e));
  }
  EvalResult out;
  out.returns.assign(episodes, 0.0);
  std::vector<double> discounted(episodes, 0.0);
  double g = 1.0;
  for (std::uint32_t t = 0; t < sp.max_episode_steps; ++t) {
    const Tensor a = actor.mean_action(env.features_of(states));
    Tape tape;
    const TapeStep ts = env.step_on_tape(tape, tape.constant(states), tape.constant(a));
    const Tensor& r = tape.value(ts.reward);
    for (std::size_t e = 0; e < episodes; ++e) {
      out.returns[e] += r[e];
      discounted[e] += g * r[e];
    }
    g *= gamma;
    states = tape.value(ts.next);
    if (!states.all_finite()) throw DivergenceError("evaluate_policy: non-finite state");
  }
  for (std::size_t e = 0; e < episodes; ++e) {
    out.mean_return += out.returns[e] / static_cast<double>(episodes);
    out.mean_discounted_return += discounted[e] / static_cast<double>(episodes);
    out.final_states.emplace_back(states.row(e).begin(), states.row(e).end());
  }
  return out;
}

}  // namespace dmo
