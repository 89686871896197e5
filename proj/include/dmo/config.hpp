#pragma once

// Experiment configuration: a flat `key = value` text format with `#`
// comments. Unknown keys and out-of-range values are rejected with the key
// name and line number.

#include <cstdint>
#include <string>
#include <vector>

namespace dmo {

enum class AlgoVariant { dmo_bptt, dmo_shac, dmo_sapo, shac_true, bptt_true, model_forward };

AlgoVariant parse_variant(const std::string& name);
std::string variant_name(AlgoVariant v);
std::vector<std::string> variant_names();

bool variant_uses_model(AlgoVariant v);
bool variant_uses_critic(AlgoVariant v);
bool variant_is_sapo(AlgoVariant v);
bool variant_is_bptt(AlgoVariant v);
bool variant_is_decoupled(AlgoVariant v);

struct ExperimentConfig {
  AlgoVariant variant = AlgoVariant::dmo_shac;
  std::string env = "pendulum";
  std::vector<std::uint64_t> seeds{0, 1, 2, 3, 4};
  std::size_t num_actors = 64;
  std::size_t horizon = 16;
  std::uint64_t total_env_steps = 200000;

  double gamma = 0.99;
  double lambda = 0.95;
  double tau = 0.8;  // weight of the online critic in the target update
  double alpha_init = 1.0;
  double target_entropy_factor = 0.5;  // target entropy = -factor * action_dim
  double bptt_discount = 1.0;
  bool bootstrap_on_timeout = true;

  double actor_lr = 2e-3;
  double critic_lr = 5e-4;
  double model_lr = 1e-3;
  double entropy_lr = 5e-3;
  std::string lr_schedule = "linear";  // linear | constant
  double grad_clip = 1.0;
  double adam_beta1 = 0.7;
  double adam_beta2 = 0.95;
  double weight_decay = 0.0;

  std::vector<std::size_t> actor_hidden{128, 64, 32};
  std::vector<std::size_t> critic_hidden{64, 64};
  std::vector<std::size_t> model_hidden{128, 128};
  std::string actor_activation = "auto";  // elu, or silu for dmo_sapo
  std::string critic_activation = "auto";
  std::string model_activation = "silu";
  double actor_init_log_std = -1.0;
  std::size_t num_critics = 0;  // 0: one head, or two for dmo_sapo

  std::size_t critic_mini_epochs = 16;
  std::size_t critic_minibatches = 4;
  std::size_t model_batch_size = 256;
  std::size_t model_minibatches = 8;
  std::size_t buffer_capacity = 1000000;

  std::size_t report_every = 5;
  std::size_t checkpoint_every = 50;
  std::size_t eval_episodes = 20;
  std::size_t threads = 1;
  bool log_wallclock = false;
  std::string out_dir = "runs";

  // Values after resolving the automatic choices.
  std::string resolved_actor_activation() const;
  std::string resolved_critic_activation() const;
  std::size_t resolved_num_critics() const;
  double target_entropy(std::size_t action_dim) const { return -target_entropy_factor * static_cast<double>(action_dim); }
  std::uint64_t steps_per_epoch() const { return static_cast<std::uint64_t>(num_actors) * horizon; }
  std::uint64_t total_epochs() const;

  bool operator==(const ExperimentConfig&) const = default;
};

// Throws ConfigError naming the offending key (and line when known).
// `check` runs validate() on the result.
ExperimentConfig parse_config_text(const std::string& text, const std::string& origin = "<config>",
                                   bool check = true);
ExperimentConfig load_config(const std::string& path);
// Applies `key = value` on top of an existing config.
void apply_override(ExperimentConfig& cfg, const std::string& key, const std::string& value);
// Cross-field and range checks.
void validate(const ExperimentConfig& cfg);
// Every key, one per line, in a form parse_config_text reads back identically.
std::string serialize_config(const ExperimentConfig& cfg);
std::vector<std::string> config_keys();

}  // namespace dmo
