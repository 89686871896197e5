#include "dmo/config.hpp"

#include <cerrno>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

#include "dmo/envs.hpp"
#include "dmo/errors.hpp"
#include "dmo/nn.hpp"

namespace dmo {

namespace {

struct VariantInfo {
  AlgoVariant v;
  const char* name;
};

constexpr VariantInfo kVariants[] = {
    {AlgoVariant::dmo_bptt, "dmo_bptt"},   {AlgoVariant::dmo_shac, "dmo_shac"},
    {AlgoVariant::dmo_sapo, "dmo_sapo"},   {AlgoVariant::shac_true, "shac_true"},
    {AlgoVariant::bptt_true, "bptt_true"}, {AlgoVariant::model_forward, "model_forward"},
};

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::string fmt_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

double to_double(const std::string& key, const std::string& s) {
  errno = 0;
  char* end = nullptr;
  const double v = std::strtod(s.c_str(), &end);
  if (s.empty() || end != s.c_str() + s.size() || errno == ERANGE || !std::isfinite(v)) {
    throw ConfigError(key + ": expected a finite number, got '" + s + "'");
  }
  return v;
}

std::uint64_t to_u64(const std::string& key, const std::string& s) {
  if (s.empty() || s.find_first_not_of("0123456789") != std::string::npos) {
    throw ConfigError(key + ": expected a non-negative integer, got '" + s + "'");
  }
  errno = 0;
  const unsigned long long v = std::strtoull(s.c_str(), nullptr, 10);
  if (errno == ERANGE) throw ConfigError(key + ": integer out of range '" + s + "'");
  return v;
}

bool to_bool(const std::string& key, const std::string& s) {
  if (s == "true" || s == "1") return true;
  if (s == "false" || s == "0") return false;
  throw ConfigError(key + ": expected true or false, got '" + s + "'");
}

std::vector<std::uint64_t> to_u64_list(const std::string& key, const std::string& s) {
  std::vector<std::uint64_t> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(to_u64(key, trim(item)));
  if (out.empty()) throw ConfigError(key + ": expected a comma-separated list");
  return out;
}

std::vector<std::size_t> to_size_list(const std::string& key, const std::string& s) {
  std::vector<std::size_t> out;
  for (auto v : to_u64_list(key, s)) out.push_back(static_cast<std::size_t>(v));
  return out;
}

template <class T>
std::string join(const std::vector<T>& xs) {
  std::string out;
  for (std::size_t i = 0; i < xs.size(); ++i) out += (i ? "," : "") + std::to_string(xs[i]);
  return out;
}

std::string unquote(const std::string& s) {
  if (s.size() >= 2 && ((s.front() == '"' && s.back() == '"') || (s.front() == '\'' && s.back() == '\''))) {
    return s.substr(1, s.size() - 2);
  }
  return s;
}

struct Field {
  const char* key;
  std::function<void(ExperimentConfig&, const std::string&)> set;
  std::function<std::string(const ExperimentConfig&)> get;
};

#define DMO_DOUBLE(name)                                                                  \
  Field {                                                                                 \
    #name, [](ExperimentConfig& c, const std::string& v) { c.name = to_double(#name, v); }, \
        [](const ExperimentConfig& c) { return fmt_double(c.name); }                      \
  }
#define DMO_SIZE(name)                                                                                      \
  Field {                                                                                                   \
    #name, [](ExperimentConfig& c, const std::string& v) { c.name = static_cast<std::size_t>(to_u64(#name, v)); }, \
        [](const ExperimentConfig& c) { return std::to_string(c.name); }                                    \
  }
#define DMO_BOOL(name)                                                                  \
  Field {                                                                               \
    #name, [](ExperimentConfig& c, const std::string& v) { c.name = to_bool(#name, v); }, \
        [](const ExperimentConfig& c) { return std::string(c.name ? "true" : "false"); } \
  }
#define DMO_STRING(name)                                                               \
  Field {                                                                              \
    #name, [](ExperimentConfig& c, const std::string& v) { c.name = unquote(v); },     \
        [](const ExperimentConfig& c) { return c.name; }                               \
  }
#define DMO_LIST(name)                                                                      \
  Field {                                                                                   \
    #name, [](ExperimentConfig& c, const std::string& v) { c.name = to_size_list(#name, v); }, \
        [](const ExperimentConfig& c) { return join(c.name); }                              \
  }

const std::vector<Field>& fields() {
  static const std::vector<Field> table = {
      Field{"variant", [](ExperimentConfig& c, const std::string& v) { c.variant = parse_variant(unquote(v)); },
            [](const ExperimentConfig& c) { return variant_name(c.variant); }},
      DMO_STRING(env),
      Field{"seeds", [](ExperimentConfig& c, const std::string& v) { c.seeds = to_u64_list("seeds", v); },
            [](const ExperimentConfig& c) { return join(c.seeds); }},
      DMO_SIZE(num_actors),
      DMO_SIZE(horizon),
      Field{"total_env_steps",
            [](ExperimentConfig& c, const std::string& v) { c.total_env_steps = to_u64("total_env_steps", v); },
            [](const ExperimentConfig& c) { return std::to_string(c.total_env_steps); }},
      DMO_DOUBLE(gamma),
      DMO_DOUBLE(lambda),
      DMO_DOUBLE(tau),
      DMO_DOUBLE(alpha_init),
      DMO_DOUBLE(target_entropy_factor),
      DMO_DOUBLE(bptt_discount),
      DMO_BOOL(bootstrap_on_timeout),
      DMO_DOUBLE(actor_lr),
      DMO_DOUBLE(critic_lr),
      DMO_DOUBLE(model_lr),
      DMO_DOUBLE(entropy_lr),
      DMO_STRING(lr_schedule),
      DMO_DOUBLE(grad_clip),
      DMO_DOUBLE(adam_beta1),
      DMO_DOUBLE(adam_beta2),
      DMO_DOUBLE(weight_decay),
      DMO_LIST(actor_hidden),
      DMO_LIST(critic_hidden),
      DMO_LIST(model_hidden),
      DMO_STRING(actor_activation),
      DMO_STRING(critic_activation),
      DMO_STRING(model_activation),
      DMO_DOUBLE(actor_init_log_std),
      DMO_SIZE(num_critics),
      DMO_SIZE(critic_mini_epochs),
      DMO_SIZE(critic_minibatches),
      DMO_SIZE(model_batch_size),
      DMO_SIZE(model_minibatches),
      DMO_SIZE(buffer_capacity),
      DMO_SIZE(report_every),
      DMO_SIZE(checkpoint_every),
      DMO_SIZE(eval_episodes),
      DMO_SIZE(threads),
      DMO_BOOL(log_wallclock),
      DMO_STRING(out_dir),
  };
  return table;
}

#undef DMO_DOUBLE
#undef DMO_SIZE
#undef DMO_BOOL
#undef DMO_STRING
#undef DMO_LIST

const Field* find_field(const std::string& key) {
  for (const Field& f : fields()) {
    if (key == f.key) return &f;
  }
  return nullptr;
}

void require(bool ok, const std::string& key, const std::string& constraint) {
  if (!ok) throw ConfigError(key + ": must satisfy " + constraint);
}

void check_activation(const std::string& key, const std::string& name, bool allow_auto) {
  if (allow_auto && name == "auto") return;
  try {
    parse_activation(name);
  } catch (const ConfigError&) {
    throw ConfigError(key + ": unknown activation '" + name + "'");
  }
}

void check_hidden(const std::string& key, const std::vector<std::size_t>& widths) {
  require(!widths.empty(), key, "at least one hidden layer");
  for (std::size_t w : widths) require(w > 0, key, "positive layer widths");
}

}  // namespace

AlgoVariant parse_variant(const std::string& name) {
  for (const auto& vi : kVariants) {
    if (name == vi.name) return vi.v;
  }
  std::string known;
  for (const auto& vi : kVariants) known += std::string(known.empty() ? "" : ", ") + vi.name;
  throw ConfigError("variant: unknown algorithm '" + name + "' (expected one of " + known + ")");
}

std::string variant_name(AlgoVariant v) {
  for (const auto& vi : kVariants) {
    if (vi.v == v) return vi.name;
  }
  return "?";
}

std::vector<std::string> variant_names() {
  std::vector<std::string> out;
  for (const auto& vi : kVariants) out.emplace_back(vi.name);
  return out;
}

bool variant_uses_model(AlgoVariant v) {
  return v == AlgoVariant::dmo_bptt || v == AlgoVariant::dmo_shac || v == AlgoVariant::dmo_sapo ||
         v == AlgoVariant::model_forward;
}

bool variant_uses_critic(AlgoVariant v) {
  return v == AlgoVariant::dmo_shac || v == AlgoVariant::dmo_sapo || v == AlgoVariant::shac_true ||
         v == AlgoVariant::model_forward;
}

bool variant_is_sapo(AlgoVariant v) { return v == AlgoVariant::dmo_sapo; }

bool variant_is_bptt(AlgoVariant v) { return v == AlgoVariant::dmo_bptt || v == AlgoVariant::bptt_true; }

bool variant_is_decoupled(AlgoVariant v) {
  return v == AlgoVariant::dmo_bptt || v == AlgoVariant::dmo_shac || v == AlgoVariant::dmo_sapo;
}

std::string ExperimentConfig::resolved_actor_activation() const {
  if (actor_activation != "auto") return actor_activation;
  return variant_is_sapo(variant) ? "silu" : "elu";
}

std::string ExperimentConfig::resolved_critic_activation() const {
  if (critic_activation != "auto") return critic_activation;
  return variant_is_sapo(variant) ? "silu" : "elu";
}

std::size_t ExperimentConfig::resolved_num_critics() const {
  if (num_critics != 0) return num_critics;
  return variant_is_sapo(variant) ? 2 : 1;
}

std::uint64_t ExperimentConfig::total_epochs() const {
  const std::uint64_t per = steps_per_epoch();
  return per == 0 ? 0 : (total_env_steps + per - 1) / per;
}

void apply_override(ExperimentConfig& cfg, const std::string& key, const std::string& value) {
  const Field* f = find_field(key);
  if (!f) throw ConfigError("unknown key '" + key + "'");
  f->set(cfg, trim(value));
}

ExperimentConfig parse_config_text(const std::string& text, const std::string& origin, bool check) {
  ExperimentConfig cfg;
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  std::map<std::string, std::size_t> key_lines;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const std::string where = origin + ":" + std::to_string(lineno) + ": ";
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError(where + "expected 'key = value', got '" + line + "'");
    const std::string key = trim(line.substr(0, eq));
    try {
      apply_override(cfg, key, line.substr(eq + 1));
      key_lines[key] = lineno;
    } catch (const ConfigError& e) {
      throw ConfigError(where + e.what());
    }
  }
  if (!check) return cfg;
  try {
    validate(cfg);
  } catch (const ConfigError& e) {
    // point at the line that set the offending key when there is one
    const std::string msg = e.what();
    const auto it = key_lines.find(msg.substr(0, msg.find(':')));
    if (it != key_lines.end()) throw ConfigError(origin + ":" + std::to_string(it->second) + ": " + msg);
    throw ConfigError(origin + ": " + msg);
  }
  return cfg;
}

ExperimentConfig load_config(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw ConfigError("cannot open config '" + path + "'");
  std::ostringstream ss;
  ss << f.rdbuf();
  return parse_config_text(ss.str(), path);
}

void validate(const ExperimentConfig& c) {
  try {
    make_env(c.env);
  } catch (const ConfigError& e) {
    throw ConfigError(std::string("env: ") + e.what());
  }
  require(!c.seeds.empty(), "seeds", "at least one seed");
  require(c.num_actors >= 1, "num_actors", "num_actors >= 1");
  require(c.horizon >= 1, "horizon", "horizon >= 1");
  require(c.gamma > 0.0 && c.gamma < 1.0, "gamma", "gamma in (0, 1)");
  require(c.lambda >= 0.0 && c.lambda <= 1.0, "lambda", "lambda in [0, 1]");
  require(c.tau > 0.0 && c.tau <= 1.0, "tau", "tau in (0, 1]");
  require(c.alpha_init > 0.0, "alpha_init", "alpha_init > 0");
  require(c.bptt_discount > 0.0 && c.bptt_discount <= 1.0, "bptt_discount", "bptt_discount in (0, 1]");
  require(c.actor_lr > 0.0, "actor_lr", "actor_lr > 0");
  require(c.critic_lr > 0.0, "critic_lr", "critic_lr > 0");
  require(c.model_lr > 0.0, "model_lr", "model_lr > 0");
  require(c.entropy_lr > 0.0, "entropy_lr", "entropy_lr > 0");
  require(c.lr_schedule == "linear" || c.lr_schedule == "constant", "lr_schedule", "linear or constant");
  require(c.grad_clip > 0.0, "grad_clip", "grad_clip > 0");
  require(c.adam_beta1 >= 0.0 && c.adam_beta1 < 1.0, "adam_beta1", "adam_beta1 in [0, 1)");
  require(c.adam_beta2 >= 0.0 && c.adam_beta2 < 1.0, "adam_beta2", "adam_beta2 in [0, 1)");
  require(c.weight_decay >= 0.0, "weight_decay", "weight_decay >= 0");
  check_hidden("actor_hidden", c.actor_hidden);
  check_hidden("critic_hidden", c.critic_hidden);
  check_hidden("model_hidden", c.model_hidden);
  check_activation("actor_activation", c.actor_activation, true);
  check_activation("critic_activation", c.critic_activation, true);
  check_activation("model_activation", c.model_activation, false);
  require(c.actor_init_log_std >= -5.0 && c.actor_init_log_std <= 1.0, "actor_init_log_std",
          "actor_init_log_std in [-5, 1]");
  if (variant_is_sapo(c.variant)) {
    require(c.resolved_num_critics() >= 2, "num_critics", "num_critics >= 2 for dmo_sapo (ensemble minimum)");
  }
  require(c.critic_mini_epochs >= 1, "critic_mini_epochs", "critic_mini_epochs >= 1");
  require(c.critic_minibatches >= 1, "critic_minibatches", "critic_minibatches >= 1");
  require(c.model_batch_size >= 1, "model_batch_size", "model_batch_size >= 1");
  require(c.buffer_capacity >= c.model_batch_size, "buffer_capacity", "buffer_capacity >= model_batch_size");
  require(c.report_every >= 1, "report_every", "report_every >= 1");
  require(c.eval_episodes >= 1, "eval_episodes", "eval_episodes >= 1");
  require(c.threads >= 1, "threads", "threads >= 1");
  require(!c.out_dir.empty(), "out_dir", "a non-empty path");
}

std::string serialize_config(const ExperimentConfig& cfg) {
  std::string out;
  for (const Field& f : fields()) out += std::string(f.key) + " = " + f.get(cfg) + "\n";
  return out;
}

std::vector<std::string> config_keys() {
  std::vector<std::string> out;
  for (const Field& f : fields()) out.emplace_back(f.key);
  return out;
}

}  // namespace dmo
