// Command-line front end: run, eval, cosine-study, summarize.
//
// Exit codes: 0 success, 2 configuration error, 3 divergence, 4 I/O failure.

#include <cstdio>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "dmo/config.hpp"
#include "dmo/diagnostics.hpp"
#include "dmo/errors.hpp"
#include "dmo/runner.hpp"

namespace {

struct CommonFlags {
  std::string config;
  std::string algo;
  std::string env;
  std::string out;
  std::vector<std::uint64_t> seeds;
  std::size_t horizon = 0;
  std::size_t threads = 0;
  std::vector<std::string> sets;
};

void add_common(CLI::App* cmd, CommonFlags& f) {
  cmd->add_option("--config", f.config, "Config file (key = value lines)")->required();
  cmd->add_option("--algo", f.algo, "Algorithm variant");
  cmd->add_option("--env", f.env, "Environment name");
  cmd->add_option("--seed", f.seeds, "Seed (repeatable); replaces the config's seed list");
  cmd->add_option("--out", f.out, "Output directory");
  cmd->add_option("--horizon", f.horizon, "Rollout window length");
  cmd->add_option("--threads", f.threads, "Worker threads for env stepping");
  cmd->add_option("--set", f.sets, "Extra override key=value (repeatable)");
}

dmo::ExperimentConfig resolve(const CommonFlags& f) {
  dmo::ExperimentConfig cfg = dmo::load_config(f.config);
  if (!f.algo.empty()) dmo::apply_override(cfg, "variant", f.algo);
  if (!f.env.empty()) dmo::apply_override(cfg, "env", f.env);
  if (!f.out.empty()) dmo::apply_override(cfg, "out_dir", f.out);
  if (!f.seeds.empty()) cfg.seeds = f.seeds;
  if (f.horizon) cfg.horizon = f.horizon;
  if (f.threads) cfg.threads = f.threads;
  for (const std::string& kv : f.sets) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw dmo::ConfigError("--set expects key=value, got '" + kv + "'");
    dmo::apply_override(cfg, kv.substr(0, eq), kv.substr(eq + 1));
  }
  dmo::validate(cfg);
  return cfg;
}

void print_epoch(const dmo::EpochMetrics& m) {
  std::fprintf(stderr, "epoch %llu steps %llu", static_cast<unsigned long long>(m.epoch),
               static_cast<unsigned long long>(m.env_steps));
  if (m.episodic_return) std::fprintf(stderr, " return %.4f", *m.episodic_return);
  if (m.model_nll) std::fprintf(stderr, " nll %.4f", *m.model_nll);
  if (m.cos_dmo_true) std::fprintf(stderr, " cos_dmo %.4f cos_fwd %.4f", *m.cos_dmo_true, *m.cos_fwd_true);
  std::fprintf(stderr, "\n");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Decoupled forward-backward policy optimization experiments"};
  app.require_subcommand(1);

  CommonFlags run_flags;
  bool resume = false;
  bool verbose = false;
  auto* run_cmd = app.add_subcommand("run", "Train every configured seed");
  add_common(run_cmd, run_flags);
  run_cmd->add_flag("--resume", resume, "Continue from existing checkpoints");
  run_cmd->add_flag("-v,--verbose", verbose, "Print one line per epoch");

  std::string ckpt;
  std::size_t episodes = 20;
  auto* eval_cmd = app.add_subcommand("eval", "Evaluate a checkpoint's deterministic policy");
  eval_cmd->add_option("--ckpt", ckpt, "Checkpoint path")->required();
  eval_cmd->add_option("--episodes", episodes, "Number of evaluation episodes");

  CommonFlags cos_flags;
  auto* cos_cmd = app.add_subcommand("cosine-study", "Compare DMO, model-forward and true gradients");
  add_common(cos_cmd, cos_flags);
  cos_cmd->add_flag("-v,--verbose", verbose, "Print one line per epoch");

  std::string pattern;
  std::string table;
  auto* sum_cmd = app.add_subcommand("summarize", "Mean and 95% interval across seeds");
  sum_cmd->add_option("--glob", pattern, "Log file pattern, e.g. 'runs/*.csv'")->required();
  sum_cmd->add_option("--out", table, "Output CSV")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    if (*run_cmd) {
      const dmo::ExperimentConfig cfg = resolve(run_flags);
      dmo::RunOptions opts;
      opts.resume = resume;
      if (verbose) opts.on_epoch = print_epoch;
      for (std::uint64_t seed : cfg.seeds) {
        dmo::run_seed(cfg, seed, opts);
        std::printf("%s\n", dmo::run_paths(cfg, seed).csv.c_str());
      }
    } else if (*eval_cmd) {
      const dmo::EvalResult r = dmo::evaluate_checkpoint(ckpt, episodes);
      std::printf("episodes=%zu\nmean_return=%s\nmean_discounted_return=%s\n", episodes,
                  dmo::format_number(r.mean_return).c_str(), dmo::format_number(r.mean_discounted_return).c_str());
    } else if (*cos_cmd) {
      const dmo::ExperimentConfig cfg = resolve(cos_flags);
      dmo::RunOptions opts;
      opts.compare_gradients = true;
      opts.tag = "cosine";
      if (verbose) opts.on_epoch = print_epoch;
      for (std::uint64_t seed : cfg.seeds) {
        dmo::run_seed(cfg, seed, opts);
        std::printf("%s\n", dmo::run_paths(cfg, seed, opts.tag).csv.c_str());
      }
    } else if (*sum_cmd) {
      const auto rows = dmo::summarize(dmo::expand_glob(pattern));
      std::ofstream out(table, std::ios::trunc);
      out << dmo::format_summary(rows);
      if (!out) throw dmo::IoError("cannot write '" + table + "'");
      std::printf("%s\n", table.c_str());
    }
  } catch (const dmo::ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return 2;
  } catch (const dmo::DivergenceError& e) {
    std::fprintf(stderr, "diverged: %s\n", e.what());
    return 3;
  } catch (const dmo::IoError& e) {
    std::fprintf(stderr, "i/o error: %s\n", e.what());
    return 4;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
