#pragma once

// Seeded experiment runs: per-epoch CSV rows, periodic checkpoints, resume.

#include <cstdint>
#include <functional>
#include <optional>
#include <string>

#include "dmo/algorithms.hpp"
#include "dmo/config.hpp"

namespace dmo {

struct RunPaths {
  std::string csv;
  std::string checkpoint;
  std::string diverged;
};

// <out_dir>/<variant>_<env>[_<tag>]_seed<k>.{csv,ckpt}
RunPaths run_paths(const ExperimentConfig& cfg, std::uint64_t seed, const std::string& tag = "");

struct RunOptions {
  bool resume = false;
  bool compare_gradients = false;  // gradient triplet every report_every epochs
  std::string tag;
  // Stop after this many epochs of the current invocation without a final
  // checkpoint, as if the process had been killed.
  std::optional<std::uint64_t> stop_after;
  std::function<void(const EpochMetrics&)> on_epoch;
};

// Trains one seed to completion (or until stop_after), writing CSV and
// checkpoints. Divergence dumps a diagnostic checkpoint and rethrows.
void run_seed(const ExperimentConfig& cfg, std::uint64_t seed, const RunOptions& opts = {});

// Every seed of the config in order.
void run(const ExperimentConfig& cfg, const RunOptions& opts = {});

// Loads a checkpoint and evaluates its deterministic policy.
EvalResult evaluate_checkpoint(const std::string& path, std::size_t episodes);

}  // namespace dmo
