#include "dmo/runner.hpp"

#include <filesystem>
#include <fstream>
#include <sstream>

#include "dmo/diagnostics.hpp"
#include "dmo/errors.hpp"

namespace dmo {

namespace fs = std::filesystem;

namespace {

// Keeps the header and rows up to `epoch`, dropping anything written after
// the checkpoint being resumed.
void truncate_log(const std::string& path, std::uint64_t epoch) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot reopen log '" + path + "' for resume");
  std::string header;
  std::getline(in, header);
  if (header != kCsvHeader) throw IoError("'" + path + "' does not carry the metrics header");
  std::string kept = header + "\n";
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    if (std::stoull(line.substr(0, line.find(','))) > epoch) break;
    kept += line + "\n";
  }
  in.close();
  std::ofstream out(path, std::ios::trunc);
  out << kept;
  if (!out) throw IoError("cannot rewrite log '" + path + "'");
}

}  // namespace

RunPaths run_paths(const ExperimentConfig& cfg, std::uint64_t seed, const std::string& tag) {
  std::string stem = variant_name(cfg.variant) + "_" + cfg.env;
  if (!tag.empty()) stem += "_" + tag;
  stem += "_seed" + std::to_string(seed);
  const fs::path dir(cfg.out_dir);
  return {(dir / (stem + ".csv")).string(), (dir / (stem + ".ckpt")).string(),
          (dir / (stem + ".diverged.ckpt")).string()};
}

void run_seed(const ExperimentConfig& cfg, std::uint64_t seed, const RunOptions& opts) {
  const RunPaths paths = run_paths(cfg, seed, opts.tag);
  std::error_code ec;
  fs::create_directories(cfg.out_dir, ec);
  if (ec) throw IoError("cannot create output directory '" + cfg.out_dir + "': " + ec.message());

  std::optional<Trainer> trainer;
  if (opts.resume && fs::exists(paths.checkpoint)) {
    trainer.emplace(Trainer::load(paths.checkpoint));
    if (!(trainer->config() == cfg)) {
      throw ConfigError("resume: checkpoint '" + paths.checkpoint + "' was written with a different config");
    }
    truncate_log(paths.csv, trainer->epoch());
  } else {
    trainer.emplace(cfg, seed);
    std::ofstream out(paths.csv, std::ios::trunc);
    out << kCsvHeader << "\n";
    if (!out) throw IoError("cannot write log '" + paths.csv + "'");
  }

  std::ofstream log(paths.csv, std::ios::app);
  if (!log) throw IoError("cannot append to log '" + paths.csv + "'");
  std::uint64_t done_here = 0;
  while (!trainer->finished()) {
    if (opts.stop_after && done_here >= *opts.stop_after) return;
    const bool compare = opts.compare_gradients && trainer->epoch() % cfg.report_every == 0;
    EpochMetrics m;
    try {
      m = trainer->train_epoch(compare);
    } catch (const DivergenceError&) {
      trainer->save(paths.diverged);
      throw;
    }
    log << format_csv_row(m) << "\n";
    log.flush();
    if (!log) throw IoError("write failed for '" + paths.csv + "'");
    ++done_here;
    if (opts.on_epoch) opts.on_epoch(m);
    if (cfg.checkpoint_every && trainer->epoch() % cfg.checkpoint_every == 0) trainer->save(paths.checkpoint);
  }
  trainer->save(paths.checkpoint);
}

void run(const ExperimentConfig& cfg, const RunOptions& opts) {
  for (std::uint64_t seed : cfg.seeds) run_seed(cfg, seed, opts);
}

EvalResult evaluate_checkpoint(const std::string& path, std::size_t episodes) {
  if (episodes == 0) throw ConfigError("episodes: must be at least 1");
  const Trainer t = Trainer::load(path);
  return evaluate_policy(t.env(), t.actor(), episodes, t.config().gamma, t.seed());
}

}  // namespace dmo
