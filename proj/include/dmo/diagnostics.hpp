#pragma once

// Gradient-fidelity measurements, per-epoch CSV logs and cross-seed summaries.

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "dmo/algorithms.hpp"

namespace dmo {

struct CosineResult {
  double value = 0.0;
  bool degenerate = false;  // one of the vectors had norm below 1e-12
};

// <a, b> / (|a| |b|); 0 and flagged degenerate when either norm is below 1e-12.
CosineResult cosine_similarity(std::span<const double> a, std::span<const double> b);

struct GradientReport {
  std::uint64_t epoch = 0;
  double cos_dmo_true = 0.0;
  double cos_fwd_true = 0.0;
  double norm_true = 0.0;
  double norm_dmo = 0.0;
  double norm_fwd = 0.0;
  std::optional<double> model_nll;
};

// Trains one seed, comparing gradients every `report_every` epochs (starting
// with the first). `on_epoch` sees every epoch's metrics in order.
std::vector<GradientReport> run_cosine_study(const ExperimentConfig& cfg, std::uint64_t seed,
                                             const std::function<void(const EpochMetrics&)>& on_epoch = {});

// ---- CSV logs ---------------------------------------------------------------

inline constexpr const char* kCsvHeader =
    "epoch,env_steps,episodic_return,policy_loss,critic_loss,model_nll,grad_norm,cos_dmo_true,cos_fwd_true,alpha,"
    "wallclock_s";

std::string format_csv_row(const EpochMetrics& m);
// Round-trip number formatting used by every CSV writer.
std::string format_number(double v);

struct RunLog {
  std::uint64_t seed = 0;
  std::uint64_t config_hash = 0;
  std::vector<std::string> columns;
  // rows[i][j] is column j of row i; empty cells are nullopt
  std::vector<std::vector<std::optional<double>>> rows;
};

// Stable 64-bit FNV-1a digest of a config's serialized form.
std::uint64_t config_hash(const ExperimentConfig& cfg);

// Parses a metrics CSV; rejects wrong headers and non-increasing epochs.
RunLog read_run_log(const std::string& path);

struct SummaryRow {
  std::string group;
  std::uint64_t epoch = 0;
  std::string metric;
  std::size_t n = 0;
  double mean = 0.0;
  std::optional<double> ci95;  // normal approximation, needs n >= 2
};

// Group name for a log path: file name without the trailing "_seed<k>.csv".
std::string group_of(const std::string& path);

// Mean and 95% interval per (group, epoch, metric) over the runs of each
// group. Runs within a group must share the same epoch column.
std::vector<SummaryRow> summarize(const std::vector<std::string>& paths);
std::string format_summary(const std::vector<SummaryRow>& rows);
// Paths matching a shell pattern, sorted.
std::vector<std::string> expand_glob(const std::string& pattern);

}  // namespace dmo
