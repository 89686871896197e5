#include "dmo/diagnostics.hpp"

#include <glob.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <regex>
#include <sstream>
#include <stdexcept>

#include "dmo/errors.hpp"

namespace dmo {

namespace {

double norm2(std::span<const double> v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}

std::vector<std::string> split_commas(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::stringstream ss(line);
  while (std::getline(ss, cell, ',')) out.push_back(cell);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

std::string opt(const std::optional<double>& v) { return v ? format_number(*v) : std::string(); }

}  // namespace

CosineResult cosine_similarity(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) {
    throw std::invalid_argument("cosine_similarity: lengths " + std::to_string(a.size()) + " and " +
                                std::to_string(b.size()) + " differ");
  }
  const double na = norm2(a);
  const double nb = norm2(b);
  if (na < 1e-12 || nb < 1e-12) return {0.0, true};
  double dot = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) dot += a[i] * b[i];
  return {std::clamp(dot / (na * nb), -1.0, 1.0), false};
}

std::vector<GradientReport> run_cosine_study(const ExperimentConfig& cfg, std::uint64_t seed,
                                             const std::function<void(const EpochMetrics&)>& on_epoch) {
  if (!variant_is_decoupled(cfg.variant)) {
    throw ConfigError("cosine study: variant must be one of dmo_bptt, dmo_shac, dmo_sapo");
  }
  Trainer trainer(cfg, seed);
  std::vector<GradientReport> reports;
  while (!trainer.finished()) {
    const bool compare = trainer.epoch() % cfg.report_every == 0;
    const EpochMetrics m = trainer.train_epoch(compare);
    if (compare) {
      const GradientTriplet& g = *trainer.last_triplet();
      GradientReport r;
      r.epoch = m.epoch;
      r.cos_dmo_true = *m.cos_dmo_true;
      r.cos_fwd_true = *m.cos_fwd_true;
      r.norm_true = norm2(g.g_true);
      r.norm_dmo = norm2(g.g_dmo);
      r.norm_fwd = norm2(g.g_forward);
      r.model_nll = m.model_nll;
      reports.push_back(r);
    }
    if (on_epoch) on_epoch(m);
  }
  return reports;
}

std::string format_number(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string format_csv_row(const EpochMetrics& m) {
  return std::to_string(m.epoch) + "," + std::to_string(m.env_steps) + "," + opt(m.episodic_return) + "," +
         opt(m.policy_loss) + "," + opt(m.critic_loss) + "," + opt(m.model_nll) + "," + opt(m.grad_norm) + "," +
         opt(m.cos_dmo_true) + "," + opt(m.cos_fwd_true) + "," + opt(m.alpha) + "," + opt(m.wallclock_s);
}

std::uint64_t config_hash(const ExperimentConfig& cfg) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : serialize_config(cfg)) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

RunLog read_run_log(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot open log '" + path + "'");
  RunLog log;
  std::string line;
  if (!std::getline(f, line) || line != kCsvHeader) throw IoError("'" + path + "' does not carry the metrics header");
  log.columns = split_commas(line);
  std::size_t lineno = 1;
  double last_epoch = -1.0;
  while (std::getline(f, line)) {
    ++lineno;
    if (line.empty()) continue;
    const auto cells = split_commas(line);
    if (cells.size() != log.columns.size()) {
      throw IoError(path + ":" + std::to_string(lineno) + ": expected " + std::to_string(log.columns.size()) +
                    " fields");
    }
    std::vector<std::optional<double>> row;
    for (const std::string& c : cells) {
      if (c.empty()) {
        row.emplace_back();
        continue;
      }
      char* end = nullptr;
      const double v = std::strtod(c.c_str(), &end);
      if (end != c.c_str() + c.size()) throw IoError(path + ":" + std::to_string(lineno) + ": bad number '" + c + "'");
      row.emplace_back(v);
    }
    if (!row[0] || *row[0] <= last_epoch) {
      throw IoError(path + ":" + std::to_string(lineno) + ": epochs must be strictly increasing");
    }
    last_epoch = *row[0];
    log.rows.push_back(std::move(row));
  }
  static const std::regex seed_re(R"(_seed([0-9]+)\.csv$)");
  std::smatch m;
  if (std::regex_search(path, m, seed_re)) log.seed = std::stoull(m[1]);
  return log;
}

std::string group_of(const std::string& path) {
  std::string name = path.substr(path.find_last_of('/') == std::string::npos ? 0 : path.find_last_of('/') + 1);
  static const std::regex seed_re(R"(_seed[0-9]+\.csv$)");
  std::smatch m;
  if (std::regex_search(name, m, seed_re)) return name.substr(0, static_cast<std::size_t>(m.position(0)));
  if (name.size() > 4 && name.ends_with(".csv")) return name.substr(0, name.size() - 4);
  return name;
}

std::vector<SummaryRow> summarize(const std::vector<std::string>& paths) {
  if (paths.empty()) throw ConfigError("summarize: no logs matched");
  std::map<std::string, std::vector<RunLog>> groups;
  for (const std::string& p : paths) groups[group_of(p)].push_back(read_run_log(p));

  std::vector<SummaryRow> out;
  for (const auto& [group, runs] : groups) {
    const auto& ref = runs.front();
    for (const RunLog& r : runs) {
      bool same = r.rows.size() == ref.rows.size();
      for (std::size_t i = 0; same && i < r.rows.size(); ++i) same = *r.rows[i][0] == *ref.rows[i][0];
      if (!same) throw ConfigError("summarize: runs in group '" + group + "' have different epoch grids");
    }
    for (std::size_t i = 0; i < ref.rows.size(); ++i) {
      for (std::size_t c = 1; c < ref.columns.size(); ++c) {
        std::vector<double> xs;
        for (const RunLog& r : runs) {
          if (r.rows[i][c]) xs.push_back(*r.rows[i][c]);
        }
        if (xs.empty()) continue;
        SummaryRow row;
        row.group = group;
        row.epoch = static_cast<std::uint64_t>(*ref.rows[i][0]);
        row.metric = ref.columns[c];
        row.n = xs.size();
        double sum = 0.0;
        for (double x : xs) sum += x;
        row.mean = sum / static_cast<double>(xs.size());
        if (xs.size() >= 2) {
          double ss = 0.0;
          for (double x : xs) ss += (x - row.mean) * (x - row.mean);
          const double sd = std::sqrt(ss / static_cast<double>(xs.size() - 1));
          row.ci95 = 1.96 * sd / std::sqrt(static_cast<double>(xs.size()));
        }
        out.push_back(std::move(row));
      }
    }
  }
  return out;
}

std::string format_summary(const std::vector<SummaryRow>& rows) {
  std::string out = "group,epoch,metric,n,mean,ci95\n";
  for (const SummaryRow& r : rows) {
    out += r.group + "," + std::to_string(r.epoch) + "," + r.metric + "," + std::to_string(r.n) + "," +
           format_number(r.mean) + "," + opt(r.ci95) + "\n";
  }
  return out;
}

std::vector<std::string> expand_glob(const std::string& pattern) {
  glob_t g{};
  const int rc = ::glob(pattern.c_str(), 0, nullptr, &g);
  std::vector<std::string> out;
  if (rc == 0) {
    for (std::size_t i = 0; i < g.gl_pathc; ++i) out.emplace_back(g.gl_pathv[i]);
  }
  globfree(&g);
  if (rc != 0 && rc != GLOB_NOMATCH) throw IoError("glob failed for '" + pattern + "'");
  std::sort(out.begin(), out.end());
  return out;
}

}  // namespace dmo
