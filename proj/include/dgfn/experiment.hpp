#pragma once

#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <limits>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "dgfn/checkpoint.hpp"
#include "dgfn/config.hpp"
#include "dgfn/metrics.hpp"
#include "dgfn/oracle.hpp"
#include "dgfn/trainer.hpp"

namespace dgfn {

/// Output root override for all relative run directories.
inline constexpr const char* kOutputRootEnvVar = "DGFN_OUTPUT_ROOT";

inline std::filesystem::path resolve_out_dir(const std::string& out_dir) {
  std::filesystem::path p(out_dir);
  if (p.is_absolute()) return p;
  if (const char* root = std::getenv(kOutputRootEnvVar)) {
    return std::filesystem::path(root) / p;
  }
  return p;
}

/// Invoked at every metric emission; return false to stop the run early
/// (the checkpoint and summary are still written).
using MetricCallback = std::function<bool(const MetricRecord&)>;

struct RunOutcome {
  std::filesystem::path dir;
  std::uint64_t seed = 0;
  MetricRecord last;
  double oracle_l1_value = std::numeric_limits<double>::quiet_NaN();
  std::int64_t steps_to_all_modes = -1;
  std::int64_t trajectories_to_all_modes = -1;
  bool completed = false;  // reached total_steps
};

/// Train one seed, streaming metrics to `<out>/seed-<seed>/metrics.csv` and
/// leaving a resumable checkpoint plus a summary. With `resume`, an existing
/// checkpoint is loaded and the metric stream continues where it left off,
/// byte-identical to an uninterrupted run.
inline RunOutcome run_training(const ExperimentConfig& cfg, std::uint64_t seed,
                               bool resume = false,
                               const MetricCallback& on_metric = nullptr) {
  cfg.validate();
  const std::string hash = config_hash(cfg);
  const std::filesystem::path run_dir =
      resolve_out_dir(cfg.out_dir) / ("seed-" + std::to_string(seed));
  const std::filesystem::path ckpt_dir = run_dir / "checkpoint";
  std::filesystem::create_directories(run_dir);

  Trainer trainer(cfg.env, cfg.policy, cfg.trainer, seed);
  SampleWindow window(cfg.window_capacity, cfg.env.state_count());
  ModeTracker tracker(cfg.env);
  TargetTable target = target_distribution(cfg.env);

  RunOutcome out;
  out.dir = run_dir;
  out.seed = seed;

  const bool resuming = resume && checkpoint_exists(ckpt_dir);
  if (resuming) {
    load_checkpoint(ckpt_dir, trainer, window, tracker, hash,
                    &out.steps_to_all_modes, &out.trajectories_to_all_modes);
  }

  std::ofstream csv(run_dir / "metrics.csv",
                    resuming ? std::ios::app : std::ios::trunc);
  if (!csv) throw Error("run: cannot write " + (run_dir / "metrics.csv").string());
  if (!resuming) csv << kMetricCsvHeader << '\n';

  const TrainerConfig& tc = cfg.trainer;
  bool stopped_early = false;
  for (std::int64_t t = trainer.steps_done() + 1; t <= tc.total_steps; ++t) {
    StepResult res = trainer.step();
    std::vector<GridState> terminals;
    terminals.reserve(res.batch.size());
    for (const Trajectory& tr : res.batch) {
      terminals.push_back(tr.states.back());
      window.push(state_index(tr.states.back(), cfg.env));
    }
    tracker.update(terminals);
    if (out.steps_to_all_modes < 0 && tracker.count() == tracker.total()) {
      out.steps_to_all_modes = t;
      out.trajectories_to_all_modes = t * tc.batch_size;
    }

    const bool emit = t % tc.metric_every == 0 || t == tc.total_steps;
    if (emit) {
      MetricRecord rec;
      rec.step = t;
      rec.trajectories = t * tc.batch_size;
      rec.loss = res.loss;
      rec.l1 = l1_error(window, target.probs);
      rec.modes = static_cast<std::int64_t>(tracker.count());
      rec.modes_frac = tracker.fraction();
      rec.mean_reward = res.mean_reward;
      rec.logz = trainer.logz();
      csv << to_csv_row(rec) << '\n';
      csv.flush();
      out.last = rec;
      if (on_metric && !on_metric(rec)) {
        stopped_early = true;
        break;
      }
    }
    if (tc.checkpoint_every > 0 && t % tc.checkpoint_every == 0 &&
        t != tc.total_steps) {
      save_checkpoint(ckpt_dir, trainer, window, tracker, hash,
                      out.steps_to_all_modes, out.trajectories_to_all_modes);
    }
  }
  out.completed = trainer.steps_done() == tc.total_steps && !stopped_early;
  save_checkpoint(ckpt_dir, trainer, window, tracker, hash,
                  out.steps_to_all_modes, out.trajectories_to_all_modes);

  if (cfg.oracle_l1) {
    out.oracle_l1_value = exact_l1(trainer.online(), cfg.env);
  }

  nlohmann::json s;
  s["config_hash"] = hash;
  s["seed"] = seed;
  s["algorithm"] = to_string(tc.algorithm);
  s["objective"] = to_string(tc.objective);
  s["steps"] = trainer.steps_done();
  s["trajectories"] = trainer.steps_done() * tc.batch_size;
  s["completed"] = out.completed;
  s["final"] = {
      {"step", out.last.step},           {"trajectories", out.last.trajectories},
      {"loss", out.last.loss},           {"l1", out.last.l1},
      {"modes", out.last.modes},         {"modes_frac", out.last.modes_frac},
      {"mean_reward", out.last.mean_reward}, {"logZ", out.last.logz}};
  if (cfg.oracle_l1) {
    s["oracle_l1"] = out.oracle_l1_value;
  } else {
    s["oracle_l1"] = nullptr;
  }
  s["steps_to_all_modes"] = out.steps_to_all_modes;
  s["trajectories_to_all_modes"] = out.trajectories_to_all_modes;
  std::ofstream sf(run_dir / "summary.json", std::ios::trunc);
  if (!sf) throw Error("run: cannot write " + (run_dir / "summary.json").string());
  sf << s.dump(2) << '\n';
  return out;
}

// --- multi-seed aggregation ---------------------------------------------------

namespace detail {

struct CsvTable {
  std::vector<std::string> columns;
  std::vector<std::vector<double>> rows;

  std::size_t column(const std::string& name, const std::string& context) const {
    for (std::size_t i = 0; i < columns.size(); ++i) {
      if (columns[i] == name) return i;
    }
    throw Error(context + ": missing column '" + name + "'");
  }
};

inline CsvTable read_csv(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw Error("cannot read " + path.string());
  CsvTable t;
  std::string line;
  bool header_done = false;
  while (std::getline(f, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (!header_done) {
      t.columns = cells;
      header_done = true;
      continue;
    }
    std::vector<double> row;
    for (const std::string& c : cells) row.push_back(std::stod(c));
    if (row.size() != t.columns.size()) {
      throw Error(path.string() + ": ragged row");
    }
    t.rows.push_back(std::move(row));
  }
  return t;
}

inline void mean_stderr(std::span<const double> xs, double& mean, double& se) {
  const double n = static_cast<double>(xs.size());
  double acc = 0;
  for (double x : xs) acc += x;
  mean = acc / n;
  if (xs.size() < 2) {
    se = 0;
    return;
  }
  double var = 0;
  for (double x : xs) var += (x - mean) * (x - mean);
  var /= (n - 1.0);
  se = std::sqrt(var / n);
}

}  // namespace detail

/// Combine the per-seed metric streams of one config into
/// `<out>/aggregate.csv` with mean and standard error per metric. All runs
/// must carry the same config hash and identical step grids.
inline std::filesystem::path aggregate_runs(const ExperimentConfig& cfg) {
  const std::string hash = config_hash(cfg);
  const std::filesystem::path base = resolve_out_dir(cfg.out_dir);
  std::vector<detail::CsvTable> tables;
  for (std::uint64_t seed : cfg.seeds) {
    const std::filesystem::path dir = base / ("seed-" + std::to_string(seed));
    std::ifstream sf(dir / "summary.json");
    if (!sf) throw Error("aggregate: missing summary in " + dir.string());
    nlohmann::json s;
    sf >> s;
    if (s.at("config_hash").get<std::string>() != hash) {
      throw Error("aggregate: config hash mismatch in " + dir.string());
    }
    tables.push_back(detail::read_csv(dir / "metrics.csv"));
  }
  for (const auto& t : tables) {
    if (t.columns != tables[0].columns || t.rows.size() != tables[0].rows.size()) {
      throw Error("aggregate: runs disagree on metric grid");
    }
  }
  const std::size_t step_col = tables[0].column("step", "aggregate");
  const std::size_t traj_col = tables[0].column("trajectories", "aggregate");
  for (const auto& t : tables) {
    for (std::size_t r = 0; r < t.rows.size(); ++r) {
      if (t.rows[r][step_col] != tables[0].rows[r][step_col]) {
        throw Error("aggregate: runs disagree on step grid");
      }
    }
  }

  const std::vector<std::string> metrics = {"loss",       "l1",         "modes",
                                            "modes_frac", "mean_reward", "logZ"};
  std::ofstream f(base / "aggregate.csv", std::ios::trunc);
  if (!f) throw Error("aggregate: cannot write " + (base / "aggregate.csv").string());
  f << "# config_hash=" << hash << '\n';
  f << "step,trajectories";
  for (const std::string& m : metrics) f << ',' << m << "_mean," << m << "_stderr";
  f << '\n';
  std::vector<std::size_t> cols;
  for (const std::string& m : metrics) cols.push_back(tables[0].column(m, "aggregate"));
  for (std::size_t r = 0; r < tables[0].rows.size(); ++r) {
    f << static_cast<std::int64_t>(tables[0].rows[r][step_col]) << ','
      << static_cast<std::int64_t>(tables[0].rows[r][traj_col]);
    for (std::size_t c : cols) {
      std::vector<double> xs;
      for (const auto& t : tables) xs.push_back(t.rows[r][c]);
      double mean = 0, se = 0;
      detail::mean_stderr(xs, mean, se);
      f << ',' << format_double(mean) << ',' << format_double(se);
    }
    f << '\n';
  }
  return base / "aggregate.csv";
}

/// Train every seed of the config sequentially, then aggregate.
inline std::vector<RunOutcome> run_experiment(const ExperimentConfig& cfg,
                                              bool resume = false,
                                              const MetricCallback& on_metric = nullptr) {
  std::vector<RunOutcome> outs;
  for (std::uint64_t seed : cfg.seeds) {
    outs.push_back(run_training(cfg, seed, resume, on_metric));
  }
  aggregate_runs(cfg);
  return outs;
}

// --- hyperparameter sweep -------------------------------------------------------

struct SweepSpec {
  std::vector<std::int64_t> t_initial;
  std::vector<std::int64_t> t_update;

  void validate() const {
    if (t_initial.empty() || t_update.empty()) {
      throw ConfigError("sweep: t_initial and t_update lists must be non-empty");
    }
  }
};

struct SweepCell {
  std::int64_t t_initial = 0;
  std::int64_t t_update = 0;
  std::string hash;
  double modes_frac_mean = 0;
  double modes_frac_stderr = 0;
  double l1_mean = 0;
  double l1_stderr = 0;
  int seeds_ok = 0;
  int seeds_failed = 0;
};

/// Cross the schedule lists, run every cell over the config's seeds, and
/// report per-cell final metrics. Cells that fail partially are marked and
/// the sweep continues. Best cell: highest mean final mode fraction, ties
/// broken by lower mean final L1, then iteration order.
inline std::vector<SweepCell> run_sweep(const ExperimentConfig& base,
                                        const SweepSpec& spec,
                                        const MetricCallback& on_metric = nullptr) {
  base.validate();
  spec.validate();
  const std::filesystem::path root = resolve_out_dir(base.out_dir);
  std::filesystem::create_directories(root);
  std::vector<SweepCell> cells;

  for (std::int64_t ti : spec.t_initial) {
    for (std::int64_t tu : spec.t_update) {
      ExperimentConfig cfg = base;
      cfg.trainer.t_initial = ti;
      cfg.trainer.t_update = tu;
      cfg.out_dir = base.out_dir + "/cell-ti" + std::to_string(ti) + "-tu" +
                    std::to_string(tu);
      SweepCell cell;
      cell.t_initial = ti;
      cell.t_update = tu;
      cell.hash = config_hash(cfg);
      std::vector<double> fracs, l1s;
      for (std::uint64_t seed : cfg.seeds) {
        try {
          RunOutcome out = run_training(cfg, seed, /*resume=*/false, on_metric);
          fracs.push_back(out.last.modes_frac);
          l1s.push_back(out.last.l1);
          cell.seeds_ok += 1;
        } catch (const Error& e) {
          std::cerr << "sweep cell ti=" << ti << " tu=" << tu << " seed=" << seed
                    << " failed: " << e.what() << '\n';
          cell.seeds_failed += 1;
        }
      }
      if (!fracs.empty()) {
        detail::mean_stderr(fracs, cell.modes_frac_mean, cell.modes_frac_stderr);
        detail::mean_stderr(l1s, cell.l1_mean, cell.l1_stderr);
        try {
          aggregate_runs(cfg);
        } catch (const Error& e) {
          std::cerr << "sweep cell ti=" << ti << " tu=" << tu
                    << " aggregation failed: " << e.what() << '\n';
        }
      }
      cells.push_back(cell);
    }
  }

  std::ofstream f(root / "sweep.csv", std::ios::trunc);
  if (!f) throw Error("sweep: cannot write " + (root / "sweep.csv").string());
  f << "t_initial,t_update,config_hash,modes_frac_mean,modes_frac_stderr,"
       "l1_mean,l1_stderr,seeds_ok,seeds_failed\n";
  for (const SweepCell& c : cells) {
    f << c.t_initial << ',' << c.t_update << ',' << c.hash << ','
      << format_double(c.modes_frac_mean) << ',' << format_double(c.modes_frac_stderr)
      << ',' << format_double(c.l1_mean) << ',' << format_double(c.l1_stderr) << ','
      << c.seeds_ok << ',' << c.seeds_failed << '\n';
  }

  const SweepCell* best = nullptr;
  for (const SweepCell& c : cells) {
    if (c.seeds_ok == 0) continue;
    if (!best || c.modes_frac_mean > best->modes_frac_mean ||
        (c.modes_frac_mean == best->modes_frac_mean && c.l1_mean < best->l1_mean)) {
      best = &c;
    }
  }
  nlohmann::json bj;
  if (best) {
    bj["t_initial"] = best->t_initial;
    bj["t_update"] = best->t_update;
    bj["config_hash"] = best->hash;
    bj["modes_frac_mean"] = best->modes_frac_mean;
    bj["l1_mean"] = best->l1_mean;
  } else {
    bj["error"] = "no cell completed";
  }
  std::ofstream bf(root / "best.json", std::ios::trunc);
  bf << bj.dump(2) << '\n';
  return cells;
}

// --- plot data -----------------------------------------------------------------

/// Align run directories into the two benchmark panels: mode fraction and
/// L1 error against trajectories sampled, one series per algorithm-objective
/// pair with mean and standard error across runs. Runs with mismatched metric
/// grids are cut down to the steps common to their series, with a warning.
inline void export_plot_data(const std::vector<std::filesystem::path>& run_dirs,
                             const std::filesystem::path& out_dir) {
  if (run_dirs.empty()) throw ConfigError("plot-data: no run directories given");
  struct Series {
    std::set<std::string> hashes;
    std::vector<detail::CsvTable> tables;
  };
  std::map<std::string, Series> by_label;
  for (const std::filesystem::path& dir : run_dirs) {
    std::ifstream sf(dir / "summary.json");
    if (!sf) throw Error("plot-data: missing summary in " + dir.string());
    nlohmann::json s;
    sf >> s;
    const std::string label = s.at("algorithm").get<std::string>() + "-" +
                              s.at("objective").get<std::string>();
    detail::CsvTable t = detail::read_csv(dir / "metrics.csv");
    t.column("trajectories", "plot-data " + dir.string());
    t.column("modes_frac", "plot-data " + dir.string());
    t.column("l1", "plot-data " + dir.string());
    Series& series = by_label[label];
    series.hashes.insert(s.at("config_hash").get<std::string>());
    series.tables.push_back(std::move(t));
  }

  std::filesystem::create_directories(out_dir);
  auto write_panel = [&](const std::string& metric,
                         const std::filesystem::path& path) {
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw Error("plot-data: cannot write " + path.string());
    for (const auto& [label, series] : by_label) {
      f << "# series=" << label;
      for (const std::string& h : series.hashes) f << " config_hash=" << h;
      f << '\n';
    }
    f << "series,trajectories,mean,stderr\n";
    for (const auto& [label, series] : by_label) {
      const std::size_t scol = series.tables[0].column("step", "plot-data");
      std::set<double> common;
      for (const auto& row : series.tables[0].rows) common.insert(row[scol]);
      bool mismatch = false;
      for (const detail::CsvTable& t : series.tables) {
        std::set<double> steps;
        for (const auto& row : t.rows) steps.insert(row[t.column("step", "plot-data")]);
        if (steps != common) {
          mismatch = true;
          std::set<double> inter;
          for (double s : common) {
            if (steps.count(s)) inter.insert(s);
          }
          common = std::move(inter);
        }
      }
      if (mismatch) {
        std::cerr << "plot-data: metric grids differ within series '" << label
                  << "'; using " << common.size() << " common steps\n";
      }
      if (common.empty()) {
        throw Error("plot-data: no common steps within series '" + label + "'");
      }
      for (double step : common) {
        std::vector<double> xs;
        double traj = 0;
        for (const detail::CsvTable& t : series.tables) {
          const std::size_t sc = t.column("step", "plot-data");
          const std::size_t mc = t.column(metric, "plot-data");
          const std::size_t tc = t.column("trajectories", "plot-data");
          for (const auto& row : t.rows) {
            if (row[sc] == step) {
              xs.push_back(row[mc]);
              traj = row[tc];
              break;
            }
          }
        }
        double mean = 0, se = 0;
        detail::mean_stderr(xs, mean, se);
        f << label << ',' << format_double(traj) << ',' << format_double(mean) << ','
          << format_double(se) << '\n';
      }
    }
  };
  write_panel("modes_frac", out_dir / "modes_frac_panel.csv");
  write_panel("l1", out_dir / "l1_panel.csv");
}

/// Target-table dump for the config's grid: one row per state with its
/// coordinates, reward, and normalized probability.
inline std::filesystem::path export_oracle_table(const ExperimentConfig& cfg) {
  cfg.validate();
  const std::filesystem::path base = resolve_out_dir(cfg.out_dir);
  std::filesystem::create_directories(base);
  TargetTable t = target_distribution(cfg.env);
  std::ofstream f(base / "oracle.csv", std::ios::trunc);
  if (!f) throw Error("oracle: cannot write " + (base / "oracle.csv").string());
  f << "# config_hash=" << config_hash(cfg) << '\n';
  f << "# z=" << format_double(t.z) << '\n';
  for (int d = 0; d < cfg.env.dims; ++d) f << "coord_" << d << ',';
  f << "reward,probability\n";
  for (std::size_t i = 0; i < t.probs.size(); ++i) {
    const GridState s = state_from_index(i, cfg.env);
    for (int d = 0; d < cfg.env.dims; ++d) {
      f << s.coords[static_cast<std::size_t>(d)] << ',';
    }
    f << format_double(t.rewards[i]) << ',' << format_double(t.probs[i]) << '\n';
  }
  return base / "oracle.csv";
}

}  // namespace dgfn
