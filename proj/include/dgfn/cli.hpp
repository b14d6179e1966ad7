#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "dgfn/config.hpp"
#include "dgfn/experiment.hpp"

namespace dgfn {

inline ExperimentConfig load_cli_config(const std::string& config_path,
                                        const std::string& preset) {
  if (config_path.empty() == preset.empty()) {
    throw ConfigError("provide exactly one of --config or --preset");
  }
  if (!preset.empty()) return preset_config(preset);
  std::ifstream f(config_path);
  if (!f) throw ConfigError("cannot read config file " + config_path);
  std::stringstream ss;
  ss << f.rdbuf();
  return parse_config(ss.str());
}

/// Exit codes: 0 success, 2 configuration error, 3 runtime failure.
inline int run_cli(int argc, const char* const* argv) {
  CLI::App app{"Hypergrid benchmark for target-network flow samplers"};
  app.require_subcommand(1);

  std::string config_path, preset, out_override;
  std::vector<std::uint64_t> seed_override;
  bool resume = false;

  CLI::App* train = app.add_subcommand("train", "train one config over its seeds");
  train->add_option("--config", config_path, "TOML config path");
  train->add_option("--preset", preset, "built-in preset name");
  train->add_option("--seeds", seed_override, "seed list override")->delimiter(',');
  train->add_option("--out", out_override, "output directory override");
  train->add_flag("--resume", resume, "continue from existing checkpoints");

  std::vector<std::int64_t> ti_list, tu_list;
  CLI::App* sweep = app.add_subcommand("sweep", "cross schedule values over seeds");
  sweep->add_option("--config", config_path, "TOML config path");
  sweep->add_option("--preset", preset, "built-in preset name");
  sweep->add_option("--ti", ti_list, "initial phase lengths")
      ->delimiter(',')
      ->required();
  sweep->add_option("--tu", tu_list, "update periods")->delimiter(',')->required();
  sweep->add_option("--out", out_override, "output directory override");

  CLI::App* oracle = app.add_subcommand("oracle", "dump the exact target table");
  oracle->add_option("--config", config_path, "TOML config path");
  oracle->add_option("--preset", preset, "built-in preset name");
  oracle->add_option("--out", out_override, "output directory override");

  std::vector<std::string> run_dirs;
  std::string plot_out;
  CLI::App* plot = app.add_subcommand("plot-data", "export panel series from runs");
  plot->add_option("dirs", run_dirs, "run directories (each with metrics.csv)")
      ->required();
  plot->add_option("--out", plot_out, "output directory")->required();

  CLI::App* presets = app.add_subcommand("presets", "list built-in presets");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (presets->parsed()) {
      for (const std::string& name : preset_names()) std::cout << name << '\n';
      return 0;
    }
    if (plot->parsed()) {
      std::vector<std::filesystem::path> dirs(run_dirs.begin(), run_dirs.end());
      export_plot_data(dirs, plot_out);
      std::cout << "wrote " << (std::filesystem::path(plot_out) / "modes_frac_panel.csv").string()
                << " and " << (std::filesystem::path(plot_out) / "l1_panel.csv").string()
                << '\n';
      return 0;
    }

    ExperimentConfig cfg = load_cli_config(config_path, preset);
    if (!seed_override.empty()) cfg.seeds = seed_override;
    if (!out_override.empty()) cfg.out_dir = out_override;
    cfg.validate();

    if (train->parsed()) {
      std::vector<RunOutcome> outs = run_experiment(cfg, resume);
      for (const RunOutcome& o : outs) {
        std::cout << "seed " << o.seed << ": steps=" << o.last.step
                  << " l1=" << format_double(o.last.l1) << " modes=" << o.last.modes
                  << " logZ=" << format_double(o.last.logz);
        if (cfg.oracle_l1) std::cout << " oracle_l1=" << format_double(o.oracle_l1_value);
        std::cout << '\n';
      }
      std::cout << "aggregate: "
                << (resolve_out_dir(cfg.out_dir) / "aggregate.csv").string() << '\n';
      return 0;
    }
    if (sweep->parsed()) {
      SweepSpec spec;
      spec.t_initial = ti_list;
      spec.t_update = tu_list;
      std::vector<SweepCell> cells = run_sweep(cfg, spec);
      const SweepCell* best = nullptr;
      for (const SweepCell& c : cells) {
        if (c.seeds_ok == 0) continue;
        if (!best || c.modes_frac_mean > best->modes_frac_mean ||
            (c.modes_frac_mean == best->modes_frac_mean && c.l1_mean < best->l1_mean)) {
          best = &c;
        }
      }
      std::cout << "sweep: " << cells.size() << " cells, results under "
                << resolve_out_dir(cfg.out_dir).string() << '\n';
      if (best) {
        std::cout << "best cell: t_initial=" << best->t_initial
                  << " t_update=" << best->t_update
                  << " modes_frac=" << format_double(best->modes_frac_mean)
                  << " l1=" << format_double(best->l1_mean) << '\n';
      }
      return 0;
    }
    if (oracle->parsed()) {
      std::cout << "wrote " << export_oracle_table(cfg).string() << '\n';
      return 0;
    }
    throw ConfigError("no subcommand given");
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 2;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 3;
  }
}

}  // namespace dgfn
