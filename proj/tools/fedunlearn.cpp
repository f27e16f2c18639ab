// Command-line front end: `fedunlearn run` and `fedunlearn grid`.
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>

#include "fedunlearn/config.hpp"
#include "fedunlearn/errors.hpp"
#include "fedunlearn/experiment.hpp"
#include "fedunlearn/metrics.hpp"
#include "fedunlearn/plot.hpp"

namespace fs = std::filesystem;
using namespace fedunlearn;

namespace {

std::vector<double> parse_grid(const std::string& text) {
  std::vector<double> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    std::size_t used = 0;
    double v = 0.0;
    try {
      v = std::stod(item, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used == 0 || used != item.size()) throw ArgumentError("--lambda-tgt: '" + item + "' is not a number");
    out.push_back(v);
  }
  if (out.empty()) throw ArgumentError("--lambda-tgt: empty grid");
  return out;
}

void write_outputs(const std::string& out, std::span<const MetricsLog> logs, const ExperimentConfig& config,
                   const std::string& selection, bool percent) {
  emit_csv(logs, out + "/metrics.csv");
  emit_metadata(logs, config, out + "/metadata.json", selection);
  PlotOptions popt;
  popt.percent = percent;
  emit_plots(logs, out + "/plots", popt);
}

void prepare_out(const std::string& out) {
  std::error_code ec;
  fs::create_directories(out, ec);
  if (ec) throw IoError("cannot create output directory '" + out + "': " + ec.message());
}


}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Federated learning and unlearning simulator"};
  app.require_subcommand(1);

  std::string config_path, out_dir = "out", strategy, regime, lambda_text;
  double beta = 0.0;
  std::uint64_t seed = 0;
  bool percent = false;

  auto* run = app.add_subcommand("run", "Run FL -> FU -> PU for every configured seed");
  run->add_option("--config", config_path, "JSON config file")->required();
  auto* opt_strategy = run->add_option("--strategy", strategy, "sata|safa|tfs|ctt|federaser");
  auto* opt_regime = run->add_option("--regime", regime, "standard|ntk_linearized");
  auto* opt_beta = run->add_option("--beta", beta, "Dirichlet concentration");
  auto* opt_seed = run->add_option("--seed", seed, "run only this seed");
  auto* opt_lambda = run->add_option("--lambda-tgt", lambda_text, "scaling value or comma-separated grid");
  run->add_option("--out", out_dir, "output directory");
  run->add_flag("--percent", percent, "plot accuracy in percent");

  std::string grid_config, grid_out = "out";
  bool grid_percent = false;
  auto* grid = app.add_subcommand("grid", "Grid search over lr_main x lr_standalone x lambda_tgt");
  grid->add_option("--config", grid_config, "JSON config file")->required();
  grid->add_option("--out", grid_out, "output directory")->required();
  grid->add_flag("--percent", grid_percent, "plot accuracy in percent");

  CLI11_PARSE(app, argc, argv);

  try {
    if (run->parsed()) {
      ExperimentConfig config = load_config(config_path);
      if (*opt_strategy) config.strategy = strategy_from_string(strategy);
      if (*opt_regime) config.regime = regime_from_string(regime);
      if (*opt_beta) config.beta = beta;
      if (*opt_seed) config.seeds = {seed};
      if (*opt_lambda) config.lambda_tgt = parse_grid(lambda_text);
      config.validate();
      prepare_out(out_dir);
      RunOptions ro;
      ro.history_dir = out_dir + "/history";
      if (config.has_grid()) {
        const GridResult g = grid_search(config, ro);
        write_outputs(out_dir, g.logs, config, g.criterion, percent);
        std::ofstream(out_dir + "/best_config.json") << config_to_json_text(g.best) << '\n';
        std::cout << "grid: " << g.logs.size() << " runs, best point " << g.best_index << '\n';
      } else {
        if (config.seeds.size() > 1) {
          std::vector<MetricsLog> logs;
          for (std::uint64_t s : config.seeds) {
            RunOptions per = ro;
            per.history_dir = ro.history_dir + "/" + make_run_id(config, s);
            logs.push_back(run_experiment(config, s, per));
          }
          write_outputs(out_dir, logs, config, {}, percent);
          std::cout << "ran " << logs.size() << " seeds\n";
        } else {
          const MetricsLog log = run_experiment(config, config.seeds.front(), ro);
          write_outputs(out_dir, std::span<const MetricsLog>(&log, 1), config, {}, percent);
          std::cout << log.meta.run_id << ": " << log.rounds.size() << " rounds\n";
        }
      }
    } else {
      ExperimentConfig config = load_config(grid_config);
      prepare_out(grid_out);
      RunOptions ro;
      ro.history_dir = grid_out + "/history";
      const GridResult g = grid_search(config, ro);
      write_outputs(grid_out, g.logs, config, g.criterion, grid_percent);
      std::ofstream(grid_out + "/best_config.json") << config_to_json_text(g.best) << '\n';
      const GridPoint& b = g.points[g.best_index];
      std::cout << "grid: " << g.logs.size() << " runs; best lr_main=" << b.lr_main
                << " lr_standalone=" << b.lr_standalone << " lambda_tgt=" << b.lambda_tgt << '\n';
    }
  } catch (const ConfigError& e) {
    std::cerr << "fedunlearn: invalid configuration:\n";
    for (const auto& p : e.problems()) std::cerr << "  " << p << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "fedunlearn: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
