#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "fedunlearn/config.hpp"
#include "fedunlearn/federation.hpp"
#include "fedunlearn/unlearning.hpp"

namespace fedunlearn {

struct RunMetadata {
  std::string run_id;
  std::string config_hash;
  std::string dataset;
  std::uint64_t seed = 0;
  Strategy strategy = Strategy::sata;
  Regime regime = Regime::ntk_linearized;
  double beta = 0.0;
  double lambda_tgt = 0.0;
  double lr_main = 0.0;
  double lr_standalone = 0.0;
  ClientId target_id = 0;
  std::vector<ClientId> client_ids;
  PhaseRounds phases;  // as executed
  double pretrained_global_accuracy = 0.0;
  // traffic between the unlearning request and the first cleansed model
  CommCounter unlearn_comm;
  CommCounter total_comm;
  std::vector<RecalibrationRecord> federaser_trace;
  std::vector<std::string> warnings;
};

/// Every RoundReport of one run, in round order, plus provenance.
struct MetricsLog {
  RunMetadata meta;
  std::vector<RoundReport> rounds;

  /// Report of the first FU round, if the run had one.
  const RoundReport* first_unlearning_round() const;
  const RoundReport* last_round() const;
};

struct RunOptions {
  // When set, every aggregation is persisted here (see HistoryStore).
  std::string history_dir;
};

/// FL -> FU -> PU pipeline for one seed. Every grid axis must be a singleton.
MetricsLog run_experiment(const ExperimentConfig& config, std::uint64_t seed, const RunOptions& options = {});

/// Runs config.seeds in order.
std::vector<MetricsLog> run_all_seeds(const ExperimentConfig& config, const RunOptions& options = {});

struct GridPoint {
  double lr_main = 0.0;
  double lr_standalone = 0.0;
  double lambda_tgt = 0.0;
  // means over seeds
  double first_fu_target_accuracy = 0.0;
  double final_global_accuracy = 0.0;
  bool eligible = false;
};

struct GridResult {
  ExperimentConfig best;
  std::size_t best_index = 0;
  std::vector<GridPoint> points;
  std::vector<MetricsLog> logs;  // points.size() * seeds, point-major
  std::string criterion;
};

/// Expands the Cartesian product of the lr_main x lr_standalone x lambda_tgt
/// grids into singleton configs (lambda fastest).
std::vector<ExperimentConfig> expand_grid(const ExperimentConfig& config);

/// Picks the point with the lowest first-FU target accuracy among those whose
/// final global accuracy is within `slack` of the best. Ties keep grid order.
std::size_t select_grid_point(std::vector<GridPoint>& points, double slack);

GridResult grid_search(const ExperimentConfig& config, const RunOptions& options = {});

std::string make_run_id(const ExperimentConfig& config, std::uint64_t seed);

}  // namespace fedunlearn
