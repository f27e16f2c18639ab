#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "fedunlearn/federation.hpp"
#include "fedunlearn/model.hpp"
#include "fedunlearn/unlearning.hpp"

namespace fedunlearn {

struct DataConfig {
  std::string source = "synthetic";  // "synthetic" or "csv"
  std::string name = "synthetic";
  // synthetic generator
  std::size_t samples_per_class = 60;
  std::size_t pretrain_samples_per_class = 10;
  std::size_t test_samples_per_class = 40;
  double class_separation = 3.0;
  // csv ingestion: pretrain/test splits are carved out of the file when not given
  std::string csv_path;
  std::string pretrain_csv_path;
  std::string test_csv_path;
  double pretrain_fraction = 0.2;
  double global_test_fraction = 0.2;
  // per-client held-out fraction
  double test_fraction = 0.2;
  // classes owned entirely by the target client; empty disables the scenario
  std::vector<int> exclusive_classes;
};

struct PretrainConfig {
  std::size_t epochs = 2;
  std::size_t batch_size = 32;
  double lr = 1e-3;
  std::string theta0_path;  // load instead of training when set
};

struct PhaseRounds {
  std::size_t fl = 3;
  std::size_t fu = 3;
  std::size_t pu = 3;

  std::size_t total() const noexcept { return fl + fu + pu; }
  friend bool operator==(const PhaseRounds&, const PhaseRounds&) = default;
};

struct ExperimentConfig {
  ModelSpec model;
  DataConfig data;
  PretrainConfig pretrain;

  std::size_t clients = 5;
  double beta = 0.1;
  std::vector<std::uint64_t> seeds{0};
  PhaseRounds phase_rounds;
  bool parity = true;
  std::size_t epochs_per_round = 3;
  std::size_t batch_size = 32;
  std::vector<double> lr_main{1e-3};
  std::vector<double> lr_standalone{1e-3};
  double weight_decay = 0.01;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;

  Strategy strategy = Strategy::sata;
  Regime regime = Regime::ntk_linearized;
  AnchorMode anchor = AnchorMode::round;
  std::vector<double> lambda_tgt{1.0};
  ClientId target_id = 0;
  std::size_t calibration_epochs = 1;

  // grid selection: keep runs whose final global accuracy is within this
  // much of the grid's best, then take the lowest first-FU target accuracy
  double grid_global_slack = 0.05;

  /// Throws ConfigError listing every invalid field.
  void validate() const;
  bool has_grid() const noexcept;
};

ExperimentConfig load_config(const std::string& path);
ExperimentConfig config_from_json_text(const std::string& text);
std::string config_to_json_text(const ExperimentConfig& config);

/// FNV-1a over the canonical JSON form, as 16 hex digits.
std::string config_hash(const ExperimentConfig& config);

/// Per-phase round counts actually executed for the configured strategy.
/// With parity on, single-round strategies get one FU round and FedEraser
/// one round per stored FL round; PU absorbs the difference so the total
/// matches fl + fu + pu.
PhaseRounds plan_phases(const ExperimentConfig& config);

}  // namespace fedunlearn
