#pragma once

#include <cstddef>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "fedunlearn/federation.hpp"
#include "fedunlearn/param_space.hpp"

namespace fedunlearn {

enum class Strategy { sata, safa, tfs, ctt, federaser };

std::string to_string(Strategy s);
Strategy strategy_from_string(const std::string& s);
bool is_single_round(Strategy s);

struct UnlearnRequest {
  ClientId target_id = 0;
  double lambda_tgt = 1.0;
  Strategy strategy = Strategy::sata;
  Regime regime = Regime::ntk_linearized;

  void validate(const std::vector<ClientState>& clients) const;
};

/// theta_clean = theta_hat - lambda_tgt * tau_sa, in one step. Replaces the
/// server model and counts the single upload of tau_sa. The linearization
/// anchor is left where the last aggregation put it.
ParamVector sata_unlearn(ServerState& server, const TaskVector& tau_sa_tgt, double lambda_tgt);

/// theta_0 + sum_{i != target} lambda_i tau_i^sa with FedAvg weights over the
/// remaining clients. The target's entry, if present, is never read.
ParamVector safa_rebuild(const ParamVector& theta_0, const std::map<ClientId, TaskVector>& standalone,
                         const std::map<ClientId, std::size_t>& sample_counts, ClientId target_id);

/// Train-from-scratch: server back to theta_0 with empty history, the target
/// dropped, and every remaining client reset to a fresh state.
void tfs_restart(ServerState& server, std::vector<ClientState>& clients,
                 std::vector<ClientId>& participants, ClientId target_id, const TrainingSetup& setup);

/// Continue-to-train: the target simply stops participating.
std::vector<ClientId> ctt_continue(const ServerState& server, const std::vector<ClientId>& participants,
                                   ClientId target_id);

struct RecalibrationRecord {
  std::size_t round = 0;
  ClientId client = 0;
  double stored_norm = 0.0;
  double recalibrated_norm = 0.0;
  bool skipped = false;
};

/// Produces a calibration update for `client`, trained from `base`.
using Calibrator = std::function<TaskVector(ClientState& client, const ParamVector& base,
                                            const ParamVector& anchor, std::size_t stored_round)>;

/// FedEraser reconstruction, one stored round per step. Starting from
/// theta_0, every remaining client trains a short calibration update from the
/// current reconstruction; the stored update's norm is kept and its direction
/// replaced by the calibration direction. The recalibrated updates are
/// combined with FedAvg weights that exclude the target.
class FedEraserRecovery {
 public:
  FedEraserRecovery(const ServerState& server, std::vector<ClientId> remaining, ClientId target_id,
                    std::size_t calibration_epochs, const TrainingSetup& setup,
                    Calibrator calibrator = {});

  bool finished() const noexcept { return next_ >= stored_.size(); }
  std::size_t rounds_total() const noexcept { return stored_.size(); }

  /// Runs the next calibration round; returns the updated reconstruction.
  const ParamVector& step(std::vector<ClientState>& clients, CommCounter& comm);

  const ParamVector& reconstruction() const noexcept { return current_; }
  const ParamVector& anchor() const noexcept { return anchor_; }
  const std::vector<RoundHistory>& recalibrated_history() const noexcept { return rebuilt_; }
  const std::vector<RecalibrationRecord>& trace() const noexcept { return trace_; }
  const std::vector<std::string>& warnings() const noexcept { return warnings_; }

 private:
  std::vector<RoundHistory> stored_;
  std::vector<ClientId> remaining_;
  ClientId target_;
  std::size_t calibration_epochs_;
  const TrainingSetup& setup_;
  Calibrator calibrator_;
  ParamVector theta_0_;
  ParamVector current_;
  ParamVector anchor_;
  std::size_t next_ = 0;
  std::map<ClientId, AdamWState> calib_opt_;
  std::vector<RoundHistory> rebuilt_;
  std::vector<RecalibrationRecord> trace_;
  std::vector<std::string> warnings_;
};

/// Runs every calibration round and installs the reconstruction on the server.
ParamVector federaser_recover(ServerState& server, std::vector<ClientState>& clients,
                              std::vector<ClientId>& participants, ClientId target_id,
                              std::size_t calibration_epochs, const TrainingSetup& setup,
                              std::vector<RecalibrationRecord>* trace = nullptr);

}  // namespace fedunlearn
