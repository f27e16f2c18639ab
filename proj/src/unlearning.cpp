#include "fedunlearn/unlearning.hpp"

#include <algorithm>
#include <cmath>

#include "fedunlearn/errors.hpp"

namespace fedunlearn {

std::string to_string(Strategy s) {
  switch (s) {
    case Strategy::sata: return "sata";
    case Strategy::safa: return "safa";
    case Strategy::tfs: return "tfs";
    case Strategy::ctt: return "ctt";
    case Strategy::federaser: return "federaser";
  }
  return "?";
}

Strategy strategy_from_string(const std::string& s) {
  std::string lower(s);
  std::transform(lower.begin(), lower.end(), lower.begin(), [](unsigned char c) { return std::tolower(c); });
  if (lower == "sata") return Strategy::sata;
  if (lower == "safa") return Strategy::safa;
  if (lower == "tfs") return Strategy::tfs;
  if (lower == "ctt") return Strategy::ctt;
  if (lower == "federaser") return Strategy::federaser;
  throw ArgumentError("unknown strategy '" + s + "' (expected sata, safa, tfs, ctt or federaser)");
}

bool is_single_round(Strategy s) { return s == Strategy::sata || s == Strategy::safa; }

void UnlearnRequest::validate(const std::vector<ClientState>& clients) const {
  if (!std::isfinite(lambda_tgt)) throw ArgumentError("unlearn request: lambda_tgt must be finite");
  find_client(clients, target_id);
}

ParamVector sata_unlearn(ServerState& server, const TaskVector& tau_sa_tgt, double lambda_tgt) {
  if (!tau_sa_tgt.standalone) {
    throw ContractViolation("sata_unlearn: the supplied task vector is not a standalone vector");
  }
  if (tau_sa_tgt.size() != server.theta_hat.size()) throw DimensionError("sata_unlearn: length mismatch");
  if (!std::isfinite(lambda_tgt)) throw ArgumentError("sata_unlearn: lambda_tgt must be finite");
  ++server.comm.uploads;
  const WeightedTask term{-lambda_tgt, std::cref(tau_sa_tgt)};
  CompensatedSum next = combine_compensated(server.theta_hat, server.theta_hat_residual, {&term, 1});
  server.theta_hat = std::move(next.value);
  server.theta_hat_residual = std::move(next.residual);
  return server.theta_hat;
}

ParamVector safa_rebuild(const ParamVector& theta_0, const std::map<ClientId, TaskVector>& standalone,
                         const std::map<ClientId, std::size_t>& sample_counts, ClientId target_id) {
  std::map<ClientId, std::size_t> remaining;
  for (const auto& [id, n] : sample_counts) {
    if (id != target_id && standalone.count(id)) remaining[id] = n;
  }
  if (remaining.empty()) throw DegenerateInputError("safa_rebuild: no remaining clients");
  const auto weights = fedavg_weights(remaining);
  std::vector<WeightedTask> terms;
  for (const auto& [id, lam] : weights) {
    const TaskVector& tau = standalone.at(id);
    if (!tau.standalone) {
      throw ContractViolation("safa_rebuild: vector of client " + std::to_string(id) + " is not standalone");
    }
    terms.push_back({lam, std::cref(tau)});
  }
  return combine(theta_0, terms);
}

void tfs_restart(ServerState& server, std::vector<ClientState>& clients,
                 std::vector<ClientId>& participants, ClientId target_id, const TrainingSetup& setup) {
  find_client(clients, target_id);
  server.set_model(server.theta_0);
  server.anchor = server.theta_0;
  server.history.clear();
  server.lambda.clear();
  server.round_index = 0;
  participants.erase(std::remove(participants.begin(), participants.end(), target_id), participants.end());
  for (ClientId id : participants) find_client(clients, id).reset(setup);
}

std::vector<ClientId> ctt_continue(const ServerState& /*server*/, const std::vector<ClientId>& participants,
                                   ClientId target_id) {
  std::vector<ClientId> out;
  for (ClientId id : participants) {
    if (id != target_id) out.push_back(id);
  }
  return out;
}

FedEraserRecovery::FedEraserRecovery(const ServerState& server, std::vector<ClientId> remaining,
                                     ClientId target_id, std::size_t calibration_epochs,
                                     const TrainingSetup& setup, Calibrator calibrator)
    : stored_(server.history),
      remaining_(std::move(remaining)),
      target_(target_id),
      calibration_epochs_(calibration_epochs),
      setup_(setup),
      calibrator_(std::move(calibrator)),
      theta_0_(server.theta_0),
      current_(server.theta_0),
      anchor_(server.theta_0) {
  if (calibration_epochs_ == 0) throw ArgumentError("federaser: calibration_epochs must be >= 1");
  if (stored_.empty()) throw InconsistentStateError("federaser: no stored round history");
  for (std::size_t i = 0; i < stored_.size(); ++i) {
    if (stored_[i].round != i + 1) {
      throw InconsistentStateError("federaser: stored history is missing round " + std::to_string(i + 1));
    }
  }
  remaining_.erase(std::remove(remaining_.begin(), remaining_.end(), target_), remaining_.end());
  std::sort(remaining_.begin(), remaining_.end());
  if (remaining_.empty()) throw DegenerateInputError("federaser: no remaining clients");
  const std::size_t d = theta_0_.size();
  for (ClientId id : remaining_) calib_opt_.emplace(id, AdamWState::init(d, setup_.opt_main));
}

const ParamVector& FedEraserRecovery::step(std::vector<ClientState>& clients, CommCounter& comm) {
  if (finished()) throw InconsistentStateError("federaser: all stored rounds already recalibrated");
  const RoundHistory& stored = stored_[next_];
  anchor_ = setup_.anchor_mode == AnchorMode::round ? current_ : theta_0_;
  const ParamVector base = current_;

  std::vector<TaskVector> recal;
  std::map<ClientId, std::size_t> counts;
  std::vector<ClientId> used;
  for (ClientId id : remaining_) {
    const auto it = std::find_if(stored.entries.begin(), stored.entries.end(),
                                 [&](const HistoryEntry& e) { return e.client == id; });
    if (it == stored.entries.end()) continue;  // client did not take part in this round
    ClientState& client = find_client(clients, id);
    ++comm.downloads;
    TaskVector calib;
    if (calibrator_) {
      calib = calibrator_(client, base, anchor_, stored.round);
    } else {
      calib = make_task_vector(ParamVector::zeros(base.size()), id, client.regime, false);
      const std::uint64_t steps =
          train_task_vector(calib, calib_opt_.at(id), client.train_data, base, anchor_, setup_,
                            client.regime, {calibration_epochs_, setup_.batch_size}, id, 1, stored.round);
      client.train_steps += steps;
      comm.client_train_steps += steps;
    }
    ++comm.uploads;

    const double stored_norm = it->update.norm();
    const double calib_norm = calib.delta.norm();
    RecalibrationRecord rec{stored.round, id, stored_norm, 0.0, false};
    if (calib_norm == 0.0) {
      rec.skipped = true;
      warnings_.push_back("federaser: round " + std::to_string(stored.round) + ", client " +
                          std::to_string(id) + ": zero-norm calibration update, client skipped");
      trace_.push_back(rec);
      continue;
    }
    ParamVector r = scale(calib.delta, stored_norm / calib_norm);
    rec.recalibrated_norm = r.norm();
    trace_.push_back(rec);
    recal.push_back(make_task_vector(std::move(r), id, client.regime, false));
    counts[id] = it->sample_count;
    used.push_back(id);
  }

  RoundHistory rebuilt;
  rebuilt.round = stored.round;
  if (!recal.empty()) {
    const auto weights = fedavg_weights(counts);
    std::vector<WeightedTask> terms;
    for (std::size_t i = 0; i < recal.size(); ++i) {
      const double lam = weights.at(used[i]);
      terms.push_back({lam, std::cref(recal[i])});
      rebuilt.entries.push_back({used[i], recal[i].delta, counts[used[i]], lam});
    }
    current_ = combine(current_, terms);
  }
  rebuilt_.push_back(std::move(rebuilt));
  ++comm.calibration_rounds;
  ++next_;
  return current_;
}

ParamVector federaser_recover(ServerState& server, std::vector<ClientState>& clients,
                              std::vector<ClientId>& participants, ClientId target_id,
                              std::size_t calibration_epochs, const TrainingSetup& setup,
                              std::vector<RecalibrationRecord>* trace) {
  FedEraserRecovery recovery(server, participants, target_id, calibration_epochs, setup);
  while (!recovery.finished()) recovery.step(clients, server.comm);
  server.set_model(recovery.reconstruction());
  server.anchor = recovery.anchor();
  server.history = recovery.recalibrated_history();
  server.round_index = server.history.size();
  participants.erase(std::remove(participants.begin(), participants.end(), target_id), participants.end());
  if (trace) *trace = recovery.trace();
  return server.theta_hat;
}

}  // namespace fedunlearn
