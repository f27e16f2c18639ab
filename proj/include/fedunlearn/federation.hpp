#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "fedunlearn/adamw.hpp"
#include "fedunlearn/data.hpp"
#include "fedunlearn/model.hpp"
#include "fedunlearn/param_space.hpp"

namespace fedunlearn {

enum class Phase { FL, FU, PU };

std::string to_string(Phase p);
Phase phase_from_string(const std::string& s);

/// Where the linearized model is expanded when training the main vectors:
/// at the broadcast model of the current round, or always at the pre-train.
enum class AnchorMode { round, pretrained };

std::string to_string(AnchorMode m);
AnchorMode anchor_mode_from_string(const std::string& s);

/// Read-only model and optimization settings shared by every client in a run.
struct TrainingSetup {
  ModelSpec spec;
  FrozenHead head;
  Regime regime = Regime::standard;
  AnchorMode anchor_mode = AnchorMode::round;
  std::size_t epochs = 3;
  std::size_t batch_size = 32;
  AdamWConfig opt_main;
  AdamWConfig opt_standalone;
  std::uint64_t seed = 0;
};

struct ClientState {
  ClientId id = 0;
  Dataset train_data;
  Dataset test_data;
  TaskVector tau_main;
  TaskVector tau_standalone;
  AdamWState opt_main;
  AdamWState opt_standalone;
  Regime regime = Regime::standard;
  // Rounds this client has trained in since it (re)joined; seeds batch shuffling.
  std::size_t local_round = 0;
  std::uint64_t train_steps = 0;

  static ClientState create(ClientId id, Dataset train, Dataset test, const TrainingSetup& setup);
  /// Forget all training: zero task vectors, fresh optimizers, round counter at 0.
  void reset(const TrainingSetup& setup);
};

struct ClientUpdate {
  TaskVector tau;
  std::size_t sample_count = 0;
};

struct HistoryEntry {
  ClientId client = 0;
  ParamVector update;
  std::size_t sample_count = 0;
  double lambda = 0.0;
};

struct RoundHistory {
  std::size_t round = 0;  // 1-based aggregation index
  std::vector<HistoryEntry> entries;  // ascending client id
};

/// Counts client<->server traffic and client-side optimizer steps.
struct CommCounter {
  std::uint64_t uploads = 0;
  std::uint64_t downloads = 0;
  std::uint64_t client_train_steps = 0;
  std::uint64_t calibration_rounds = 0;

  friend bool operator==(const CommCounter&, const CommCounter&) = default;
};

struct ServerState {
  ParamVector theta_0;
  ParamVector theta_hat;
  // Rounding error carried alongside theta_hat by aggregation and SATA, so that
  // subtracting an update that was added earlier lands exactly where it started.
  std::vector<double> theta_hat_residual;
  // Expansion point used to evaluate theta_hat in the linearized regime.
  ParamVector anchor;
  std::size_t round_index = 0;
  std::vector<RoundHistory> history;
  std::map<ClientId, double> lambda;
  CommCounter comm;

  static ServerState create(ParamVector theta_0);
  /// Replaces the global model outright, dropping the carried residual.
  void set_model(ParamVector theta);
};

struct RoundReport {
  std::size_t round_index = 0;
  Phase phase = Phase::FL;
  double global_test_accuracy = 0.0;
  double target_test_accuracy = 0.0;
  // Pooled test accuracy over every client except the target.
  double retain_test_accuracy = 0.0;
  std::map<ClientId, double> per_client_accuracy;

  friend bool operator==(const RoundReport&, const RoundReport&) = default;
};

struct LocalTrainOptions {
  std::size_t epochs = 1;
  std::size_t batch_size = 32;
};

/// Trains `tau` in place with `opt` on `data`. In the standard regime the
/// loss is evaluated at base + tau; in the linearized regime at the
/// first-order expansion around `anchor` with offset (base - anchor) + tau.
/// Batches are shuffled with a seed derived from (seed, client, stream,
/// round, epoch). Returns the number of optimizer steps taken.
std::uint64_t train_task_vector(TaskVector& tau, AdamWState& opt, const Dataset& data,
                                const ParamVector& base, const ParamVector& anchor,
                                const TrainingSetup& setup, Regime regime, LocalTrainOptions options,
                                ClientId client, std::uint64_t stream, std::size_t round);

/// Continues the client's main task vector from `base` for setup.epochs.
const TaskVector& client_local_train(ClientState& client, const ParamVector& base,
                                     const ParamVector& anchor, const TrainingSetup& setup);

/// Continues the standalone vector, always expanded at and added to theta_0.
const TaskVector& client_standalone_train(ClientState& client, const ParamVector& theta_0,
                                          const TrainingSetup& setup);

/// FedAvg weights n_k / sum n over the given clients.
std::map<ClientId, double> fedavg_weights(const std::map<ClientId, std::size_t>& sample_counts);

/// theta_hat <- theta_hat + sum_k lambda_k tau_k (ascending client id), with
/// lambda_k the FedAvg weights. Appends the round to history.
const ParamVector& aggregate(ServerState& server, const std::map<ClientId, ClientUpdate>& updates);

/// theta_0 plus the weighted sum of every stored round.
ParamVector replay_history(const ParamVector& theta_0, const std::vector<RoundHistory>& history);

struct EvalContext {
  const Dataset* global_test = nullptr;
  ClientId target = 0;
};

double accuracy(const Matrix& logits, const std::vector<int>& labels);

/// Argmax accuracy; in the linearized regime logits come from the expansion
/// at `anchor` evaluated at theta.
double evaluate(const TrainingSetup& setup, const ParamVector& theta, const Dataset& data,
                Regime regime, const ParamVector& anchor);

RoundReport evaluate_round(const ServerState& server, const std::vector<ClientState>& clients,
                           const TrainingSetup& setup, const EvalContext& ctx, Phase phase,
                           std::size_t round_index);

ClientState& find_client(std::vector<ClientState>& clients, ClientId id);
const ClientState& find_client(const std::vector<ClientState>& clients, ClientId id);

/// Broadcast, local training of both vectors, aggregation, evaluation.
RoundReport run_round(ServerState& server, std::vector<ClientState>& clients,
                      const std::vector<ClientId>& participants, Phase phase,
                      const TrainingSetup& setup, const EvalContext& ctx, std::size_t report_round);

/// Round-history persistence:
///   <dir>/round_<r>/client_<k>.pv   (ParamVector binary)
///   <dir>/index.tsv                 (round, client, sample_count, lambda)
class HistoryStore {
 public:
  explicit HistoryStore(std::string dir);

  void append(const RoundHistory& round);
  std::vector<RoundHistory> load() const;
  const std::string& dir() const noexcept { return dir_; }

 private:
  std::string dir_;
};

}  // namespace fedunlearn
