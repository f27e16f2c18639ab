#include "fedunlearn/federation.hpp"

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <sstream>

#include "fedunlearn/errors.hpp"
#include "fedunlearn/rng.hpp"

namespace fedunlearn {

namespace fs = std::filesystem;

std::string to_string(Phase p) {
  switch (p) {
    case Phase::FL: return "FL";
    case Phase::FU: return "FU";
    case Phase::PU: return "PU";
  }
  return "?";
}

Phase phase_from_string(const std::string& s) {
  if (s == "FL") return Phase::FL;
  if (s == "FU") return Phase::FU;
  if (s == "PU") return Phase::PU;
  throw ArgumentError("unknown phase '" + s + "'");
}

std::string to_string(AnchorMode m) { return m == AnchorMode::round ? "round" : "pretrained"; }

AnchorMode anchor_mode_from_string(const std::string& s) {
  if (s == "round") return AnchorMode::round;
  if (s == "pretrained") return AnchorMode::pretrained;
  throw ArgumentError("unknown anchor mode '" + s + "'");
}

ClientState ClientState::create(ClientId id, Dataset train, Dataset test, const TrainingSetup& setup) {
  ClientState c;
  c.id = id;
  c.train_data = std::move(train);
  c.test_data = std::move(test);
  c.reset(setup);
  return c;
}

void ClientState::reset(const TrainingSetup& setup) {
  const std::size_t d = parameter_count(setup.spec);
  regime = setup.regime;
  tau_main = make_task_vector(ParamVector::zeros(d), id, regime, false);
  tau_standalone = make_task_vector(ParamVector::zeros(d), id, regime, true);
  opt_main = AdamWState::init(d, setup.opt_main);
  opt_standalone = AdamWState::init(d, setup.opt_standalone);
  local_round = 0;
  train_steps = 0;
}

void ServerState::set_model(ParamVector theta) {
  theta_hat = std::move(theta);
  theta_hat_residual.clear();
}

ServerState ServerState::create(ParamVector theta_0) {
  ServerState s;
  s.theta_hat = theta_0;
  s.anchor = theta_0;
  s.theta_0 = std::move(theta_0);
  return s;
}

std::uint64_t train_task_vector(TaskVector& tau, AdamWState& opt, const Dataset& data,
                                const ParamVector& base, const ParamVector& anchor,
                                const TrainingSetup& setup, Regime regime, LocalTrainOptions options,
                                ClientId client, std::uint64_t stream, std::size_t round) {
  if (data.size() == 0) throw DegenerateInputError("client " + std::to_string(client) + ": empty train split");
  if (options.epochs == 0) throw ArgumentError("local training needs at least one epoch");
  if (options.batch_size == 0) throw ArgumentError("batch_size must be positive");
  const std::size_t d = tau.size();
  if (base.size() != d || anchor.size() != d) throw DimensionError("local training: base/anchor length mismatch");

  const ParamVector offset = subtract(base, anchor);
  std::uint64_t steps = 0;
  std::vector<std::size_t> order(data.size());
  ParamVector current = tau.delta;
  for (std::size_t epoch = 0; epoch < options.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), 0);
    Engine eng(derive_seed(setup.seed, {static_cast<std::uint64_t>(client), stream, round, epoch}));
    std::shuffle(order.begin(), order.end(), eng);
    for (std::size_t start = 0; start < order.size(); start += options.batch_size) {
      const std::size_t stop = std::min(order.size(), start + options.batch_size);
      const Batch batch = data.batch(std::vector<std::size_t>(order.begin() + static_cast<std::ptrdiff_t>(start),
                                                              order.begin() + static_cast<std::ptrdiff_t>(stop)));
      const LossGrad lg = regime == Regime::standard
                              ? loss_and_grad(setup.spec, setup.head, add(base, current), batch)
                              : linearized_loss_and_grad(setup.spec, setup.head, anchor,
                                                         add(offset, current), batch);
      AdamWStep step = adamw_step(opt, current, lg.grad);
      current = std::move(step.theta);
      opt = std::move(step.state);
      ++steps;
    }
  }
  tau.delta = std::move(current);
  tau.residual.clear();
  return steps;
}

const TaskVector& client_local_train(ClientState& client, const ParamVector& base,
                                     const ParamVector& anchor, const TrainingSetup& setup) {
  client.train_steps += train_task_vector(client.tau_main, client.opt_main, client.train_data, base,
                                          anchor, setup, client.regime,
                                          {setup.epochs, setup.batch_size}, client.id, 0,
                                          client.local_round);
  return client.tau_main;
}

const TaskVector& client_standalone_train(ClientState& client, const ParamVector& theta_0,
                                          const TrainingSetup& setup) {
  client.train_steps += train_task_vector(client.tau_standalone, client.opt_standalone,
                                          client.train_data, theta_0, theta_0, setup, client.regime,
                                          {setup.epochs, setup.batch_size}, client.id, 0,
                                          client.local_round);
  return client.tau_standalone;
}

std::map<ClientId, double> fedavg_weights(const std::map<ClientId, std::size_t>& sample_counts) {
  std::size_t total = 0;
  for (const auto& [id, n] : sample_counts) total += n;
  if (total == 0) throw DegenerateInputError("fedavg: total sample count is zero");
  std::map<ClientId, double> w;
  for (const auto& [id, n] : sample_counts) w[id] = static_cast<double>(n) / static_cast<double>(total);
  return w;
}

const ParamVector& aggregate(ServerState& server, const std::map<ClientId, ClientUpdate>& updates) {
  if (updates.empty()) throw ArgumentError("aggregate: no client updates");
  std::map<ClientId, std::size_t> counts;
  for (const auto& [id, u] : updates) {
    if (u.tau.size() != server.theta_hat.size()) {
      throw DimensionError("aggregate: update from client " + std::to_string(id) + " has wrong length");
    }
    counts[id] = u.sample_count;
  }
  const auto weights = fedavg_weights(counts);
  std::vector<WeightedTask> terms;
  RoundHistory record;
  record.round = server.round_index + 1;
  for (const auto& [id, u] : updates) {
    const double lam = weights.at(id);
    terms.push_back({lam, std::cref(u.tau)});
    record.entries.push_back({id, u.tau.delta, u.sample_count, lam});
    server.lambda[id] = lam;
  }
  CompensatedSum next = combine_compensated(server.theta_hat, server.theta_hat_residual, terms);
  server.theta_hat = std::move(next.value);
  server.theta_hat_residual = std::move(next.residual);
  server.history.push_back(std::move(record));
  ++server.round_index;
  return server.theta_hat;
}

ParamVector replay_history(const ParamVector& theta_0, const std::vector<RoundHistory>& history) {
  std::vector<TaskVector> taus;
  std::vector<double> lambdas;
  for (const auto& round : history) {
    for (const auto& e : round.entries) {
      taus.push_back(make_task_vector(e.update));
      lambdas.push_back(e.lambda);
    }
  }
  std::vector<WeightedTask> terms;
  for (std::size_t i = 0; i < taus.size(); ++i) terms.push_back({lambdas[i], std::cref(taus[i])});
  return combine(theta_0, terms);
}

double accuracy(const Matrix& logits, const std::vector<int>& labels) {
  if (logits.rows != labels.size()) throw DimensionError("accuracy: label count mismatch");
  if (labels.empty()) throw DegenerateInputError("accuracy: empty dataset");
  std::size_t correct = 0;
  for (std::size_t s = 0; s < logits.rows; ++s) {
    const auto row = logits.row(s);
    const auto best = static_cast<int>(std::max_element(row.begin(), row.end()) - row.begin());
    if (best == labels[s]) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(labels.size());
}

double evaluate(const TrainingSetup& setup, const ParamVector& theta, const Dataset& data,
                Regime regime, const ParamVector& anchor) {
  if (data.size() == 0) throw DegenerateInputError("evaluate: empty dataset");
  const Matrix logits = regime == Regime::standard
                            ? forward(setup.spec, setup.head, theta, data.inputs)
                            : linearized_forward(setup.spec, setup.head, anchor,
                                                 subtract(theta, anchor), data.inputs);
  return accuracy(logits, data.labels);
}

ClientState& find_client(std::vector<ClientState>& clients, ClientId id) {
  for (auto& c : clients) {
    if (c.id == id) return c;
  }
  throw ArgumentError("unknown client " + std::to_string(id));
}

const ClientState& find_client(const std::vector<ClientState>& clients, ClientId id) {
  for (const auto& c : clients) {
    if (c.id == id) return c;
  }
  throw ArgumentError("unknown client " + std::to_string(id));
}

RoundReport evaluate_round(const ServerState& server, const std::vector<ClientState>& clients,
                           const TrainingSetup& setup, const EvalContext& ctx, Phase phase,
                           std::size_t round_index) {
  RoundReport r;
  r.round_index = round_index;
  r.phase = phase;
  if (ctx.global_test) {
    r.global_test_accuracy = evaluate(setup, server.theta_hat, *ctx.global_test, setup.regime, server.anchor);
  }
  double retain_correct = 0.0;
  double retain_total = 0.0;
  for (const auto& c : clients) {
    const double acc = evaluate(setup, server.theta_hat, c.test_data, setup.regime, server.anchor);
    r.per_client_accuracy[c.id] = acc;
    if (c.id == ctx.target) {
      r.target_test_accuracy = acc;
    } else {
      const auto n = static_cast<double>(c.test_data.size());
      retain_correct += acc * n;
      retain_total += n;
    }
  }
  r.retain_test_accuracy = retain_total > 0.0 ? retain_correct / retain_total : 0.0;
  return r;
}

RoundReport run_round(ServerState& server, std::vector<ClientState>& clients,
                      const std::vector<ClientId>& participants, Phase phase,
                      const TrainingSetup& setup, const EvalContext& ctx, std::size_t report_round) {
  if (participants.empty()) throw ArgumentError("run_round: no participating clients");
  server.anchor = setup.anchor_mode == AnchorMode::round ? server.theta_hat : server.theta_0;
  const ParamVector base = server.theta_hat;

  std::vector<ClientId> order(participants);
  std::sort(order.begin(), order.end());
  std::map<ClientId, ClientUpdate> updates;
  for (ClientId id : order) {
    ClientState& c = find_client(clients, id);
    ++server.comm.downloads;
    const std::uint64_t before = c.train_steps;
    c.tau_main = make_task_vector(ParamVector::zeros(base.size()), c.id, c.regime, false);
    client_local_train(c, base, server.anchor, setup);
    client_standalone_train(c, server.theta_0, setup);
    ++c.local_round;
    server.comm.client_train_steps += c.train_steps - before;
    updates[id] = ClientUpdate{c.tau_main, c.train_data.size()};
    ++server.comm.uploads;
  }
  aggregate(server, updates);
  return evaluate_round(server, clients, setup, ctx, phase, report_round);
}

HistoryStore::HistoryStore(std::string dir) : dir_(std::move(dir)) {
  std::error_code ec;
  fs::create_directories(dir_, ec);
  if (ec) throw IoError("cannot create history directory '" + dir_ + "': " + ec.message());
  // Start clean: stale rounds from an earlier run would corrupt the index.
  fs::remove(fs::path(dir_) / "index.tsv", ec);
  for (const auto& entry : fs::directory_iterator(dir_)) {
    if (entry.is_directory() && entry.path().filename().string().rfind("round_", 0) == 0) {
      fs::remove_all(entry.path(), ec);
    }
  }
}

void HistoryStore::append(const RoundHistory& round) {
  const fs::path round_dir = fs::path(dir_) / ("round_" + std::to_string(round.round));
  std::error_code ec;
  fs::create_directories(round_dir, ec);
  if (ec) throw IoError("cannot create '" + round_dir.string() + "': " + ec.message());
  for (const auto& e : round.entries) {
    save_param_vector((round_dir / ("client_" + std::to_string(e.client) + ".pv")).string(), e.update);
  }
  const fs::path index = fs::path(dir_) / "index.tsv";
  const bool fresh = !fs::exists(index);
  std::ofstream out(index, std::ios::app);
  if (!out) throw IoError("cannot open '" + index.string() + "' for appending");
  if (fresh) out << "round\tclient\tsample_count\tlambda\n";
  char buf[64];
  for (const auto& e : round.entries) {
    std::snprintf(buf, sizeof buf, "%.17g", e.lambda);
    out << round.round << '\t' << e.client << '\t' << e.sample_count << '\t' << buf << '\n';
  }
  if (!out) throw IoError("write failed on '" + index.string() + "'");
}

std::vector<RoundHistory> HistoryStore::load() const {
  const fs::path index = fs::path(dir_) / "index.tsv";
  if (!fs::exists(index)) return {};  // nothing appended yet
  std::ifstream in(index);
  if (!in) throw IoError("cannot open '" + index.string() + "'");
  std::string line;
  std::getline(in, line);
  std::vector<RoundHistory> rounds;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::istringstream fields(line);
    std::size_t round = 0;
    ClientId client = 0;
    std::size_t count = 0;
    std::string lam;
    if (!(fields >> round >> client >> count >> lam)) {
      throw ParseError(index.string() + ": line " + std::to_string(lineno) + " is malformed");
    }
    if (rounds.empty() || rounds.back().round != round) rounds.push_back({round, {}});
    const fs::path file = fs::path(dir_) / ("round_" + std::to_string(round)) /
                          ("client_" + std::to_string(client) + ".pv");
    rounds.back().entries.push_back({client, load_param_vector(file.string()), count, std::stod(lam)});
  }
  return rounds;
}

}  // namespace fedunlearn
