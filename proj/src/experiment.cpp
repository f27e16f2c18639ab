#include "fedunlearn/experiment.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numeric>

#include "fedunlearn/errors.hpp"
#include "fedunlearn/rng.hpp"

namespace fedunlearn {

const RoundReport* MetricsLog::first_unlearning_round() const {
  for (const auto& r : rounds) {
    if (r.phase == Phase::FU) return &r;
  }
  return nullptr;
}

const RoundReport* MetricsLog::last_round() const { return rounds.empty() ? nullptr : &rounds.back(); }

namespace {

enum SeedTag : std::uint64_t {
  kStructure = 1,
  kPretrainData,
  kPoolData,
  kTestData,
  kInit,
  kPartition,
  kClientSplit,
  kShuffle,
  kPretrainShuffle,
};

struct World {
  TrainingSetup setup;
  ParamVector theta_0;
  Dataset global_test;
  std::vector<ClientState> clients;
};

CommCounter diff(const CommCounter& after, const CommCounter& before) {
  return {after.uploads - before.uploads, after.downloads - before.downloads,
          after.client_train_steps - before.client_train_steps,
          after.calibration_rounds - before.calibration_rounds};
}

void load_data(const ExperimentConfig& cfg, std::uint64_t seed, Dataset& pretrain, Dataset& pool,
               Dataset& global_test) {
  const DataConfig& dc = cfg.data;
  if (dc.source == "synthetic") {
    const ClassStructure cs = draw_class_structure(cfg.model.num_classes, cfg.model.input_dim,
                                                   dc.class_separation, derive_seed(seed, {kStructure}));
    pretrain = sample_dataset(cs, dc.pretrain_samples_per_class, derive_seed(seed, {kPretrainData}), Split::pretrain);
    pool = sample_dataset(cs, dc.samples_per_class, derive_seed(seed, {kPoolData}), Split::train);
    global_test = sample_dataset(cs, dc.test_samples_per_class, derive_seed(seed, {kTestData}), Split::test);
    return;
  }
  const auto C = cfg.model.num_classes;
  Dataset all = load_csv(dc.csv_path, Split::train, C);
  if (all.input_dim() != cfg.model.input_dim) {
    throw ConfigError({"data.csv_path: file has " + std::to_string(all.input_dim()) +
                       " feature columns but model.input_dim is " + std::to_string(cfg.model.input_dim)});
  }
  std::vector<std::size_t> remaining(all.size());
  std::iota(remaining.begin(), remaining.end(), 0);
  if (!dc.test_csv_path.empty()) {
    global_test = load_csv(dc.test_csv_path, Split::test, C);
  } else {
    auto [keep, test] = stratified_split(all.labels, remaining, dc.global_test_fraction, derive_seed(seed, {kTestData}));
    global_test = all.subset(test, Split::test);
    remaining = std::move(keep);
  }
  if (!dc.pretrain_csv_path.empty()) {
    pretrain = load_csv(dc.pretrain_csv_path, Split::pretrain, C);
  } else {
    auto [keep, pre] = stratified_split(all.labels, remaining, dc.pretrain_fraction, derive_seed(seed, {kPretrainData}));
    pretrain = all.subset(pre, Split::pretrain);
    remaining = std::move(keep);
  }
  pool = all.subset(remaining, Split::train);
}

World build_world(const ExperimentConfig& cfg, std::uint64_t seed) {
  World w;
  TrainingSetup& setup = w.setup;
  setup.spec = cfg.model;
  setup.regime = cfg.regime;
  setup.anchor_mode = cfg.anchor;
  setup.epochs = cfg.epochs_per_round;
  setup.batch_size = cfg.batch_size;
  AdamWConfig base_opt{cfg.lr_main.front(), cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps, cfg.weight_decay};
  setup.opt_main = base_opt;
  setup.opt_standalone = base_opt;
  setup.opt_standalone.lr = cfg.lr_standalone.front();
  setup.seed = derive_seed(seed, {kShuffle});

  Dataset pretrain;
  Dataset pool;
  load_data(cfg, seed, pretrain, pool, w.global_test);

  ParamVector theta_init = init_parameters(setup.spec, derive_seed(seed, {kInit}));
  setup.head = centroid_head(setup.spec, theta_init, pretrain.inputs, pretrain.labels);
  if (!setup.spec.head_frozen) theta_init = embed_head(setup.spec, theta_init, setup.head);

  if (!cfg.pretrain.theta0_path.empty()) {
    w.theta_0 = load_param_vector(cfg.pretrain.theta0_path);
    if (w.theta_0.size() != theta_init.size()) {
      throw ConfigError({"pretrain.theta0_path: vector has length " + std::to_string(w.theta_0.size()) +
                         ", model expects " + std::to_string(theta_init.size())});
    }
  } else if (cfg.pretrain.epochs > 0) {
    TrainingSetup pre = setup;
    pre.regime = Regime::standard;
    pre.opt_main.lr = cfg.pretrain.lr;
    pre.seed = derive_seed(seed, {kPretrainShuffle});
    TaskVector tau = make_task_vector(ParamVector::zeros(theta_init.size()));
    AdamWState opt = AdamWState::init(theta_init.size(), pre.opt_main);
    train_task_vector(tau, opt, pretrain, theta_init, theta_init, pre, Regime::standard,
                      {cfg.pretrain.epochs, cfg.pretrain.batch_size}, -1, 2, 0);
    w.theta_0 = add(theta_init, tau.delta);
  } else {
    w.theta_0 = theta_init;
  }

  std::optional<ExclusiveClasses> exclusive;
  if (!cfg.data.exclusive_classes.empty()) {
    exclusive = ExclusiveClasses{static_cast<std::size_t>(cfg.target_id), cfg.data.exclusive_classes};
  }
  const Partition part =
      dirichlet_partition(pool.labels, cfg.clients, cfg.beta, derive_seed(seed, {kPartition}), exclusive);
  for (std::size_t k = 0; k < cfg.clients; ++k) {
    ClientSplit split = split_client(pool, part, k, cfg.data.test_fraction, derive_seed(seed, {kClientSplit}));
    w.clients.push_back(ClientState::create(static_cast<ClientId>(k), std::move(split.train),
                                            std::move(split.test), setup));
  }
  return w;
}

std::string format_number(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%g", v);
  return buf;
}

}  // namespace

std::string make_run_id(const ExperimentConfig& config, std::uint64_t seed) {
  std::string id = to_string(config.strategy);
  id += config.regime == Regime::ntk_linearized ? "-ntk" : "-std";
  id += "-b" + format_number(config.beta);
  id += "-s" + std::to_string(seed);
  if (is_single_round(config.strategy)) id += "-l" + format_number(config.lambda_tgt.front());
  id += "-" + config_hash(config).substr(0, 8);
  return id;
}

MetricsLog run_experiment(const ExperimentConfig& config, std::uint64_t seed, const RunOptions& options) {
  config.validate();
  if (config.has_grid()) {
    throw ArgumentError("run_experiment: config has multi-valued grids; use grid_search");
  }
  World w = build_world(config, seed);
  const TrainingSetup& setup = w.setup;
  const ClientId target = config.target_id;
  const PhaseRounds plan = plan_phases(config);

  MetricsLog log;
  RunMetadata& meta = log.meta;
  meta.run_id = make_run_id(config, seed);
  meta.config_hash = config_hash(config);
  meta.dataset = config.data.name;
  meta.seed = seed;
  meta.strategy = config.strategy;
  meta.regime = config.regime;
  meta.beta = config.beta;
  meta.lambda_tgt = config.lambda_tgt.front();
  meta.lr_main = config.lr_main.front();
  meta.lr_standalone = config.lr_standalone.front();
  meta.target_id = target;
  meta.phases = plan;
  for (const auto& c : w.clients) meta.client_ids.push_back(c.id);

  ServerState server = ServerState::create(w.theta_0);
  const EvalContext ctx{&w.global_test, target};
  meta.pretrained_global_accuracy = evaluate(setup, w.theta_0, w.global_test, setup.regime, w.theta_0);

  std::optional<HistoryStore> store;
  if (!options.history_dir.empty()) store.emplace(options.history_dir);
  std::size_t round = 0;
  auto persist = [&](const RoundHistory& h) {
    if (!store) return;
    RoundHistory labelled = h;
    labelled.round = round;
    store->append(labelled);
  };
  auto train_round = [&](const std::vector<ClientId>& participants, Phase phase) {
    log.rounds.push_back(run_round(server, w.clients, participants, phase, setup, ctx, ++round));
    persist(server.history.back());
  };

  std::vector<ClientId> participants = meta.client_ids;
  for (std::size_t i = 0; i < plan.fl; ++i) train_round(participants, Phase::FL);

  if (plan.fu > 0) {
    const CommCounter before = server.comm;
    switch (config.strategy) {
      case Strategy::sata: {
        const ClientState& tgt = find_client(w.clients, target);
        sata_unlearn(server, tgt.tau_standalone, config.lambda_tgt.front());
        participants = ctt_continue(server, participants, target);
        meta.unlearn_comm = diff(server.comm, before);
        log.rounds.push_back(evaluate_round(server, w.clients, setup, ctx, Phase::FU, ++round));
        break;
      }
      case Strategy::safa: {
        participants = ctt_continue(server, participants, target);
        std::map<ClientId, TaskVector> standalone;
        std::map<ClientId, std::size_t> counts;
        for (ClientId id : participants) {
          const ClientState& c = find_client(w.clients, id);
          standalone.emplace(id, c.tau_standalone);
          counts[id] = c.train_data.size();
          ++server.comm.uploads;
        }
        server.set_model(safa_rebuild(server.theta_0, standalone, counts, target));
        server.anchor = server.theta_0;
        meta.unlearn_comm = diff(server.comm, before);
        log.rounds.push_back(evaluate_round(server, w.clients, setup, ctx, Phase::FU, ++round));
        break;
      }
      case Strategy::ctt:
      case Strategy::tfs: {
        if (config.strategy == Strategy::ctt) {
          participants = ctt_continue(server, participants, target);
        } else {
          tfs_restart(server, w.clients, participants, target, setup);
        }
        for (std::size_t i = 0; i < plan.fu; ++i) {
          train_round(participants, Phase::FU);
          if (i == 0) meta.unlearn_comm = diff(server.comm, before);
        }
        break;
      }
      case Strategy::federaser: {
        FedEraserRecovery recovery(server, participants, target, config.calibration_epochs, setup);
        while (!recovery.finished()) {
          server.set_model(recovery.step(w.clients, server.comm));
          server.anchor = recovery.anchor();
          log.rounds.push_back(evaluate_round(server, w.clients, setup, ctx, Phase::FU, ++round));
          persist(recovery.recalibrated_history().back());
        }
        server.history = recovery.recalibrated_history();
        server.round_index = server.history.size();
        participants = ctt_continue(server, participants, target);
        meta.unlearn_comm = diff(server.comm, before);
        meta.federaser_trace = recovery.trace();
        meta.warnings = recovery.warnings();
        break;
      }
    }
  }

  for (std::size_t i = 0; i < plan.pu; ++i) train_round(participants, Phase::PU);
  meta.total_comm = server.comm;
  return log;
}

std::vector<MetricsLog> run_all_seeds(const ExperimentConfig& config, const RunOptions& options) {
  std::vector<MetricsLog> logs;
  for (std::uint64_t seed : config.seeds) logs.push_back(run_experiment(config, seed, options));
  return logs;
}

std::vector<ExperimentConfig> expand_grid(const ExperimentConfig& config) {
  if (config.lr_main.empty() || config.lr_standalone.empty() || config.lambda_tgt.empty()) {
    throw ArgumentError("grid_search: every grid axis needs at least one value");
  }
  std::vector<ExperimentConfig> out;
  for (double lr_m : config.lr_main) {
    for (double lr_s : config.lr_standalone) {
      for (double lam : config.lambda_tgt) {
        ExperimentConfig c = config;
        c.lr_main = {lr_m};
        c.lr_standalone = {lr_s};
        c.lambda_tgt = {lam};
        out.push_back(std::move(c));
      }
    }
  }
  return out;
}

std::size_t select_grid_point(std::vector<GridPoint>& points, double slack) {
  if (points.empty()) throw ArgumentError("grid_search: empty grid");
  double best_global = -std::numeric_limits<double>::infinity();
  for (const auto& p : points) best_global = std::max(best_global, p.final_global_accuracy);
  std::size_t best = points.size();
  for (std::size_t i = 0; i < points.size(); ++i) {
    points[i].eligible = points[i].final_global_accuracy >= best_global - slack;
    if (!points[i].eligible) continue;
    if (best == points.size() || points[i].first_fu_target_accuracy < points[best].first_fu_target_accuracy) {
      best = i;
    }
  }
  return best;
}

GridResult grid_search(const ExperimentConfig& config, const RunOptions& options) {
  GridResult result;
  const std::vector<ExperimentConfig> configs = expand_grid(config);
  for (const auto& c : configs) {
    GridPoint p{c.lr_main.front(), c.lr_standalone.front(), c.lambda_tgt.front(), 0.0, 0.0, false};
    for (std::uint64_t seed : c.seeds) {
      RunOptions opts = options;
      if (!opts.history_dir.empty()) opts.history_dir += "/" + make_run_id(c, seed);
      MetricsLog log = run_experiment(c, seed, opts);
      const RoundReport* fu = log.first_unlearning_round();
      const RoundReport* last = log.last_round();
      p.first_fu_target_accuracy += fu ? fu->target_test_accuracy : last->target_test_accuracy;
      p.final_global_accuracy += last->global_test_accuracy;
      result.logs.push_back(std::move(log));
    }
    const auto n = static_cast<double>(c.seeds.size());
    p.first_fu_target_accuracy /= n;
    p.final_global_accuracy /= n;
    result.points.push_back(p);
  }
  result.best_index = select_grid_point(result.points, config.grid_global_slack);
  result.best = configs[result.best_index];
  result.criterion = "lowest mean first-FU target accuracy among points whose mean final global accuracy is within " +
                     format_number(config.grid_global_slack) + " of the grid best";
  return result;
}

}  // namespace fedunlearn
