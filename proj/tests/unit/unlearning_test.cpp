#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>

#include "fedunlearn/errors.hpp"
#include "fedunlearn/federation.hpp"
#include "fedunlearn/unlearning.hpp"
#include "test_util.hpp"

namespace fedunlearn {
namespace {

using namespace fixtures;

struct World {
  TrainingSetup setup;
  ParamVector theta_0;
  Dataset global_test;
  std::vector<ClientState> clients;
  std::vector<ClientId> ids;
  ServerState server;
};

World make_world(std::size_t K, std::uint64_t seed, Regime regime = Regime::ntk_linearized) {
  World w;
  w.setup.spec = small_spec();
  w.setup.regime = regime;
  w.setup.epochs = 2;
  w.setup.batch_size = 8;
  w.setup.opt_main.lr = w.setup.opt_standalone.lr = 0.02;
  w.setup.seed = seed;
  const ClassStructure cs = draw_class_structure(4, 5, 3.0, seed);
  const Dataset pool = sample_dataset(cs, 15, seed + 1, Split::train);
  w.global_test = sample_dataset(cs, 10, seed + 2, Split::test);
  w.theta_0 = init_parameters(w.setup.spec, seed + 3);
  w.setup.head = centroid_head(w.setup.spec, w.theta_0, pool.inputs, pool.labels);
  const Partition p = dirichlet_partition(pool.labels, K, 1.0, seed + 4);
  for (std::size_t k = 0; k < K; ++k) {
    ClientSplit s = split_client(pool, p, k, 0.25, seed + 5);
    w.clients.push_back(ClientState::create(static_cast<ClientId>(k), s.train, s.test, w.setup));
    w.ids.push_back(static_cast<ClientId>(k));
  }
  w.server = ServerState::create(w.theta_0);
  return w;
}

void train_fl(World& w, std::size_t rounds) {
  const EvalContext ctx{&w.global_test, 0};
  for (std::size_t r = 0; r < rounds; ++r) run_round(w.server, w.clients, w.ids, Phase::FL, w.setup, ctx, r + 1);
}

TaskVector standalone(ParamVector v, ClientId owner) {
  return make_task_vector(std::move(v), owner, Regime::ntk_linearized, true);
}

TEST(StrategyNames, RoundTrip) {
  for (Strategy s : {Strategy::sata, Strategy::safa, Strategy::tfs, Strategy::ctt, Strategy::federaser}) {
    EXPECT_EQ(strategy_from_string(to_string(s)), s);
  }
  EXPECT_EQ(strategy_from_string("FedEraser"), Strategy::federaser);
  EXPECT_THROW(strategy_from_string("retrain"), ArgumentError);
  EXPECT_TRUE(is_single_round(Strategy::sata));
  EXPECT_FALSE(is_single_round(Strategy::federaser));
}

TEST(Request, Validation) {
  World w = make_world(2, 1);
  EXPECT_NO_THROW((UnlearnRequest{1, 0.5, Strategy::sata, Regime::standard}.validate(w.clients)));
  EXPECT_ANY_THROW((UnlearnRequest{7, 0.5, Strategy::sata, Regime::standard}.validate(w.clients)));
  EXPECT_ANY_THROW((UnlearnRequest{0, std::nan(""), Strategy::sata, Regime::standard}.validate(w.clients)));
}

TEST(Sata, ZeroLambdaIsIdentity) {
  ServerState s = ServerState::create(random_vector(20, 1));
  s.theta_hat = random_vector(20, 2);
  const ParamVector before = s.theta_hat;
  sata_unlearn(s, standalone(random_vector(20, 3), 0), 0.0);
  EXPECT_EQ(s.theta_hat, before);
}

TEST(Sata, MatchesScalarLoop) {
  ServerState s = ServerState::create(random_vector(30, 1));
  s.theta_hat = random_vector(30, 2);
  const ParamVector hat = s.theta_hat;
  const TaskVector tau = standalone(random_vector(30, 3), 0);
  const ParamVector out = sata_unlearn(s, tau, 0.7);
  for (std::size_t i = 0; i < 30; ++i) {
    const double want = hat[i] - 0.7 * tau.delta[i];
    EXPECT_LE(std::abs(out[i] - want), 2 * std::numeric_limits<double>::epsilon() * std::abs(want));
  }
  EXPECT_EQ(s.theta_hat, out);
}

TEST(Sata, LinearInLambda) {
  const ParamVector hat = random_vector(25, 2);
  const TaskVector tau = standalone(random_vector(25, 3), 0);
  for (auto [l1, l2] : {std::pair{0.25, 1.5}, std::pair{-0.5, 0.75}}) {
    ServerState a = ServerState::create(hat), b = ServerState::create(hat);
    const ParamVector r1 = sata_unlearn(a, tau, l1), r2 = sata_unlearn(b, tau, l2);
    for (std::size_t i = 0; i < 25; ++i) EXPECT_NEAR(r1[i] - r2[i], (l2 - l1) * tau.delta[i], 1e-12);
  }
}

TEST(Sata, SingleClientCancelsExactly) {
  World w = make_world(1, 5);
  train_fl(w, 1);
  const ClientState& c = w.clients[0];
  ASSERT_EQ(c.tau_main.delta, c.tau_standalone.delta);
  sata_unlearn(w.server, c.tau_standalone, 1.0);
  EXPECT_EQ(w.server.theta_hat, w.theta_0);
}

TEST(Sata, RejectsNonStandaloneVector) {
  ServerState s = ServerState::create(random_vector(5, 1));
  EXPECT_THROW(sata_unlearn(s, make_task_vector(random_vector(5, 2)), 1.0), ContractViolation);
  EXPECT_THROW(sata_unlearn(s, standalone(random_vector(6, 2), 0), 1.0), DimensionError);
}

TEST(Sata, OneUploadAndNoTraining) {
  World w = make_world(3, 6);
  train_fl(w, 2);
  const CommCounter before = w.server.comm;
  const std::uint64_t steps_before = w.clients[0].train_steps;
  sata_unlearn(w.server, w.clients[0].tau_standalone, 1.0);
  EXPECT_EQ(w.server.comm.uploads, before.uploads + 1);
  EXPECT_EQ(w.server.comm.downloads, before.downloads);
  EXPECT_EQ(w.server.comm.client_train_steps, before.client_train_steps);
  EXPECT_EQ(w.clients[0].train_steps, steps_before);
}

TEST(Safa, TwoClientsKeepsTheOther) {
  const ParamVector t0 = random_vector(10, 1);
  const TaskVector other = standalone(random_vector(10, 2), 1);
  const ParamVector out =
      safa_rebuild(t0, {{0, standalone(random_vector(10, 3), 0)}, {1, other}}, {{0, 5}, {1, 9}}, 0);
  EXPECT_EQ(out, combine(t0, {{1.0, std::cref(other)}}));
  EXPECT_LE(max_abs_diff(out, add(t0, other.delta)), 1e-15);
}

TEST(Safa, ZeroVectorsGiveBase) {
  const ParamVector t0 = random_vector(10, 1);
  std::map<ClientId, TaskVector> sa;
  for (int k = 0; k < 3; ++k) sa.emplace(k, standalone(ParamVector::zeros(10), k));
  EXPECT_EQ(safa_rebuild(t0, sa, {{0, 1}, {1, 2}, {2, 3}}, 1), t0);
}

TEST(Safa, WeightedSumOverRemainingClients) {
  const ParamVector t0 = random_vector(16, 1);
  std::map<ClientId, TaskVector> sa;
  for (int k = 0; k < 4; ++k) sa.emplace(k, standalone(random_vector(16, 10 + k), k));
  const std::map<ClientId, std::size_t> n{{0, 3}, {1, 10}, {2, 4}, {3, 6}};
  const ParamVector out = safa_rebuild(t0, sa, n, 1);
  for (std::size_t i = 0; i < 16; ++i) {
    const double want = t0[i] + (3 * sa.at(0).delta[i] + 4 * sa.at(2).delta[i] + 6 * sa.at(3).delta[i]) / 13.0;
    EXPECT_NEAR(out[i], want, 1e-12);
  }
}

TEST(Safa, NeverReadsTargetVector) {
  const ParamVector t0 = random_vector(8, 1);
  std::map<ClientId, TaskVector> sa;
  for (int k = 0; k < 3; ++k) sa.emplace(k, standalone(random_vector(8, 20 + k), k));
  const ParamVector clean = safa_rebuild(t0, sa, {{0, 2}, {1, 3}, {2, 4}}, 2);
  // A sentinel of the wrong length, not standalone, with huge values.
  sa.at(2) = make_task_vector(ParamVector(std::vector<double>(3, 1e300)));
  EXPECT_EQ(safa_rebuild(t0, sa, {{0, 2}, {1, 3}, {2, 4}}, 2), clean);
}

TEST(Safa, Errors) {
  const ParamVector t0 = random_vector(4, 1);
  EXPECT_THROW(safa_rebuild(t0, {{0, standalone(random_vector(4, 2), 0)}}, {{0, 1}}, 0), DegenerateInputError);
  EXPECT_THROW(safa_rebuild(t0, {{0, make_task_vector(random_vector(4, 2))}, {1, standalone(random_vector(4, 2), 1)}},
                            {{0, 1}, {1, 1}}, 1),
               ContractViolation);
}

TEST(Tfs, RestartResetsModelAndDropsTarget) {
  World w = make_world(3, 7);
  train_fl(w, 2);
  std::vector<ClientId> participants = w.ids;
  tfs_restart(w.server, w.clients, participants, 1, w.setup);
  EXPECT_EQ(participants.size(), 2u);
  EXPECT_EQ(std::count(participants.begin(), participants.end(), 1), 0);
  EXPECT_EQ(w.server.theta_hat, w.theta_0);
  EXPECT_TRUE(w.server.history.empty());
  const EvalContext ctx{&w.global_test, 1};
  const RoundReport r = evaluate_round(w.server, w.clients, w.setup, ctx, Phase::FU, 3);
  EXPECT_EQ(r.global_test_accuracy, evaluate(w.setup, w.theta_0, w.global_test, w.setup.regime, w.theta_0));
}

TEST(Tfs, TrajectoryEqualsFreshRunWithoutTarget) {
  World a = make_world(3, 8);
  train_fl(a, 2);
  std::vector<ClientId> pa = a.ids;
  tfs_restart(a.server, a.clients, pa, 0, a.setup);
  const EvalContext ca{&a.global_test, 0};
  std::vector<RoundReport> ra;
  for (std::size_t r = 0; r < 3; ++r) ra.push_back(run_round(a.server, a.clients, pa, Phase::FU, a.setup, ca, r + 1));

  World b = make_world(3, 8);
  const std::vector<ClientId> pb{1, 2};
  const EvalContext cb{&b.global_test, 0};
  std::vector<RoundReport> rb;
  for (std::size_t r = 0; r < 3; ++r) rb.push_back(run_round(b.server, b.clients, pb, Phase::FU, b.setup, cb, r + 1));
  EXPECT_EQ(a.server.theta_hat, b.server.theta_hat);
  EXPECT_EQ(ra, rb);
}

TEST(Ctt, LeavesModelAndDropsTarget) {
  World w = make_world(3, 9);
  train_fl(w, 2);
  const ParamVector before = w.server.theta_hat;
  const auto remaining = ctt_continue(w.server, w.ids, 2);
  EXPECT_EQ(remaining, (std::vector<ClientId>{0, 1}));
  EXPECT_EQ(w.server.theta_hat, before);
}

TEST(FedEraser, NormsArePreserved) {
  World w = make_world(3, 11);
  train_fl(w, 2);
  std::vector<ClientId> participants = w.ids;
  std::vector<RecalibrationRecord> trace;
  federaser_recover(w.server, w.clients, participants, 0, 1, w.setup, &trace);
  ASSERT_EQ(trace.size(), 4u);  // 2 rounds x 2 remaining clients
  for (const auto& t : trace) {
    EXPECT_NE(t.client, 0);
    EXPECT_FALSE(t.skipped);
    EXPECT_NEAR(t.recalibrated_norm, t.stored_norm, 1e-10 * std::max(1.0, t.stored_norm));
  }
  ASSERT_EQ(w.server.history.size(), 2u);
  for (const auto& h : w.server.history) {
    for (const auto& e : h.entries) EXPECT_NE(e.client, 0);
  }
  EXPECT_EQ(participants, (std::vector<ClientId>{1, 2}));
}

TEST(FedEraser, OneCalibrationRoundPerStoredRound) {
  World w = make_world(3, 12);
  train_fl(w, 3);
  const CommCounter before = w.server.comm;
  FedEraserRecovery rec(w.server, w.ids, 1, 1, w.setup);
  EXPECT_EQ(rec.rounds_total(), 3u);
  while (!rec.finished()) rec.step(w.clients, w.server.comm);
  EXPECT_EQ(w.server.comm.calibration_rounds - before.calibration_rounds, 3u);
  EXPECT_GT(w.server.comm.client_train_steps, before.client_train_steps);
  EXPECT_THROW(rec.step(w.clients, w.server.comm), InconsistentStateError);
}

TEST(FedEraser, ZeroStoredUpdatesRebuildBase) {
  World w = make_world(3, 13);
  for (std::size_t r = 1; r <= 2; ++r) {
    std::map<ClientId, ClientUpdate> ups;
    for (ClientId id : w.ids) ups[id] = {make_task_vector(ParamVector::zeros(w.theta_0.size()), id), 5};
    aggregate(w.server, ups);
  }
  std::vector<ClientId> participants = w.ids;
  EXPECT_EQ(federaser_recover(w.server, w.clients, participants, 0, 1, w.setup), w.theta_0);
}

TEST(FedEraser, ExactCalibrationReplaysStoredUpdates) {
  World w = make_world(2, 14);
  train_fl(w, 3);
  const std::vector<RoundHistory> stored = w.server.history;
  auto calibrator = [&](ClientState& c, const ParamVector&, const ParamVector&, std::size_t round) {
    for (const auto& e : stored[round - 1].entries) {
      if (e.client == c.id) return make_task_vector(e.update, c.id);
    }
    throw std::logic_error("missing entry");
  };
  FedEraserRecovery rec(w.server, w.ids, 0, 1, w.setup, calibrator);
  while (!rec.finished()) rec.step(w.clients, w.server.comm);
  ParamVector want = w.theta_0;
  for (const auto& h : stored) {
    for (const auto& e : h.entries) {
      if (e.client == 1) want = add(want, e.update);
    }
  }
  EXPECT_LE(max_abs_diff(rec.reconstruction(), want), 1e-12);
}

TEST(FedEraser, ZeroCalibrationUpdateIsSkippedWithWarning) {
  World w = make_world(3, 15);
  train_fl(w, 2);
  auto calibrator = [&](ClientState& c, const ParamVector& base, const ParamVector&, std::size_t) {
    if (c.id == 2) return make_task_vector(ParamVector::zeros(base.size()), c.id);
    return make_task_vector(random_vector(base.size(), 99 + c.id), c.id);
  };
  FedEraserRecovery rec(w.server, w.ids, 0, 1, w.setup, calibrator);
  while (!rec.finished()) rec.step(w.clients, w.server.comm);
  EXPECT_EQ(rec.warnings().size(), 2u);
  for (const auto& h : rec.recalibrated_history()) {
    ASSERT_EQ(h.entries.size(), 1u);
    EXPECT_EQ(h.entries[0].client, 1);
    EXPECT_DOUBLE_EQ(h.entries[0].lambda, 1.0);
  }
}

TEST(FedEraser, Preconditions) {
  World w = make_world(3, 16);
  EXPECT_THROW(FedEraserRecovery(w.server, w.ids, 0, 1, w.setup), InconsistentStateError);  // no history
  train_fl(w, 2);
  EXPECT_THROW(FedEraserRecovery(w.server, w.ids, 0, 0, w.setup), ArgumentError);
  ServerState gap = w.server;
  gap.history.erase(gap.history.begin());
  EXPECT_THROW(FedEraserRecovery(gap, w.ids, 0, 1, w.setup), InconsistentStateError);
  EXPECT_THROW(FedEraserRecovery(w.server, {0}, 0, 1, w.setup), DegenerateInputError);
}

}  // namespace
}  // namespace fedunlearn
