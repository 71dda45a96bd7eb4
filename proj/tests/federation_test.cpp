//
// Copyright 2026 The dpfed Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.
//

#include "dpfed/federation.hpp"

#include <cmath>
#include <numeric>
#include <vector>

#include "gtest/gtest.h"
#include "dpfed/errors.hpp"
#include "test_util.hpp"

namespace dpfed {
namespace {

using testing::ToyDataset;

// 10 clients x 40 points, 8 features, 4 classes.
class FederationTest : public ::testing::Test {
 protected:
  FederationTest()
      : train_(ToyDataset(400, 8, 4, 1)), test_(ToyDataset(200, 8, 4, 2)) {}

  FederatedConfig Config() const {
    FederatedConfig c;
    c.num_clients = 10;
    c.batch_size = 5;
    c.epochs = 1;
    c.eta = 0.1;
    c.max_rounds = 4;
    c.seed = 42;
    c.arch = {8, 6, 4};
    c.points_per_client = 40;
    c.shards_per_client = 2;
    return c;
  }

  static DpConfig Dp(double sigma, double q_threshold = 0.5) {
    DpConfig dp;
    dp.sigma_schedule = sigma;
    dp.delta_threshold = q_threshold;
    return dp;
  }

  ClientPartition Partition(const FederatedConfig& c) const {
    return ShardNonIid(train_, c.num_clients, c.seed, c.points_per_client,
                       c.shards_per_client);
  }

  Dataset train_;
  Dataset test_;
};

TEST_F(FederationTest, ZeroLearningRateGivesZeroDelta) {
  const ModelParams w = InitParams({8, 6, 4}, 3);
  std::vector<std::size_t> idx(40);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  Rng rng(1);
  const ClientUpdate u = RunClientUpdate(idx, w, train_, 5, 3, 0.0, rng);
  EXPECT_EQ(u.norm, 0.0);
  for (double d : u.delta) EXPECT_EQ(d, 0.0);
}

TEST_F(FederationTest, FullBatchSingleEpochIsOneGradientStep) {
  const ModelParams w = InitParams({8, 6, 4}, 3);
  std::vector<std::size_t> idx = {5, 17, 2, 33, 9};
  Batch batch;
  batch.features.resize(5, 8);
  for (std::size_t r = 0; r < idx.size(); ++r) {
    batch.features.row(static_cast<Eigen::Index>(r)) =
        train_.features.row(static_cast<Eigen::Index>(idx[r]));
    batch.labels.push_back(train_.labels[idx[r]]);
  }
  const std::vector<double> g = Backward(w, batch);
  Rng rng(9);
  const ClientUpdate u = RunClientUpdate(idx, w, train_, idx.size(), 1, 0.3, rng);
  ASSERT_EQ(u.delta.size(), g.size());
  for (std::size_t i = 0; i < g.size(); ++i) {
    // Sample order only permutes the batch; the mean gradient is unchanged up
    // to summation order.
    EXPECT_NEAR(u.delta[i], -0.3 * g[i], 1e-14) << i;
  }
  EXPECT_NEAR(u.norm, 0.3 * L2Norm(g), 1e-13);
}

TEST_F(FederationTest, DivergentClientIsOverflowError) {
  const ModelParams w = InitParams({8, 6, 4}, 3);
  std::vector<std::size_t> idx(40);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  Rng rng(1);
  EXPECT_THROW(RunClientUpdate(idx, w, train_, 5, 1, 1e300, rng), OverflowError);
}

TEST_F(FederationTest, EmptyClientIsDataError) {
  const ModelParams w = InitParams({8, 6, 4}, 3);
  Rng rng(1);
  EXPECT_THROW(RunClientUpdate({}, w, train_, 5, 1, 0.1, rng), DataError);
}

TEST_F(FederationTest, SampleClientsIsSortedDistinctAndComplete) {
  Rng rng(4);
  const auto s = SampleClients(50, 20, rng);
  ASSERT_EQ(s.size(), 20u);
  EXPECT_TRUE(std::is_sorted(s.begin(), s.end()));
  EXPECT_EQ(std::adjacent_find(s.begin(), s.end()), s.end());
  EXPECT_LT(s.back(), 50u);
  Rng rng2(4);
  const auto all = SampleClients(7, 7, rng2);
  EXPECT_EQ(all, (std::vector<std::size_t>{0, 1, 2, 3, 4, 5, 6}));
  EXPECT_THROW(SampleClients(3, 4, rng2), ConfigError);
}

TEST_F(FederationTest, FedAvgRoundIsMeanOfClientDeltas) {
  FederatedConfig c = Config();
  c.max_rounds = 1;
  FederatedRun run(c, train_, &test_, Partition(c));
  const ModelParams w0 = run.params();
  std::vector<double> sum(w0.size(), 0.0);
  for (std::size_t k = 0; k < c.num_clients; ++k) {
    Rng rng = MakeStream(c.seed, {stream::kClient, 1, k});
    const ClientUpdate u = RunClientUpdate(run.partition().clients[k], w0, train_,
                                           c.batch_size, c.epochs, c.eta, rng);
    for (std::size_t i = 0; i < sum.size(); ++i) sum[i] += u.delta[i];
  }
  ASSERT_TRUE(run.Step());
  for (std::size_t i = 0; i < sum.size(); ++i) {
    EXPECT_NEAR(run.params().values[i], w0.values[i] + sum[i] / 10.0, 1e-15) << i;
  }
  const RoundMetrics& r = run.history().rounds.at(0);
  EXPECT_EQ(r.m_t, 10u);
  EXPECT_EQ(r.delta, 1.0);
  EXPECT_TRUE(std::isinf(r.clip_bound));
  EXPECT_EQ(r.sigma_t, 0.0);
}

TEST_F(FederationTest, BaselineIsBitIdenticalToNoiselessUnclippedDp) {
  FederatedConfig dp = Config();
  dp.m_schedule = 4;
  DpConfig d = Dp(0.0, 1.0);
  d.clip_mode = ClipMode::kFixed;
  d.fixed_clip_bound = std::numeric_limits<double>::infinity();
  dp.dp = d;
  const TrainingHistory a = RunFederated(dp, train_, &test_);
  const TrainingHistory b = RunFedAvgBaseline(dp, train_, &test_);
  ASSERT_EQ(a.rounds.size(), 4u);
  EXPECT_EQ(a.final_params, b.final_params);
  EXPECT_EQ(a.rounds, b.rounds);
}

TEST_F(FederationTest, SameSeedSameHistoryDifferentSeedDiffers) {
  FederatedConfig c = Config();
  c.m_schedule = 3;
  c.dp = Dp(1.0);
  const TrainingHistory a = RunFederated(c, train_, &test_);
  const TrainingHistory b = RunFederated(c, train_, &test_);
  EXPECT_EQ(a, b);
  c.seed = 43;
  const TrainingHistory other = RunFederated(c, train_, &test_);
  EXPECT_NE(a.final_params, other.final_params);
}

TEST_F(FederationTest, WorkerCountDoesNotChangeResults) {
  FederatedConfig c = Config();
  c.m_schedule = 6;
  c.dp = Dp(0.8);
  const TrainingHistory one = RunFederated(c, train_, &test_);
  c.workers = 4;
  const TrainingHistory four = RunFederated(c, train_, &test_);
  EXPECT_EQ(one, four);
}

TEST_F(FederationTest, ThresholdBelowFirstRoundDeltaRunsNothing) {
  FederatedConfig c = Config();
  c.m_schedule = 5;
  c.dp = Dp(0.5, 1e-30);
  FederatedRun run(c, train_, &test_, Partition(c));
  const ModelParams w0 = run.params();
  const TrainingHistory h = run.Run();
  EXPECT_TRUE(h.rounds.empty());
  EXPECT_EQ(h.final_params, w0);
  EXPECT_EQ(h.stop_reason, StopReason::kBudgetExhausted);
  EXPECT_EQ(h.communication_cost(), 0u);
  EXPECT_EQ(run.accountant().rounds(), 0u);
}

TEST_F(FederationTest, ZeroMaxRoundsGivesEmptyHistory) {
  FederatedConfig c = Config();
  c.max_rounds = 0;
  const TrainingHistory h = RunFederated(c, train_, &test_);
  EXPECT_TRUE(h.rounds.empty());
  EXPECT_EQ(h.stop_reason, StopReason::kMaxRounds);
  EXPECT_TRUE(std::isnan(h.final_accuracy()));
}

TEST_F(FederationTest, AccountantChargedOncePerExecutedRound) {
  FederatedConfig c = Config();
  c.max_rounds = 50;
  c.m_schedule = Schedule<std::size_t>({{1, 2}, {3, 5}});
  c.dp = Dp(1.0, 1e-3);
  c.dp->epsilon = 4.0;
  FederatedRun run(c, train_, &test_, Partition(c));
  const TrainingHistory h = run.Run();
  ASSERT_FALSE(h.rounds.empty());
  ASSERT_LT(h.rounds.size(), 50u);
  EXPECT_EQ(h.stop_reason, StopReason::kBudgetExhausted);
  MomentsAccountant ref(4.0, 32);
  for (const auto& r : h.rounds) {
    ref.Accumulate(static_cast<double>(r.m_t) / 10.0, 1.0);
    EXPECT_EQ(r.delta, ref.Delta());
    EXPECT_LE(r.delta, 1e-3);
  }
  EXPECT_EQ(run.accountant().rounds(), h.rounds.size());
  // The refused round would have crossed the threshold.
  const double q_next = static_cast<double>(c.ClientsAt(h.rounds.size() + 1)) / 10.0;
  EXPECT_GT(ref.Accumulated(q_next, 1.0).Delta(), 1e-3);
}

TEST_F(FederationTest, CommunicationCostIsSumOfClientsPerRound) {
  FederatedConfig c = Config();
  c.max_rounds = 6;
  c.m_schedule = Schedule<std::size_t>({{1, 2}, {3, 4}, {5, 7}});
  const TrainingHistory h = RunFederated(c, train_, &test_);
  ASSERT_EQ(h.rounds.size(), 6u);
  EXPECT_EQ(h.communication_cost(), 2u + 2 + 4 + 4 + 7 + 7);
  EXPECT_EQ(static_cast<double>(h.communication_cost()), c.m_schedule.SumThrough(6));
  for (const auto& r : h.rounds) EXPECT_EQ(r.m_t, c.m_schedule.At(r.round));
}

TEST_F(FederationTest, SingleClientEqualsCentralizedMinibatchSgd) {
  FederatedConfig c = Config();
  c.num_clients = 1;
  c.points_per_client = 400;
  c.shards_per_client = 1;
  c.epochs = 2;
  c.max_rounds = 1;
  FederatedRun run(c, train_, nullptr, Partition(c));
  // Centralized SGD over the same data in the same sample order.
  ModelParams w = run.params();
  std::vector<std::size_t> order = run.partition().clients[0];
  ASSERT_EQ(order.size(), 400u);
  Rng rng = MakeStream(c.seed, {stream::kClient, 1, 0});
  for (std::size_t e = 0; e < c.epochs; ++e) {
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t s = 0; s < order.size(); s += c.batch_size) {
      Batch b;
      b.features.resize(static_cast<Eigen::Index>(c.batch_size), 8);
      for (std::size_t r = 0; r < c.batch_size; ++r) {
        b.features.row(static_cast<Eigen::Index>(r)) =
            train_.features.row(static_cast<Eigen::Index>(order[s + r]));
        b.labels.push_back(train_.labels[order[s + r]]);
      }
      SgdStepInPlace(w, Backward(w, b), c.eta);
    }
  }
  ASSERT_TRUE(run.Step());
  for (std::size_t i = 0; i < w.size(); ++i) {
    EXPECT_NEAR(run.params().values[i], w.values[i], 1e-12) << i;
  }
}

TEST_F(FederationTest, EvaluationCadence) {
  FederatedConfig c = Config();
  c.max_rounds = 5;
  c.eval_every = 3;
  const TrainingHistory h = RunFederated(c, train_, &test_);
  ASSERT_EQ(h.rounds.size(), 5u);
  for (std::size_t i : {0, 1, 3}) EXPECT_TRUE(std::isnan(h.rounds[i].accuracy)) << i;
  EXPECT_FALSE(std::isnan(h.rounds[2].accuracy));
  EXPECT_FALSE(std::isnan(h.rounds[4].accuracy));
  EXPECT_EQ(h.final_accuracy(), h.rounds[4].accuracy);
}

TEST_F(FederationTest, BudgetStopMeasuresReturnedModel) {
  FederatedConfig c = Config();
  c.max_rounds = 100;
  c.eval_every = 1000;
  c.m_schedule = 2;
  c.dp = Dp(1.0, 1e-3);
  c.dp->epsilon = 4.0;
  const TrainingHistory h = RunFederated(c, train_, &test_);
  ASSERT_EQ(h.stop_reason, StopReason::kBudgetExhausted);
  ASSERT_FALSE(h.rounds.empty());
  EXPECT_FALSE(std::isnan(h.rounds.back().accuracy));
  EXPECT_EQ(h.final_accuracy(), Evaluate(h.final_params, test_.features, test_.labels));
}

TEST_F(FederationTest, TargetAccuracyStopsEarly) {
  FederatedConfig c = Config();
  c.max_rounds = 10;
  c.target_accuracy = 0.0;
  const TrainingHistory h = RunFederated(c, train_, &test_);
  EXPECT_EQ(h.rounds.size(), 1u);
  EXPECT_EQ(h.stop_reason, StopReason::kTargetReached);
}

TEST_F(FederationTest, ToyProblemLearns) {
  FederatedConfig c = Config();
  c.max_rounds = 30;
  c.eta = 0.3;
  const TrainingHistory h = RunFederated(c, train_, &test_);
  EXPECT_GT(h.final_accuracy(), 0.9);
}

TEST_F(FederationTest, MedianClippingReportsFiniteBound) {
  FederatedConfig c = Config();
  c.m_schedule = 4;
  c.dp = Dp(1.0);
  const TrainingHistory h = RunFederated(c, train_, &test_);
  ASSERT_FALSE(h.rounds.empty());
  for (const auto& r : h.rounds) {
    EXPECT_TRUE(std::isfinite(r.clip_bound));
    EXPECT_GT(r.clip_bound, 0.0);
    EXPECT_EQ(r.sigma_t, 1.0);
    EXPECT_GE(r.v_c, 0.0);
    EXPECT_GE(r.u_s, 0.0);
    EXPECT_FALSE(r.degenerate);
  }
}

TEST_F(FederationTest, SigmaScheduleIsFollowed) {
  FederatedConfig c = Config();
  c.m_schedule = 2;
  c.dp = Dp(1.0);
  c.dp->sigma_schedule = Schedule<double>({{1, 3.0}, {3, 2.0}});
  const TrainingHistory h = RunFederated(c, train_, &test_);
  ASSERT_EQ(h.rounds.size(), 4u);
  EXPECT_EQ(h.rounds[0].sigma_t, 3.0);
  EXPECT_EQ(h.rounds[1].sigma_t, 3.0);
  EXPECT_EQ(h.rounds[2].sigma_t, 2.0);
  EXPECT_EQ(h.rounds[3].sigma_t, 2.0);
}

TEST_F(FederationTest, InvalidConfigsAreRejected) {
  auto expect_bad = [&](auto mutate) {
    FederatedConfig c = Config();
    mutate(c);
    EXPECT_THROW(RunFederated(c, train_, &test_), ConfigError);
  };
  expect_bad([](FederatedConfig& c) { c.eta = 0.0; });
  expect_bad([](FederatedConfig& c) { c.batch_size = 0; });
  expect_bad([](FederatedConfig& c) { c.epochs = 0; });
  expect_bad([](FederatedConfig& c) { c.m_schedule = 11; });
  expect_bad([](FederatedConfig& c) { c.m_schedule = 0; });
  expect_bad([](FederatedConfig& c) { c.dp = Dp(1.0, 0.0); });
  expect_bad([](FederatedConfig& c) { c.dp = Dp(1.0, 1.5); });
  expect_bad([](FederatedConfig& c) { c.dp = Dp(-1.0); });
  expect_bad([](FederatedConfig& c) {
    c.dp = Dp(1.0);
    c.dp->clip_mode = ClipMode::kFixed;
    c.dp->fixed_clip_bound = 0.0;
  });
  expect_bad([](FederatedConfig& c) {
    c.dp = Dp(1.0);
    c.dp->clip_mode = ClipMode::kFixed;
  });
}

TEST_F(FederationTest, PartitionMustMatchClientCount) {
  FederatedConfig c = Config();
  FederatedConfig other = c;
  other.num_clients = 5;
  other.points_per_client = 80;
  EXPECT_THROW(FederatedRun(c, train_, &test_, Partition(other)), ConfigError);
}

}  // namespace
}  // namespace dpfed
