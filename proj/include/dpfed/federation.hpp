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

#ifndef DPFED_FEDERATION_HPP_
#define DPFED_FEDERATION_HPP_

// Curator/client orchestration. Each round the curator samples m_t clients
// without replacement, every sampled client runs E local epochs of mini-batch
// SGD from the current central model, and the curator replaces the plain
// average of the returned deltas by the Gaussian-mechanism average clipped at
// the median update norm. A moments accountant is charged before each round;
// once delta would exceed the threshold the run stops and returns the current
// model. Without a DpConfig the same loop is plain federated averaging.

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <exception>
#include <iostream>
#include <limits>
#include <numeric>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <thread>
#include <vector>

#include "dpfed/data.hpp"
#include "dpfed/dp.hpp"
#include "dpfed/errors.hpp"
#include "dpfed/model.hpp"
#include "dpfed/rng.hpp"
#include "dpfed/schedule.hpp"
#include "dpfed/telemetry.hpp"

namespace dpfed {

enum class ClipMode {
  kMedian,  // S = median of the sampled clients' update norms
  kFixed,   // S = DpConfig::fixed_clip_bound (may be +inf)
};

struct DpConfig {
  Schedule<double> sigma_schedule = 1.0;
  double delta_threshold = 1e-3;  // Q
  double epsilon = 8.0;
  int lambda_max = 32;
  ClipMode clip_mode = ClipMode::kMedian;
  double fixed_clip_bound = std::numeric_limits<double>::infinity();
};

struct FederatedConfig {
  std::size_t num_clients = 100;  // K
  std::size_t batch_size = 10;    // B
  std::size_t epochs = 1;         // E
  double eta = 0.05;
  // Clients sampled per round; empty means all K.
  Schedule<std::size_t> m_schedule;
  std::optional<DpConfig> dp;
  std::size_t max_rounds = 100;
  std::uint64_t seed = 1;
  std::size_t eval_every = 1;
  // Stop once central test accuracy reaches this value; NaN disables.
  double target_accuracy = std::nan("");
  std::size_t workers = 1;
  Architecture arch = DefaultArchitecture();
  std::size_t points_per_client = 600;
  std::size_t shards_per_client = 2;

  std::size_t ClientsAt(std::size_t round) const {
    return m_schedule.empty() ? num_clients : m_schedule.At(round);
  }
};

enum class StopReason { kBudgetExhausted, kMaxRounds, kTargetReached };

inline const char* ToString(StopReason r) {
  switch (r) {
    case StopReason::kBudgetExhausted: return "budget_exhausted";
    case StopReason::kMaxRounds: return "max_rounds";
    case StopReason::kTargetReached: return "target_reached";
  }
  return "unknown";
}

struct TrainingHistory {
  std::vector<RoundMetrics> rounds;
  ModelParams final_params;
  StopReason stop_reason = StopReason::kMaxRounds;

  std::uint64_t communication_cost() const {
    return rounds.empty() ? 0 : rounds.back().cc_cumulative;
  }
  // Last central accuracy that was measured, NaN if none.
  double final_accuracy() const {
    for (auto it = rounds.rbegin(); it != rounds.rend(); ++it) {
      if (!std::isnan(it->accuracy)) return it->accuracy;
    }
    return std::nan("");
  }
  double best_accuracy() const {
    double best = std::nan("");
    for (const auto& r : rounds) {
      if (!std::isnan(r.accuracy) && !(r.accuracy <= best)) best = r.accuracy;
    }
    return best;
  }

  friend bool operator==(const TrainingHistory&, const TrainingHistory&) = default;
};

inline void ValidateConfig(const FederatedConfig& c) {
  if (c.num_clients < 1) throw ConfigError("K must be >= 1");
  if (c.batch_size < 1) throw ConfigError("B must be >= 1");
  if (c.epochs < 1) throw ConfigError("E must be >= 1");
  if (!(c.eta > 0.0) || !std::isfinite(c.eta)) throw ConfigError("eta must be > 0");
  if (c.eval_every < 1) throw ConfigError("eval_every must be >= 1");
  if (c.workers < 1) throw ConfigError("workers must be >= 1");
  ValidateArchitecture(c.arch);
  for (const auto& [round, m] : c.m_schedule.steps()) {
    if (m < 1 || m > c.num_clients) {
      throw ConfigError("m_t = " + std::to_string(m) + " (from round " +
                        std::to_string(round) + ") must lie in [1, K=" +
                        std::to_string(c.num_clients) + "]");
    }
  }
  if (c.dp) {
    const DpConfig& dp = *c.dp;
    if (dp.sigma_schedule.empty()) throw ConfigError("sigma schedule is empty");
    for (const auto& [round, s] : dp.sigma_schedule.steps()) {
      if (!(s >= 0.0) || !std::isfinite(s)) throw ConfigError("sigma_t must be >= 0");
    }
    if (!(dp.delta_threshold > 0.0 && dp.delta_threshold <= 1.0)) {
      throw ConfigError("delta threshold Q must lie in (0, 1]");
    }
    if (!(dp.epsilon > 0.0)) throw ConfigError("epsilon must be > 0");
    if (dp.lambda_max < 1) throw ConfigError("lambda_max must be >= 1");
    if (dp.clip_mode == ClipMode::kFixed && !(dp.fixed_clip_bound > 0.0)) {
      throw ConfigError("fixed clipping bound must be > 0");
    }
    if (dp.clip_mode == ClipMode::kFixed && std::isinf(dp.fixed_clip_bound)) {
      for (const auto& [round, s] : dp.sigma_schedule.steps()) {
        if (s > 0.0) throw ConfigError("noise requires a finite clipping bound");
      }
    }
  }
}

// E local epochs of mini-batch SGD for client k from w_t. Batches follow a
// fresh permutation of the client's points each epoch, drawn from `rng`.
// Returns the unclipped delta and its norm.
inline ClientUpdate RunClientUpdate(std::span<const std::size_t> indices,
                                    const ModelParams& w_t, const Dataset& data,
                                    std::size_t batch_size, std::size_t epochs,
                                    double eta, Rng& rng,
                                    internal::Workspace* workspace = nullptr) {
  if (indices.empty()) throw DataError("client holds no data");
  if (batch_size < 1) throw ConfigError("B must be >= 1");
  if (!(eta >= 0.0)) throw ConfigError("eta must be >= 0");
  if (data.input_dim() != w_t.arch.front()) {
    throw ShapeError("dataset input dimension does not match architecture");
  }
  internal::Workspace local_ws;
  internal::Workspace& ws = workspace ? *workspace : local_ws;

  ModelParams w = w_t;
  ParamVector grad(w.size());
  std::vector<std::size_t> order(indices.begin(), indices.end());
  Matrix x;
  std::vector<Label> y;
  for (std::size_t e = 0; e < epochs; ++e) {
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t start = 0; start < order.size(); start += batch_size) {
      const std::size_t n = std::min(batch_size, order.size() - start);
      x.resize(static_cast<Eigen::Index>(n), data.features.cols());
      y.resize(n);
      for (std::size_t r = 0; r < n; ++r) {
        const std::size_t idx = order[start + r];
        x.row(static_cast<Eigen::Index>(r)) = data.features.row(static_cast<Eigen::Index>(idx));
        y[r] = data.labels[idx];
      }
      ws.Forward(w, x, y);
      ws.Backward(w, x, y, grad);
      for (std::size_t i = 0; i < grad.size(); ++i) w.values[i] -= eta * grad[i];
    }
  }
  std::vector<double> delta(w.size());
  for (std::size_t i = 0; i < delta.size(); ++i) delta[i] = w.values[i] - w_t.values[i];
  ClientUpdate update = ClientUpdate::FromDelta(std::move(delta));
  if (!std::isfinite(update.norm)) {
    throw OverflowError("local training diverged (non-finite update); lower eta");
  }
  return update;
}

// Uniform sample of m distinct clients out of K, returned in ascending order.
inline std::vector<std::size_t> SampleClients(std::size_t num_clients, std::size_t m,
                                              Rng& rng) {
  if (m > num_clients) throw ConfigError("cannot sample more clients than exist");
  std::vector<std::size_t> ids(num_clients);
  std::iota(ids.begin(), ids.end(), std::size_t{0});
  // Partial Fisher-Yates: the first m slots become the sample.
  for (std::size_t i = 0; i < m; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, num_clients - 1);
    std::swap(ids[i], ids[pick(rng)]);
  }
  ids.resize(m);
  std::sort(ids.begin(), ids.end());
  return ids;
}

// Server-side state of a run. Advance with Step(); one coordinator only.
class FederatedRun {
 public:
  FederatedRun(FederatedConfig config, const Dataset& train, const Dataset* test,
               ClientPartition partition)
      : config_(std::move(config)),
        train_(train),
        test_(test),
        partition_(std::move(partition)),
        params_(InitParams(config_.arch, DeriveSeed(config_.seed, {stream::kInit}))),
        accountant_(config_.dp ? config_.dp->epsilon : 8.0,
                    config_.dp ? config_.dp->lambda_max : 32) {
    ValidateConfig(config_);
    if (partition_.num_clients() != config_.num_clients) {
      throw ConfigError("partition holds " + std::to_string(partition_.num_clients()) +
                        " clients, config says K=" + std::to_string(config_.num_clients));
    }
    if (train_.input_dim() != config_.arch.front()) {
      throw ShapeError("training data dimension does not match architecture input");
    }
    if (config_.dp && config_.dp->delta_threshold >= 1.0 / static_cast<double>(config_.num_clients)) {
      std::cerr << "warning: delta threshold " << config_.dp->delta_threshold
                << " is not below 1/K; client-level privacy is weak\n";
    }
  }

  // Executes the next round. Returns false (and records the stop reason) when
  // the run is over: the round budget is used up, the target accuracy was
  // reached, or charging this round would push delta above the threshold.
  bool Step() {
    if (stop_reason_) return false;
    if (history_.size() >= config_.max_rounds) {
      Stop(StopReason::kMaxRounds);
      return false;
    }
    const std::size_t t = history_.size() + 1;
    const std::size_t m = config_.ClientsAt(t);
    const double k = static_cast<double>(config_.num_clients);

    RoundMetrics metrics;
    metrics.round = t;
    metrics.m_t = m;
    if (config_.dp) {
      const double sigma = config_.dp->sigma_schedule.At(t);
      MomentsAccountant charged = accountant_.Accumulated(static_cast<double>(m) / k, sigma);
      const double delta = charged.Delta();
      if (delta > config_.dp->delta_threshold) {
        Stop(StopReason::kBudgetExhausted);
        return false;
      }
      accountant_ = std::move(charged);
      metrics.delta = delta;
      metrics.sigma_t = sigma;
    } else {
      // No mechanism, no guarantee.
      metrics.delta = 1.0;
      metrics.sigma_t = 0.0;
    }

    Rng sample_rng = MakeStream(config_.seed, {stream::kSample, t});
    const std::vector<std::size_t> sampled = SampleClients(config_.num_clients, m, sample_rng);
    std::vector<ClientUpdate> updates = RunClients(sampled, t);

    std::vector<double> norms(updates.size());
    for (std::size_t i = 0; i < updates.size(); ++i) norms[i] = updates[i].norm;

    double bound = std::numeric_limits<double>::infinity();
    if (config_.dp) {
      bound = config_.dp->clip_mode == ClipMode::kMedian ? MedianNorm(norms)
                                                         : config_.dp->fixed_clip_bound;
    }
    metrics.clip_bound = bound;

    if (bound == 0.0) {
      // At least half of the sampled updates are zero. Noise scaled to S = 0
      // would not be a mechanism at all, so the round leaves w_t unchanged.
      metrics.degenerate = true;
      std::cerr << "warning: round " << t
                << " has clipping bound 0; model left unchanged\n";
    } else {
      Rng noise_rng = MakeStream(config_.seed, {stream::kNoise, t});
      const double sigma = config_.dp ? metrics.sigma_t : 0.0;
      const std::vector<double> avg = DpAverage(updates, bound, sigma, noise_rng);
      for (std::size_t i = 0; i < avg.size(); ++i) params_.values[i] += avg[i];
    }

    const UpdateStatistics stats = ComputeUpdateStatistics(std::span<const ClientUpdate>(updates));
    metrics.v_c = stats.v_c;
    metrics.u_s = stats.u_s;
    cc_ += m;
    metrics.cc_cumulative = cc_;

    const bool last = t == config_.max_rounds;
    if (test_ != nullptr && (t % config_.eval_every == 0 || last)) {
      metrics.accuracy = Evaluate(params_, test_->features, test_->labels);
    }
    history_.push_back(metrics);

    if (!std::isnan(config_.target_accuracy) && !std::isnan(metrics.accuracy) &&
        metrics.accuracy >= config_.target_accuracy) {
      Stop(StopReason::kTargetReached);
    }
    return true;
  }

  TrainingHistory Run() {
    while (Step()) {
    }
    return history();
  }

  TrainingHistory history() const {
    return {history_, params_, stop_reason_.value_or(StopReason::kMaxRounds)};
  }

  const ModelParams& params() const { return params_; }
  const MomentsAccountant& accountant() const { return accountant_; }
  const FederatedConfig& config() const { return config_; }
  const ClientPartition& partition() const { return partition_; }
  std::optional<StopReason> stop_reason() const { return stop_reason_; }

 private:
  void Stop(StopReason reason) {
    stop_reason_ = reason;
    // Make sure the returned model has a measured accuracy.
    if (test_ != nullptr && !history_.empty() && std::isnan(history_.back().accuracy)) {
      history_.back().accuracy = Evaluate(params_, test_->features, test_->labels);
    }
  }

  std::vector<ClientUpdate> RunClients(const std::vector<std::size_t>& sampled,
                                       std::size_t round) {
    std::vector<ClientUpdate> updates(sampled.size());
    auto work = [&](std::size_t i, internal::Workspace& ws) {
      const std::size_t k = sampled[i];
      Rng rng = MakeStream(config_.seed, {stream::kClient, round, k});
      updates[i] = RunClientUpdate(partition_.clients[k], params_, train_,
                                   config_.batch_size, config_.epochs, config_.eta,
                                   rng, &ws);
    };
    const std::size_t workers = std::min(config_.workers, sampled.size());
    if (workers <= 1) {
      internal::Workspace ws;
      for (std::size_t i = 0; i < sampled.size(); ++i) work(i, ws);
      return updates;
    }
    std::atomic<std::size_t> next{0};
    std::vector<std::exception_ptr> errors(workers);
    {
      std::vector<std::jthread> pool;
      pool.reserve(workers);
      for (std::size_t w = 0; w < workers; ++w) {
        pool.emplace_back([&, w] {
          internal::Workspace ws;
          try {
            for (std::size_t i = next++; i < sampled.size(); i = next++) work(i, ws);
          } catch (...) {
            errors[w] = std::current_exception();
          }
        });
      }
    }
    for (const auto& e : errors) {
      if (e) std::rethrow_exception(e);
    }
    return updates;
  }

  FederatedConfig config_;
  const Dataset& train_;
  const Dataset* test_;
  ClientPartition partition_;
  ModelParams params_;
  MomentsAccountant accountant_;
  std::vector<RoundMetrics> history_;
  std::uint64_t cc_ = 0;
  std::optional<StopReason> stop_reason_;
};

inline TrainingHistory RunFederated(const FederatedConfig& config, const Dataset& train,
                                    const Dataset* test) {
  ValidateConfig(config);
  ClientPartition partition =
      ShardNonIid(train, config.num_clients, config.seed, config.points_per_client,
                  config.shards_per_client);
  FederatedRun run(config, train, test, std::move(partition));
  return run.Run();
}

// Federated averaging: no clipping, no noise, no accountant.
inline TrainingHistory RunFedAvgBaseline(FederatedConfig config, const Dataset& train,
                                         const Dataset* test) {
  config.dp.reset();
  return RunFederated(config, train, test);
}

}  // namespace dpfed

#endif  // DPFED_FEDERATION_HPP_
