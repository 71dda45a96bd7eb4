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

#ifndef DPFED_SWEEP_HPP_
#define DPFED_SWEEP_HPP_

// Grid search over (B, E, m schedule, sigma schedule). Every cell is an
// independent run with its own derived seed; cells share only read-only data.
// Ranking: highest accuracy of the returned model first, fewer communication
// rounds breaking ties.

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <exception>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "dpfed/data.hpp"
#include "dpfed/errors.hpp"
#include "dpfed/federation.hpp"
#include "dpfed/rng.hpp"
#include "dpfed/schedule.hpp"
#include "dpfed/telemetry.hpp"

namespace dpfed {

struct SweepGrid {
  std::vector<std::size_t> batch_sizes;
  std::vector<std::size_t> epochs;
  std::vector<Schedule<std::size_t>> m_schedules;
  std::vector<Schedule<double>> sigma_schedules;

  std::size_t size() const {
    return batch_sizes.size() * epochs.size() * m_schedules.size() * sigma_schedules.size();
  }
};

struct SweepCell {
  std::size_t index = 0;
  std::uint64_t seed = 0;
  std::size_t batch_size = 0;
  std::size_t epochs = 0;
  Schedule<std::size_t> m_schedule;
  Schedule<double> sigma_schedule;
};

struct SweepCellResult {
  SweepCell cell;
  double accuracy = std::nan("");       // accuracy of the returned model
  double best_accuracy = std::nan("");  // best accuracy seen during the run
  std::size_t rounds = 0;               // CR
  std::uint64_t communication_cost = 0; // CC
  double final_delta = 0.0;
  StopReason stop_reason = StopReason::kMaxRounds;
  std::string error;  // non-empty when the cell's training diverged
};

// Cartesian product in (B, E, m, sigma) order, last axis fastest.
inline std::vector<SweepCell> ExpandGrid(const SweepGrid& grid, std::uint64_t base_seed) {
  if (grid.size() == 0) throw ConfigError("sweep grid is empty on at least one axis");
  std::vector<SweepCell> cells;
  cells.reserve(grid.size());
  for (std::size_t b : grid.batch_sizes)
    for (std::size_t e : grid.epochs)
      for (const auto& m : grid.m_schedules)
        for (const auto& s : grid.sigma_schedules) {
          const std::size_t i = cells.size();
          cells.push_back({i, DeriveSeed(base_seed, {stream::kSweepCell, i}), b, e, m, s});
        }
  return cells;
}

inline FederatedConfig CellConfig(const FederatedConfig& base, const SweepCell& cell) {
  FederatedConfig c = base;
  c.batch_size = cell.batch_size;
  c.epochs = cell.epochs;
  c.m_schedule = cell.m_schedule;
  if (c.dp) c.dp->sigma_schedule = cell.sigma_schedule;
  c.seed = cell.seed;
  c.workers = 1;
  return c;
}

// Sorts best-first. NaN accuracies sink to the bottom; cell index is the
// final tie-break so the order is total.
inline void RankResults(std::vector<SweepCellResult>& results) {
  std::stable_sort(results.begin(), results.end(),
                   [](const SweepCellResult& a, const SweepCellResult& b) {
                     const bool an = std::isnan(a.accuracy), bn = std::isnan(b.accuracy);
                     if (an != bn) return bn;
                     if (!an && a.accuracy != b.accuracy) return a.accuracy > b.accuracy;
                     if (a.rounds != b.rounds) return a.rounds < b.rounds;
                     return a.cell.index < b.cell.index;
                   });
}

inline SweepCellResult SummarizeCell(const SweepCell& cell, const TrainingHistory& h) {
  SweepCellResult r;
  r.cell = cell;
  r.accuracy = h.final_accuracy();
  r.best_accuracy = h.best_accuracy();
  r.rounds = h.rounds.size();
  r.communication_cost = h.communication_cost();
  r.final_delta = h.rounds.empty() ? 0.0 : h.rounds.back().delta;
  r.stop_reason = h.stop_reason;
  return r;
}

// Runs every cell (on up to `workers` threads) and returns ranked results.
inline std::vector<SweepCellResult> RunSweep(const FederatedConfig& base, const SweepGrid& grid,
                                             const Dataset& train, const Dataset* test,
                                             std::size_t workers = 1) {
  const std::vector<SweepCell> cells = ExpandGrid(grid, base.seed);
  for (const auto& cell : cells) ValidateConfig(CellConfig(base, cell));
  std::vector<SweepCellResult> results(cells.size());
  auto run_cell = [&](std::size_t i) {
    try {
      results[i] = SummarizeCell(cells[i], RunFederated(CellConfig(base, cells[i]), train, test));
    } catch (const OverflowError& e) {
      // A diverged cell is a result (it ranks last), not a reason to drop the grid.
      results[i] = SweepCellResult{};
      results[i].cell = cells[i];
      results[i].error = e.what();
    }
  };
  workers = std::max<std::size_t>(1, std::min(workers, cells.size()));
  if (workers == 1) {
    for (std::size_t i = 0; i < cells.size(); ++i) run_cell(i);
  } else {
    std::atomic<std::size_t> next{0};
    std::vector<std::exception_ptr> errors(workers);
    {
      std::vector<std::jthread> pool;
      for (std::size_t w = 0; w < workers; ++w) {
        pool.emplace_back([&, w] {
          try {
            for (std::size_t i = next++; i < cells.size(); i = next++) run_cell(i);
          } catch (...) {
            errors[w] = std::current_exception();
          }
        });
      }
    }
    for (const auto& e : errors) {
      if (e) std::rethrow_exception(e);
    }
  }
  RankResults(results);
  return results;
}

inline constexpr const char* kSweepHeader =
    "rank,cell,seed,B,E,m_schedule,sigma_schedule,accuracy,best_accuracy,cr,cc,final_delta,"
    "stop_reason";

inline void WriteSweepSummary(const std::vector<SweepCellResult>& ranked,
                              const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out << kSweepHeader << '\n';
  for (std::size_t i = 0; i < ranked.size(); ++i) {
    const auto& r = ranked[i];
    out << (i + 1) << ',' << r.cell.index << ',' << r.cell.seed << ',' << r.cell.batch_size
        << ',' << r.cell.epochs << ",\"" << r.cell.m_schedule.ToString() << "\",\""
        << r.cell.sigma_schedule.ToString() << "\"," << FormatDouble(r.accuracy) << ','
        << FormatDouble(r.best_accuracy) << ',' << r.rounds << ',' << r.communication_cost
        << ',' << FormatDouble(r.final_delta) << ','
        << (r.error.empty() ? ToString(r.stop_reason) : "diverged") << '\n';
  }
  if (!out) throw IoError("write failed for " + path.string());
}

}  // namespace dpfed

#endif  // DPFED_SWEEP_HPP_
