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

// Command-line front end: run experiments, sweep hyperparameter grids, query
// the moments accountant and inspect the client partition.

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "dpfed/dpfed.hpp"

namespace {

namespace fs = std::filesystem;
using dpfed::KeyValues;

constexpr const char* kDataDirEnv = "DPFED_DATA_DIR";

// Flag values that override config-file keys. Unset flags leave the file (or
// default) value alone.
struct Overrides {
  std::optional<std::string> config_path;
  std::map<std::string, std::string> values;
  bool no_dp = false;

  void Register(CLI::App* app) {
    app->add_option("--config", config_path, "key = value config file");
    Add(app, "--clients", "K", "total number of clients K");
    Add(app, "--batch-size", "B", "local mini-batch size B");
    Add(app, "--epochs", "E", "local epochs E");
    Add(app, "--eta", "eta", "local learning rate");
    Add(app, "--m-schedule", "m_schedule", "clients per round, e.g. 50 or 1:30,6:60");
    Add(app, "--sigma-schedule", "sigma_schedule", "noise multiplier per round");
    Add(app, "--epsilon", "epsilon", "target epsilon");
    Add(app, "--delta-threshold", "delta_threshold", "stop once delta would exceed Q");
    Add(app, "--rounds", "max_rounds", "maximum communication rounds");
    Add(app, "--seed", "seed", "master seed");
    Add(app, "--eval-every", "eval_every", "rounds between test evaluations");
    Add(app, "--target-accuracy", "target_accuracy", "stop once test accuracy reaches this");
    Add(app, "--clip-mode", "clip_mode", "median or fixed");
    Add(app, "--clip-bound", "fixed_clip_bound", "clipping bound for --clip-mode fixed");
    Add(app, "--data-dir", "data_dir", "directory holding the MNIST IDX files");
    app->add_flag("--no-dp", no_dp, "plain federated averaging (no clipping, noise, accountant)");
  }

  void Add(CLI::App* app, const std::string& flag, const std::string& key,
           const std::string& help) {
    app->add_option_function<std::string>(
        flag, [this, key](const std::string& v) { values[key] = v; }, help);
  }

  dpfed::RunConfig Resolve() const {
    KeyValues kv;
    if (config_path) kv = dpfed::ReadKeyValueFile(*config_path);
    for (const auto& [k, v] : values) kv[k] = v;
    if (no_dp) kv["dp"] = "false";
    dpfed::RunConfig rc = dpfed::FromKeyValues(kv);
    if (rc.data_dir.empty()) {
      if (const char* env = std::getenv(kDataDirEnv)) rc.data_dir = env;
    }
    if (rc.data_dir.empty()) rc.data_dir = "data/mnist";
    return rc;
  }
};

void WriteText(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw dpfed::IoError("cannot open " + path.string() + " for writing");
  out << text;
  if (!out) throw dpfed::IoError("write failed for " + path.string());
}

std::vector<std::string> Split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  for (std::string item; std::getline(ss, item, sep);) {
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

int CmdRun(const Overrides& ov, const fs::path& out_dir, bool jsonl) {
  const dpfed::RunConfig rc = ov.Resolve();
  dpfed::ValidateConfig(rc.federated);
  const dpfed::Mnist mnist = dpfed::LoadMnist(rc.data_dir, rc.files);
  fs::create_directories(out_dir);
  WriteText(out_dir / "config.echo.txt", dpfed::ToText(rc));

  const dpfed::TrainingHistory h = dpfed::RunFederated(rc.federated, mnist.train, &mnist.test);
  dpfed::WriteMetricsCsv(h.rounds, out_dir / "metrics.csv");
  if (jsonl) dpfed::WriteMetricsJsonl(h.rounds, out_dir / "metrics.jsonl");
  dpfed::WriteModelFile(h.final_params, out_dir / "model.bin");

  std::cout << "rounds=" << h.rounds.size() << " cc=" << h.communication_cost()
            << " accuracy=" << dpfed::FormatDouble(h.final_accuracy())
            << " delta=" << (h.rounds.empty() ? "0" : dpfed::FormatDouble(h.rounds.back().delta))
            << " stop=" << dpfed::ToString(h.stop_reason) << "\n";
  return 0;
}

int CmdSweep(const Overrides& ov, const fs::path& out_dir, const std::string& grid_b,
             const std::string& grid_e, const std::string& grid_m,
             const std::string& grid_sigma, std::size_t workers) {
  const dpfed::RunConfig rc = ov.Resolve();
  dpfed::SweepGrid grid;
  for (const auto& s : Split(grid_b, ',')) grid.batch_sizes.push_back(std::stoull(s));
  for (const auto& s : Split(grid_e, ',')) grid.epochs.push_back(std::stoull(s));
  for (const auto& s : Split(grid_m, ';')) grid.m_schedules.push_back(dpfed::Schedule<std::size_t>::Parse(s));
  for (const auto& s : Split(grid_sigma, ';')) grid.sigma_schedules.push_back(dpfed::Schedule<double>::Parse(s));
  if (grid.size() == 0) throw dpfed::ConfigError("sweep grid is empty on at least one axis");

  const dpfed::Mnist mnist = dpfed::LoadMnist(rc.data_dir, rc.files);
  fs::create_directories(out_dir);
  std::ostringstream echo;
  echo << dpfed::ToText(rc) << "grid_B = " << grid_b << "\ngrid_E = " << grid_e
       << "\ngrid_m = " << grid_m << "\ngrid_sigma = " << grid_sigma << "\n";
  WriteText(out_dir / "config.echo.txt", echo.str());

  const auto ranked = dpfed::RunSweep(rc.federated, grid, mnist.train, &mnist.test, workers);
  dpfed::WriteSweepSummary(ranked, out_dir / "summary.csv");
  const auto& best = ranked.front();
  const auto diverged = std::count_if(ranked.begin(), ranked.end(),
                                      [](const auto& r) { return !r.error.empty(); });
  std::cout << "cells=" << ranked.size() << " diverged=" << diverged
            << " best: seed=" << best.cell.seed << " B=" << best.cell.batch_size
            << " E=" << best.cell.epochs << " m=" << best.cell.m_schedule.ToString()
            << " sigma=" << best.cell.sigma_schedule.ToString()
            << " accuracy=" << dpfed::FormatDouble(best.accuracy) << " cr=" << best.rounds
            << " cc=" << best.communication_cost << "\n";
  return 0;
}

struct AccountantArgs {
  std::optional<double> q;
  std::optional<std::size_t> clients;
  std::optional<std::size_t> m;
  double sigma = 1.0;
  std::size_t rounds = 10;
  double epsilon = 8.0;
  int lambda_max = 32;
  bool csv = false;
  std::optional<std::string> state_in;
  std::optional<std::string> state_out;
};

int CmdAccountant(const AccountantArgs& a) {
  double q = 0.0;
  if (a.q) {
    q = *a.q;
  } else if (a.clients && a.m) {
    if (*a.clients == 0) throw dpfed::ConfigError("--clients must be >= 1");
    q = static_cast<double>(*a.m) / static_cast<double>(*a.clients);
  } else {
    throw dpfed::ConfigError("give --q, or both --clients and --m");
  }
  dpfed::MomentsAccountant acct(a.epsilon, a.lambda_max);
  if (a.state_in) {
    std::ifstream in(*a.state_in);
    if (!in) throw dpfed::IoError("cannot open " + *a.state_in);
    std::stringstream ss;
    ss << in.rdbuf();
    acct = dpfed::MomentsAccountant::Deserialize(ss.str());
  }
  if (a.csv) {
    std::cout << "round,delta\n";
  } else {
    std::cout << "q=" << q << " z=" << a.sigma << " epsilon=" << a.epsilon
              << " lambda_max=" << acct.lambda_max() << "\n"
              << std::setw(8) << "round" << "  delta\n";
  }
  for (std::size_t r = 1; r <= a.rounds; ++r) {
    acct.Accumulate(q, a.sigma);
    const std::string d = dpfed::FormatDouble(acct.Delta(a.epsilon));
    if (a.csv) {
      std::cout << acct.rounds() << ',' << d << '\n';
    } else {
      std::cout << std::setw(8) << acct.rounds() << "  " << d << '\n';
    }
  }
  if (a.state_out) WriteText(*a.state_out, acct.Serialize());
  return 0;
}

int CmdInspectPartition(const Overrides& ov) {
  const dpfed::RunConfig rc = ov.Resolve();
  const auto& c = rc.federated;
  const dpfed::Mnist mnist = dpfed::LoadMnist(rc.data_dir, rc.files);
  const dpfed::ClientPartition part = dpfed::ShardNonIid(
      mnist.train, c.num_clients, c.seed, c.points_per_client, c.shards_per_client);
  std::map<std::size_t, std::size_t> by_distinct;
  std::size_t min_points = SIZE_MAX, max_points = 0;
  for (std::size_t k = 0; k < part.num_clients(); ++k) {
    const auto hist = dpfed::LabelHistogram(part, mnist.train, k);
    ++by_distinct[dpfed::DistinctLabels(hist)];
    min_points = std::min(min_points, part.clients[k].size());
    max_points = std::max(max_points, part.clients[k].size());
  }
  std::cout << "clients=" << part.num_clients() << " seed=" << c.seed
            << " points_per_client_min=" << min_points
            << " points_per_client_max=" << max_points << "\n";
  std::cout << "distinct_labels,clients\n";
  for (const auto& [distinct, count] : by_distinct) {
    std::cout << distinct << ',' << count << '\n';
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Client-level differentially private federated learning simulator"};
  app.require_subcommand(1);

  Overrides run_ov;
  std::string run_out = "out";
  bool run_jsonl = false;
  CLI::App* run = app.add_subcommand("run", "run one federated training experiment");
  run_ov.Register(run);
  run->add_option("--out", run_out, "output directory");
  run->add_flag("--jsonl", run_jsonl, "also write metrics.jsonl");

  Overrides sweep_ov;
  std::string sweep_out = "sweep";
  std::string grid_b = "10", grid_e = "1", grid_m = "30", grid_sigma = "1.0";
  std::size_t sweep_workers = 1;
  CLI::App* sweep = app.add_subcommand("sweep", "grid search over B, E, m and sigma");
  sweep_ov.Register(sweep);
  sweep->add_option("--out", sweep_out, "output directory");
  sweep->add_option("--grid-batch-size", grid_b, "comma-separated B values");
  sweep->add_option("--grid-epochs", grid_e, "comma-separated E values");
  sweep->add_option("--grid-m", grid_m, "';'-separated m schedules");
  sweep->add_option("--grid-sigma", grid_sigma, "';'-separated sigma schedules");
  sweep->add_option("--workers", sweep_workers, "cells run in parallel");

  AccountantArgs acct_args;
  CLI::App* acct = app.add_subcommand("accountant", "print delta after each composed round");
  acct->add_option("--q", acct_args.q, "sampling ratio m/K");
  acct->add_option("--clients", acct_args.clients, "K (with --m, instead of --q)");
  acct->add_option("--m", acct_args.m, "clients per round");
  acct->add_option("--sigma,--z", acct_args.sigma, "noise multiplier");
  acct->add_option("--rounds", acct_args.rounds, "number of compositions");
  acct->add_option("--epsilon", acct_args.epsilon, "target epsilon");
  acct->add_option("--lambda-max", acct_args.lambda_max, "highest moment order");
  acct->add_flag("--csv", acct_args.csv, "machine-readable output");
  acct->add_option("--state-in", acct_args.state_in, "resume from a saved accountant state");
  acct->add_option("--state-out", acct_args.state_out, "save the final accountant state");

  Overrides inspect_ov;
  CLI::App* inspect =
      app.add_subcommand("inspect-partition", "summarize per-client label histograms");
  inspect_ov.Register(inspect);

  CLI11_PARSE(app, argc, argv);

  try {
    if (run->parsed()) return CmdRun(run_ov, run_out, run_jsonl);
    if (sweep->parsed()) {
      return CmdSweep(sweep_ov, sweep_out, grid_b, grid_e, grid_m, grid_sigma, sweep_workers);
    }
    if (acct->parsed()) return CmdAccountant(acct_args);
    if (inspect->parsed()) return CmdInspectPartition(inspect_ov);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
