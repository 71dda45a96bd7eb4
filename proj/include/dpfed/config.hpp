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

#ifndef DPFED_CONFIG_HPP_
#define DPFED_CONFIG_HPP_

// Flat "key = value" run configuration. Keys are the FederatedConfig and
// DpConfig field names (K, B, E, eta, m_schedule, sigma_schedule, ...) plus the
// data file locations. ToText() writes every effective key in a fixed order,
// and FromText(ToText(c)) == c.

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "dpfed/data.hpp"
#include "dpfed/errors.hpp"
#include "dpfed/federation.hpp"
#include "dpfed/schedule.hpp"
#include "dpfed/telemetry.hpp"

namespace dpfed {

struct RunConfig {
  FederatedConfig federated;
  std::string data_dir;
  MnistFiles files;
};

using KeyValues = std::map<std::string, std::string>;

namespace internal {

inline std::string Trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

inline std::size_t ToSize(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    if (v.find('-') != std::string::npos) throw std::invalid_argument("negative");
    const auto x = std::stoull(v, &used);
    if (used != v.size()) throw std::invalid_argument("trailing");
    return static_cast<std::size_t>(x);
  } catch (const std::logic_error&) {
    throw ConfigError("key '" + key + "': expected a non-negative integer, got '" + v + "'");
  }
}

inline double ToDouble(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    const double x = std::stod(v, &used);
    if (used != v.size()) throw std::invalid_argument("trailing");
    return x;
  } catch (const std::logic_error&) {
    throw ConfigError("key '" + key + "': expected a number, got '" + v + "'");
  }
}

inline bool ToBool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw ConfigError("key '" + key + "': expected true/false, got '" + v + "'");
}

}  // namespace internal

inline KeyValues ParseKeyValues(const std::string& text) {
  KeyValues kv;
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string t = internal::Trim(line);
    if (t.empty() || t[0] == '#') continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("config line " + std::to_string(lineno) + ": expected key = value");
    }
    kv[internal::Trim(t.substr(0, eq))] = internal::Trim(t.substr(eq + 1));
  }
  return kv;
}

inline KeyValues ReadKeyValueFile(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return ParseKeyValues(ss.str());
}

// Builds a config from defaults overlaid with `kv`. Unknown keys are errors.
inline RunConfig FromKeyValues(const KeyValues& kv) {
  using internal::ToBool;
  using internal::ToDouble;
  using internal::ToSize;
  RunConfig rc;
  FederatedConfig& c = rc.federated;
  DpConfig dp;
  bool use_dp = true;
  for (const auto& [key, v] : kv) {
    if (key == "K") c.num_clients = ToSize(key, v);
    else if (key == "B") c.batch_size = ToSize(key, v);
    else if (key == "E") c.epochs = ToSize(key, v);
    else if (key == "eta") c.eta = ToDouble(key, v);
    else if (key == "m_schedule") c.m_schedule = (v == "all" || v.empty()) ? Schedule<std::size_t>{} : Schedule<std::size_t>::Parse(v);
    else if (key == "max_rounds") c.max_rounds = ToSize(key, v);
    else if (key == "seed") c.seed = ToSize(key, v);
    else if (key == "eval_every") c.eval_every = ToSize(key, v);
    else if (key == "target_accuracy") c.target_accuracy = (v == "none" || v == "nan") ? std::nan("") : ToDouble(key, v);
    else if (key == "workers") c.workers = ToSize(key, v);
    else if (key == "points_per_client") c.points_per_client = ToSize(key, v);
    else if (key == "shards_per_client") c.shards_per_client = ToSize(key, v);
    else if (key == "arch") {
      c.arch.clear();
      std::stringstream ss(v);
      for (std::string item; std::getline(ss, item, ',');) c.arch.push_back(ToSize(key, internal::Trim(item)));
    }
    else if (key == "dp") use_dp = ToBool(key, v);
    else if (key == "sigma_schedule") dp.sigma_schedule = Schedule<double>::Parse(v);
    else if (key == "delta_threshold") dp.delta_threshold = ToDouble(key, v);
    else if (key == "epsilon") dp.epsilon = ToDouble(key, v);
    else if (key == "lambda_max") dp.lambda_max = static_cast<int>(ToSize(key, v));
    else if (key == "clip_mode") {
      if (v == "median") dp.clip_mode = ClipMode::kMedian;
      else if (v == "fixed") dp.clip_mode = ClipMode::kFixed;
      else throw ConfigError("clip_mode must be 'median' or 'fixed'");
    }
    else if (key == "fixed_clip_bound") dp.fixed_clip_bound = ToDouble(key, v);
    else if (key == "data_dir") rc.data_dir = v;
    else if (key == "train_images") rc.files.train_images = v;
    else if (key == "train_labels") rc.files.train_labels = v;
    else if (key == "test_images") rc.files.test_images = v;
    else if (key == "test_labels") rc.files.test_labels = v;
    else throw ConfigError("unknown config key '" + key + "'");
  }
  if (use_dp) c.dp = dp;
  return rc;
}

inline std::string ToText(const RunConfig& rc) {
  const FederatedConfig& c = rc.federated;
  const DpConfig dp = c.dp.value_or(DpConfig{});
  std::ostringstream out;
  out << "# effective configuration\n";
  out << "K = " << c.num_clients << "\n";
  out << "B = " << c.batch_size << "\n";
  out << "E = " << c.epochs << "\n";
  out << "eta = " << FormatDouble(c.eta) << "\n";
  out << "m_schedule = " << (c.m_schedule.empty() ? std::string("all") : c.m_schedule.ToString()) << "\n";
  out << "max_rounds = " << c.max_rounds << "\n";
  out << "seed = " << c.seed << "\n";
  out << "eval_every = " << c.eval_every << "\n";
  out << "target_accuracy = " << (std::isnan(c.target_accuracy) ? std::string("none") : FormatDouble(c.target_accuracy)) << "\n";
  out << "workers = " << c.workers << "\n";
  out << "arch = ";
  for (std::size_t i = 0; i < c.arch.size(); ++i) out << (i ? "," : "") << c.arch[i];
  out << "\n";
  out << "points_per_client = " << c.points_per_client << "\n";
  out << "shards_per_client = " << c.shards_per_client << "\n";
  out << "dp = " << (c.dp ? "true" : "false") << "\n";
  out << "sigma_schedule = " << dp.sigma_schedule.ToString() << "\n";
  out << "delta_threshold = " << FormatDouble(dp.delta_threshold) << "\n";
  out << "epsilon = " << FormatDouble(dp.epsilon) << "\n";
  out << "lambda_max = " << dp.lambda_max << "\n";
  out << "clip_mode = " << (dp.clip_mode == ClipMode::kMedian ? "median" : "fixed") << "\n";
  out << "fixed_clip_bound = " << FormatDouble(dp.fixed_clip_bound) << "\n";
  out << "data_dir = " << rc.data_dir << "\n";
  out << "train_images = " << rc.files.train_images << "\n";
  out << "train_labels = " << rc.files.train_labels << "\n";
  out << "test_images = " << rc.files.test_images << "\n";
  out << "test_labels = " << rc.files.test_labels << "\n";
  return out.str();
}

inline RunConfig FromText(const std::string& text) {
  return FromKeyValues(ParseKeyValues(text));
}

}  // namespace dpfed

#endif  // DPFED_CONFIG_HPP_
