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

#ifndef DPFED_TELEMETRY_HPP_
#define DPFED_TELEMETRY_HPP_

#include <charconv>
#include <cmath>
#include <cstddef>
#include <cstdio>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "dpfed/dp.hpp"
#include "dpfed/errors.hpp"

namespace dpfed {

struct RoundMetrics {
  std::size_t round = 0;
  double accuracy = std::nan("");  // NaN on rounds without a central evaluation
  double delta = 0.0;
  double clip_bound = 0.0;
  double v_c = 0.0;
  double u_s = 0.0;
  std::size_t m_t = 0;
  double sigma_t = 0.0;
  std::uint64_t cc_cumulative = 0;
  bool degenerate = false;  // all sampled updates were zero; model untouched

  friend bool operator==(const RoundMetrics& a, const RoundMetrics& b) {
    auto same = [](double x, double y) {
      return (std::isnan(x) && std::isnan(y)) || x == y;
    };
    return a.round == b.round && same(a.accuracy, b.accuracy) &&
           same(a.delta, b.delta) && same(a.clip_bound, b.clip_bound) &&
           same(a.v_c, b.v_c) && same(a.u_s, b.u_s) && a.m_t == b.m_t &&
           same(a.sigma_t, b.sigma_t) && a.cc_cumulative == b.cc_cumulative &&
           a.degenerate == b.degenerate;
  }
};

struct UpdateStatistics {
  double v_c = 0.0;  // between-clients variance
  double u_s = 0.0;  // update scale
};

// Per-coordinate population mean and variance over the supplied updates,
// averaged over coordinates:
//   V_c = mean_j (1/K) sum_k (d_kj - mu_j)^2,   U_s = mean_j mu_j^2.
inline UpdateStatistics ComputeUpdateStatistics(
    std::span<const std::span<const double>> updates) {
  if (updates.empty()) throw ShapeError("no updates supplied");
  const std::size_t dim = updates.front().size();
  for (const auto& u : updates) {
    if (u.size() != dim) throw ShapeError("updates differ in length");
  }
  if (dim == 0) return {};
  const double count = static_cast<double>(updates.size());
  std::vector<double> mean(dim, 0.0);
  for (const auto& u : updates) {
    for (std::size_t j = 0; j < dim; ++j) mean[j] += u[j];
  }
  for (double& m : mean) m /= count;
  std::vector<double> var(dim, 0.0);
  for (const auto& u : updates) {
    for (std::size_t j = 0; j < dim; ++j) {
      const double d = u[j] - mean[j];
      var[j] += d * d;
    }
  }
  UpdateStatistics s;
  for (std::size_t j = 0; j < dim; ++j) {
    s.v_c += var[j] / count;
    s.u_s += mean[j] * mean[j];
  }
  s.v_c /= static_cast<double>(dim);
  s.u_s /= static_cast<double>(dim);
  return s;
}

inline UpdateStatistics ComputeUpdateStatistics(
    std::span<const std::vector<double>> updates) {
  std::vector<std::span<const double>> views(updates.begin(), updates.end());
  return ComputeUpdateStatistics(std::span<const std::span<const double>>(views));
}

inline UpdateStatistics ComputeUpdateStatistics(std::span<const ClientUpdate> updates) {
  std::vector<std::span<const double>> views;
  views.reserve(updates.size());
  for (const auto& u : updates) views.emplace_back(u.delta);
  return ComputeUpdateStatistics(std::span<const std::span<const double>>(views));
}

inline double BetweenClientsVariance(std::span<const std::vector<double>> updates) {
  return ComputeUpdateStatistics(updates).v_c;
}

inline double UpdateScale(std::span<const std::vector<double>> updates) {
  return ComputeUpdateStatistics(updates).u_s;
}

inline constexpr const char* kMetricsHeader =
    "round,accuracy,delta,clip_bound,v_c,u_s,m_t,sigma_t,cc_cumulative";

// Shortest text that reads back to the same double (17 significant digits).
inline std::string FormatDouble(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  // Shortest text that parses back to the same value.
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

inline std::string MetricsCsvRow(const RoundMetrics& r) {
  std::ostringstream out;
  out << r.round << ',' << FormatDouble(r.accuracy) << ',' << FormatDouble(r.delta)
      << ',' << FormatDouble(r.clip_bound) << ',' << FormatDouble(r.v_c) << ','
      << FormatDouble(r.u_s) << ',' << r.m_t << ',' << FormatDouble(r.sigma_t)
      << ',' << r.cc_cumulative;
  return out.str();
}

inline std::string MetricsJsonLine(const RoundMetrics& r) {
  // JSON has no NaN/Infinity literals; those become null.
  auto num = [](double v) { return std::isfinite(v) ? FormatDouble(v) : std::string("null"); };
  std::ostringstream out;
  out << "{\"round\":" << r.round << ",\"accuracy\":" << num(r.accuracy)
      << ",\"delta\":" << num(r.delta) << ",\"clip_bound\":" << num(r.clip_bound)
      << ",\"v_c\":" << num(r.v_c) << ",\"u_s\":" << num(r.u_s)
      << ",\"m_t\":" << r.m_t << ",\"sigma_t\":" << num(r.sigma_t)
      << ",\"cc_cumulative\":" << r.cc_cumulative
      << ",\"degenerate\":" << (r.degenerate ? "true" : "false") << "}";
  return out.str();
}

namespace internal {

inline void WriteLines(const std::filesystem::path& path, const std::string& header,
                       std::span<const RoundMetrics> rounds,
                       const std::function<std::string(const RoundMetrics&)>& row) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  if (!header.empty()) out << header << '\n';
  for (const auto& r : rounds) out << row(r) << '\n';
  out.flush();
  if (!out) throw IoError("write failed for " + path.string());
}

}  // namespace internal

inline void WriteMetricsCsv(std::span<const RoundMetrics> rounds,
                            const std::filesystem::path& path) {
  internal::WriteLines(path, kMetricsHeader, rounds, MetricsCsvRow);
}

inline void WriteMetricsJsonl(std::span<const RoundMetrics> rounds,
                              const std::filesystem::path& path) {
  internal::WriteLines(path, "", rounds, MetricsJsonLine);
}

inline std::vector<RoundMetrics> ReadMetricsCsv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line) || line != kMetricsHeader) {
    throw FormatError(path.string() + ": missing metrics header");
  }
  std::vector<RoundMetrics> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::stringstream ss(line);
    for (std::string cell; std::getline(ss, cell, ',');) f.push_back(cell);
    if (f.size() != 9) throw FormatError(path.string() + ": bad row: " + line);
    RoundMetrics r;
    r.round = std::stoull(f[0]);
    r.accuracy = std::stod(f[1]);
    r.delta = std::stod(f[2]);
    r.clip_bound = std::stod(f[3]);
    r.v_c = std::stod(f[4]);
    r.u_s = std::stod(f[5]);
    r.m_t = std::stoull(f[6]);
    r.sigma_t = std::stod(f[7]);
    r.cc_cumulative = std::stoull(f[8]);
    rows.push_back(r);
  }
  return rows;
}

}  // namespace dpfed

#endif  // DPFED_TELEMETRY_HPP_
