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

#ifndef DPFED_DP_HPP_
#define DPFED_DP_HPP_

// Client-level differential privacy: update clipping, the median clipping
// bound, the Gaussian-mechanism average and the moments accountant that turns
// per-round sampled Gaussian mechanisms into a cumulative delta at fixed
// epsilon.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <map>
#include <mutex>
#include <numbers>
#include <random>
#include <span>
#include <sstream>
#include <string>
#include <tuple>
#include <vector>

#include "dpfed/errors.hpp"
#include "dpfed/rng.hpp"

namespace dpfed {

inline double L2Norm(std::span<const double> v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}

// A client's model delta w^k - w_t and its L2 norm.
struct ClientUpdate {
  std::vector<double> delta;
  double norm = 0.0;

  static ClientUpdate FromDelta(std::vector<double> delta) {
    const double n = L2Norm(delta);
    return {std::move(delta), n};
  }
};

// delta / max(1, norm / S). Identity when the update already fits inside S.
inline std::vector<double> ClipUpdate(const ClientUpdate& update, double bound) {
  if (!(bound > 0.0)) throw ConfigError("clipping bound must be > 0");
  const double scale = std::max(1.0, update.norm / bound);
  std::vector<double> out(update.delta);
  if (scale > 1.0) {
    for (double& x : out) x /= scale;
  }
  return out;
}

// Odd count: middle order statistic. Even count: mean of the two middle ones.
inline double MedianNorm(std::span<const double> norms) {
  if (norms.empty()) throw ProtocolError("median of an empty norm list");
  std::vector<double> v(norms.begin(), norms.end());
  for (double x : v) {
    if (!(x >= 0.0)) throw ConfigError("norms must be non-negative");
  }
  const std::size_t mid = v.size() / 2;
  std::nth_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(mid), v.end());
  const double upper = v[mid];
  if (v.size() % 2 == 1) return upper;
  const double lower = *std::max_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(mid));
  return 0.5 * (lower + upper);
}

// Gaussian-mechanism approximation of the mean update:
//   (sum_k clip(delta_k, S) + N(0, (sigma S)^2 I)) / m.
// Updates are summed in the order given. sigma == 0 adds nothing, which lets
// S = +inf express "no clipping, no noise".
inline std::vector<double> DpAverage(std::span<const ClientUpdate> updates,
                                     double bound, double sigma, Rng& rng) {
  if (updates.empty()) throw ProtocolError("no client updates to aggregate");
  if (!(bound > 0.0)) throw ConfigError("clipping bound must be > 0");
  if (!(sigma >= 0.0)) throw ConfigError("noise multiplier must be >= 0");
  const std::size_t dim = updates.front().delta.size();
  std::vector<double> sum(dim, 0.0);
  for (const ClientUpdate& u : updates) {
    if (u.delta.size() != dim) throw ShapeError("client updates differ in length");
    const double scale = std::max(1.0, u.norm / bound);
    if (scale > 1.0) {
      for (std::size_t i = 0; i < dim; ++i) sum[i] += u.delta[i] / scale;
    } else {
      for (std::size_t i = 0; i < dim; ++i) sum[i] += u.delta[i];
    }
  }
  if (sigma > 0.0) {
    const double stddev = sigma * bound;
    if (!std::isfinite(stddev)) {
      throw ConfigError("noise requires a finite clipping bound");
    }
    std::normal_distribution<double> noise(0.0, stddev);
    for (double& x : sum) x += noise(rng);
  }
  const double m = static_cast<double>(updates.size());
  for (double& x : sum) x /= m;
  return sum;
}

// delta <= (4/5) exp(-(sigma epsilon)^2 / 2) for a single Gaussian-mechanism
// query, clamped to [0, 1].
inline double SingleQueryDeltaBound(double sigma, double epsilon) {
  const double t = sigma * epsilon;
  return std::clamp(0.8 * std::exp(-0.5 * t * t), 0.0, 1.0);
}

struct QuadratureOptions {
  // Simpson intervals on [-B, B]; must be even.
  std::size_t intervals = std::size_t{1} << 17;
};

namespace internal {

inline double LogAddExp(double a, double b) {
  if (a == -std::numeric_limits<double>::infinity()) return b;
  if (b == -std::numeric_limits<double>::infinity()) return a;
  const double hi = std::max(a, b);
  return hi + std::log1p(std::exp(std::min(a, b) - hi));
}

// log of the Simpson integral of exp(f) on a uniform grid, with the running
// maximum factored out so huge moments do not overflow.
template <typename LogIntegrand>
double LogSimpson(LogIntegrand&& f, double lo, double hi, std::size_t intervals) {
  const double h = (hi - lo) / static_cast<double>(intervals);
  std::vector<double> vals(intervals + 1);
  double mx = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i <= intervals; ++i) {
    vals[i] = f(lo + h * static_cast<double>(i));
    if (std::isnan(vals[i])) return vals[i];
    mx = std::max(mx, vals[i]);
  }
  if (!std::isfinite(mx)) return mx;
  double acc = std::exp(vals[0] - mx) + std::exp(vals[intervals] - mx);
  for (std::size_t i = 1; i < intervals; ++i) {
    acc += (i % 2 == 1 ? 4.0 : 2.0) * std::exp(vals[i] - mx);
  }
  return mx + std::log(acc * h / 3.0);
}

}  // namespace internal

// Log of the lambda-th moment of the privacy loss of the sampled Gaussian
// mechanism with sampling ratio q and noise multiplier z:
//   alpha(lambda) = log max(E_{mu0}[(mu0/mu)^lambda], E_{mu}[(mu/mu0)^lambda])
// with mu0 = N(0, z^2), mu1 = N(1, z^2), mu = (1-q) mu0 + q mu1.
inline double LogMoment(double q, double z, int lambda,
                        const QuadratureOptions& opts = {}) {
  if (!(q >= 0.0 && q <= 1.0)) throw ConfigError("sampling ratio q must lie in [0, 1]");
  if (!(z > 0.0) || !std::isfinite(z)) throw ConfigError("noise multiplier z must be > 0");
  if (lambda < 1) throw ConfigError("moment order must be >= 1");
  if (opts.intervals < 2 || opts.intervals % 2 != 0) {
    throw ConfigError("Simpson interval count must be even and >= 2");
  }
  if (q == 0.0) return 0.0;

  const double lam = lambda;
  const double inv_2z2 = 1.0 / (2.0 * z * z);
  const double log_norm = -std::log(z * std::sqrt(2.0 * std::numbers::pi));
  const double log_q = std::log(q);
  const double log_1mq = q < 1.0 ? std::log1p(-q) : -std::numeric_limits<double>::infinity();
  const double bound = lam + 4.0 * z * std::sqrt(2.0 * std::log(1e16));

  // r(x) = log(mu(x) / mu0(x)).
  auto log_ratio = [&](double x) {
    return internal::LogAddExp(log_1mq, log_q + (2.0 * x - 1.0) * inv_2z2);
  };
  auto log_mu0 = [&](double x) { return log_norm - x * x * inv_2z2; };

  const double e1 = internal::LogSimpson(
      [&](double x) { return log_mu0(x) - lam * log_ratio(x); }, -bound, bound,
      opts.intervals);
  const double e2 = internal::LogSimpson(
      [&](double x) { return log_mu0(x) + (lam + 1.0) * log_ratio(x); }, -bound,
      bound, opts.intervals);
  const double alpha = std::max(e1, e2);
  if (!std::isfinite(alpha)) {
    std::ostringstream msg;
    msg << "log moment is not finite (q=" << q << ", z=" << z
        << ", lambda=" << lambda << "); lower lambda_max or raise z";
    throw OverflowError(msg.str());
  }
  // Both expectations are >= 1 by Jensen; quadrature can undershoot by an ulp.
  return std::max(alpha, 0.0);
}

namespace internal {

// Log moments are requested for the same few (q, z) pairs every round.
inline double CachedLogMoment(double q, double z, int lambda) {
  static std::mutex mu;
  static std::map<std::tuple<double, double, int>, double> cache;
  const auto key = std::make_tuple(q, z, lambda);
  {
    std::lock_guard<std::mutex> lock(mu);
    if (auto it = cache.find(key); it != cache.end()) return it->second;
  }
  const double v = LogMoment(q, z, lambda);
  std::lock_guard<std::mutex> lock(mu);
  cache.emplace(key, v);
  return v;
}

}  // namespace internal

// Tracks cumulative log moments alpha(1..lambda_max) over composed rounds.
// Single writer; Delta() may be read between accumulations.
class MomentsAccountant {
 public:
  explicit MomentsAccountant(double epsilon = 8.0, int lambda_max = 32)
      : epsilon_(epsilon), log_moments_(static_cast<std::size_t>(lambda_max), 0.0) {
    if (lambda_max < 1) throw ConfigError("lambda_max must be >= 1");
    if (!(epsilon > 0.0)) throw ConfigError("epsilon must be > 0");
  }

  // Charges one round of the sampled Gaussian mechanism. z == 0 with q > 0 is
  // a mechanism without privacy: every moment becomes +inf and delta 1.
  void Accumulate(double q, double z) {
    if (!(q >= 0.0 && q <= 1.0)) throw ConfigError("sampling ratio q must lie in [0, 1]");
    if (!(z >= 0.0)) throw ConfigError("noise multiplier z must be >= 0");
    std::vector<double> step(log_moments_.size());
    for (std::size_t i = 0; i < step.size(); ++i) {
      const int lambda = static_cast<int>(i) + 1;
      if (q == 0.0) {
        step[i] = 0.0;
      } else if (z == 0.0) {
        step[i] = std::numeric_limits<double>::infinity();
      } else {
        step[i] = internal::CachedLogMoment(q, z, lambda);
      }
    }
    for (std::size_t i = 0; i < step.size(); ++i) log_moments_[i] += step[i];
    ++rounds_;
  }

  MomentsAccountant Accumulated(double q, double z) const {
    MomentsAccountant next = *this;
    next.Accumulate(q, z);
    return next;
  }

  // min over lambda of exp(alpha(lambda) - lambda * epsilon), clamped to [0, 1].
  double Delta(double epsilon) const {
    if (!(epsilon > 0.0)) throw ConfigError("epsilon must be > 0");
    double best = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < log_moments_.size(); ++i) {
      best = std::min(best, log_moments_[i] - static_cast<double>(i + 1) * epsilon);
    }
    return std::clamp(std::exp(best), 0.0, 1.0);
  }
  double Delta() const { return Delta(epsilon_); }

  double epsilon() const { return epsilon_; }
  int lambda_max() const { return static_cast<int>(log_moments_.size()); }
  std::size_t rounds() const { return rounds_; }
  std::span<const double> log_moments() const { return log_moments_; }

  // Line-oriented text:
  //   epsilon <e>
  //   lambda_max <n>
  //   rounds <r>
  //   <lambda> <alpha>     (one line per order)
  // '#' starts a comment line.
  std::string Serialize() const {
    std::ostringstream out;
    out.precision(17);
    out << "# moments accountant state\n";
    out << "epsilon " << epsilon_ << "\n";
    out << "lambda_max " << log_moments_.size() << "\n";
    out << "rounds " << rounds_ << "\n";
    for (std::size_t i = 0; i < log_moments_.size(); ++i) {
      out << (i + 1) << " " << log_moments_[i] << "\n";
    }
    return out.str();
  }

  static MomentsAccountant Deserialize(const std::string& text) {
    std::istringstream in(text);
    std::string line;
    double epsilon = 0.0;
    long long lambda_max = -1;
    long long rounds = -1;
    std::vector<std::pair<long long, double>> moments;
    while (std::getline(in, line)) {
      if (line.empty() || line[0] == '#') continue;
      std::istringstream ls(line);
      std::string key;
      ls >> key;
      if (key == "epsilon") {
        ls >> epsilon;
      } else if (key == "lambda_max") {
        ls >> lambda_max;
      } else if (key == "rounds") {
        ls >> rounds;
      } else {
        std::istringstream ks(line);
        long long lambda = 0;
        std::string value;
        ks >> lambda >> value;
        if (!ks) throw FormatError("bad accountant line: " + line);
        moments.emplace_back(lambda, ParseDouble(value));
        continue;
      }
      if (!ls) throw FormatError("bad accountant line: " + line);
    }
    if (lambda_max < 1 || rounds < 0) {
      throw FormatError("accountant state is missing lambda_max or rounds");
    }
    MomentsAccountant acct(epsilon, static_cast<int>(lambda_max));
    if (moments.size() != static_cast<std::size_t>(lambda_max)) {
      throw FormatError("accountant state lists " + std::to_string(moments.size()) +
                        " moments, expected " + std::to_string(lambda_max));
    }
    for (const auto& [lambda, alpha] : moments) {
      if (lambda < 1 || lambda > lambda_max) throw FormatError("moment order out of range");
      acct.log_moments_[static_cast<std::size_t>(lambda - 1)] = alpha;
    }
    acct.rounds_ = static_cast<std::size_t>(rounds);
    return acct;
  }

 private:
  static double ParseDouble(const std::string& s) {
    if (s == "inf") return std::numeric_limits<double>::infinity();
    std::size_t used = 0;
    const double v = std::stod(s, &used);
    if (used != s.size()) throw FormatError("bad number: " + s);
    return v;
  }

  double epsilon_;
  std::vector<double> log_moments_;
  std::size_t rounds_ = 0;
};

}  // namespace dpfed

#endif  // DPFED_DP_HPP_
