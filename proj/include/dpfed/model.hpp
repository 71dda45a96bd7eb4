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

#ifndef DPFED_MODEL_HPP_
#define DPFED_MODEL_HPP_

// Fully connected ReLU network with a softmax cross-entropy head, trained by
// plain mini-batch SGD. This is the local learner every client runs.
//
// Parameters live in one flat vector so that model deltas, clipping and noise
// are simple vector operations. Layer l occupies
//   [weights: in_l x out_l, row-major][bias: out_l]
// in order of increasing l.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "dpfed/errors.hpp"

namespace dpfed {

using Matrix =
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Label = std::uint8_t;

// Layer sizes: input, hidden..., output.
using Architecture = std::vector<std::size_t>;

inline const Architecture& DefaultArchitecture() {
  static const Architecture kArch = {784, 200, 200, 10};
  return kArch;
}

inline void ValidateArchitecture(const Architecture& arch) {
  if (arch.size() < 2) {
    throw ConfigError("architecture needs at least an input and an output layer");
  }
  for (std::size_t s : arch) {
    if (s == 0) throw ConfigError("architecture layer sizes must be >= 1");
  }
}

inline std::size_t ParameterCount(const Architecture& arch) {
  std::size_t n = 0;
  for (std::size_t l = 0; l + 1 < arch.size(); ++l) {
    n += arch[l] * arch[l + 1] + arch[l + 1];
  }
  return n;
}

// Eigen's vectorized kernels split work by address alignment, and the split
// changes rounding. Buffers that are mapped as matrices are kept 64-byte
// aligned so results do not depend on where the allocator placed them.
using ParamVector = std::vector<double, Eigen::aligned_allocator<double>>;

struct ModelParams {
  Architecture arch;
  ParamVector values;

  std::size_t size() const { return values.size(); }
  std::size_t num_layers() const { return arch.size() - 1; }

  // Offset of layer l's weight block inside `values`.
  std::size_t weight_offset(std::size_t l) const {
    std::size_t off = 0;
    for (std::size_t i = 0; i < l; ++i) off += arch[i] * arch[i + 1] + arch[i + 1];
    return off;
  }
  std::size_t bias_offset(std::size_t l) const {
    return weight_offset(l) + arch[l] * arch[l + 1];
  }

  friend bool operator==(const ModelParams&, const ModelParams&) = default;
};

struct Batch {
  Matrix features;  // batch_size x input_dim, entries in [0, 1]
  std::vector<Label> labels;

  std::size_t size() const { return labels.size(); }
};

// Glorot-uniform weights, zero biases.
inline ModelParams InitParams(const Architecture& arch, std::uint64_t seed) {
  ValidateArchitecture(arch);
  ModelParams p{arch, ParamVector(ParameterCount(arch), 0.0)};
  std::mt19937_64 rng(seed);
  for (std::size_t l = 0; l + 1 < arch.size(); ++l) {
    const double limit =
        std::sqrt(6.0 / static_cast<double>(arch[l] + arch[l + 1]));
    std::uniform_real_distribution<double> dist(-limit, limit);
    const std::size_t off = p.weight_offset(l);
    for (std::size_t i = 0; i < arch[l] * arch[l + 1]; ++i) {
      p.values[off + i] = dist(rng);
    }
  }
  return p;
}

namespace internal {

using ConstMatrixMap = Eigen::Map<const Matrix>;
using MatrixMap = Eigen::Map<Matrix>;
using ConstRowVectorMap = Eigen::Map<const Eigen::RowVectorXd>;
using RowVectorMap = Eigen::Map<Eigen::RowVectorXd>;

inline ConstMatrixMap Weights(const ModelParams& p, std::size_t l) {
  return ConstMatrixMap(p.values.data() + p.weight_offset(l),
                        static_cast<Eigen::Index>(p.arch[l]),
                        static_cast<Eigen::Index>(p.arch[l + 1]));
}
inline ConstRowVectorMap Bias(const ModelParams& p, std::size_t l) {
  return ConstRowVectorMap(p.values.data() + p.bias_offset(l),
                           static_cast<Eigen::Index>(p.arch[l + 1]));
}

inline void CheckBatch(const ModelParams& p, const Matrix& x,
                       std::span<const Label> labels) {
  if (static_cast<std::size_t>(x.cols()) != p.arch.front()) {
    throw ShapeError("input dimension " + std::to_string(x.cols()) +
                     " does not match architecture input " +
                     std::to_string(p.arch.front()));
  }
  if (static_cast<std::size_t>(x.rows()) != labels.size()) {
    throw ShapeError("feature rows and label count differ");
  }
  if (labels.empty()) throw ShapeError("batch must hold at least one sample");
  const std::size_t classes = p.arch.back();
  for (Label y : labels) {
    if (y >= classes) throw ShapeError("label outside the output layer range");
  }
}

// Reusable activation buffers for repeated forward/backward passes on batches
// of one size. Not thread-safe; give each worker its own.
class Workspace {
 public:
  // Runs the forward pass, leaves softmax probabilities in the last
  // activation and returns the mean negative log-likelihood.
  double Forward(const ModelParams& p, const Matrix& x,
                 std::span<const Label> labels) {
    const std::size_t layers = p.num_layers();
    acts_.resize(layers + 1);
    const Matrix* in = &x;
    for (std::size_t l = 0; l < layers; ++l) {
      Matrix& z = acts_[l + 1];
      z.noalias() = (*in) * Weights(p, l);
      z.rowwise() += Bias(p, l);
      if (l + 1 < layers) z = z.cwiseMax(0.0);
      in = &z;
    }
    Matrix& out = acts_[layers];
    double loss = 0.0;
    for (Eigen::Index r = 0; r < out.rows(); ++r) {
      auto row = out.row(r);
      const double mx = row.maxCoeff();
      row.array() -= mx;
      const double log_norm = std::log(row.array().exp().sum());
      loss -= row(labels[static_cast<std::size_t>(r)]) - log_norm;
      row.array() = (row.array() - log_norm).exp();
    }
    return loss / static_cast<double>(out.rows());
  }

  // Must follow Forward on the same (p, x, labels). Writes d(mean loss)/d(values)
  // into `grad`, which must hold p.size() entries.
  void Backward(const ModelParams& p, const Matrix& x,
                std::span<const Label> labels, std::span<double> grad) {
    const std::size_t layers = p.num_layers();
    const double inv_n = 1.0 / static_cast<double>(x.rows());
    delta_ = acts_[layers];
    for (std::size_t r = 0; r < labels.size(); ++r) {
      delta_(static_cast<Eigen::Index>(r), labels[r]) -= 1.0;
    }
    delta_ *= inv_n;
    for (std::size_t l = layers; l-- > 0;) {
      const Matrix& in = (l == 0) ? x : acts_[l];
      MatrixMap dw(grad.data() + p.weight_offset(l),
                   static_cast<Eigen::Index>(p.arch[l]),
                   static_cast<Eigen::Index>(p.arch[l + 1]));
      RowVectorMap db(grad.data() + p.bias_offset(l),
                      static_cast<Eigen::Index>(p.arch[l + 1]));
      dw.noalias() = in.transpose() * delta_;
      db = delta_.colwise().sum();
      if (l > 0) {
        back_.noalias() = delta_ * Weights(p, l).transpose();
        back_.array() *= (acts_[l].array() > 0.0).cast<double>();
        std::swap(delta_, back_);
      }
    }
  }

  const Matrix& probabilities() const { return acts_.back(); }

 private:
  std::vector<Matrix> acts_;  // acts_[0] unused; input is passed separately
  Matrix delta_;
  Matrix back_;
};

}  // namespace internal

struct ForwardResult {
  double loss;
  Matrix probabilities;
};

inline ForwardResult ForwardLoss(const ModelParams& params, const Batch& batch) {
  internal::CheckBatch(params, batch.features, batch.labels);
  internal::Workspace ws;
  const double loss = ws.Forward(params, batch.features, batch.labels);
  return {loss, ws.probabilities()};
}

inline std::vector<double> Backward(const ModelParams& params,
                                    const Batch& batch) {
  internal::CheckBatch(params, batch.features, batch.labels);
  internal::Workspace ws;
  ParamVector grad(params.size());
  ws.Forward(params, batch.features, batch.labels);
  ws.Backward(params, batch.features, batch.labels, grad);
  return {grad.begin(), grad.end()};
}

inline void SgdStepInPlace(ModelParams& params, std::span<const double> gradient,
                           double eta) {
  if (gradient.size() != params.size()) {
    throw ShapeError("gradient length " + std::to_string(gradient.size()) +
                     " != parameter count " + std::to_string(params.size()));
  }
  if (!(eta > 0.0)) throw ConfigError("learning rate must be > 0");
  for (std::size_t i = 0; i < gradient.size(); ++i) {
    params.values[i] -= eta * gradient[i];
  }
}

inline ModelParams SgdStep(ModelParams params, std::span<const double> gradient,
                           double eta) {
  SgdStepInPlace(params, gradient, eta);
  return params;
}

// Index of the largest entry; the lowest index wins ties.
template <typename Row>
std::size_t ArgMax(const Row& row) {
  std::size_t best = 0;
  for (Eigen::Index c = 1; c < row.size(); ++c) {
    if (row(c) > row(static_cast<Eigen::Index>(best))) best = static_cast<std::size_t>(c);
  }
  return best;
}

// Top-1 accuracy. The logits are compared directly; softmax preserves order
// and ties.
inline double Evaluate(const ModelParams& params, const Matrix& features,
                       std::span<const Label> labels) {
  if (labels.empty() || features.rows() == 0) {
    throw EvaluationError("evaluation set is empty");
  }
  if (static_cast<std::size_t>(features.rows()) != labels.size()) {
    throw ShapeError("feature rows and label count differ");
  }
  if (static_cast<std::size_t>(features.cols()) != params.arch.front()) {
    throw ShapeError("input dimension does not match architecture");
  }
  constexpr Eigen::Index kChunk = 1000;
  const std::size_t layers = params.num_layers();
  std::size_t correct = 0;
  Matrix a, z;
  for (Eigen::Index start = 0; start < features.rows(); start += kChunk) {
    const Eigen::Index n = std::min(kChunk, features.rows() - start);
    a = features.middleRows(start, n);
    for (std::size_t l = 0; l < layers; ++l) {
      z.noalias() = a * internal::Weights(params, l);
      z.rowwise() += internal::Bias(params, l);
      if (l + 1 < layers) z = z.cwiseMax(0.0);
      std::swap(a, z);
    }
    for (Eigen::Index r = 0; r < n; ++r) {
      if (ArgMax(a.row(r)) == labels[static_cast<std::size_t>(start + r)]) ++correct;
    }
  }
  return static_cast<double>(correct) / static_cast<double>(labels.size());
}

}  // namespace dpfed

#endif  // DPFED_MODEL_HPP_
