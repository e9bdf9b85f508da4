/*
 * Copyright 2026 The dmh-bench Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "dmh/util.hpp"

namespace dmh::nn {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

/// Fully connected network, rectified-linear hidden layers and an identity
/// output layer. Batched calls take one sample per column.
///
/// The same type doubles as the gradient container, so gradients, moments
/// and target copies share the parameter layout.
struct Mlp {
  std::vector<std::size_t> dims;
  std::vector<Matrix> weights;  // weights[l] is dims[l+1] x dims[l]
  std::vector<Vector> biases;

  static Mlp zeros(std::vector<std::size_t> dims) {
    if (dims.size() < 2) throw PreconditionError("mlp needs at least an input and an output dimension");
    Mlp net;
    net.dims = std::move(dims);
    for (std::size_t l = 0; l + 1 < net.dims.size(); ++l) {
      net.weights.push_back(Matrix::Zero(static_cast<Eigen::Index>(net.dims[l + 1]), static_cast<Eigen::Index>(net.dims[l])));
      net.biases.push_back(Vector::Zero(static_cast<Eigen::Index>(net.dims[l + 1])));
    }
    return net;
  }

  /// Uniform fan-in initialisation, bound 1/sqrt(fan_in) for weights and biases.
  static Mlp init(std::vector<std::size_t> dims, Rng& rng) {
    Mlp net = zeros(std::move(dims));
    for (std::size_t l = 0; l < net.weights.size(); ++l) {
      const double bound = 1.0 / std::sqrt(static_cast<double>(net.dims[l]));
      std::uniform_real_distribution<double> u(-bound, bound);
      for (Eigen::Index i = 0; i < net.weights[l].size(); ++i) net.weights[l].data()[i] = u(rng);
      for (Eigen::Index i = 0; i < net.biases[l].size(); ++i) net.biases[l][i] = u(rng);
    }
    return net;
  }

  std::size_t layers() const { return weights.size(); }
  std::size_t input_dim() const { return dims.front(); }
  std::size_t output_dim() const { return dims.back(); }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (std::size_t l = 0; l < weights.size(); ++l) n += static_cast<std::size_t>(weights[l].size() + biases[l].size());
    return n;
  }

  bool same_shape(const Mlp& other) const { return dims == other.dims; }

  bool all_finite() const {
    for (std::size_t l = 0; l < weights.size(); ++l)
      if (!weights[l].allFinite() || !biases[l].allFinite()) return false;
    return true;
  }

  /// Parameters in layer order, each layer as row-major weights then biases.
  std::vector<double> flatten() const {
    std::vector<double> out;
    out.reserve(parameter_count());
    for (std::size_t l = 0; l < weights.size(); ++l) {
      for (Eigen::Index r = 0; r < weights[l].rows(); ++r)
        for (Eigen::Index c = 0; c < weights[l].cols(); ++c) out.push_back(weights[l](r, c));
      for (Eigen::Index r = 0; r < biases[l].size(); ++r) out.push_back(biases[l][r]);
    }
    return out;
  }

  void assign(std::span<const double> flat) {
    if (flat.size() != parameter_count()) throw PreconditionError("mlp: flat parameter size mismatch");
    std::size_t k = 0;
    for (std::size_t l = 0; l < weights.size(); ++l) {
      for (Eigen::Index r = 0; r < weights[l].rows(); ++r)
        for (Eigen::Index c = 0; c < weights[l].cols(); ++c) weights[l](r, c) = flat[k++];
      for (Eigen::Index r = 0; r < biases[l].size(); ++r) biases[l][r] = flat[k++];
    }
  }
};

/// Activations recorded by a forward pass for the matching backward pass.
struct Tape {
  std::vector<Matrix> activations;  // activations[0] = input, activations[L] = output
};

inline Matrix forward(const Mlp& net, const Matrix& x, Tape* tape = nullptr) {
  if (static_cast<std::size_t>(x.rows()) != net.input_dim())
    throw PreconditionError("mlp forward: expected input dim " + std::to_string(net.input_dim()) + ", got " +
                            std::to_string(x.rows()));
  Matrix a = x;
  if (tape) {
    tape->activations.clear();
    tape->activations.push_back(a);
  }
  for (std::size_t l = 0; l < net.layers(); ++l) {
    Matrix z = net.weights[l] * a;
    z.colwise() += net.biases[l];
    if (l + 1 < net.layers()) z = z.cwiseMax(0.0);
    a = std::move(z);
    if (tape) tape->activations.push_back(a);
  }
  return a;
}

inline Vector forward(const Mlp& net, const Vector& x) {
  Matrix out = forward(net, Matrix(x));
  return out.col(0);
}

/// Gradient of sum(upstream .* output) with respect to every parameter,
/// given the tape of the forward pass that produced `output`.
inline Mlp backward(const Mlp& net, const Tape& tape, const Matrix& upstream) {
  const std::size_t L = net.layers();
  if (tape.activations.size() != L + 1) throw PreconditionError("mlp backward: tape does not match network");
  if (upstream.rows() != tape.activations.back().rows() || upstream.cols() != tape.activations.back().cols())
    throw PreconditionError("mlp backward: upstream shape mismatch");
  Mlp grads = Mlp::zeros(net.dims);
  Matrix delta = upstream;
  for (std::size_t l = L; l-- > 0;) {
    if (l + 1 < L) delta = delta.cwiseProduct((tape.activations[l + 1].array() > 0.0).cast<double>().matrix());
    grads.weights[l].noalias() = delta * tape.activations[l].transpose();
    grads.biases[l] = delta.rowwise().sum();
    if (l > 0) delta = net.weights[l].transpose() * delta;
  }
  return grads;
}

inline Mlp gradients(const Mlp& net, const Matrix& x, const Matrix& upstream) {
  Tape tape;
  forward(net, x, &tape);
  return backward(net, tape, upstream);
}

inline Mlp gradients(const Mlp& net, const Vector& x, const Vector& upstream) {
  return gradients(net, Matrix(x), Matrix(upstream));
}

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamState {
  Mlp m;
  Mlp v;
  std::uint64_t step = 0;
  AdamConfig config;

  static AdamState for_net(const Mlp& net, AdamConfig cfg = {}) { return {Mlp::zeros(net.dims), Mlp::zeros(net.dims), 0, cfg}; }
};

inline void adam_step(Mlp& params, const Mlp& grads, AdamState& state) {
  if (!params.same_shape(grads) || !params.same_shape(state.m)) throw PreconditionError("adam: shape mismatch");
  const AdamConfig& c = state.config;
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double correct1 = 1.0 - std::pow(c.beta1, t);
  const double correct2 = 1.0 - std::pow(c.beta2, t);
  auto update = [&](auto& p, const auto& g, auto& m, auto& v) {
    m = c.beta1 * m + (1.0 - c.beta1) * g;
    v = c.beta2 * v + (1.0 - c.beta2) * g.cwiseProduct(g);
    p.array() -= c.lr * (m.array() / correct1) / ((v.array() / correct2).sqrt() + c.eps);
  };
  for (std::size_t l = 0; l < params.layers(); ++l) {
    update(params.weights[l], grads.weights[l], state.m.weights[l], state.v.weights[l]);
    update(params.biases[l], grads.biases[l], state.m.biases[l], state.v.biases[l]);
  }
}

/// target <- (1 - tau) * target + tau * online
inline void soft_update(Mlp& target, const Mlp& online, double tau) {
  if (!target.same_shape(online)) throw PreconditionError("soft_update: shape mismatch");
  if (!(tau > 0.0 && tau <= 1.0)) throw PreconditionError("soft_update: tau must lie in (0, 1]");
  for (std::size_t l = 0; l < target.layers(); ++l) {
    target.weights[l] = (1.0 - tau) * target.weights[l] + tau * online.weights[l];
    target.biases[l] = (1.0 - tau) * target.biases[l] + tau * online.biases[l];
  }
}

}  // namespace dmh::nn
