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

#include <gtest/gtest.h>

#include "dmh/neural.hpp"
#include "oracles.hpp"

using namespace dmh;
using namespace dmh::nn;

TEST(Neural, ZeroNetGivesZeroOutput) {
  const Mlp net = Mlp::zeros({5, 7, 3});
  const Vector y = forward(net, Vector(Vector::Ones(5)));
  EXPECT_EQ(y, Vector::Zero(3));
}

TEST(Neural, HandArithmetic) {
  Mlp net = Mlp::zeros({1, 1, 1});
  net.weights[0](0, 0) = 1;
  net.weights[1](0, 0) = 1;
  EXPECT_EQ(forward(net, Vector(Vector::Constant(1, 2.0)))[0], 2.0);
  EXPECT_EQ(forward(net, Vector(Vector::Constant(1, -2.0)))[0], 0.0);  // rectified
}

TEST(Neural, IdentityLayers) {
  Mlp net = Mlp::zeros({4, 4, 4, 4});
  for (auto& w : net.weights) w = Matrix::Identity(4, 4);
  Vector x(4);
  x << 0.0, 1.5, 2.0, 7.25;
  EXPECT_EQ(forward(net, x), x);
}

TEST(Neural, DimensionMismatchThrows) {
  const Mlp net = Mlp::zeros({3, 2});
  EXPECT_THROW(forward(net, Vector(Vector::Zero(4))), PreconditionError);
  EXPECT_THROW(gradients(net, Vector(Vector::Zero(3)), Vector(Vector::Zero(3))), PreconditionError);
}

TEST(Neural, LinearGradientByHand) {
  const Mlp net = Mlp::zeros({1, 1});
  const Mlp g = gradients(net, Vector(Vector::Constant(1, 3.0)), Vector(Vector::Constant(1, 1.0)));
  EXPECT_EQ(g.weights[0](0, 0), 3.0);
  EXPECT_EQ(g.biases[0][0], 1.0);
}

TEST(Neural, ZeroUpstreamZeroGradient) {
  Rng rng(3);
  const Mlp net = Mlp::init({4, 6, 2}, rng);
  const Mlp g = gradients(net, Vector(Vector::Ones(4)), Vector(Vector::Zero(2)));
  for (double v : g.flatten()) EXPECT_EQ(v, 0.0);
}

TEST(Neural, FiniteDifferenceAgreement) {
  Rng rng(99);
  double worst = 0.0;
  for (int i = 0; i < 100; ++i) worst = std::max(worst, oracle::gradient_check_once(rng));
  EXPECT_LT(worst, 1e-4);
}

TEST(Neural, InitIsSeededAndScaled) {
  Rng a(5), b(5);
  const Mlp x = Mlp::init({27, 128, 128, 8}, a);
  const Mlp y = Mlp::init({27, 128, 128, 8}, b);
  EXPECT_EQ(x.flatten(), y.flatten());
  EXPECT_LE(x.weights[0].cwiseAbs().maxCoeff(), 1.0 / std::sqrt(27.0));
  EXPECT_EQ(x.parameter_count(), 27u * 128 + 128 + 128u * 128 + 128 + 128u * 8 + 8);
  EXPECT_TRUE(x.all_finite());
}

TEST(Neural, FlattenAssignRoundTrip) {
  Rng rng(8);
  const Mlp net = Mlp::init({3, 5, 2}, rng);
  Mlp other = Mlp::zeros({3, 5, 2});
  other.assign(net.flatten());
  EXPECT_EQ(other.flatten(), net.flatten());
  const std::vector<double> short_vec(3, 0.0);
  EXPECT_THROW(other.assign(short_vec), PreconditionError);
}

TEST(Neural, AdamZeroGradientKeepsParams) {
  Rng rng(1);
  Mlp net = Mlp::init({2, 3, 1}, rng);
  const auto before = net.flatten();
  AdamState st = AdamState::for_net(net, {});
  adam_step(net, Mlp::zeros({2, 3, 1}), st);
  EXPECT_EQ(net.flatten(), before);
  EXPECT_EQ(st.step, 1u);
}

TEST(Neural, AdamFirstStepMovesByLearningRate) {
  Mlp net = Mlp::zeros({1, 1});
  net.weights[0](0, 0) = 0.5;
  Mlp grad = Mlp::zeros({1, 1});
  grad.weights[0](0, 0) = 1.0;
  AdamState st = AdamState::for_net(net, {0.001});
  adam_step(net, grad, st);
  EXPECT_NEAR(net.weights[0](0, 0), 0.5 - 0.001, 1e-10);
  EXPECT_EQ(net.biases[0][0], 0.0);
}

TEST(Neural, AdamIsDeterministic) {
  auto run = [] {
    Rng rng(12);
    Mlp net = Mlp::init({3, 4, 2}, rng);
    AdamState st = AdamState::for_net(net, {});
    for (int i = 0; i < 20; ++i) adam_step(net, gradients(net, Vector(Vector::Ones(3)), Vector(Vector::Ones(2))), st);
    return net.flatten();
  };
  EXPECT_EQ(run(), run());
}

TEST(Neural, AdamRejectsShapeMismatch) {
  Mlp net = Mlp::zeros({2, 2});
  AdamState st = AdamState::for_net(net, {});
  EXPECT_THROW(adam_step(net, Mlp::zeros({2, 3}), st), PreconditionError);
}

TEST(Neural, SoftUpdate) {
  Mlp target = Mlp::zeros({1, 1});
  Mlp online = Mlp::zeros({1, 1});
  online.weights[0](0, 0) = 2.0;
  online.biases[0][0] = 2.0;
  Mlp half = target;
  soft_update(half, online, 0.5);
  EXPECT_EQ(half.weights[0](0, 0), 1.0);
  Mlp full = target;
  soft_update(full, online, 1.0);
  EXPECT_EQ(full.flatten(), online.flatten());

  Mlp slow = target;
  for (int k = 1; k <= 50; ++k) {
    soft_update(slow, online, 0.1);
    EXPECT_NEAR(2.0 - slow.weights[0](0, 0), 2.0 * std::pow(0.9, k), 1e-12);
  }
  EXPECT_THROW(soft_update(slow, online, 0.0), PreconditionError);
  EXPECT_THROW(soft_update(slow, Mlp::zeros({2, 1}), 0.5), PreconditionError);
}
