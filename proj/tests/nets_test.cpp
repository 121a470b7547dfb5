/*
 * Copyright 2026 The deltaiss Authors
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

#include <cmath>

#include <gtest/gtest.h>

#include "deltaiss/nets.hpp"
#include "test_support.hpp"

namespace deltaiss {
namespace {

Vec vec(std::initializer_list<double> v) {
  Vec out(static_cast<Eigen::Index>(v.size()));
  Eigen::Index i = 0;
  for (double x : v) out[i++] = x;
  return out;
}

TEST(Nets, ZeroNetworkIsZero) {
  const auto v = zero_mlp({4, 40, 1});
  Rng rng(1);
  for (int t = 0; t < 10; ++t) {
    EXPECT_EQ(forward_V(v, rng.uniform_in(Box::uniform(2, -1, 1)),
                        rng.uniform_in(Box::uniform(2, -1, 1))),
              0.0);
  }
  const auto g = zero_mlp({3, 15, 2});
  EXPECT_EQ(forward_g(g, vec({1, 2}), vec({3})), Vec::Zero(2));
}

TEST(Nets, HandEvaluatedLyapunov) {
  auto v = zero_mlp({2, 1, 1});
  v.weights[0] << 1, -1;
  v.weights[1] << 2;
  v.biases[1] << 0.5;
  EXPECT_DOUBLE_EQ(forward_V(v, vec({3}), vec({1})), 4.5);
  // Asymmetric in its arguments: relu(1 - 3) = 0.
  EXPECT_DOUBLE_EQ(forward_V(v, vec({1}), vec({3})), 0.5);
}

TEST(Nets, HandEvaluatedController) {
  auto g = zero_mlp({2, 1, 1});
  g.weights[0] << 1, 2;
  g.biases[0] << -1;
  g.weights[1] << 1;
  EXPECT_DOUBLE_EQ(forward_g(g, vec({1}), vec({1}))[0], 2.0);
}

TEST(Nets, OutputClamp) {
  auto g = zero_mlp({1, 1, 1});
  g.biases[1] << 3.7;
  g.output_clamp = Box::uniform(1, -1, 1);
  EXPECT_EQ(mlp_forward(g, vec({0}))[0], 1.0);
  g.biases[1] << -3.7;
  EXPECT_EQ(mlp_forward(g, vec({0}))[0], -1.0);
}

TEST(Nets, SquaredDifferenceFormIsZeroOnDiagonal) {
  Rng rng(2);
  auto v = init_mlp({2, 8, 3}, Activation::kRelu, rng, 1.0);
  v.pair_form = PairForm::kSquaredDifference;
  const Vec x = vec({0.3, -0.1});
  EXPECT_EQ(forward_V(v, x, x), 0.0);
  const Vec xh = vec({-0.2, 0.4});
  const Vec d = mlp_forward(v, x) - mlp_forward(v, xh);
  EXPECT_NEAR(forward_V(v, x, xh), d.squaredNorm(), 1e-15);
  EXPECT_EQ(forward_V(v, x, xh), forward_V(v, xh, x));
}

TEST(Nets, OutputBiasGradientIsOne) {
  Rng rng(3);
  const auto v = init_mlp({2, 5, 1}, Activation::kRelu, rng, 1.0);
  VTrace tr;
  forward_V(v, vec({0.2}), vec({-0.4}), &tr);
  auto grads = GradientBundle::zeros_like(v);
  backprop_V(v, tr, 1.0, grads);
  EXPECT_EQ(grads.biases[1][0], 1.0);
}

// Reverse-mode gradients of a scalar readout against central differences.
void check_gradients(MlpParams net, const Vec& input, const Vec& readout) {
  std::vector<double> p;
  pack_params(net, p);
  auto f = [&](const std::vector<double>& q) {
    MlpParams n = net;
    std::size_t pos = 0;
    unpack_params(n, q, pos);
    return readout.dot(mlp_forward(n, input));
  };
  MlpTrace tr;
  mlp_forward(net, input, &tr);
  auto grads = GradientBundle::zeros_like(net);
  Vec d_in;
  mlp_backprop(net, tr, readout, grads, &d_in);
  std::vector<double> analytic;
  pack_grads(grads, analytic);
  EXPECT_LT(testing::relative_error(analytic, testing::fd_gradient(f, p, 1e-6)), 1e-5);

  // Input gradient as well.
  std::vector<double> x(input.data(), input.data() + input.size());
  auto fx = [&](const std::vector<double>& q) {
    return readout.dot(mlp_forward(net, Eigen::Map<const Vec>(q.data(), input.size())));
  };
  std::vector<double> din(d_in.data(), d_in.data() + d_in.size());
  EXPECT_LT(testing::relative_error(din, testing::fd_gradient(fx, x, 1e-6)), 1e-5);
}

TEST(Nets, GradientsMatchFiniteDifferences) {
  Rng rng(4);
  for (Activation act : {Activation::kTanh, Activation::kSigmoid, Activation::kRelu}) {
    for (int t = 0; t < 5; ++t) {
      const auto net = init_mlp({3, 7, 5, 2}, act, rng, 1.0);
      check_gradients(net, rng.uniform_in(Box::uniform(3, -1, 1)), vec({0.7, -1.3}));
    }
  }
}

TEST(Nets, LyapunovGradientsBothForms) {
  Rng rng(5);
  for (PairForm form : {PairForm::kConcat, PairForm::kSquaredDifference}) {
    auto v = init_mlp({form == PairForm::kConcat ? 4 : 2, 9, form == PairForm::kConcat ? 1 : 3},
                      Activation::kTanh, rng, 1.0);
    v.pair_form = form;
    const Vec x = vec({0.1, 0.5}), xh = vec({-0.3, 0.2});
    VTrace tr;
    forward_V(v, x, xh, &tr);
    auto grads = GradientBundle::zeros_like(v);
    Vec dx, dxh;
    backprop_V(v, tr, 1.0, grads, &dx, &dxh);
    std::vector<double> analytic, p;
    pack_grads(grads, analytic);
    pack_params(v, p);
    auto f = [&](const std::vector<double>& q) {
      MlpParams n = v;
      std::size_t pos = 0;
      unpack_params(n, q, pos);
      return forward_V(n, x, xh);
    };
    EXPECT_LT(testing::relative_error(analytic, testing::fd_gradient(f, p, 1e-6)), 1e-5);
    auto fx = [&](const std::vector<double>& q) {
      return forward_V(v, vec({q[0], q[1]}), vec({q[2], q[3]}));
    };
    std::vector<double> both{dx[0], dx[1], dxh[0], dxh[1]};
    EXPECT_LT(testing::relative_error(both, testing::fd_gradient(fx, {0.1, 0.5, -0.3, 0.2}, 1e-6)),
              1e-5);
  }
}

TEST(Nets, ClampedOutputBlocksGradient) {
  Rng rng(6);
  auto g = init_mlp({2, 4, 2}, Activation::kRelu, rng, 1.0);
  g.biases[1] << 10.0, 0.0;  // first output saturates
  g.output_clamp = Box::uniform(2, -1, 1);
  MlpTrace tr;
  mlp_forward(g, vec({0.1, 0.2}), &tr);
  auto grads = GradientBundle::zeros_like(g);
  mlp_backprop(g, tr, vec({1.0, 0.0}), grads);
  EXPECT_EQ(grads.weights[1].row(0).norm(), 0.0);
  EXPECT_EQ(grads.biases[1][0], 0.0);
  EXPECT_EQ(grads.weights[0].norm(), 0.0);
}

TEST(Nets, EmpiricalLipschitz) {
  EXPECT_EQ(empirical_lipschitz(zero_mlp({2, 3, 1}), Box::uniform(2, -1, 1), 100, 1), 0.0);
  // A linear map with row [3, 4], written through relu(t) - relu(-t).
  auto net = zero_mlp({2, 2, 1});
  net.weights[0] << 3, 4, -3, -4;
  net.weights[1] << 1, -1;
  const double few = empirical_lipschitz(net, Box::uniform(2, -1, 1), 10, 2);
  const double many = empirical_lipschitz(net, Box::uniform(2, -1, 1), 100000, 2);
  EXPECT_LE(few, many);
  EXPECT_LE(many, 5.0 + 1e-12);
  EXPECT_GT(many, 4.999);
}

TEST(Nets, JsonRoundTripAndTamper) {
  Rng rng(7);
  auto g = init_mlp({2, 15, 1}, Activation::kRelu, rng);
  g.output_clamp = Box::uniform(1, -1.5, 1.5);
  const auto j = mlp_to_json(g);
  const auto back = mlp_from_json(nlohmann::json::parse(j.dump()));
  EXPECT_EQ(mlp_content_hash(back), mlp_content_hash(g));
  for (int l = 0; l < g.layers(); ++l) {
    EXPECT_EQ(back.weights[l], g.weights[l]);
    EXPECT_EQ(back.biases[l], g.biases[l]);
  }
  ASSERT_TRUE(back.output_clamp.has_value());

  auto bad = nlohmann::json::parse(j.dump());
  bad["biases"][0][0] = bad["biases"][0][0].get<double>() + 1e-3;
  try {
    mlp_from_json(bad);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kProvenance);
  }
}

TEST(Nets, PackUnpackIsIdentity) {
  Rng rng(8);
  const auto net = init_mlp({3, 6, 4, 2}, Activation::kTanh, rng);
  std::vector<double> p;
  pack_params(net, p);
  EXPECT_EQ(p.size(), net.parameter_count());
  auto other = zero_mlp({3, 6, 4, 2}, Activation::kTanh);
  std::size_t pos = 0;
  unpack_params(other, p, pos);
  EXPECT_EQ(pos, p.size());
  EXPECT_EQ(mlp_content_hash(other), mlp_content_hash(net));
}

TEST(Nets, BiasedDotOrder) {
  // Long sums use four interleaved partial sums; short ones accumulate left to right.
  std::vector<double> w(11), t(11, 1.0);
  for (int i = 0; i < 11; ++i) w[i] = std::ldexp(1.0, -i);
  double s0 = 0, s1 = 0, s2 = 0, s3 = 0;
  for (int i = 0; i < 8; i += 4) {
    s0 += w[i];
    s1 += w[i + 1];
    s2 += w[i + 2];
    s3 += w[i + 3];
  }
  s0 += w[8];
  s1 += w[9];
  s2 += w[10];
  EXPECT_EQ(detail::biased_dot(0.25, w.data(), 1, t.data(), 11), 0.25 + ((s0 + s1) + (s2 + s3)));
  double acc = 0.25;
  for (int i = 0; i < 5; ++i) acc += w[i];
  EXPECT_EQ(detail::biased_dot(0.25, w.data(), 1, t.data(), 5), acc);
}

}  // namespace
}  // namespace deltaiss
