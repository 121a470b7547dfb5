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
#include <numbers>

#include <gtest/gtest.h>

#include "deltaiss/classk_barrier.hpp"
#include "deltaiss/random.hpp"

namespace deltaiss {
namespace {

constexpr double kPi = std::numbers::pi;

Vec vec(std::initializer_list<double> v) {
  Vec out(static_cast<Eigen::Index>(v.size()));
  Eigen::Index i = 0;
  for (double x : v) out[i++] = x;
  return out;
}

TEST(ClassK, ZeroAtZero) {
  ClassKBundle b;
  for (auto which : {ClassK::kA1, ClassK::kA2, ClassK::kA3, ClassK::kSigma}) {
    EXPECT_EQ(classk_eval(b, which, 0.0), 0.0);
  }
}

TEST(ClassK, Values) {
  ClassKBundle b;
  EXPECT_NEAR(classk_eval(b, ClassK::kA2, kPi), 0.5 * kPi * kPi, 1e-15);
  EXPECT_NEAR(classk_eval(b, ClassK::kA2, kPi), 4.9348, 1e-4);
  EXPECT_NEAR(classk_eval(b, ClassK::kSigma, 2.0), 0.04, 1e-17);
  EXPECT_THROW(classk_eval(b, ClassK::kA1, -1.0), Error);
}

TEST(ClassK, Lipschitz) {
  EXPECT_NEAR(classk_lipschitz(0.5, 2.0, kPi), kPi, 1e-15);
  EXPECT_EQ(classk_lipschitz(0.3, 1.0, 7.0), 0.3);
  EXPECT_EQ(classk_lipschitz(0.3, 1.0, 0.1), 0.3);
  EXPECT_NEAR(classk_lipschitz(1e-4, 2.0, kPi), 6.2832e-4, 1e-8);
}

TEST(ClassK, LipschitzBoundsDifferenceQuotients) {
  ClassKBundle b;
  b.gamma = {2.0, 3.0, 1.5, 2.0};
  Rng rng(1);
  for (auto which : {ClassK::kA1, ClassK::kA2, ClassK::kA3, ClassK::kSigma}) {
    const double lip = classk_lipschitz(b, which, 2.0);
    for (int t = 0; t < 1000; ++t) {
      const double s1 = rng.uniform(0, 2), s2 = rng.uniform(0, 2);
      if (s1 == s2) continue;
      const double q = std::abs(classk_eval(b, which, s1) - classk_eval(b, which, s2)) /
                       std::abs(s1 - s2);
      EXPECT_LE(q, lip * (1 + 1e-12));
    }
  }
}

TEST(ClassK, Validation) {
  ClassKBundle b;
  EXPECT_NO_THROW(b.validate());
  b.k[0] = 0.6;  // k1 above k2
  EXPECT_THROW(b.validate(), Error);
  b = {};
  b.gamma[2] = 0.5;
  EXPECT_THROW(b.validate(), Error);
  b = {};
  b.k[3] = 0.0;
  EXPECT_THROW(b.validate(), Error);
}

TEST(Barrier, SignConvention) {
  BarrierFn h(Box::uniform(2, -1, 1));
  EXPECT_EQ(barrier_eval(h, vec({0, 0})), -1.0);
  EXPECT_EQ(barrier_eval(h, vec({1, 0.3})), 0.0);
  EXPECT_EQ(barrier_eval(h, vec({0.5, -0.2})), -0.5);
  EXPECT_NEAR(barrier_eval(h, vec({1.25, 0})), 0.25, 1e-15);
  EXPECT_NEAR(barrier_eval(h, vec({0, -1.5})), 0.5, 1e-15);
}

TEST(Barrier, SubgradientAndLipschitz) {
  BarrierFn h(Box::uniform(3, -0.25, 0.25));
  Vec grad;
  EXPECT_NEAR(h.eval(vec({0.1, -0.2, 0.0}), &grad), -0.05, 1e-15);
  EXPECT_EQ(grad, vec({0, -1, 0}));
  Rng rng(2);
  const Box wide = Box::uniform(3, -0.5, 0.5);
  for (int t = 0; t < 5000; ++t) {
    const Vec a = rng.uniform_in(wide), b = rng.uniform_in(wide);
    EXPECT_LE(std::abs(h(a) - h(b)), BarrierFn::lipschitz() * (a - b).norm() + 1e-15);
  }
}

}  // namespace
}  // namespace deltaiss
