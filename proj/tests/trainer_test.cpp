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

#include <numeric>

#include <gtest/gtest.h>

#include "deltaiss/trainer.hpp"

namespace deltaiss {
namespace {

LossReport report(double total, double lv) {
  LossReport r;
  r.total = total;
  r.loss_v = lv;
  return r;
}

LmiStatus pd(bool v, bool g) {
  LmiStatus s;
  s.v.is_pd = v;
  s.g.is_pd = g;
  return s;
}

TEST(Convergence, Verdicts) {
  EXPECT_TRUE(convergence_check(report(0, 0), pd(true, true), 1e-5).done);
  EXPECT_EQ(convergence_check(report(0, 0), pd(true, true), 1e-5).reason, "converged");
  auto v = convergence_check(report(0, 0.001), pd(true, true), 1e-5);
  EXPECT_FALSE(v.done);
  EXPECT_EQ(v.reason, "validity margin");
  v = convergence_check(report(2e-5, 0), pd(true, true), 1e-5);
  EXPECT_FALSE(v.done);
  EXPECT_EQ(v.reason, "residual");
  EXPECT_TRUE(convergence_check(report(1e-5, 0), pd(true, true), 1e-5).done);
  v = convergence_check(report(1, 1), pd(true, false), 1e-5);
  EXPECT_EQ(v.reason, "residual, validity margin, lmi");
}

TEST(HyperParams, Validation) {
  HyperParams hp;
  EXPECT_NO_THROW(hp.validate());
  hp.epochs = 0;
  try {
    hp.validate();
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kInvalidArgument);
  }
  hp = {};
  hp.settle_epochs = hp.epochs + 1;
  EXPECT_THROW(hp.validate(), Error);
  hp = {};
  hp.lr_final_factor = 0;
  EXPECT_THROW(hp.validate(), Error);
}

TEST(LyapunovBound, Forms) {
  HyperParams hp;
  const auto sys = make_benchmark("scalar");
  EXPECT_EQ(lyapunov_lmi_bound(hp, sys), 1.0);
  hp.v_form = PairForm::kSquaredDifference;
  EXPECT_NEAR(lyapunov_lmi_bound(hp, sys), std::sqrt(1.0 / (2 * std::sqrt(2.0) * M_PI)), 1e-15);
}

class SmallRun : public ::testing::Test {
 protected:
  SystemSpec sys = make_benchmark("scalar");
  CoverDataset xs = cover_box(sys.state_box, 0.05);
  CoverDataset ws = cover_box(sys.external_box, 0.1);
  HyperParams hp = [] {
    HyperParams h;
    h.eps_x = 0.05;
    h.eps_u = 0.1;
    h.epochs = 150;
    h.batch_size = 64;
    h.batches_per_epoch = 2;
    h.check_every = 50;
    h.lip.controller = 20;
    h.weights.cl1 = h.weights.cl2 = 1e-3;
    h.seed = 5;
    return h;
  }();
};

TEST_F(SmallRun, LossFallsAndLmisStayPd) {
  const TrainedPair p = train(sys, xs, ws, hp);
  ASSERT_EQ(p.epochs_run, hp.epochs);
  std::vector<double> batch;
  for (const auto& r : p.history) {
    if (r.report.kind == "batch") batch.push_back(r.report.total);
    if (r.report.kind == "full") {
      EXPECT_TRUE(r.lmi_v_pd);
      EXPECT_TRUE(r.lmi_g_pd);
    }
  }
  ASSERT_EQ(batch.size(), 150u);
  const double head = std::accumulate(batch.begin(), batch.begin() + 10, 0.0);
  const double tail = std::accumulate(batch.end() - 10, batch.end(), 0.0);
  EXPECT_LT(tail, head);
  const auto st = lmi_status(LmiContext{&p.v_net, p.lambda_v.cwiseSqrt(), 1.0},
                             LmiContext{&p.g_net, p.lambda_g.cwiseSqrt(), 20.0});
  EXPECT_TRUE(st.both_pd());
  EXPECT_FALSE(p.converged);
  EXPECT_NE(p.reason.find("validity margin"), std::string::npos);
}

TEST_F(SmallRun, DeterministicAcrossThreadCounts) {
  hp.epochs = 30;
  hp.check_every = 15;
  const TrainedPair a = train(sys, xs, ws, hp);
  hp.threads = 3;
  const TrainedPair b = train(sys, xs, ws, hp);
  EXPECT_EQ(training_log_csv(a.history), training_log_csv(b.history));
  EXPECT_EQ(mlp_content_hash(a.v_net), mlp_content_hash(b.v_net));
  EXPECT_EQ(mlp_content_hash(a.g_net), mlp_content_hash(b.g_net));
  EXPECT_EQ(a.eta, b.eta);
  EXPECT_EQ(training_log_csv(a.history).find("wall"), std::string::npos);
}

TEST_F(SmallRun, SettleMovesOnlyEtaAndOutputBias) {
  hp.epochs = 20;
  hp.check_every = 20;
  hp.settle_epochs = 10;
  hp.settle_eta_lr = 1e-3;
  hp.eta_learning_rate = 0.0;
  hp.init_eta = 0.0;
  hp.settle_epochs = 0;
  const TrainedPair base = train(sys, xs, ws, hp);
  hp.epochs = 30;
  hp.settle_epochs = 10;
  hp.check_every = 30;
  const TrainedPair settled = train(sys, xs, ws, hp);
  // The first 20 epochs match; the settle epochs keep g and V's hidden layers.
  EXPECT_EQ(base.eta, 0.0);
  EXPECT_EQ(mlp_content_hash(base.g_net), mlp_content_hash(settled.g_net));
  EXPECT_EQ(base.v_net.weights[0], settled.v_net.weights[0]);
  EXPECT_EQ(base.v_net.weights[1], settled.v_net.weights[1]);
  EXPECT_EQ(base.v_net.biases[0], settled.v_net.biases[0]);
  EXPECT_NE(settled.eta, 0.0);
  int settle_rows = 0;
  for (const auto& r : settled.history) settle_rows += r.report.kind == "settle";
  EXPECT_EQ(settle_rows, 10);
}

TEST_F(SmallRun, CsvHeader) {
  hp.epochs = 2;
  const TrainedPair p = train(sys, xs, ws, hp);
  const std::string csv = training_log_csv(p.history);
  EXPECT_EQ(csv.substr(0, csv.find('\n')),
            "epoch,kind,L0,L1,L2,L3,L4,L_total,L_v,L_M,eta,lmi_v_pd,lmi_g_pd,backtracks");
  EXPECT_EQ(timing_csv(p.history, p.wall_seconds).substr(0, 23), "epoch,kind,wall_seconds");
}

}  // namespace
}  // namespace deltaiss
