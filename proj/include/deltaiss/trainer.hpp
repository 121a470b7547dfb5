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

#pragma once

#include <chrono>
#include <cmath>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "deltaiss/classk_barrier.hpp"
#include "deltaiss/common.hpp"
#include "deltaiss/lmi.hpp"
#include "deltaiss/losses.hpp"
#include "deltaiss/nets.hpp"
#include "deltaiss/random.hpp"
#include "deltaiss/sampling.hpp"
#include "deltaiss/systems.hpp"
#include "deltaiss/verifier.hpp"

namespace deltaiss {

enum class Optimizer { kAdam, kSgd };

inline const char* to_string(Optimizer o) { return o == Optimizer::kAdam ? "adam" : "sgd"; }

inline Optimizer parse_optimizer(const std::string& s) {
  if (s == "adam") return Optimizer::kAdam;
  if (s == "sgd") return Optimizer::kSgd;
  fail(ErrorKind::kInvalidArgument, "unknown optimizer '" + s + "' (adam|sgd)");
}

struct HyperParams {
  double eps_x = 0.008;
  double eps_u = 0.01;
  LossWeights weights;
  ClassKBundle bundle;
  LipTargets lip;
  std::vector<int> v_hidden{40};
  std::vector<int> g_hidden{15};
  Activation activation = Activation::kRelu;
  PairForm v_form = PairForm::kConcat;
  int epochs = 3000;
  int batch_size = 256;
  int batches_per_epoch = 1;
  double learning_rate = 1e-3;
  double eta_learning_rate = -1.0;  // < 0: same as learning_rate
  double lr_final_factor = 1.0;     // geometric decay to this factor at the last epoch
  int settle_epochs = 0;            // final epochs that move only eta and V's output bias
  double settle_cv = 0.0;           // L_v weight during the settle epochs
  double settle_eta_lr = -1.0;      // eta step during the settle epochs; < 0 means eta_lr()
  Optimizer optimizer = Optimizer::kAdam;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  std::uint64_t seed = 11;
  double residual_tol = 1e-5;
  BatchOptions batch;
  int check_every = 10;
  double init_lambda = 1.0;
  double init_scale = 0.1;
  double init_eta = 0.0;
  JacobianMode jacobian = JacobianMode::kAuto;
  Reduction reduction = Reduction::kSum;
  int max_backtracks = 30;
  int threads = 1;

  double eps() const { return std::max(eps_x, eps_u); }
  double eta_lr() const { return eta_learning_rate < 0 ? learning_rate : eta_learning_rate; }

  void validate() const {
    require(eps_x > 0 && eps_u > 0, ErrorKind::kInvalidArgument, "eps must be positive");
    weights.validate();
    bundle.validate();
    require(lip.lyapunov > 0 && lip.controller > 0 && lip.barrier > 0,
            ErrorKind::kInvalidArgument, "Lipschitz targets must be positive");
    require(!v_hidden.empty() && !g_hidden.empty(), ErrorKind::kInvalidArgument,
            "both networks need at least one hidden layer");
    require(epochs >= 1, ErrorKind::kInvalidArgument, "epochs must be >= 1");
    require(batch_size >= 1 && batches_per_epoch >= 1, ErrorKind::kInvalidArgument,
            "batch size and batches per epoch must be >= 1");
    require(learning_rate >= 0 && std::isfinite(learning_rate), ErrorKind::kInvalidArgument,
            "learning rate must be non-negative");
    require(lr_final_factor > 0 && lr_final_factor <= 1, ErrorKind::kInvalidArgument,
            "lr_final_factor must lie in (0, 1]");
    require(adam_beta1 >= 0 && adam_beta1 < 1 && adam_beta2 >= 0 && adam_beta2 < 1 &&
                adam_eps > 0,
            ErrorKind::kInvalidArgument, "invalid Adam constants");
    require(residual_tol > 0, ErrorKind::kInvalidArgument, "residual_tol must be positive");
    require(check_every >= 1, ErrorKind::kInvalidArgument, "check_every must be >= 1");
    require(init_lambda > 0 && init_scale > 0, ErrorKind::kInvalidArgument,
            "initial multiplier and weight scale must be positive");
    require(max_backtracks >= 0, ErrorKind::kInvalidArgument, "max_backtracks must be >= 0");
    require(settle_epochs >= 0 && settle_epochs <= epochs, ErrorKind::kInvalidArgument,
            "settle_epochs must lie in [0, epochs]");
    require(settle_cv >= 0, ErrorKind::kInvalidArgument, "settle_cv must be non-negative");
  }
};

/// Lipschitz bound the Lyapunov LMI must certify. For the concatenated form
/// the network is V itself. For V = |N(x) - N(xh)|^2 on a set of diameter D,
/// |grad V| <= 2 sqrt2 L_N^2 D, so L_N = sqrt(L_L / (2 sqrt2 D)).
inline double lyapunov_lmi_bound(const HyperParams& hp, const SystemSpec& sys) {
  if (hp.v_form == PairForm::kConcat) return hp.lip.lyapunov;
  return std::sqrt(hp.lip.lyapunov / (2.0 * std::sqrt(2.0) * sys.state_box.diameter()));
}

struct ConvergenceVerdict {
  bool done = false;
  std::string reason;
};

/// Done iff L_total <= tol, L_v = 0 and both LMIs PD; otherwise the reason
/// names every failing criterion ("residual", "validity margin", "lmi").
inline ConvergenceVerdict convergence_check(const LossReport& report, const LmiStatus& lmi,
                                            double residual_tol) {
  ConvergenceVerdict v;
  std::vector<std::string> failing;
  if (!(report.total <= residual_tol)) failing.push_back("residual");
  if (!(report.loss_v == 0.0)) failing.push_back("validity margin");
  if (!lmi.both_pd()) failing.push_back("lmi");
  v.done = failing.empty();
  for (std::size_t i = 0; i < failing.size(); ++i) {
    v.reason += (i ? ", " : "") + failing[i];
  }
  if (v.done) v.reason = "converged";
  return v;
}

struct LogRow {
  LossReport report;
  bool lmi_v_pd = false;
  bool lmi_g_pd = false;
  int backtracks = 0;
};

struct TrainedPair {
  MlpParams v_net;
  MlpParams g_net;
  Vec lambda_v;  // multipliers (not square roots)
  Vec lambda_g;
  double eta = 0.0;
  std::vector<LogRow> history;
  std::vector<double> wall_seconds;  // per history row, kept out of the log
  bool converged = false;
  std::string reason;
  int epochs_run = 0;
  LossReport last_full;
};

/// Training log as CSV. Deliberately free of timing so that identical runs
/// produce identical bytes.
inline std::string training_log_csv(const std::vector<LogRow>& rows) {
  std::string out =
      "epoch,kind,L0,L1,L2,L3,L4,L_total,L_v,L_M,eta,lmi_v_pd,lmi_g_pd,backtracks\n";
  for (const auto& r : rows) {
    const auto& p = r.report;
    out += std::to_string(p.epoch) + "," + p.kind;
    for (double s : p.sub) out += "," + format_double(s);
    out += "," + format_double(p.total) + "," + format_double(p.loss_v) + "," +
           format_double(p.loss_m) + "," + format_double(p.eta) + "," +
           (r.lmi_v_pd ? "1" : "0") + "," + (r.lmi_g_pd ? "1" : "0") + "," +
           std::to_string(r.backtracks) + "\n";
  }
  return out;
}

inline std::string timing_csv(const std::vector<LogRow>& rows, const std::vector<double>& secs) {
  std::string out = "epoch,kind,wall_seconds\n";
  for (std::size_t i = 0; i < rows.size() && i < secs.size(); ++i) {
    out += std::to_string(rows[i].report.epoch) + "," + rows[i].report.kind + "," +
           format_double(secs[i]) + "\n";
  }
  return out;
}

/// Joint optimizer over both networks, both multiplier vectors and eta.
class Trainer {
 public:
  Trainer(const SystemSpec& sys, const CoverDataset& xs, const CoverDataset& ws,
          const HyperParams& hp)
      : sys_(sys), xs_(xs), ws_(ws), hp_(hp), barrier_(sys.state_box),
        sampler_(xs, ws, hp.batch),
        batch_rng_(substream_seed(hp.seed, "batching")) {
    hp_.validate();
    sys_.validate();
    lipschitz_ = composite_lipschitz(hp_.lip, hp_.bundle, sys_);
    cv_ = hp_.weights.cv;
    initialize();
  }

  const HyperParams& hyper() const { return hp_; }
  const MlpParams& v_net() const { return v_; }
  const MlpParams& g_net() const { return g_; }
  double eta() const { return eta_; }
  const LmiContext& lmi_v() const { return lmi_v_; }
  const LmiContext& lmi_g() const { return lmi_g_; }
  const LipschitzBreakdown& lipschitz() const { return lipschitz_; }
  ScenarioContext context() const {
    ScenarioContext ctx;
    ctx.sys = &sys_;
    ctx.xs = &xs_;
    ctx.ws = &ws_;
    ctx.bundle = hp_.bundle;
    ctx.barrier = &barrier_;
    ctx.jacobian = hp_.jacobian;
    ctx.reduction = hp_.reduction;
    ctx.threads = hp_.threads;
    return ctx;
  }

  std::vector<SampleTuple> next_batch() {
    return sampler_.draw(static_cast<std::size_t>(hp_.batch_size), batch_rng_);
  }

  /// Objective L_total + L_M + L_v on `batch` and its gradient in the
  /// packed layout [V | g | sqrt(lambda_v) | sqrt(lambda_g) | eta].
  double objective(const std::vector<SampleTuple>& batch, std::vector<double>* grad,
                   LossReport* report = nullptr) const {
    LossGradients lg;
    const auto sub =
        sub_losses(context(), batch, v_, g_, eta_, hp_.weights, grad ? &lg : nullptr);
    const double l_total = total_loss(sub, hp_.weights);
    const double lv = loss_v(eta_, lipschitz_.L, hp_.eps());
    GradientBundle gv = GradientBundle::zeros_like(v_);
    GradientBundle gg = GradientBundle::zeros_like(g_);
    Vec dsv, dsg;
    const LmiLoss lm = lmi_loss_and_grads(lmi_v_, lmi_g_, hp_.weights.cl1, hp_.weights.cl2,
                                          grad ? &gv : nullptr, grad ? &dsv : nullptr,
                                          grad ? &gg : nullptr, grad ? &dsg : nullptr);
    if (report) {
      report->sub = sub;
      report->total = l_total;
      report->loss_v = lv;
      report->loss_m = lm.value;
      report->eta = eta_;
      report->batch_size = batch.size();
      report->kind = "batch";
    }
    if (grad) {
      lg.v.add(gv);
      lg.g.add(gg);
      grad->clear();
      pack_grads(lg.v, *grad);
      pack_grads(lg.g, *grad);
      for (Eigen::Index k = 0; k < dsv.size(); ++k) grad->push_back(dsv[k]);
      for (Eigen::Index k = 0; k < dsg.size(); ++k) grad->push_back(dsg[k]);
      const double margin = lipschitz_.L * hp_.eps() + eta_;
      grad->push_back(lg.eta + (margin > 0.0 ? cv_ : 0.0));
    }
    return l_total + lm.value + cv_ * lv;
  }

  std::vector<double> parameters() const {
    std::vector<double> p;
    pack_params(v_, p);
    pack_params(g_, p);
    for (Eigen::Index k = 0; k < lmi_v_.lambda_sqrt.size(); ++k) p.push_back(lmi_v_.lambda_sqrt[k]);
    for (Eigen::Index k = 0; k < lmi_g_.lambda_sqrt.size(); ++k) p.push_back(lmi_g_.lambda_sqrt[k]);
    p.push_back(eta_);
    return p;
  }

  void set_parameters(const std::vector<double>& p) {
    std::size_t pos = 0;
    unpack_params(v_, p, pos);
    unpack_params(g_, p, pos);
    for (Eigen::Index k = 0; k < lmi_v_.lambda_sqrt.size(); ++k) lmi_v_.lambda_sqrt[k] = p[pos++];
    for (Eigen::Index k = 0; k < lmi_g_.lambda_sqrt.size(); ++k) lmi_g_.lambda_sqrt[k] = p[pos++];
    eta_ = p[pos++];
    require(pos == p.size(), ErrorKind::kInvalidArgument, "parameter vector length mismatch");
  }

  /// One optimizer step on `batch`. Returns the pre-step report. The step
  /// is halved until both LMIs stay PD; after max_backtracks halvings the
  /// parameters are left unchanged and infeasible-barrier is raised.
  /// With `settle`, only the scalar offsets move: eta and V's output bias.
  LogRow step(const std::vector<SampleTuple>& batch, double lr_scale = 1.0,
              bool settle = false) {
    std::vector<double> grad;
    LogRow row;
    objective(batch, &grad, &row.report);
    const std::vector<double> p0 = parameters();
    std::vector<double> delta(p0.size());
    const double eta_lr = settle && hp_.settle_eta_lr >= 0 ? hp_.settle_eta_lr : hp_.eta_lr();
    std::size_t offset_begin = p0.size() - 1;
    if (settle) {
      lr_scale = 1.0;
      std::vector<double> vp;
      pack_params(v_, vp);
      offset_begin = vp.size() - static_cast<std::size_t>(v_.biases.back().size());
    }
    const auto scalar_lr = [&](std::size_t i) {
      return i + 1 == p0.size() || (settle && i >= offset_begin && i < p0.size() - 1)
                 ? eta_lr
                 : hp_.learning_rate;
    };
    if (hp_.optimizer == Optimizer::kAdam) {
      if (m_.empty()) {
        m_.assign(p0.size(), 0.0);
        s_.assign(p0.size(), 0.0);
      }
      ++t_;
      const double c1 = 1.0 - std::pow(hp_.adam_beta1, t_);
      const double c2 = 1.0 - std::pow(hp_.adam_beta2, t_);
      for (std::size_t i = 0; i < p0.size(); ++i) {
        m_[i] = hp_.adam_beta1 * m_[i] + (1.0 - hp_.adam_beta1) * grad[i];
        s_[i] = hp_.adam_beta2 * s_[i] + (1.0 - hp_.adam_beta2) * grad[i] * grad[i];
        const double mh = m_[i] / c1;
        const double sh = s_[i] / c2;
        const double lr = scalar_lr(i);
        delta[i] = lr * lr_scale * (mh / (std::sqrt(sh) + hp_.adam_eps));
      }
    } else {
      for (std::size_t i = 0; i < p0.size(); ++i) delta[i] = scalar_lr(i) * lr_scale * grad[i];
    }
    if (settle) {
      const std::size_t v_end = offset_begin + static_cast<std::size_t>(v_.biases.back().size());
      for (std::size_t i = 0; i + 1 < p0.size(); ++i) {
        if (i < offset_begin || i >= v_end) delta[i] = 0.0;
      }
    }
    double scale = 1.0;
    std::vector<double> trial(p0.size());
    for (int k = 0; k <= hp_.max_backtracks; ++k) {
      for (std::size_t i = 0; i < p0.size(); ++i) trial[i] = p0[i] - scale * delta[i];
      set_parameters(trial);
      const LmiStatus st = lmi_status(lmi_v_, lmi_g_);
      if (st.both_pd()) {
        row.backtracks = k;
        row.lmi_v_pd = row.lmi_g_pd = true;
        return row;
      }
      scale *= 0.5;
    }
    set_parameters(p0);
    fail(ErrorKind::kInfeasibleBarrier,
         "LMI left the PD cone after " + std::to_string(hp_.max_backtracks) + " step halvings");
  }

  /// Full deterministic dataset pass at the current parameters.
  LossReport full_report(LmiStatus* status = nullptr) const {
    ScenarioEngine engine(sys_, xs_, ws_, hp_.bundle, barrier_, v_, g_, hp_.threads);
    const HingeReport h = engine.hinge_sums(eta_, hp_.reduction);
    LossReport r;
    r.sub = h.sub;
    r.total = total_loss(h.sub, hp_.weights);
    r.loss_v = loss_v(eta_, lipschitz_.L, hp_.eps());
    const LmiStatus st = lmi_status(lmi_v_, lmi_g_);
    r.loss_m = st.both_pd() ? -hp_.weights.cl1 * st.v.logdet - hp_.weights.cl2 * st.g.logdet
                            : std::numeric_limits<double>::infinity();
    r.eta = eta_;
    r.kind = "full";
    r.batch_size = 0;
    if (status) *status = st;
    return r;
  }

  /// Geometric schedule from 1 at epoch 1 to lr_final_factor at the last.
  double lr_scale(int epoch) const {
    if (hp_.lr_final_factor == 1.0 || hp_.epochs == 1) return 1.0;
    const double frac = static_cast<double>(epoch - 1) / static_cast<double>(hp_.epochs - 1);
    return std::pow(hp_.lr_final_factor, frac);
  }

  /// Progress callback: (epoch, row) after every logged row.
  using Observer = std::function<void(const LogRow&)>;

  TrainedPair run(const Observer& observer = nullptr) {
    TrainedPair out;
    const auto t0 = std::chrono::steady_clock::now();
    auto record = [&](const LogRow& row) {
      out.history.push_back(row);
      out.wall_seconds.push_back(
          std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
      if (observer) observer(row);
    };
    for (int epoch = 1; epoch <= hp_.epochs; ++epoch) {
      LogRow agg;
      agg.report.epoch = epoch;
      agg.report.kind = epoch > hp_.epochs - hp_.settle_epochs ? "settle" : "batch";
      agg.lmi_v_pd = agg.lmi_g_pd = true;
      try {
        for (int b = 0; b < hp_.batches_per_epoch; ++b) {
          const bool settle = epoch > hp_.epochs - hp_.settle_epochs;
          cv_ = settle ? hp_.settle_cv : hp_.weights.cv;
          LogRow r = step(next_batch(), lr_scale(epoch), settle);
          for (int k = 0; k < 5; ++k) agg.report.sub[k] += r.report.sub[k];
          agg.report.total += r.report.total;
          agg.report.loss_v += r.report.loss_v;
          agg.report.loss_m += r.report.loss_m;
          agg.report.batch_size += r.report.batch_size;
          agg.backtracks += r.backtracks;
        }
      } catch (const Error& e) {
        if (e.kind() != ErrorKind::kInfeasibleBarrier) throw;
        out.reason = e.what();
        snapshot(out);
        out.epochs_run = epoch;
        throw Error(ErrorKind::kTrainingFailed,
                    "epoch " + std::to_string(epoch) + ": " + e.what());
      }
      const double nb = static_cast<double>(hp_.batches_per_epoch);
      for (int k = 0; k < 5; ++k) agg.report.sub[k] /= nb;
      agg.report.total /= nb;
      agg.report.loss_v /= nb;
      agg.report.loss_m /= nb;
      agg.report.eta = eta_;
      record(agg);
      out.epochs_run = epoch;

      if (epoch % hp_.check_every == 0 || epoch == hp_.epochs) {
        LmiStatus st;
        LogRow full;
        full.report = full_report(&st);
        full.report.epoch = epoch;
        full.lmi_v_pd = st.v.is_pd;
        full.lmi_g_pd = st.g.is_pd;
        record(full);
        out.last_full = full.report;
        const auto verdict = convergence_check(full.report, st, hp_.residual_tol);
        out.converged = verdict.done;
        out.reason = verdict.reason;
        if (verdict.done) break;
      }
    }
    snapshot(out);
    return out;
  }

 private:
  void initialize() {
    Rng rng(substream_seed(hp_.seed, "init"));
    std::vector<int> vs{v_input_dim(hp_.v_form, sys_.state_dim)};
    vs.insert(vs.end(), hp_.v_hidden.begin(), hp_.v_hidden.end());
    vs.push_back(hp_.v_form == PairForm::kConcat ? 1 : hp_.v_hidden.back());
    std::vector<int> gs{sys_.state_dim + sys_.external_input_dim};
    gs.insert(gs.end(), hp_.g_hidden.begin(), hp_.g_hidden.end());
    gs.push_back(sys_.internal_input_dim);
    v_ = init_mlp(vs, hp_.activation, rng, hp_.init_scale);
    v_.pair_form = hp_.v_form;
    g_ = init_mlp(gs, hp_.activation, rng, hp_.init_scale);
    g_.output_clamp = sys_.internal_box;
    eta_ = hp_.init_eta;
    lmi_v_ = LmiContext::make(v_, lyapunov_lmi_bound(hp_, sys_), hp_.init_lambda);
    lmi_g_ = LmiContext::make(g_, hp_.lip.controller, hp_.init_lambda);
    // Start strictly inside the PD cone: shrink weights until both LMIs hold.
    for (int k = 0; k < 60; ++k) {
      const LmiStatus st = lmi_status(lmi_v_, lmi_g_);
      if (st.both_pd()) return;
      if (!st.v.is_pd) {
        for (auto& w : v_.weights) w *= 0.5;
      }
      if (!st.g.is_pd) {
        for (auto& w : g_.weights) w *= 0.5;
      }
    }
    fail(ErrorKind::kInfeasibleBarrier, "could not find a PD starting point");
  }

  void snapshot(TrainedPair& out) const {
    out.v_net = v_;
    out.g_net = g_;
    out.lambda_v = lmi_v_.lambda();
    out.lambda_g = lmi_g_.lambda();
    out.eta = eta_;
  }

  const SystemSpec& sys_;
  const CoverDataset& xs_;
  const CoverDataset& ws_;
  HyperParams hp_;
  BarrierFn barrier_;
  BatchSampler sampler_;
  Rng batch_rng_;
  LipschitzBreakdown lipschitz_;
  MlpParams v_, g_;
  LmiContext lmi_v_, lmi_g_;
  double eta_ = 0.0;
  double cv_ = 1.0;
  std::vector<double> m_, s_;
  int t_ = 0;
};

inline TrainedPair train(const SystemSpec& sys, const CoverDataset& xs, const CoverDataset& ws,
                         const HyperParams& hp,
                         const Trainer::Observer& observer = nullptr) {
  Trainer trainer(sys, xs, ws, hp);
  return trainer.run(observer);
}

}  // namespace deltaiss
