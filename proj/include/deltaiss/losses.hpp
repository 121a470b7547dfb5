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

#include <array>
#include <string>
#include <vector>

#include "deltaiss/classk_barrier.hpp"
#include "deltaiss/nets.hpp"
#include "deltaiss/parallel.hpp"
#include "deltaiss/sampling.hpp"
#include "deltaiss/systems.hpp"

namespace deltaiss {

struct LossWeights {
  std::array<double, 5> c{1.0, 1.0, 1.0, 1.0, 1.0};
  double cl1 = 1.0;
  double cl2 = 1.0;
  double cv = 1.0;  // weight on the validity hinge L_v

  void validate() const {
    for (double v : c) {
      require(v > 0, ErrorKind::kInvalidArgument, "loss weights must be positive");
    }
    require(cl1 > 0 && cl2 > 0, ErrorKind::kInvalidArgument,
            "LMI loss weights must be positive");
    require(cv > 0, ErrorKind::kInvalidArgument, "validity loss weight must be positive");
  }
};

enum class Reduction { kSum, kMean };

struct LossReport {
  std::array<double, 5> sub{0, 0, 0, 0, 0};  // L0..L4
  double total = 0.0;
  double loss_v = 0.0;
  double loss_m = 0.0;
  double eta = 0.0;
  std::size_t batch_size = 0;
  int epoch = 0;
  std::string kind = "batch";  // "batch" or "full"
};

/// c0 L0 + c1 L1 + c2 L2 + c3 L3 + c4 L4, summed in that order.
inline double total_loss(const std::array<double, 5>& sub, const LossWeights& w) {
  double t = w.c[0] * sub[0];
  for (int i = 1; i < 5; ++i) t += w.c[i] * sub[i];
  return t;
}

/// Hinge on the validity margin: max(0, L eps + eta).
inline double loss_v(double eta, double lipschitz, double eps) {
  const double m = lipschitz * eps + eta;
  return m > 0.0 ? m : 0.0;
}

/// Everything the scenario losses read besides the trainable parameters.
struct ScenarioContext {
  const SystemSpec* sys = nullptr;
  const CoverDataset* xs = nullptr;
  const CoverDataset* ws = nullptr;
  ClassKBundle bundle;
  const BarrierFn* barrier = nullptr;
  JacobianMode jacobian = JacobianMode::kAuto;
  Reduction reduction = Reduction::kSum;
  int threads = 1;
};

struct LossGradients {
  GradientBundle v;
  GradientBundle g;
  double eta = 0.0;
};

namespace detail {

struct TupleBlockResult {
  std::array<double, 5> sub{0, 0, 0, 0, 0};
  LossGradients grads;
};

inline std::array<std::size_t, 5> term_counts(const std::vector<SampleTuple>& batch) {
  std::size_t diag = 0;
  for (const auto& t : batch) diag += t.diagonal() ? 1 : 0;
  const std::size_t off = batch.size() - diag;
  return {diag, off, off, off, batch.size()};
}

}  // namespace detail

/// Sub-losses L0..L4 of one batch. When `grads` is non-null, also the
/// gradient of sum_i c_i L_i with respect to both networks and eta (the
/// hinge subgradient at the kink is 0). Tuples are processed in fixed
/// blocks and reduced in block order, so the result does not depend on the
/// worker count.
inline std::array<double, 5> sub_losses(const ScenarioContext& ctx,
                                        const std::vector<SampleTuple>& batch,
                                        const MlpParams& v, const MlpParams& g,
                                        double eta, const LossWeights& weights,
                                        LossGradients* grads = nullptr) {
  constexpr std::size_t kBlock = 32;
  const SystemSpec& sys = *ctx.sys;
  const auto counts = detail::term_counts(batch);
  std::array<double, 5> scale{};
  for (int i = 0; i < 5; ++i) {
    scale[i] = ctx.reduction == Reduction::kMean && counts[i] > 0
                   ? 1.0 / static_cast<double>(counts[i])
                   : 1.0;
  }
  const std::size_t blocks = (batch.size() + kBlock - 1) / kBlock;
  std::vector<detail::TupleBlockResult> partial(blocks);
  const bool want_grad = grads != nullptr;

  parallel_for(blocks, ctx.threads, [&](std::size_t b) {
    auto& out = partial[b];
    if (want_grad) {
      out.grads.v = GradientBundle::zeros_like(v);
      out.grads.g = GradientBundle::zeros_like(g);
    }
    const std::size_t end = std::min(batch.size(), (b + 1) * kBlock);
    VTrace vt_cur, vt_next;
    MlpTrace gt_q, gt_r;
    Vec dfq, dfr, dh;
    for (std::size_t i = b * kBlock; i < end; ++i) {
      const SampleTuple& t = batch[i];
      const Vec& xq = ctx.xs->points[t.q];
      const Vec& xr = ctx.xs->points[t.r];
      const Vec& wq = ctx.ws->points[t.wq];
      const Vec& wr = ctx.ws->points[t.wr];

      const Vec uq = forward_g(g, xq, wq, want_grad ? &gt_q : nullptr);
      const Vec fq = step(sys, xq, uq);

      if (t.diagonal()) {
        const double vd = forward_V(v, xq, xq, want_grad ? &vt_cur : nullptr);
        if (vd > 0.0) {
          out.sub[0] += vd;
          if (want_grad) backprop_V(v, vt_cur, weights.c[0] * scale[0], out.grads.v);
        }
      } else {
        const double vc = forward_V(v, xq, xr, want_grad ? &vt_cur : nullptr);
        const double d = (xq - xr).norm();
        const double a1 = classk_eval(ctx.bundle, ClassK::kA1, d);
        const double a2 = classk_eval(ctx.bundle, ClassK::kA2, d);
        const double a3 = classk_eval(ctx.bundle, ClassK::kA3, d);
        const double s = classk_eval(ctx.bundle, ClassK::kSigma, (wq - wr).norm());
        double dvc = 0.0;  // accumulated coefficient on V(xq, xr)

        const double h1 = (-vc + a1) - eta;
        if (h1 > 0.0) {
          out.sub[1] += h1;
          dvc -= weights.c[1] * scale[1];
          if (want_grad) out.grads.eta -= weights.c[1] * scale[1];
        }
        const double h2 = (vc - a2) - eta;
        if (h2 > 0.0) {
          out.sub[2] += h2;
          dvc += weights.c[2] * scale[2];
          if (want_grad) out.grads.eta -= weights.c[2] * scale[2];
        }

        const Vec ur = forward_g(g, xr, wr, want_grad ? &gt_r : nullptr);
        const Vec fr = step(sys, xr, ur);
        const double vn = forward_V(v, fq, fr, want_grad ? &vt_next : nullptr);
        const double h3 = (((vn - vc) + a3) - s) - eta;
        if (h3 > 0.0) {
          out.sub[3] += h3;
          const double c3 = weights.c[3] * scale[3];
          dvc -= c3;
          if (want_grad) {
            out.grads.eta -= c3;
            backprop_V(v, vt_next, c3, out.grads.v, &dfq, &dfr);
            const Vec duq = input_jacobian(sys, xq, uq, ctx.jacobian).transpose() * dfq;
            const Vec dur = input_jacobian(sys, xr, ur, ctx.jacobian).transpose() * dfr;
            mlp_backprop(g, gt_q, duq, out.grads.g);
            mlp_backprop(g, gt_r, dur, out.grads.g);
          }
        }
        if (want_grad && dvc != 0.0) backprop_V(v, vt_cur, dvc, out.grads.v);
      }

      const double h4 =
          (ctx.barrier->eval(fq, want_grad ? &dh : nullptr) -
           ctx.bundle.kh * (*ctx.barrier)(xq)) - eta;
      if (h4 > 0.0) {
        out.sub[4] += h4;
        if (want_grad) {
          const double c4 = weights.c[4] * scale[4];
          out.grads.eta -= c4;
          const Vec du = input_jacobian(sys, xq, uq, ctx.jacobian).transpose() * (c4 * dh);
          mlp_backprop(g, gt_q, du, out.grads.g);
        }
      }
    }
  });

  std::array<double, 5> sub{0, 0, 0, 0, 0};
  for (int k = 0; k < 5; ++k) {
    std::vector<double> parts(blocks);
    for (std::size_t b = 0; b < blocks; ++b) parts[b] = partial[b].sub[k];
    sub[k] = pairwise_sum(parts) * scale[k];
  }
  if (want_grad) {
    grads->v = GradientBundle::zeros_like(v);
    grads->g = GradientBundle::zeros_like(g);
    grads->eta = 0.0;
    for (auto& p : partial) {
      grads->v.add(p.grads.v);
      grads->g.add(p.grads.g);
      grads->eta += p.grads.eta;
    }
    grads->v.check_finite("lyapunov network");
    grads->g.check_finite("controller network");
  }
  return sub;
}

}  // namespace deltaiss
