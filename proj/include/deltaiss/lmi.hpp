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

#include <cmath>
#include <limits>

#include <Eigen/Cholesky>

#include "deltaiss/common.hpp"
#include "deltaiss/nets.hpp"

namespace deltaiss {

// Lipschitz certificate for a feed-forward network with slope-restricted
// activations. With xi = [x; z_1; ...; z_l; y] ordered as input, hidden
// activations and output, the matrix
//
//   M = [A; B]^T [[2ab Lam, -(a+b) Lam], [-(a+b) Lam, 2 Lam]] [A; B]
//       + [[L^2 I, 0, 0], [0, 0, -W_l^T], [0, -W_l, I]]   (blocks x | z | y)
//
// with A = [blkdiag(W_0, ..., W_{l-1}) 0] (pre-activations) and
// B = [0 I] (activations) is positive semidefinite only if every incremental
// quadratic constraint of the activations leaves room for
// |W_l dz_l|^2 <= L^2 |dx|^2. Positive definiteness therefore certifies the
// Lipschitz bound L for the map x -> W_l z_l + b_l. Biases do not enter.

/// Multiplier state for one network: Lambda = diag(s_k^2) with s stored.
struct LmiContext {
  const MlpParams* net = nullptr;
  Vec lambda_sqrt;
  double bound = 1.0;

  Vec lambda() const { return lambda_sqrt.cwiseProduct(lambda_sqrt); }

  static LmiContext make(const MlpParams& net, double bound, double lambda0 = 1.0) {
    require(net.hidden_layers() >= 1, ErrorKind::kInvalidArgument,
            "LMI: network needs at least one hidden layer");
    LmiContext ctx;
    ctx.net = &net;
    ctx.lambda_sqrt = Vec::Constant(net.hidden_total(), std::sqrt(lambda0));
    ctx.bound = bound;
    return ctx;
  }
};

inline Eigen::Index lmi_dimension(const MlpParams& net) {
  return net.input_dim() + net.hidden_total() + net.output_dim();
}

/// Assembles M(theta, Lambda) for multipliers `lambda` (not square roots).
inline Mat build_lmi(const MlpParams& net, const Vec& lambda, double bound) {
  require(net.hidden_layers() >= 1, ErrorKind::kInvalidArgument,
          "LMI: network needs at least one hidden layer");
  require(lambda.size() == net.hidden_total(), ErrorKind::kInvalidArgument,
          "LMI: multiplier block has " + std::to_string(lambda.size()) +
              " entries, network has " + std::to_string(net.hidden_total()) +
              " hidden neurons");
  require(bound > 0, ErrorKind::kInvalidArgument, "LMI: bound must be positive");
  const auto [alpha, beta] = net.slopes();
  const Eigen::Index n0 = net.input_dim();
  const Eigen::Index nh = net.hidden_total();
  const Eigen::Index ny = net.output_dim();
  const Eigen::Index width = n0 + nh;

  Mat a = Mat::Zero(nh, width);
  Eigen::Index row = 0, col = 0;
  for (int l = 0; l < net.hidden_layers(); ++l) {
    const Mat& w = net.weights[l];
    require(w.rows() == net.layer_sizes[l + 1] && w.cols() == net.layer_sizes[l],
            ErrorKind::kInvalidArgument, "LMI: weight block " + std::to_string(l) +
                                             " has inconsistent shape");
    a.block(row, col, w.rows(), w.cols()) = w;
    row += w.rows();
    col += w.cols();
  }
  Mat b = Mat::Zero(nh, width);
  b.rightCols(nh).setIdentity();

  const auto lam = lambda.asDiagonal();
  const Mat la = lam * a;
  const Mat lb = lam * b;
  Mat m = Mat::Zero(width + ny, width + ny);
  m.topLeftCorner(width, width) = 2.0 * alpha * beta * (a.transpose() * la) -
                                  (alpha + beta) * (a.transpose() * lb + b.transpose() * la) +
                                  2.0 * (b.transpose() * lb);
  m.topLeftCorner(n0, n0).diagonal().array() += bound * bound;
  const Mat& w_out = net.weights.back();
  const Eigen::Index last = net.layer_sizes[net.layer_sizes.size() - 2];
  m.block(width, width - last, ny, last) = -w_out;
  m.block(width - last, width, last, ny) = -w_out.transpose();
  m.bottomRightCorner(ny, ny).setIdentity();
  // Exact symmetry: average away rounding in the product terms.
  Mat sym = 0.5 * (m + m.transpose());
  return sym;
}

struct PdResult {
  bool is_pd = false;
  double logdet = std::numeric_limits<double>::quiet_NaN();
  double min_pivot = std::numeric_limits<double>::quiet_NaN();
};

/// Cholesky attempt; PD iff every pivot is positive.
inline PdResult pd_logdet(const Mat& m) {
  require(m.allFinite(), ErrorKind::kNumericFault, "pd_logdet: non-finite matrix");
  require(m.rows() == m.cols(), ErrorKind::kInvalidArgument, "pd_logdet: not square");
  PdResult res;
  Eigen::LLT<Mat> llt(m);
  if (llt.info() != Eigen::Success) return res;
  const Mat& lmat = llt.matrixLLT();
  double logdet = 0.0;
  double min_pivot = std::numeric_limits<double>::infinity();
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    const double d = lmat(i, i);
    if (!(d > 0.0)) return res;
    logdet += std::log(d);
    min_pivot = std::min(min_pivot, d * d);
  }
  res.is_pd = true;
  res.logdet = 2.0 * logdet;
  res.min_pivot = min_pivot;
  return res;
}

struct LmiStatus {
  PdResult v;
  PdResult g;
  bool both_pd() const { return v.is_pd && g.is_pd; }
};

/// Gradient of  -c log det M(theta, Lambda)  for one network: weights via
/// `grads`, multiplier square roots via `d_lambda_sqrt`. Returns the loss
/// term. Throws infeasible-barrier when M is not PD.
inline double lmi_barrier_and_grad(const LmiContext& ctx, double weight,
                                   GradientBundle* grads, Vec* d_lambda_sqrt,
                                   PdResult* status = nullptr) {
  const MlpParams& net = *ctx.net;
  const Vec lambda = ctx.lambda();
  const Mat m = build_lmi(net, lambda, ctx.bound);
  const PdResult pd = pd_logdet(m);
  if (status) *status = pd;
  require(pd.is_pd, ErrorKind::kInfeasibleBarrier,
          "LMI not positive definite; reduce the step size");
  const double value = -weight * pd.logdet;
  if (!grads && !d_lambda_sqrt) return value;

  // d(-c log det M)/dM = -c M^{-1}
  Eigen::LLT<Mat> llt(m);
  const Mat gm = -weight * llt.solve(Mat::Identity(m.rows(), m.cols()));
  const auto [alpha, beta] = net.slopes();
  const Eigen::Index n0 = net.input_dim();
  const Eigen::Index nh = net.hidden_total();
  const Eigen::Index width = n0 + nh;
  const Mat s = gm.topLeftCorner(width, width);

  // Recover A, B row by row without materializing them: row k of A is the
  // weight row of hidden neuron k placed at its layer's input columns.
  std::vector<Eigen::Index> in_offset(net.hidden_layers());
  std::vector<Eigen::Index> out_offset(net.hidden_layers());
  {
    Eigen::Index r = 0, c = 0;
    for (int l = 0; l < net.hidden_layers(); ++l) {
      out_offset[l] = r;
      in_offset[l] = c;
      r += net.layer_sizes[l + 1];
      c += net.layer_sizes[l];
    }
  }
  Mat a = Mat::Zero(nh, width);
  for (int l = 0; l < net.hidden_layers(); ++l) {
    a.block(out_offset[l], in_offset[l], net.weights[l].rows(), net.weights[l].cols()) =
        net.weights[l];
  }
  // B S = rows [n0, width) of S; A S computed densely (sizes are small).
  const Mat as = a * s;
  const Mat bs = s.bottomRows(nh);
  if (grads) {
    // d/dA tr(S Q) = 4ab Lam A S - 2(a+b) Lam B S
    const Mat da = lambda.asDiagonal() *
                   (4.0 * alpha * beta * as - 2.0 * (alpha + beta) * bs);
    for (int l = 0; l < net.hidden_layers(); ++l) {
      grads->weights[l] += da.block(out_offset[l], in_offset[l], net.weights[l].rows(),
                                    net.weights[l].cols());
    }
    // Border: M[y, z_l] = -W_l and its transpose.
    const Eigen::Index last = net.layer_sizes[net.layer_sizes.size() - 2];
    const Eigen::Index ny = net.output_dim();
    grads->weights.back() -= 2.0 * gm.block(width, width - last, ny, last);
  }
  if (d_lambda_sqrt) {
    // d/dlam_k = 2ab (A S A^T)_kk - 2(a+b) (A S B^T)_kk + 2 (B S B^T)_kk
    Vec dl(nh);
    for (Eigen::Index k = 0; k < nh; ++k) {
      const double asa = as.row(k).dot(a.row(k));
      const double asb = as(k, n0 + k);
      const double bsb = bs(k, n0 + k);
      dl[k] = 2.0 * alpha * beta * asa - 2.0 * (alpha + beta) * asb + 2.0 * bsb;
    }
    *d_lambda_sqrt = 2.0 * ctx.lambda_sqrt.cwiseProduct(dl);
  }
  return value;
}

struct LmiLoss {
  double value = 0.0;  // L_M
  LmiStatus status;
};

/// L_M = -c_l1 log det M_v - c_l2 log det M_g with gradients.
inline LmiLoss lmi_loss_and_grads(const LmiContext& ctx_v, const LmiContext& ctx_g,
                                  double cl1, double cl2, GradientBundle* grad_v,
                                  Vec* grad_lambda_v, GradientBundle* grad_g,
                                  Vec* grad_lambda_g) {
  LmiLoss out;
  const double lv = lmi_barrier_and_grad(ctx_v, cl1, grad_v, grad_lambda_v, &out.status.v);
  const double lg = lmi_barrier_and_grad(ctx_g, cl2, grad_g, grad_lambda_g, &out.status.g);
  out.value = lv + lg;
  return out;
}

/// PD status of both LMIs without raising.
inline LmiStatus lmi_status(const LmiContext& ctx_v, const LmiContext& ctx_g) {
  LmiStatus s;
  s.v = pd_logdet(build_lmi(*ctx_v.net, ctx_v.lambda(), ctx_v.bound));
  s.g = pd_logdet(build_lmi(*ctx_g.net, ctx_g.lambda(), ctx_g.bound));
  return s;
}

}  // namespace deltaiss
