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

// Independent oracles shared by the unit tests and the acceptance binary.

#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "deltaiss/losses.hpp"
#include "deltaiss/nets.hpp"
#include "deltaiss/random.hpp"
#include "deltaiss/sampling.hpp"
#include "deltaiss/systems.hpp"
#include "deltaiss/verifier.hpp"

namespace deltaiss::testing {

inline const std::vector<std::string>& benchmarks() {
  static const std::vector<std::string> names{"scalar", "manipulator", "jet", "spacecraft"};
  return names;
}

/// Dataset of `count` uniform points in `box` (not a cover; for oracles).
inline CoverDataset random_dataset(const Box& box, std::size_t count, Rng& rng) {
  CoverDataset ds;
  ds.box = box;
  ds.eps = 1.0;
  ds.rule = "random";
  for (std::size_t i = 0; i < count; ++i) ds.points.push_back(rng.uniform_in(box));
  return ds;
}

/// A small verification instance with random networks.
struct Instance {
  SystemSpec sys;
  CoverDataset xs, ws;
  MlpParams v, g;
  ClassKBundle bundle;
};

inline Instance random_instance(const std::string& plant, std::uint64_t seed) {
  Rng rng(seed);
  Instance in;
  in.sys = make_benchmark(plant);
  const std::size_t n = 3 + rng.index(8);  // 3..10 states
  const std::size_t m = 2 + rng.index(4);  // 2..5 inputs
  in.xs = random_dataset(in.sys.state_box, n, rng);
  in.ws = random_dataset(in.sys.external_box, m, rng);
  const PairForm form = rng.index(3) == 0 ? PairForm::kSquaredDifference : PairForm::kConcat;
  const int nx = in.sys.state_dim;
  const int vh = 2 + static_cast<int>(rng.index(12));
  const int gh = 2 + static_cast<int>(rng.index(12));
  const int vout = form == PairForm::kConcat ? 1 : 1 + static_cast<int>(rng.index(3));
  in.v = init_mlp({v_input_dim(form, nx), vh, vout}, Activation::kRelu, rng, 2.0);
  in.v.pair_form = form;
  in.g = init_mlp({nx + in.sys.external_input_dim, gh, in.sys.internal_input_dim},
                  rng.index(2) ? Activation::kRelu : Activation::kTanh, rng, 2.0);
  if (rng.index(2)) {
    in.g.output_clamp = Box::uniform(in.sys.internal_input_dim, -0.5, 0.5);
  }
  in.bundle.k = {1e-5, 0.5, 1e-3 * (1.0 + rng.uniform()), 0.01};
  return in;
}

struct BruteForce {
  double eta = -std::numeric_limits<double>::infinity();
  Witness witness;
  std::array<double, kFamilies> family_max;
  std::uint64_t count = 0;
};

/// Enumerates every constraint in (family, q, r, wq, wr) order with the
/// direct formulas; ties keep the first witness.
inline BruteForce brute_force_eta(const Instance& in) {
  const BarrierFn h(in.sys.state_box);
  BruteForce out;
  out.family_max.fill(-std::numeric_limits<double>::infinity());
  auto offer = [&](double val, Witness w) {
    const int f = static_cast<int>(w.family);
    if (val > out.family_max[f]) out.family_max[f] = val;
    if (out.count == 0 || val > out.eta) {
      out.eta = val;
      out.witness = w;
    }
    ++out.count;
  };
  auto next = [&](std::size_t q, std::size_t w) {
    return step(in.sys, in.xs.points[q], forward_g(in.g, in.xs.points[q], in.ws.points[w]));
  };
  const std::size_t n = in.xs.count(), m = in.ws.count();
  for (int fam = 0; fam < 3; ++fam) {
    for (std::size_t q = 0; q < n; ++q) {
      for (std::size_t r = 0; r < n; ++r) {
        if (r == q) continue;
        const Vec& xq = in.xs.points[q];
        const Vec& xr = in.xs.points[r];
        const double vc = forward_V(in.v, xq, xr);
        const double d = (xq - xr).norm();
        if (fam == 0) {
          offer(-vc + in.bundle.k[0] * std::pow(d, in.bundle.gamma[0]),
                {Family::kLowerBound, q, r, 0, 0});
        } else if (fam == 1) {
          offer(vc - in.bundle.k[1] * std::pow(d, in.bundle.gamma[1]),
                {Family::kUpperBound, q, r, 0, 0});
        } else {
          const double a3 = in.bundle.k[2] * std::pow(d, in.bundle.gamma[2]);
          for (std::size_t a = 0; a < m; ++a) {
            for (std::size_t b = 0; b < m; ++b) {
              const double vn = forward_V(in.v, next(q, a), next(r, b));
              const double s = in.bundle.k[3] *
                               std::pow((in.ws.points[a] - in.ws.points[b]).norm(),
                                        in.bundle.gamma[3]);
              offer(((vn - vc) + a3) - s, {Family::kDecrease, q, r, a, b});
            }
          }
        }
      }
    }
  }
  for (std::size_t q = 0; q < n; ++q) {
    for (std::size_t a = 0; a < m; ++a) {
      offer(h(next(q, a)) - h(in.xs.points[q]), {Family::kBarrier, q, 0, a, 0});
    }
  }
  return out;
}

/// Central-difference gradient of `f` at `x` with step `h`.
inline std::vector<double> fd_gradient(const std::function<double(const std::vector<double>&)>& f,
                                       std::vector<double> x, double h) {
  std::vector<double> g(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double x0 = x[i];
    x[i] = x0 + h;
    const double fp = f(x);
    x[i] = x0 - h;
    const double fm = f(x);
    x[i] = x0;
    g[i] = (fp - fm) / (2.0 * h);
  }
  return g;
}

/// |a - b| / max(|b|, floor) in the Euclidean norm.
inline double relative_error(const std::vector<double>& a, const std::vector<double>& b,
                             double floor = 1e-12) {
  double num = 0, den = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    num += (a[i] - b[i]) * (a[i] - b[i]);
    den += b[i] * b[i];
  }
  return std::sqrt(num) / std::max(std::sqrt(den), floor);
}

/// Gradient-check fixture for L_total on one benchmark: both networks and
/// eta packed as [V | g | eta].
struct LossProbe {
  SystemSpec sys;
  CoverDataset xs, ws;
  MlpParams v, g;
  std::vector<SampleTuple> batch;
  ScenarioContext ctx;
  LossWeights weights;
  double eta = 0.0;
  BarrierFn barrier;

  LossProbe(const std::string& plant, int v_hidden, int g_hidden, std::uint64_t seed,
            Activation act = Activation::kTanh)
      : sys(make_benchmark(plant)), barrier(sys.state_box) {
    Rng rng(seed);
    // Inputs straddle the box so that barrier hinges are active as well.
    Box wide = sys.state_box;
    wide.lo *= 1.05;
    wide.hi *= 1.05;
    xs = random_dataset(wide, 12, rng);
    xs.box = sys.state_box;
    ws = random_dataset(sys.external_box, 6, rng);
    const int n = sys.state_dim;
    v = init_mlp({2 * n, v_hidden, 1}, act, rng, 1.0);
    g = init_mlp({n + sys.external_input_dim, g_hidden, sys.internal_input_dim}, act, rng, 1.0);
    batch = draw_batch(xs, ws, 48, seed ^ 0x5eedULL, {0.25, 0.25});
    ctx.sys = &sys;
    ctx.xs = &xs;
    ctx.ws = &ws;
    ctx.barrier = &barrier;
    ctx.bundle.k = {1e-5, 0.5, 1e-4, 0.01};
    ctx.bundle.kh = 1.0;
    ctx.jacobian = JacobianMode::kAnalytic;
    weights.c = {1.0, 0.7, 1.3, 0.9, 1.1};
    eta = -1e-3;
  }

  std::vector<double> pack() const {
    std::vector<double> p;
    pack_params(v, p);
    pack_params(g, p);
    p.push_back(eta);
    return p;
  }

  double total_at(const std::vector<double>& p) const {
    MlpParams vv = v, gg = g;
    std::size_t pos = 0;
    unpack_params(vv, p, pos);
    unpack_params(gg, p, pos);
    return total_loss(sub_losses(ctx, batch, vv, gg, p[pos], weights), weights);
  }

  std::vector<double> analytic() const {
    LossGradients lg;
    (void)sub_losses(ctx, batch, v, g, eta, weights, &lg);
    std::vector<double> out;
    pack_grads(lg.v, out);
    pack_grads(lg.g, out);
    out.push_back(lg.eta);
    return out;
  }
};

}  // namespace deltaiss::testing
