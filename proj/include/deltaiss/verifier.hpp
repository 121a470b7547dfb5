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

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <optional>
#include <string>
#include <unordered_set>
#include <vector>

#include <json.hpp>

#include "deltaiss/classk_barrier.hpp"
#include "deltaiss/common.hpp"
#include "deltaiss/lmi.hpp"
#include "deltaiss/losses.hpp"
#include "deltaiss/nets.hpp"
#include "deltaiss/parallel.hpp"
#include "deltaiss/random.hpp"
#include "deltaiss/sampling.hpp"
#include "deltaiss/systems.hpp"

namespace deltaiss {

// ---- constraint families ----------------------------------------------------

/// The four eta-bounded constraint families of the sampled program, in
/// enumeration order. The equality V(x, x) = 0 is tracked separately.
enum class Family : int { kLowerBound = 0, kUpperBound = 1, kDecrease = 2, kBarrier = 3 };

inline constexpr int kFamilies = 4;

inline const char* to_string(Family f) {
  switch (f) {
    case Family::kLowerBound: return "lower_bound";
    case Family::kUpperBound: return "upper_bound";
    case Family::kDecrease: return "decrease";
    case Family::kBarrier: return "barrier";
  }
  return "?";
}

/// Argmax constraint: family plus sample indices. Unused indices are 0.
struct Witness {
  Family family = Family::kLowerBound;
  std::uint64_t q = 0, r = 0, wq = 0, wr = 0;

  auto key() const {
    return std::array<std::uint64_t, 5>{static_cast<std::uint64_t>(family), q, r, wq, wr};
  }
  bool operator==(const Witness& o) const { return key() == o.key(); }
};

struct EtaMode {
  enum Kind { kExhaustive, kAudit } kind = kExhaustive;
  std::uint64_t count = 0;  // audit only
  std::uint64_t seed = 0;   // audit only

  static EtaMode exhaustive() { return {}; }
  static EtaMode audit(std::uint64_t count, std::uint64_t seed) {
    return {kAudit, count, seed};
  }
  std::string describe() const {
    return kind == kExhaustive ? "exhaustive"
                               : "audit:" + std::to_string(count) + "@" + std::to_string(seed);
  }
};

struct EtaResult {
  double eta_star = -std::numeric_limits<double>::infinity();
  Witness witness;
  double diag_residual = 0.0;
  std::array<double, kFamilies> family_max{};
  std::array<std::uint64_t, kFamilies> family_count{};
  std::uint64_t evaluated = 0;
  EtaMode mode;
};

/// Eta-bounded constraint count for N states and M inputs; saturates at
/// UINT64_MAX.
inline std::uint64_t constraint_total(std::uint64_t n, std::uint64_t m) {
  const long double t = static_cast<long double>(n) * (static_cast<long double>(n) - 1.0L) *
                            (2.0L + static_cast<long double>(m) * m) +
                        static_cast<long double>(n) * m;
  if (t >= 1.8e19L) return std::numeric_limits<std::uint64_t>::max();
  return static_cast<std::uint64_t>(t);
}

/// Full-dataset hinge sums at a given eta (the dataset form of L0..L4).
struct HingeReport {
  std::array<double, 5> sub{0, 0, 0, 0, 0};
  std::array<std::uint64_t, 5> count{0, 0, 0, 0, 0};
};

namespace detail {

struct RunningMax {
  double value = -std::numeric_limits<double>::infinity();
  Witness w;
  bool any = false;

  // Strictly-greater keeps the first (lexicographically smallest) witness
  // when callers feed candidates in index order.
  void offer(double v, const Witness& cand) {
    if (!any || v > value) {
      value = v;
      w = cand;
      any = true;
    }
  }
  void merge(const RunningMax& o) {
    if (!o.any) return;
    if (!any || o.value > value || (o.value == value && o.w.key() < w.key())) {
      value = o.value;
      w = o.w;
      any = true;
    }
  }
};

inline double hinge(double v) { return v > 0.0 ? v : 0.0; }

}  // namespace detail

/// Precomputed closed-loop successors and network partials for one pair of
/// datasets and one pair of networks. Every constraint value it produces is
/// bitwise identical to the direct formula
///
///   lower:    (-V(xq, xr) + a1) ,  upper: (V(xq, xr) - a2)
///   decrease: ((V(f_q, f_r) - V(xq, xr)) + a3) - sigma
///   barrier:  h(f_q) - h(xq)
///
/// evaluated with forward_V / forward_g / step.
class ScenarioEngine {
 public:
  ScenarioEngine(const SystemSpec& sys, const CoverDataset& xs, const CoverDataset& ws,
                 const ClassKBundle& bundle, const BarrierFn& barrier, const MlpParams& v,
                 const MlpParams& g, int threads = 1)
      : sys_(sys), xs_(xs), ws_(ws), bundle_(bundle), barrier_(barrier), v_(v), g_(g),
        threads_(threads) {
    require(xs.dim() == sys.state_dim, ErrorKind::kInvalidArgument,
            "state dataset dimension does not match the plant");
    require(ws.dim() == sys.external_input_dim, ErrorKind::kInvalidArgument,
            "input dataset dimension does not match the plant");
    require(v.input_dim() == v_input_dim(v.pair_form, sys.state_dim),
            ErrorKind::kInvalidArgument, "Lyapunov network input size mismatch");
    require(g.input_dim() == sys.state_dim + sys.external_input_dim &&
                g.output_dim() == sys.internal_input_dim,
            ErrorKind::kInvalidArgument, "controller network shape mismatch");
    n_ = xs.count();
    m_ = ws.count();
  }

  std::uint64_t states() const { return n_; }
  std::uint64_t inputs() const { return m_; }

  std::array<std::uint64_t, kFamilies> family_sizes() const {
    const std::uint64_t pairs = n_ * (n_ - 1);
    return {pairs, pairs, pairs * m_ * m_, n_ * m_};
  }

  /// Total eta-bounded constraints; saturates at UINT64_MAX on overflow.
  std::uint64_t total() const { return constraint_total(n_, m_); }

  /// Direct evaluation of one constraint's left-hand side (without -eta).
  double constraint_value(const Witness& w) const {
    const Vec& xq = xs_.points[w.q];
    if (w.family == Family::kBarrier) {
      const Vec fq = successor(w.q, w.wq);
      return barrier_(fq) - barrier_(xq);
    }
    const Vec& xr = xs_.points[w.r];
    const double vc = forward_V(v_, xq, xr);
    const double d = (xq - xr).norm();
    switch (w.family) {
      case Family::kLowerBound:
        return -vc + classk_eval(bundle_, ClassK::kA1, d);
      case Family::kUpperBound:
        return vc - classk_eval(bundle_, ClassK::kA2, d);
      default: {
        const Vec fq = successor(w.q, w.wq);
        const Vec fr = successor(w.r, w.wr);
        const double vn = forward_V(v_, fq, fr);
        const double a3 = classk_eval(bundle_, ClassK::kA3, d);
        const double s =
            classk_eval(bundle_, ClassK::kSigma, (ws_.points[w.wq] - ws_.points[w.wr]).norm());
        return ((vn - vc) + a3) - s;
      }
    }
  }

  /// max_q |V(x_q, x_q)|.
  double diag_residual() const {
    double worst = 0.0;
    for (std::uint64_t q = 0; q < n_; ++q) {
      const Vec& x = xs_.points[q];
      worst = std::max(worst, std::abs(forward_V(v_, x, x)));
    }
    return worst;
  }

  EtaResult exhaustive() {
    prepare();
    EtaResult res;
    res.mode = EtaMode::exhaustive();
    res.family_count = family_sizes();
    std::vector<std::array<detail::RunningMax, kFamilies>> rows(n_);
    parallel_for(n_, threads_, [&](std::size_t q) { scan_row(q, rows[q], nullptr, 0.0); });
    std::array<detail::RunningMax, kFamilies> fam;
    for (const auto& row : rows) {
      for (int f = 0; f < kFamilies; ++f) fam[f].merge(row[f]);
    }
    finish(fam, res);
    for (auto c : res.family_count) res.evaluated += c;
    return res;
  }

  /// Uniform sample of `count` distinct constraints (Floyd's algorithm),
  /// evaluated directly. Falls back to full enumeration when count covers
  /// the whole index space.
  EtaResult audit(std::uint64_t count, std::uint64_t seed) {
    const std::uint64_t tot = total();
    if (count >= tot) {
      EtaResult res = exhaustive();
      res.mode = EtaMode::audit(count, seed);
      return res;
    }
    require(count >= 1, ErrorKind::kInvalidArgument, "audit count must be positive");
    Rng rng(substream_seed(seed, "audit"));
    std::unordered_set<std::uint64_t> chosen;
    chosen.reserve(static_cast<std::size_t>(count) * 2);
    for (std::uint64_t j = tot - count; j < tot; ++j) {
      const std::uint64_t t = rng.index(j + 1);
      if (!chosen.insert(t).second) chosen.insert(j);
    }
    std::vector<std::uint64_t> idx(chosen.begin(), chosen.end());
    std::sort(idx.begin(), idx.end());

    const std::size_t kBlock = 256;
    const std::size_t blocks = (idx.size() + kBlock - 1) / kBlock;
    std::vector<std::array<detail::RunningMax, kFamilies>> parts(blocks);
    std::vector<std::array<std::uint64_t, kFamilies>> counts(blocks);
    parallel_for(blocks, threads_, [&](std::size_t b) {
      const std::size_t end = std::min(idx.size(), (b + 1) * kBlock);
      for (std::size_t i = b * kBlock; i < end; ++i) {
        const Witness w = decode(idx[i]);
        const double val = guarded(w, [&] { return constraint_value(w); });
        parts[b][static_cast<int>(w.family)].offer(val, w);
        counts[b][static_cast<int>(w.family)] += 1;
      }
    });
    EtaResult res;
    res.mode = EtaMode::audit(count, seed);
    std::array<detail::RunningMax, kFamilies> fam;
    for (std::size_t b = 0; b < blocks; ++b) {
      for (int f = 0; f < kFamilies; ++f) {
        fam[f].merge(parts[b][f]);
        res.family_count[f] += counts[b][f];
      }
    }
    finish(fam, res);
    res.evaluated = idx.size();
    return res;
  }

  /// Dataset hinge sums of every family at `eta`, reduced in row order.
  /// Index 0 is the diagonal term max(0, V(x, x)); index 4 uses kh h(x).
  HingeReport hinge_sums(double eta, Reduction reduction = Reduction::kSum) {
    prepare();
    HingeReport rep;
    std::vector<std::array<double, 5>> rows(n_);
    parallel_for(n_, threads_, [&](std::size_t q) {
      std::array<detail::RunningMax, kFamilies> unused;
      scan_row(q, unused, &rows[q], eta);
      const Vec& x = xs_.points[q];
      rows[q][0] = detail::hinge(forward_V(v_, x, x));
    });
    const auto sizes = family_sizes();
    rep.count = {n_, sizes[0], sizes[1], sizes[2], sizes[3]};
    for (int k = 0; k < 5; ++k) {
      std::vector<double> parts(n_);
      for (std::uint64_t q = 0; q < n_; ++q) parts[q] = rows[q][k];
      rep.sub[k] = pairwise_sum(parts);
      if (reduction == Reduction::kMean && rep.count[k] > 0) {
        rep.sub[k] /= static_cast<double>(rep.count[k]);
      }
    }
    return rep;
  }

  Witness decode(std::uint64_t index) const {
    const auto sizes = family_sizes();
    Witness w;
    int f = 0;
    while (index >= sizes[f]) {
      index -= sizes[f];
      ++f;
    }
    w.family = static_cast<Family>(f);
    if (w.family == Family::kBarrier) {
      w.q = index / m_;
      w.wq = index % m_;
      return w;
    }
    std::uint64_t pair = index;
    if (w.family == Family::kDecrease) {
      w.wr = index % m_;
      w.wq = (index / m_) % m_;
      pair = index / (m_ * m_);
    }
    w.q = pair / (n_ - 1);
    const std::uint64_t k = pair % (n_ - 1);
    w.r = k < w.q ? k : k + 1;
    return w;
  }

 private:
  Vec successor(std::uint64_t q, std::uint64_t w) const {
    const Vec u = forward_g(g_, xs_.points[q], ws_.points[w]);
    return step(sys_, xs_.points[q], u);
  }

  template <typename F>
  double guarded(const Witness& w, F&& fn) const {
    try {
      const double v = fn();
      require(std::isfinite(v), ErrorKind::kNumericFault, "non-finite constraint value");
      return v;
    } catch (const Error& e) {
      throw Error(e.kind(), std::string(e.what()) + " [constraint " + to_string(w.family) +
                                " q=" + std::to_string(w.q) + " r=" + std::to_string(w.r) +
                                " wq=" + std::to_string(w.wq) + " wr=" + std::to_string(w.wr) +
                                "]");
    }
  }

  bool concat_fast() const {
    return v_.pair_form == PairForm::kConcat && v_.hidden_layers() >= 1 &&
           2 * sys_.state_dim <= detail::kSequentialDotMax;
  }

  // Tables shared by all rows: successors, their barrier values, first-layer
  // partial sums (concat form) or feature vectors (squared-difference form),
  // and sigma over input pairs.
  void prepare() {
    if (prepared_) return;
    const int n = sys_.state_dim;
    next_.assign(n_ * m_, Vec());
    h_next_.assign(n_ * m_, 0.0);
    parallel_for(n_, threads_, [&](std::size_t q) {
      for (std::uint64_t w = 0; w < m_; ++w) {
        Witness wit{Family::kBarrier, q, 0, w, 0};
        guarded(wit, [&] {
          next_[q * m_ + w] = successor(q, w);
          h_next_[q * m_ + w] = barrier_(next_[q * m_ + w]);
          return 0.0;
        });
      }
    });
    h_state_.resize(n_);
    for (std::uint64_t q = 0; q < n_; ++q) h_state_[q] = barrier_(xs_.points[q]);
    sigma_.resize(m_ * m_);
    for (std::uint64_t a = 0; a < m_; ++a) {
      for (std::uint64_t b = 0; b < m_; ++b) {
        sigma_[a * m_ + b] = classk_eval(bundle_, ClassK::kSigma,
                                         (ws_.points[a] - ws_.points[b]).norm());
      }
    }
    if (concat_fast()) {
      const Mat& w0 = v_.weights[0];
      const Vec& b0 = v_.biases[0];
      h0_ = static_cast<int>(w0.rows());
      partial_.assign(n_ * m_ * h0_, 0.0);
      for (std::uint64_t k = 0; k < n_ * m_; ++k) {
        const Vec& a = next_[k];
        for (int j = 0; j < h0_; ++j) {
          // Same accumulation as biased_dot's sequential branch, stopped at n.
          double acc = b0[j];
          for (int i = 0; i < n; ++i) acc += w0(j, i) * a[i];
          partial_[k * h0_ + j] = acc;
        }
      }
      // Second-half input weights stored column-major for a j-inner loop.
      w0_tail_.resize(static_cast<std::size_t>(h0_) * n);
      for (int i = 0; i < n; ++i) {
        for (int j = 0; j < h0_; ++j) w0_tail_[static_cast<std::size_t>(i) * h0_ + j] = w0(j, n + i);
      }
      if (v_.layers() == 2) {
        const Mat& w1 = v_.weights[1];
        w1_.assign(w1.data(), w1.data() + w1.size());
        b1_ = v_.biases[1][0];
      }
    } else if (v_.pair_form == PairForm::kSquaredDifference) {
      features_.assign(n_ * m_, Vec());
      for (std::uint64_t k = 0; k < n_ * m_; ++k) features_[k] = mlp_forward(v_, next_[k]);
    }
    prepared_ = true;
  }

  // V(f_{q,wq}, f_{r,wr}) from the tables; `hidden`/`scratch` are buffers.
  double v_next(std::uint64_t kq, std::uint64_t kr, std::vector<double>& hidden,
                std::vector<double>& scratch) const {
    if (concat_fast()) {
      hidden.resize(h0_);
      switch (v_.activation) {
        case Activation::kRelu:
          first_layer<Activation::kRelu>(kq, kr, hidden.data());
          break;
        case Activation::kTanh:
          first_layer<Activation::kTanh>(kq, kr, hidden.data());
          break;
        case Activation::kSigmoid:
          first_layer<Activation::kSigmoid>(kq, kr, hidden.data());
          break;
      }
      if (!w1_.empty()) return clamp_scalar(contiguous_dot(b1_, w1_.data(), hidden.data(), h0_));
      return finish_concat(hidden, scratch);
    }
    if (v_.pair_form == PairForm::kSquaredDifference) {
      const Vec& a = features_[kq];
      const Vec& b = features_[kr];
      double s = 0.0;
      for (Eigen::Index k = 0; k < a.size(); ++k) {
        const double d = a[k] - b[k];
        s += d * d;
      }
      return s;
    }
    return forward_V(v_, next_[kq], next_[kr]);
  }

  // V(f_kq, f_{r,b}) for every input index b.
  void next_values(std::uint64_t kq, std::uint64_t r, double* out, std::vector<double>& hidden,
                   std::vector<double>& scratch) const {
    if (concat_fast() && !w1_.empty()) {
      switch (v_.activation) {
        case Activation::kRelu: return next_values_1<Activation::kRelu>(kq, r, out);
        case Activation::kTanh: return next_values_1<Activation::kTanh>(kq, r, out);
        case Activation::kSigmoid: return next_values_1<Activation::kSigmoid>(kq, r, out);
      }
    }
    for (std::uint64_t b = 0; b < m_; ++b) out[b] = v_next(kq, r * m_ + b, hidden, scratch);
  }

  template <Activation A>
  void next_values_1(std::uint64_t kq, std::uint64_t r, double* out) const {
    constexpr int kMaxStack = 256;
    const int n = sys_.state_dim;
    const double* pa = &partial_[kq * h0_];
    double stack[kMaxStack];
    std::vector<double> heap;
    double* hid = stack;
    if (h0_ > kMaxStack) {
      heap.resize(h0_);
      hid = heap.data();
    }
    // Locals keep the compiler from reloading members after each store.
    const int h = h0_;
    const double* wt = w0_tail_.data();
    const double* w1 = w1_.data();
    const double b1 = b1_;
    const std::uint64_t m = m_;
    const Vec* ys = &next_[r * m];
    for (std::uint64_t b = 0; b < m; ++b) {
      const double* y = ys[b].data();
      const double f0 = y[0];
      for (int j = 0; j < h; ++j) hid[j] = pa[j] + wt[j] * f0;
      for (int i = 1; i < n; ++i) {
        const double f = y[i];
        const double* wc = wt + static_cast<std::size_t>(i) * h;
        for (int j = 0; j < h; ++j) hid[j] += wc[j] * f;
      }
      for (int j = 0; j < h; ++j) hid[j] = act<A>(hid[j]);
      out[b] = contiguous_dot(b1, w1, hid, h);
    }
    if (v_.output_clamp) {
      for (std::uint64_t b = 0; b < m; ++b) out[b] = clamp_scalar(out[b]);
    }
  }

  template <Activation A>
  static double act(double v) {
    if constexpr (A == Activation::kRelu) {
      return v > 0.0 ? v : 0.0;
    } else if constexpr (A == Activation::kTanh) {
      return std::tanh(v);
    } else {
      return 1.0 / (1.0 + std::exp(-v));
    }
  }

  // Hidden activations of V(f_kq, f_kr): partial sum over the first state,
  // then the second state's coordinates in increasing order.
  template <Activation A>
  void first_layer(std::uint64_t kq, std::uint64_t kr, double* hid) const {
    const int n = sys_.state_dim;
    const double* pa = &partial_[kq * h0_];
    const Vec& b = next_[kr];
    for (int j = 0; j < h0_; ++j) hid[j] = pa[j];
    for (int i = 0; i < n; ++i) {
      const double f = b[i];
      const double* wc = &w0_tail_[static_cast<std::size_t>(i) * h0_];
      for (int j = 0; j < h0_; ++j) hid[j] += wc[j] * f;
    }
    for (int j = 0; j < h0_; ++j) hid[j] = act<A>(hid[j]);
  }

  // detail::biased_dot with unit stride, written out so it vectorizes.
  static double contiguous_dot(double bias, const double* w, const double* t, int n) {
    if (n <= detail::kSequentialDotMax) return detail::biased_dot(bias, w, 1, t, n);
    double s[4] = {0.0, 0.0, 0.0, 0.0};
    int i = 0;
    for (; i + 4 <= n; i += 4) {
      for (int l = 0; l < 4; ++l) s[l] += w[i + l] * t[i + l];
    }
    for (int l = 0; i + l < n; ++l) s[l] += w[i + l] * t[i + l];
    return bias + ((s[0] + s[1]) + (s[2] + s[3]));
  }

  double clamp_scalar(double out) const {
    if (v_.output_clamp) {
      if (out <= v_.output_clamp->lo[0]) {
        out = v_.output_clamp->lo[0];
      } else if (out >= v_.output_clamp->hi[0]) {
        out = v_.output_clamp->hi[0];
      }
    }
    return out;
  }

  // Layers 1.. of the concat network, same rounding as mlp_forward.
  double finish_concat(std::vector<double>& t, std::vector<double>& scratch) const {
    for (int l = 1; l < v_.layers(); ++l) {
      const Mat& w = v_.weights[l];
      const Vec& b = v_.biases[l];
      const int cols = static_cast<int>(w.cols());
      scratch.resize(w.rows());
      for (Eigen::Index j = 0; j < w.rows(); ++j) {
        scratch[j] = detail::biased_dot(b[j], w.data() + j, w.rows(), t.data(), cols);
      }
      if (l + 1 < v_.layers()) {
        for (auto& s : scratch) s = activate(v_.activation, s);
      }
      t.swap(scratch);
    }
    return clamp_scalar(t[0]);
  }

  // One state index q: all constraints with that first index. Either tracks
  // family maxima or (when `sums` is set) hinge sums at eta.
  void scan_row(std::uint64_t q, std::array<detail::RunningMax, kFamilies>& fam,
                std::array<double, 5>* sums, double eta) const {
    const Vec& xq = xs_.points[q];
    std::vector<double> hidden, scratch;
    double s1 = 0.0, s2 = 0.0, s3 = 0.0, s4 = 0.0;
    std::vector<double> vc(n_), a3(n_);
    for (std::uint64_t r = 0; r < n_; ++r) {
      if (r == q) continue;
      const Vec& xr = xs_.points[r];
      vc[r] = forward_V(v_, xq, xr);
      const double d = (xq - xr).norm();
      a3[r] = classk_eval(bundle_, ClassK::kA3, d);
      const double lower = -vc[r] + classk_eval(bundle_, ClassK::kA1, d);
      const double upper = vc[r] - classk_eval(bundle_, ClassK::kA2, d);
      const Witness w{Family::kLowerBound, q, r, 0, 0};
      require(std::isfinite(vc[r]), ErrorKind::kNumericFault,
              "non-finite V at q=" + std::to_string(q) + " r=" + std::to_string(r));
      if (sums) {
        s1 += detail::hinge(lower - eta);
        s2 += detail::hinge(upper - eta);
      } else {
        fam[0].offer(lower, w);
        fam[1].offer(upper, Witness{Family::kUpperBound, q, r, 0, 0});
      }
    }
    std::vector<double> vals(m_);
    for (std::uint64_t r = 0; r < n_; ++r) {
      if (r == q) continue;
      double row_sum = 0.0;
      for (std::uint64_t a = 0; a < m_; ++a) {
        next_values(q * m_ + a, r, vals.data(), hidden, scratch);
        const double* sg = &sigma_[a * m_];
        for (std::uint64_t b = 0; b < m_; ++b) {
          const double lhs = ((vals[b] - vc[r]) + a3[r]) - sg[b];
          if (sums) {
            row_sum += detail::hinge(lhs - eta);
          } else if (lhs > fam[2].value || !fam[2].any) {
            fam[2].offer(lhs, Witness{Family::kDecrease, q, r, a, b});
          }
        }
      }
      if (sums) s3 += row_sum;
    }
    if (!sums) {
      const auto& d = fam[2];
      require(!d.any || std::isfinite(d.value), ErrorKind::kNumericFault,
              "non-finite decrease constraint in row q=" + std::to_string(q));
    }
    for (std::uint64_t a = 0; a < m_; ++a) {
      const double hn = h_next_[q * m_ + a];
      if (sums) {
        s4 += detail::hinge((hn - bundle_.kh * h_state_[q]) - eta);
      } else {
        fam[3].offer(hn - h_state_[q], Witness{Family::kBarrier, q, 0, a, 0});
      }
    }
    if (sums) *sums = {0.0, s1, s2, s3, s4};
  }

  void finish(const std::array<detail::RunningMax, kFamilies>& fam, EtaResult& res) const {
    detail::RunningMax all;
    for (int f = 0; f < kFamilies; ++f) {
      res.family_max[f] = fam[f].value;
      all.merge(fam[f]);
    }
    res.eta_star = all.value;
    res.witness = all.w;
    res.diag_residual = diag_residual();
  }

  const SystemSpec& sys_;
  const CoverDataset& xs_;
  const CoverDataset& ws_;
  ClassKBundle bundle_;
  const BarrierFn& barrier_;
  const MlpParams& v_;
  const MlpParams& g_;
  int threads_ = 1;
  std::uint64_t n_ = 0, m_ = 0;

  bool prepared_ = false;
  std::vector<Vec> next_;
  std::vector<double> h_next_, h_state_, sigma_;
  int h0_ = 0;
  std::vector<double> partial_, w0_tail_, w1_;
  double b1_ = 0.0;
  std::vector<Vec> features_;
};

inline EtaResult evaluate_eta(const SystemSpec& sys, const MlpParams& v, const MlpParams& g,
                              const CoverDataset& xs, const CoverDataset& ws,
                              const ClassKBundle& bundle, const BarrierFn& bf,
                              const EtaMode& mode, int threads = 1) {
  ScenarioEngine engine(sys, xs, ws, bundle, bf, v, g, threads);
  return mode.kind == EtaMode::kExhaustive ? engine.exhaustive()
                                           : engine.audit(mode.count, mode.seed);
}

// ---- composite Lipschitz constant -------------------------------------------

/// Target Lipschitz bounds of the two networks and of the barrier.
struct LipTargets {
  double lyapunov = 1.0;    // L_L
  double controller = 1.0;  // L_C
  double barrier = 1.0;     // L_h
};

struct LipschitzBreakdown {
  double lip_l = 0, lip_c = 0, lip_h = 0, lip_x = 0, lip_u = 0;
  double l1 = 0, l2 = 0, l3 = 0, lw = 0;
  double diam_x = 0, diam_w = 0;
  std::array<double, 4> terms{};
  double closed_loop_factor = 0;  // L_x + sqrt2 L_u L_C + 1
  double decrease_factor = 0;     // sqrt2 L_L (L_x + sqrt2 L_u L_C + 1)
  double L = 0;
  int argmax = 0;
};

inline LipschitzBreakdown composite_lipschitz(const LipTargets& lt, const ClassKBundle& k,
                                              const SystemSpec& sys) {
  LipschitzBreakdown b;
  b.lip_l = lt.lyapunov;
  b.lip_c = lt.controller;
  b.lip_h = lt.barrier;
  b.lip_x = sys.lip_x;
  b.lip_u = sys.lip_u;
  b.diam_x = sys.state_box.diameter();
  b.diam_w = sys.external_box.diameter();
  b.l1 = classk_lipschitz(k, ClassK::kA1, b.diam_x);
  b.l2 = classk_lipschitz(k, ClassK::kA2, b.diam_x);
  b.l3 = classk_lipschitz(k, ClassK::kA3, b.diam_x);
  b.lw = classk_lipschitz(k, ClassK::kSigma, b.diam_w);
  const double r2 = std::sqrt(2.0);
  b.closed_loop_factor = b.lip_x + r2 * b.lip_u * b.lip_c + 1.0;
  b.terms[0] = r2 * b.lip_l + 2.0 * b.l1;
  b.terms[1] = r2 * b.lip_l + 2.0 * b.l2;
  b.decrease_factor = r2 * b.lip_l * b.closed_loop_factor;
  b.terms[2] = b.decrease_factor + 2.0 * (b.l3 + b.lw);
  b.terms[3] = b.lip_h * b.closed_loop_factor;
  b.argmax = 0;
  for (int i = 1; i < 4; ++i) {
    if (b.terms[i] > b.terms[b.argmax]) b.argmax = i;
  }
  b.L = b.terms[b.argmax];
  return b;
}

inline double certificate_margin(double eta, double lipschitz, double eps) {
  return eta + lipschitz * eps;
}

// ---- certificate ------------------------------------------------------------

/// Externally reported (eta, L, eps) triple kept for comparison only. When
/// the reported margin was computed with a different radius than the one
/// stated for the run, `margin_eps` carries it and the mismatch is noted.
struct ReferenceTriple {
  double eta = 0;
  double L = 0;
  double eps = 0;
  std::optional<double> margin_eps;
  std::optional<double> stated_margin;
};

struct CertificateInputs {
  EtaResult eta;
  LipschitzBreakdown lipschitz;
  double eps_x = 0;
  double eps_u = 0;
  std::optional<LmiStatus> lmi;
  std::map<std::string, std::string> hashes;    // artifacts as loaded
  std::map<std::string, std::string> expected;  // as recorded upstream
  std::optional<ReferenceTriple> reference;
  std::vector<std::string> notes;
};

struct Certificate {
  nlohmann::ordered_json doc;
  double margin = 0;
  bool valid = false;
  std::vector<std::string> notes;

  std::string dump() const { return doc.dump(2) + "\n"; }
};

namespace detail {

inline nlohmann::ordered_json number(double v) {
  // Infinite or NaN values are spelled out; JSON has no literal for them.
  if (std::isfinite(v)) return v;
  return format_double(v);
}

}  // namespace detail

inline Certificate issue_certificate(const CertificateInputs& in) {
  for (const auto& [name, want] : in.expected) {
    const auto it = in.hashes.find(name);
    require(it != in.hashes.end(), ErrorKind::kProvenance,
            "certificate: no hash supplied for " + name);
    require(it->second == want, ErrorKind::kProvenance,
            "certificate: " + name + " hash " + it->second + " does not match recorded " + want);
  }
  Certificate c;
  c.notes = in.notes;
  const double eps = std::max(in.eps_x, in.eps_u);
  c.margin = certificate_margin(in.eta.eta_star, in.lipschitz.L, eps);
  const bool exhaustive = in.eta.mode.kind == EtaMode::kExhaustive;
  c.valid = exhaustive && c.margin <= 0.0;
  if (!exhaustive) c.notes.push_back("audit mode: sampled constraints cannot certify validity");

  using json = nlohmann::ordered_json;
  json d;
  d["format"] = "deltaiss-certificate";
  d["version"] = 1;
  d["eta_star"] = detail::number(in.eta.eta_star);
  d["eta_witness"] = {{"family", to_string(in.eta.witness.family)},
                      {"q", in.eta.witness.q},
                      {"r", in.eta.witness.r},
                      {"wq", in.eta.witness.wq},
                      {"wr", in.eta.witness.wr}};
  json fam = json::object();
  for (int f = 0; f < kFamilies; ++f) {
    fam[to_string(static_cast<Family>(f))] = {
        {"max", detail::number(in.eta.family_max[f])}, {"count", in.eta.family_count[f]}};
  }
  d["families"] = fam;
  const auto& lb = in.lipschitz;
  d["L_terms"] = {
      {"inputs",
       {{"lip_L", lb.lip_l}, {"lip_C", lb.lip_c}, {"lip_h", lb.lip_h}, {"lip_x", lb.lip_x},
        {"lip_u", lb.lip_u}, {"lip_1", lb.l1}, {"lip_2", lb.l2}, {"lip_3", lb.l3},
        {"lip_w", lb.lw}, {"diam_X", lb.diam_x}, {"diam_W", lb.diam_w}}},
      {"closed_loop_factor", lb.closed_loop_factor},
      {"decrease_factor", lb.decrease_factor},
      {"values", {lb.terms[0], lb.terms[1], lb.terms[2], lb.terms[3]}},
      {"argmax", lb.argmax}};
  d["L"] = lb.L;
  d["eps"] = eps;
  d["eps_x"] = in.eps_x;
  d["eps_u"] = in.eps_u;
  d["margin"] = detail::number(c.margin);
  d["valid"] = c.valid;
  json mode = {{"kind", exhaustive ? "exhaustive" : "audit"}};
  if (!exhaustive) {
    mode["count"] = in.eta.mode.count;
    mode["seed"] = in.eta.mode.seed;
  }
  mode["evaluated"] = in.eta.evaluated;
  d["mode"] = mode;
  d["diag_residual"] = in.eta.diag_residual;
  if (in.lmi) {
    auto side = [](const PdResult& p) {
      return json{{"pd", p.is_pd}, {"logdet", detail::number(p.logdet)}};
    };
    d["lmi"] = {{"lyapunov", side(in.lmi->v)}, {"controller", side(in.lmi->g)}};
  } else {
    d["lmi"] = nullptr;
  }
  json hashes = json::object();
  for (const auto& [k, v] : in.hashes) hashes[k] = v;
  d["hashes"] = hashes;

  if (in.reference) {
    const auto& r = *in.reference;
    const double stated_eps_margin = certificate_margin(r.eta, r.L, r.eps);
    json ref = {{"eta", r.eta}, {"L", r.L}, {"eps", r.eps},
                {"margin", stated_eps_margin}, {"L_full_formula", lb.L}};
    if (r.margin_eps) {
      const double alt = certificate_margin(r.eta, r.L, *r.margin_eps);
      ref["margin_eps"] = *r.margin_eps;
      ref["margin_at_margin_eps"] = alt;
      if (*r.margin_eps != r.eps) {
        c.notes.push_back("reference margin uses eps=" + format_double(*r.margin_eps) +
                          " but the stated covering radius is eps=" + format_double(r.eps) +
                          "; margins are " + format_double(alt) + " and " +
                          format_double(stated_eps_margin) + " respectively");
      }
    }
    if (r.stated_margin) ref["stated_margin"] = *r.stated_margin;
    if (r.L < lb.L) {
      c.notes.push_back("reference L=" + format_double(r.L) +
                        " is below the full-formula value " + format_double(lb.L));
    }
    d["reference"] = ref;
  }
  d["notes"] = c.notes;
  c.doc = std::move(d);
  return c;
}

// ---- dynamics Lipschitz estimate --------------------------------------------

struct DynamicsLipschitz {
  double lip_x = 0;
  double lip_u = 0;
  bool exceeds_x = false;
  bool exceeds_u = false;
  Box u_box;
};

/// Internal-input box used for sampling u: the controller saturation box if
/// configured, otherwise [-1, 1]^m.
inline Box estimator_input_box(const SystemSpec& sys) {
  return sys.internal_box ? *sys.internal_box : Box::uniform(sys.internal_input_dim, -1.0, 1.0);
}

/// Largest sampled difference quotients |f(x1,u)-f(x2,u)|/|x1-x2| and
/// |f(x,u1)-f(x,u2)|/|u1-u2|; lower bounds on the true constants.
inline DynamicsLipschitz estimate_dynamics_lipschitz(const SystemSpec& sys, std::size_t pairs,
                                                     std::uint64_t seed,
                                                     std::optional<Box> u_box = std::nullopt) {
  require(pairs >= 1, ErrorKind::kInvalidArgument, "estimator needs at least one pair");
  DynamicsLipschitz out;
  out.u_box = u_box ? *u_box : estimator_input_box(sys);
  Rng rng(substream_seed(seed, "dynamics-lipschitz"));
  for (std::size_t k = 0; k < pairs; ++k) {
    const Vec x1 = rng.uniform_in(sys.state_box);
    const Vec x2 = rng.uniform_in(sys.state_box);
    const Vec u1 = rng.uniform_in(out.u_box);
    const Vec u2 = rng.uniform_in(out.u_box);
    const double dx = (x1 - x2).norm();
    if (dx > 0) {
      out.lip_x = std::max(out.lip_x, (step(sys, x1, u1) - step(sys, x2, u1)).norm() / dx);
    }
    const double du = (u1 - u2).norm();
    if (du > 0) {
      out.lip_u = std::max(out.lip_u, (step(sys, x1, u1) - step(sys, x1, u2)).norm() / du);
    }
  }
  // Difference quotients of a linear channel carry rounding noise.
  out.exceeds_x = out.lip_x > sys.lip_x * (1.0 + 1e-6);
  out.exceeds_u = out.lip_u > sys.lip_u * (1.0 + 1e-6);
  return out;
}

}  // namespace deltaiss
