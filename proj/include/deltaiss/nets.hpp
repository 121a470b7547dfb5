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
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "deltaiss/common.hpp"
#include "deltaiss/random.hpp"

namespace deltaiss {

enum class Activation { kRelu, kTanh, kSigmoid };

inline const char* to_string(Activation a) {
  switch (a) {
    case Activation::kRelu: return "relu";
    case Activation::kTanh: return "tanh";
    case Activation::kSigmoid: return "sigmoid";
  }
  return "relu";
}

inline Activation parse_activation(const std::string& s) {
  if (s == "relu") return Activation::kRelu;
  if (s == "tanh") return Activation::kTanh;
  if (s == "sigmoid") return Activation::kSigmoid;
  fail(ErrorKind::kInvalidArgument, "unknown activation '" + s + "'");
}

/// Slope bounds (alpha, beta) of the activation's difference quotients.
inline std::pair<double, double> slope_bounds(Activation a) {
  switch (a) {
    case Activation::kRelu: return {0.0, 1.0};
    case Activation::kTanh: return {0.0, 1.0};
    case Activation::kSigmoid: return {0.0, 0.25};
  }
  return {0.0, 1.0};
}

inline double activate(Activation a, double v) {
  switch (a) {
    case Activation::kRelu: return v > 0.0 ? v : 0.0;
    case Activation::kTanh: return std::tanh(v);
    case Activation::kSigmoid: return 1.0 / (1.0 + std::exp(-v));
  }
  return v;
}

/// Derivative given the pre-activation v and the activation value y.
inline double activate_slope(Activation a, double v, double y) {
  switch (a) {
    case Activation::kRelu: return v > 0.0 ? 1.0 : 0.0;
    case Activation::kTanh: return 1.0 - y * y;
    case Activation::kSigmoid: return y * (1.0 - y);
  }
  return 1.0;
}

/// How a Lyapunov network consumes a state pair.
///   kConcat:            V(x, xh) = N([x; xh])
///   kSquaredDifference: V(x, xh) = |N(x) - N(xh)|^2
enum class PairForm { kConcat, kSquaredDifference };

inline const char* to_string(PairForm f) {
  return f == PairForm::kConcat ? "concat" : "squared_difference";
}

inline PairForm parse_pair_form(const std::string& s) {
  if (s == "concat") return PairForm::kConcat;
  if (s == "squared_difference") return PairForm::kSquaredDifference;
  fail(ErrorKind::kInvalidArgument, "unknown pair form '" + s + "'");
}

/// Feed-forward network: affine -> activation on every hidden layer, affine
/// output, optional hard saturation of the output.
struct MlpParams {
  std::vector<int> layer_sizes;
  std::vector<Mat> weights;  // weights[i]: layer_sizes[i+1] x layer_sizes[i]
  std::vector<Vec> biases;
  Activation activation = Activation::kRelu;
  std::optional<Box> output_clamp;
  PairForm pair_form = PairForm::kConcat;

  int input_dim() const { return layer_sizes.front(); }
  int output_dim() const { return layer_sizes.back(); }
  int layers() const { return static_cast<int>(weights.size()); }
  int hidden_layers() const { return layers() - 1; }

  int hidden_total() const {
    int total = 0;
    for (std::size_t i = 1; i + 1 < layer_sizes.size(); ++i) total += layer_sizes[i];
    return total;
  }

  std::size_t parameter_count() const {
    std::size_t c = 0;
    for (int i = 0; i < layers(); ++i) c += weights[i].size() + biases[i].size();
    return c;
  }

  std::pair<double, double> slopes() const { return slope_bounds(activation); }

  void validate() const {
    require(layer_sizes.size() >= 2, ErrorKind::kInvalidArgument,
            "network needs at least input and output layers");
    for (int s : layer_sizes) {
      require(s > 0, ErrorKind::kInvalidArgument, "layer sizes must be positive");
    }
    require(weights.size() + 1 == layer_sizes.size() &&
                biases.size() == weights.size(),
            ErrorKind::kInvalidArgument, "parameter list length mismatch");
    for (int i = 0; i < layers(); ++i) {
      require(weights[i].rows() == layer_sizes[i + 1] &&
                  weights[i].cols() == layer_sizes[i] &&
                  biases[i].size() == layer_sizes[i + 1],
              ErrorKind::kInvalidArgument,
              "layer " + std::to_string(i) + " shape does not chain");
      require(weights[i].allFinite() && biases[i].allFinite(),
              ErrorKind::kNumericFault,
              "layer " + std::to_string(i) + " has non-finite parameters");
    }
    if (output_clamp) {
      output_clamp->validate("output clamp");
      require(output_clamp->dim() == output_dim(), ErrorKind::kInvalidArgument,
              "output clamp dimension mismatch");
    }
  }
};

/// Zero-initialized parameter set with the given shape.
inline MlpParams zero_mlp(std::vector<int> sizes,
                          Activation activation = Activation::kRelu) {
  MlpParams net;
  net.layer_sizes = std::move(sizes);
  net.activation = activation;
  for (std::size_t i = 0; i + 1 < net.layer_sizes.size(); ++i) {
    net.weights.push_back(Mat::Zero(net.layer_sizes[i + 1], net.layer_sizes[i]));
    net.biases.push_back(Vec::Zero(net.layer_sizes[i + 1]));
  }
  return net;
}

/// Uniform in [-s, s] with s = scale / sqrt(fan_in), weights and biases.
inline MlpParams init_mlp(std::vector<int> sizes, Activation activation, Rng& rng,
                          double scale = 0.1) {
  MlpParams net = zero_mlp(std::move(sizes), activation);
  for (int l = 0; l < net.layers(); ++l) {
    const double s = scale / std::sqrt(static_cast<double>(net.layer_sizes[l]));
    for (Eigen::Index j = 0; j < net.weights[l].rows(); ++j) {
      for (Eigen::Index i = 0; i < net.weights[l].cols(); ++i) {
        net.weights[l](j, i) = rng.uniform(-s, s);
      }
      net.biases[l][j] = rng.uniform(-s, s);
    }
  }
  return net;
}

/// Values recorded by a forward pass; post[0] is the input.
struct MlpTrace {
  std::vector<Vec> pre;
  std::vector<Vec> post;
  Vec raw_output;
  Vec output;
};

namespace detail {

inline constexpr int kSequentialDotMax = 8;

// bias + sum_i w[i * stride] t[i]. Short sums accumulate onto the bias in
// increasing i; longer ones use four interleaved partial sums combined as
// bias + ((s0 + s1) + (s2 + s3)). Every evaluation path in the library goes
// through this function, so all of them round identically.
inline double biased_dot(double bias, const double* w, std::ptrdiff_t stride,
                         const double* t, int n) {
  if (n <= kSequentialDotMax) {
    double acc = bias;
    for (int i = 0; i < n; ++i) acc += w[i * stride] * t[i];
    return acc;
  }
  double s0 = 0.0, s1 = 0.0, s2 = 0.0, s3 = 0.0;
  int i = 0;
  for (; i + 4 <= n; i += 4) {
    s0 += w[i * stride] * t[i];
    s1 += w[(i + 1) * stride] * t[i + 1];
    s2 += w[(i + 2) * stride] * t[i + 2];
    s3 += w[(i + 3) * stride] * t[i + 3];
  }
  if (i < n) s0 += w[i * stride] * t[i];
  if (i + 1 < n) s1 += w[(i + 1) * stride] * t[i + 1];
  if (i + 2 < n) s2 += w[(i + 2) * stride] * t[i + 2];
  return bias + ((s0 + s1) + (s2 + s3));
}

inline void affine(const Mat& w, const Vec& b, const Vec& t, Vec& out) {
  out.resize(w.rows());
  const auto cols = static_cast<int>(w.cols());
  for (Eigen::Index j = 0; j < w.rows(); ++j) {
    out[j] = biased_dot(b[j], w.data() + j, w.rows(), t.data(), cols);
  }
}

inline Vec apply_clamp(const std::optional<Box>& clamp, const Vec& raw) {
  if (!clamp) return raw;
  Vec out = raw;
  for (Eigen::Index k = 0; k < raw.size(); ++k) {
    if (raw[k] <= clamp->lo[k]) {
      out[k] = clamp->lo[k];
    } else if (raw[k] >= clamp->hi[k]) {
      out[k] = clamp->hi[k];
    }
  }
  return out;
}

}  // namespace detail

inline Vec mlp_forward(const MlpParams& net, const Vec& input, MlpTrace* trace = nullptr) {
  require(input.size() == net.input_dim(), ErrorKind::kInvalidArgument,
          "network input has length " + std::to_string(input.size()) +
              ", expected " + std::to_string(net.input_dim()));
  Vec t = input, v;
  if (trace) {
    trace->pre.clear();
    trace->post.clear();
    trace->post.push_back(input);
  }
  for (int l = 0; l < net.hidden_layers(); ++l) {
    detail::affine(net.weights[l], net.biases[l], t, v);
    t.resize(v.size());
    for (Eigen::Index j = 0; j < v.size(); ++j) t[j] = activate(net.activation, v[j]);
    if (trace) {
      trace->pre.push_back(v);
      trace->post.push_back(t);
    }
  }
  Vec raw;
  detail::affine(net.weights.back(), net.biases.back(), t, raw);
  Vec out = detail::apply_clamp(net.output_clamp, raw);
  if (trace) {
    trace->raw_output = raw;
    trace->output = out;
  }
  return out;
}

/// Parameter-shaped gradient accumulator.
struct GradientBundle {
  std::vector<Mat> weights;
  std::vector<Vec> biases;
  double loss = 0.0;

  static GradientBundle zeros_like(const MlpParams& net) {
    GradientBundle g;
    for (int l = 0; l < net.layers(); ++l) {
      g.weights.push_back(Mat::Zero(net.weights[l].rows(), net.weights[l].cols()));
      g.biases.push_back(Vec::Zero(net.biases[l].size()));
    }
    return g;
  }

  void add(const GradientBundle& o) {
    for (std::size_t l = 0; l < weights.size(); ++l) {
      weights[l] += o.weights[l];
      biases[l] += o.biases[l];
    }
    loss += o.loss;
  }

  /// Throws numeric-fault naming the first layer with a non-finite entry.
  void check_finite(const std::string& net_name) const {
    for (std::size_t l = 0; l < weights.size(); ++l) {
      require(weights[l].allFinite() && biases[l].allFinite(),
              ErrorKind::kNumericFault,
              net_name + ": non-finite gradient in layer " + std::to_string(l));
    }
  }
};

/// Reverse pass for one recorded evaluation. Accumulates parameter gradients
/// into `grads` and, when requested, returns d(loss)/d(input).
inline void mlp_backprop(const MlpParams& net, const MlpTrace& trace,
                         const Vec& d_output, GradientBundle& grads,
                         Vec* d_input = nullptr) {
  Vec delta = d_output;
  if (net.output_clamp) {
    for (Eigen::Index k = 0; k < delta.size(); ++k) {
      const double raw = trace.raw_output[k];
      if (raw <= net.output_clamp->lo[k] || raw >= net.output_clamp->hi[k]) {
        delta[k] = 0.0;
      }
    }
  }
  for (int l = net.layers() - 1; l >= 0; --l) {
    const Vec& input = trace.post[l];
    grads.weights[l].noalias() += delta * input.transpose();
    grads.biases[l] += delta;
    if (l == 0 && d_input == nullptr) break;
    Vec back = net.weights[l].transpose() * delta;
    if (l == 0) {
      *d_input = std::move(back);
      break;
    }
    const Vec& pre = trace.pre[l - 1];
    for (Eigen::Index j = 0; j < back.size(); ++j) {
      back[j] *= activate_slope(net.activation, pre[j], input[j]);
    }
    delta = std::move(back);
  }
}

// ---- Lyapunov and controller networks -------------------------------------

inline int v_input_dim(PairForm form, int state_dim) {
  return form == PairForm::kConcat ? 2 * state_dim : state_dim;
}

struct VTrace {
  MlpTrace first;   // concat: the single pass; squared difference: N(x)
  MlpTrace second;  // squared difference only: N(xh)
};

inline double forward_V(const MlpParams& v, const Vec& x, const Vec& xhat,
                        VTrace* trace = nullptr) {
  require(x.size() == xhat.size(), ErrorKind::kInvalidArgument,
          "forward_V: state lengths differ");
  require(v.output_dim() == 1 || v.pair_form == PairForm::kSquaredDifference,
          ErrorKind::kInvalidArgument, "forward_V: concat network must be scalar");
  if (v.pair_form == PairForm::kConcat) {
    Vec t(x.size() + xhat.size());
    t << x, xhat;
    return mlp_forward(v, t, trace ? &trace->first : nullptr)[0];
  }
  const Vec a = mlp_forward(v, x, trace ? &trace->first : nullptr);
  const Vec b = mlp_forward(v, xhat, trace ? &trace->second : nullptr);
  double s = 0.0;
  for (Eigen::Index k = 0; k < a.size(); ++k) {
    const double d = a[k] - b[k];
    s += d * d;
  }
  return s;
}

/// Backprop of dV scaled by `scale`; optionally returns d/dx and d/dxhat.
inline void backprop_V(const MlpParams& v, const VTrace& trace, double scale,
                       GradientBundle& grads, Vec* dx = nullptr,
                       Vec* dxhat = nullptr) {
  if (v.pair_form == PairForm::kConcat) {
    Vec dout = Vec::Constant(1, scale);
    if (dx || dxhat) {
      Vec din;
      mlp_backprop(v, trace.first, dout, grads, &din);
      const Eigen::Index n = din.size() / 2;
      if (dx) *dx = din.head(n);
      if (dxhat) *dxhat = din.tail(n);
    } else {
      mlp_backprop(v, trace.first, dout, grads);
    }
    return;
  }
  const Vec diff = trace.first.output - trace.second.output;
  const Vec da = 2.0 * scale * diff;
  const Vec db = -da;
  mlp_backprop(v, trace.first, da, grads, dx);
  mlp_backprop(v, trace.second, db, grads, dxhat);
}

inline Vec forward_g(const MlpParams& g, const Vec& x, const Vec& w,
                     MlpTrace* trace = nullptr) {
  Vec t(x.size() + w.size());
  t << x, w;
  return mlp_forward(g, t, trace);
}

// ---- parameter packing ------------------------------------------------------

inline void pack_params(const MlpParams& net, std::vector<double>& out) {
  for (int l = 0; l < net.layers(); ++l) {
    for (Eigen::Index j = 0; j < net.weights[l].rows(); ++j) {
      for (Eigen::Index i = 0; i < net.weights[l].cols(); ++i) {
        out.push_back(net.weights[l](j, i));
      }
    }
    for (Eigen::Index j = 0; j < net.biases[l].size(); ++j) out.push_back(net.biases[l][j]);
  }
}

inline void pack_grads(const GradientBundle& g, std::vector<double>& out) {
  for (std::size_t l = 0; l < g.weights.size(); ++l) {
    for (Eigen::Index j = 0; j < g.weights[l].rows(); ++j) {
      for (Eigen::Index i = 0; i < g.weights[l].cols(); ++i) {
        out.push_back(g.weights[l](j, i));
      }
    }
    for (Eigen::Index j = 0; j < g.biases[l].size(); ++j) out.push_back(g.biases[l][j]);
  }
}

/// Reads parameters back in pack order starting at `pos`; advances it.
inline void unpack_params(MlpParams& net, const std::vector<double>& in, std::size_t& pos) {
  for (int l = 0; l < net.layers(); ++l) {
    for (Eigen::Index j = 0; j < net.weights[l].rows(); ++j) {
      for (Eigen::Index i = 0; i < net.weights[l].cols(); ++i) {
        net.weights[l](j, i) = in[pos++];
      }
    }
    for (Eigen::Index j = 0; j < net.biases[l].size(); ++j) net.biases[l][j] = in[pos++];
  }
}

// ---- empirical Lipschitz ----------------------------------------------------

/// Max difference quotient over uniformly drawn pairs: a lower bound on the
/// network's Lipschitz constant over `domain` (Euclidean on both sides).
inline double empirical_lipschitz(const MlpParams& net, const Box& domain,
                                  std::size_t pairs, std::uint64_t seed) {
  require(pairs >= 1, ErrorKind::kInvalidArgument, "empirical_lipschitz: pairs >= 1");
  require(domain.dim() == net.input_dim(), ErrorKind::kInvalidArgument,
          "empirical_lipschitz: domain dimension mismatch");
  Rng rng(seed);
  double best = 0.0;
  for (std::size_t k = 0; k < pairs; ++k) {
    const Vec a = rng.uniform_in(domain);
    const Vec b = rng.uniform_in(domain);
    const double dist = (a - b).norm();
    if (dist == 0.0) continue;
    const double q = (mlp_forward(net, a) - mlp_forward(net, b)).norm() / dist;
    best = std::max(best, q);
  }
  return best;
}

// ---- JSON persistence -------------------------------------------------------

inline constexpr int kWeightsFormatVersion = 1;

inline nlohmann::ordered_json mlp_to_json_unhashed(const MlpParams& net) {
  nlohmann::ordered_json j;
  j["format_version"] = kWeightsFormatVersion;
  j["layer_sizes"] = net.layer_sizes;
  j["activation"] = to_string(net.activation);
  j["pair_form"] = to_string(net.pair_form);
  if (net.output_clamp) {
    const Box& c = *net.output_clamp;
    j["clamp"]["lo"] = std::vector<double>(c.lo.data(), c.lo.data() + c.dim());
    j["clamp"]["hi"] = std::vector<double>(c.hi.data(), c.hi.data() + c.dim());
  } else {
    j["clamp"] = nullptr;
  }
  auto weights = nlohmann::ordered_json::array();
  auto biases = nlohmann::ordered_json::array();
  for (int l = 0; l < net.layers(); ++l) {
    auto rows = nlohmann::ordered_json::array();
    for (Eigen::Index r = 0; r < net.weights[l].rows(); ++r) {
      std::vector<double> row(static_cast<std::size_t>(net.weights[l].cols()));
      for (Eigen::Index c = 0; c < net.weights[l].cols(); ++c) row[c] = net.weights[l](r, c);
      rows.push_back(row);
    }
    weights.push_back(rows);
    biases.push_back(std::vector<double>(net.biases[l].data(),
                                         net.biases[l].data() + net.biases[l].size()));
  }
  j["weights"] = weights;
  j["biases"] = biases;
  return j;
}

inline std::string mlp_content_hash(const MlpParams& net) {
  return sha256_hex(mlp_to_json_unhashed(net).dump());
}

inline nlohmann::ordered_json mlp_to_json(const MlpParams& net) {
  auto j = mlp_to_json_unhashed(net);
  j["content_hash"] = sha256_hex(j.dump());
  return j;
}

inline MlpParams mlp_from_json(const nlohmann::json& j) {
  require(j.at("format_version").get<int>() == kWeightsFormatVersion,
          ErrorKind::kInvalidArgument, "unsupported weights format version");
  MlpParams net = zero_mlp(j.at("layer_sizes").get<std::vector<int>>(),
                           parse_activation(j.at("activation").get<std::string>()));
  net.pair_form = parse_pair_form(j.value("pair_form", std::string("concat")));
  if (!j.at("clamp").is_null()) {
    auto lo = j.at("clamp").at("lo").get<std::vector<double>>();
    auto hi = j.at("clamp").at("hi").get<std::vector<double>>();
    net.output_clamp = Box(Eigen::Map<Vec>(lo.data(), static_cast<Eigen::Index>(lo.size())),
                           Eigen::Map<Vec>(hi.data(), static_cast<Eigen::Index>(hi.size())));
  }
  const auto& weights = j.at("weights");
  const auto& biases = j.at("biases");
  require(static_cast<int>(weights.size()) == net.layers() &&
              static_cast<int>(biases.size()) == net.layers(),
          ErrorKind::kInvalidArgument, "weights: layer count mismatch");
  for (int l = 0; l < net.layers(); ++l) {
    const auto& rows = weights[l];
    require(static_cast<Eigen::Index>(rows.size()) == net.weights[l].rows(),
            ErrorKind::kInvalidArgument, "weights: row count mismatch");
    for (Eigen::Index r = 0; r < net.weights[l].rows(); ++r) {
      auto row = rows[r].get<std::vector<double>>();
      require(static_cast<Eigen::Index>(row.size()) == net.weights[l].cols(),
              ErrorKind::kInvalidArgument, "weights: column count mismatch");
      for (Eigen::Index c = 0; c < net.weights[l].cols(); ++c) net.weights[l](r, c) = row[c];
    }
    auto b = biases[l].get<std::vector<double>>();
    require(static_cast<Eigen::Index>(b.size()) == net.biases[l].size(),
            ErrorKind::kInvalidArgument, "biases: length mismatch");
    for (Eigen::Index k = 0; k < net.biases[l].size(); ++k) net.biases[l][k] = b[k];
  }
  net.validate();
  if (j.contains("content_hash")) {
    require(j.at("content_hash").get<std::string>() == mlp_content_hash(net),
            ErrorKind::kProvenance, "weights content hash mismatch");
  }
  return net;
}

}  // namespace deltaiss
