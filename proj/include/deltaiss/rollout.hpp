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
#include <cmath>
#include <cstdio>
#include <string>
#include <vector>

#include "deltaiss/common.hpp"
#include "deltaiss/nets.hpp"
#include "deltaiss/parallel.hpp"
#include "deltaiss/random.hpp"
#include "deltaiss/systems.hpp"

namespace deltaiss {

/// Closed-loop run x(k+1) = f(x(k), g(x(k), w(k))). Exits from the state box
/// are recorded, not raised.
struct Trajectory {
  std::vector<Vec> states;     // K + 1
  std::vector<Vec> inputs;     // K, applied u(k)
  std::vector<Vec> externals;  // K
  std::string plant;
  std::string controller_hash;
  std::vector<std::size_t> exits;  // step indices k with states[k] outside X

  std::size_t steps() const { return externals.size(); }
};

inline Trajectory simulate(const SystemSpec& sys, const MlpParams& g, const Vec& x0,
                           const std::vector<Vec>& w_seq, const std::string& g_hash = "") {
  require(x0.size() == sys.state_dim, ErrorKind::kInvalidArgument,
          "simulate: initial state has wrong dimension");
  require(sys.state_box.contains(x0, 1e-12), ErrorKind::kInvalidArgument,
          "simulate: initial state lies outside the state box");
  for (std::size_t k = 0; k < w_seq.size(); ++k) {
    require(w_seq[k].size() == sys.external_input_dim &&
                sys.external_box.contains(w_seq[k], 1e-12),
            ErrorKind::kInvalidArgument,
            "simulate: external input " + std::to_string(k) + " outside its box");
  }
  Trajectory t;
  t.plant = sys.name;
  t.controller_hash = g_hash;
  t.states.reserve(w_seq.size() + 1);
  t.states.push_back(x0);
  t.inputs.reserve(w_seq.size());
  t.externals = w_seq;
  for (std::size_t k = 0; k < w_seq.size(); ++k) {
    const Vec& x = t.states.back();
    Vec u = forward_g(g, x, w_seq[k]);
    Vec next = sys.step_fn(x, u);
    require(next.size() == sys.state_dim && next.allFinite(), ErrorKind::kNumericFault,
            "simulate: non-finite state at step " + std::to_string(k + 1));
    if (!sys.state_box.contains(next)) t.exits.push_back(k + 1);
    t.inputs.push_back(std::move(u));
    t.states.push_back(std::move(next));
  }
  return t;
}

// ---- external input generators ---------------------------------------------

inline std::vector<Vec> constant_inputs(const Vec& value, std::size_t steps) {
  return std::vector<Vec>(steps, value);
}

/// w(k) = amplitude * -sin(k) in every coordinate.
inline std::vector<Vec> negative_sine_inputs(int dim, std::size_t steps, double amplitude = 1.0) {
  std::vector<Vec> w(steps);
  for (std::size_t k = 0; k < steps; ++k) {
    w[k] = Vec::Constant(dim, -amplitude * std::sin(static_cast<double>(k)));
  }
  return w;
}

/// w(k) = amplitude * cos^2(k / 2) in every coordinate.
inline std::vector<Vec> cos_squared_inputs(int dim, std::size_t steps, double amplitude = 1.0) {
  std::vector<Vec> w(steps);
  for (std::size_t k = 0; k < steps; ++k) {
    const double c = std::cos(0.5 * static_cast<double>(k));
    w[k] = Vec::Constant(dim, amplitude * c * c);
  }
  return w;
}

inline std::vector<Vec> uniform_inputs(const Box& box, std::size_t steps, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<Vec> w(steps);
  for (auto& v : w) v = rng.uniform_in(box);
  return w;
}

// ---- paired diagnostics ------------------------------------------------------

struct DivergencePoint {
  std::size_t k = 0;
  double gap = 0;
  double v = 0;
};

inline std::vector<DivergencePoint> divergence_metrics(const Trajectory& a, const Trajectory& b,
                                                       const MlpParams& v_net) {
  require(a.states.size() == b.states.size(), ErrorKind::kInvalidArgument,
          "divergence_metrics: trajectories differ in length");
  require(a.plant == b.plant, ErrorKind::kInvalidArgument,
          "divergence_metrics: trajectories come from different plants");
  std::vector<DivergencePoint> out(a.states.size());
  for (std::size_t k = 0; k < a.states.size(); ++k) {
    out[k].k = k;
    out[k].gap = (a.states[k] - b.states[k]).norm();
    out[k].v = forward_V(v_net, a.states[k], b.states[k]);
  }
  return out;
}

/// Median of gap(K) / gap(0) over pairs with a nonzero initial gap.
inline double median_gap_ratio(const std::vector<std::vector<DivergencePoint>>& series) {
  std::vector<double> ratios;
  for (const auto& s : series) {
    if (s.empty() || s.front().gap == 0.0) continue;
    ratios.push_back(s.back().gap / s.front().gap);
  }
  require(!ratios.empty(), ErrorKind::kInvalidArgument, "median_gap_ratio: no usable pairs");
  std::sort(ratios.begin(), ratios.end());
  const std::size_t n = ratios.size();
  return n % 2 ? ratios[n / 2] : 0.5 * (ratios[n / 2 - 1] + ratios[n / 2]);
}

/// Fraction of steps at which V(x(k+1), xh(k+1)) <= V(x(k), xh(k)) + slack.
inline double nonincreasing_fraction(const std::vector<DivergencePoint>& s, double slack = 0.0) {
  if (s.size() < 2) return 1.0;
  std::size_t ok = 0;
  for (std::size_t k = 0; k + 1 < s.size(); ++k) ok += s[k + 1].v <= s[k].v + slack ? 1 : 0;
  return static_cast<double>(ok) / static_cast<double>(s.size() - 1);
}

struct RolloutJob {
  Vec x0;
  std::vector<Vec> w;
};

/// Independent rollouts on up to `threads` workers; results in job order.
inline std::vector<Trajectory> run_rollouts(const SystemSpec& sys, const MlpParams& g,
                                            const std::vector<RolloutJob>& jobs,
                                            int threads = 1) {
  std::vector<Trajectory> out(jobs.size());
  parallel_for(jobs.size(), threads,
               [&](std::size_t i) { out[i] = simulate(sys, g, jobs[i].x0, jobs[i].w); });
  return out;
}

// ---- persistence ---------------------------------------------------------------

inline std::string trajectory_csv(const Trajectory& t) {
  const int n = t.states.empty() ? 0 : static_cast<int>(t.states[0].size());
  const int m = t.inputs.empty() ? 0 : static_cast<int>(t.inputs[0].size());
  const int p = t.externals.empty() ? 0 : static_cast<int>(t.externals[0].size());
  std::string out = "k";
  for (int i = 0; i < n; ++i) out += ",x" + std::to_string(i);
  for (int i = 0; i < m; ++i) out += ",u" + std::to_string(i);
  for (int i = 0; i < p; ++i) out += ",w" + std::to_string(i);
  out += "\n";
  for (std::size_t k = 0; k < t.states.size(); ++k) {
    out += std::to_string(k);
    for (int i = 0; i < n; ++i) out += "," + format_double(t.states[k][i]);
    for (int i = 0; i < m; ++i) {
      out += "," + (k < t.inputs.size() ? format_double(t.inputs[k][i]) : std::string());
    }
    for (int i = 0; i < p; ++i) {
      out += "," + (k < t.externals.size() ? format_double(t.externals[k][i]) : std::string());
    }
    out += "\n";
  }
  return out;
}

inline std::string metrics_csv(const std::vector<DivergencePoint>& s) {
  std::string out = "k,gap,V\n";
  for (const auto& d : s) {
    out += std::to_string(d.k) + "," + format_double(d.gap) + "," + format_double(d.v) + "\n";
  }
  return out;
}

struct SvgSeries {
  std::string label;
  std::vector<double> x;
  std::vector<double> y;
};

/// Self-contained SVG line chart. Output depends only on the data.
inline std::string svg_line_chart(const std::string& title, const std::string& x_label,
                                  const std::string& y_label,
                                  const std::vector<SvgSeries>& series, bool log_y = false) {
  static const char* kColors[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e",
                                  "#9467bd", "#8c564b", "#17becf", "#7f7f7f"};
  const double w = 640, h = 360, ml = 70, mr = 20, mt = 36, mb = 48;
  auto ty = [&](double v) { return log_y ? std::log10(std::max(v, 1e-300)) : v; };
  double x0 = 0, x1 = 1, y0 = 0, y1 = 1;
  bool first = true;
  for (const auto& s : series) {
    for (std::size_t i = 0; i < s.x.size() && i < s.y.size(); ++i) {
      const double yv = ty(s.y[i]);
      if (!std::isfinite(s.x[i]) || !std::isfinite(yv)) continue;
      if (first) {
        x0 = x1 = s.x[i];
        y0 = y1 = yv;
        first = false;
      }
      x0 = std::min(x0, s.x[i]);
      x1 = std::max(x1, s.x[i]);
      y0 = std::min(y0, yv);
      y1 = std::max(y1, yv);
    }
  }
  if (x1 == x0) x1 = x0 + 1;
  if (y1 == y0) y1 = y0 + 1;
  auto fmt = [](double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.2f", v);
    return std::string(buf);
  };
  auto label = [](double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.3g", v);
    return std::string(buf);
  };
  auto px = [&](double v) { return ml + (v - x0) / (x1 - x0) * (w - ml - mr); };
  auto py = [&](double v) { return h - mb - (v - y0) / (y1 - y0) * (h - mt - mb); };
  std::string out = "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + fmt(w) +
                    "\" height=\"" + fmt(h) + "\" font-family=\"sans-serif\" font-size=\"11\">\n";
  out += "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  out += "<text x=\"" + fmt(w / 2) + "\" y=\"20\" text-anchor=\"middle\" font-size=\"13\">" +
         title + "</text>\n";
  out += "<line x1=\"" + fmt(ml) + "\" y1=\"" + fmt(h - mb) + "\" x2=\"" + fmt(w - mr) +
         "\" y2=\"" + fmt(h - mb) + "\" stroke=\"black\"/>\n";
  out += "<line x1=\"" + fmt(ml) + "\" y1=\"" + fmt(mt) + "\" x2=\"" + fmt(ml) + "\" y2=\"" +
         fmt(h - mb) + "\" stroke=\"black\"/>\n";
  for (int i = 0; i <= 4; ++i) {
    const double xv = x0 + (x1 - x0) * i / 4.0;
    const double yv = y0 + (y1 - y0) * i / 4.0;
    out += "<text x=\"" + fmt(px(xv)) + "\" y=\"" + fmt(h - mb + 14) +
           "\" text-anchor=\"middle\">" + label(xv) + "</text>\n";
    out += "<text x=\"" + fmt(ml - 4) + "\" y=\"" + fmt(py(yv) + 4) +
           "\" text-anchor=\"end\">" + (log_y ? "1e" + label(yv) : label(yv)) + "</text>\n";
  }
  out += "<text x=\"" + fmt(w / 2) + "\" y=\"" + fmt(h - 10) + "\" text-anchor=\"middle\">" +
         x_label + "</text>\n";
  out += "<text x=\"14\" y=\"" + fmt(h / 2) + "\" transform=\"rotate(-90 14 " + fmt(h / 2) +
         ")\" text-anchor=\"middle\">" + y_label + "</text>\n";
  for (std::size_t s = 0; s < series.size(); ++s) {
    const char* color = kColors[s % 8];
    std::string pts;
    for (std::size_t i = 0; i < series[s].x.size() && i < series[s].y.size(); ++i) {
      const double yv = ty(series[s].y[i]);
      if (!std::isfinite(series[s].x[i]) || !std::isfinite(yv)) continue;
      pts += fmt(px(series[s].x[i])) + "," + fmt(py(yv)) + " ";
    }
    out += "<polyline fill=\"none\" stroke=\"" + std::string(color) +
           "\" stroke-width=\"1.2\" points=\"" + pts + "\"/>\n";
    out += "<text x=\"" + fmt(w - mr - 4) + "\" y=\"" + fmt(mt + 12 + 13.0 * s) +
           "\" text-anchor=\"end\" fill=\"" + color + "\">" + series[s].label + "</text>\n";
  }
  out += "</svg>\n";
  return out;
}

}  // namespace deltaiss
