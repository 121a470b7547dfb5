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
#include <functional>
#include <map>
#include <numbers>
#include <optional>
#include <string>

#include <Eigen/SVD>

#include "deltaiss/common.hpp"

namespace deltaiss {

using StepFn = std::function<Vec(const Vec& x, const Vec& u)>;
using JacobianFn = std::function<Mat(const Vec& x, const Vec& u)>;

/// A black-box discrete-time plant x' = f(x, u) on compact boxes.
struct SystemSpec {
  std::string name;
  int state_dim = 0;           // n
  int internal_input_dim = 0;  // m
  int external_input_dim = 0;  // p
  Box state_box;
  Box external_box;
  std::optional<Box> internal_box;  // controller saturation, if configured
  double tau = 0.0;
  double lip_x = 0.0;
  double lip_u = 0.0;
  StepFn step_fn;
  JacobianFn input_jac;  // optional
  std::map<std::string, double> params;

  void validate() const {
    require(state_dim > 0 && internal_input_dim > 0 && external_input_dim > 0,
            ErrorKind::kInvalidArgument, name + ": dimensions must be positive");
    state_box.validate(name + " state box");
    external_box.validate(name + " external box");
    require(state_box.dim() == state_dim, ErrorKind::kInvalidArgument,
            name + ": state box has wrong dimension");
    require(external_box.dim() == external_input_dim,
            ErrorKind::kInvalidArgument,
            name + ": external box has wrong dimension");
    if (internal_box) {
      internal_box->validate(name + " internal box");
      require(internal_box->dim() == internal_input_dim,
              ErrorKind::kInvalidArgument,
              name + ": internal box has wrong dimension");
    }
    require(tau > 0 && lip_x > 0 && lip_u > 0, ErrorKind::kInvalidArgument,
            name + ": tau, lip_x and lip_u must be positive");
    require(static_cast<bool>(step_fn), ErrorKind::kInvalidArgument,
            name + ": missing step map");
  }
};

inline Vec step(const SystemSpec& sys, const Vec& x, const Vec& u) {
  require(x.size() == sys.state_dim && u.size() == sys.internal_input_dim,
          ErrorKind::kInvalidArgument,
          sys.name + ": step expects x of length " +
              std::to_string(sys.state_dim) + " and u of length " +
              std::to_string(sys.internal_input_dim));
  Vec next = sys.step_fn(x, u);
  require(next.size() == sys.state_dim && next.allFinite(),
          ErrorKind::kNumericFault, sys.name + ": non-finite successor state");
  return next;
}

enum class JacobianMode { kAuto, kAnalytic, kFiniteDifference };

inline const char* to_string(JacobianMode mode) {
  switch (mode) {
    case JacobianMode::kAuto: return "auto";
    case JacobianMode::kAnalytic: return "analytic";
    case JacobianMode::kFiniteDifference: return "finite_difference";
  }
  return "auto";
}

/// Central differences with h = 1e-5 * max(1, |u|_inf).
inline Mat finite_difference_input_jacobian(const SystemSpec& sys,
                                            const Vec& x, const Vec& u) {
  const double h = 1e-5 * std::max(1.0, u.cwiseAbs().maxCoeff());
  Mat jac(sys.state_dim, sys.internal_input_dim);
  Vec up = u, um = u;
  for (int j = 0; j < sys.internal_input_dim; ++j) {
    up[j] = u[j] + h;
    um[j] = u[j] - h;
    jac.col(j) = (step(sys, x, up) - step(sys, x, um)) / (2.0 * h);
    up[j] = u[j];
    um[j] = u[j];
  }
  return jac;
}

/// df/du at (x, u), n x m.
inline Mat input_jacobian(const SystemSpec& sys, const Vec& x, const Vec& u,
                          JacobianMode mode = JacobianMode::kAuto) {
  require(x.size() == sys.state_dim && u.size() == sys.internal_input_dim,
          ErrorKind::kInvalidArgument, sys.name + ": jacobian dimension mismatch");
  Mat jac;
  if (mode == JacobianMode::kFiniteDifference ||
      (mode == JacobianMode::kAuto && !sys.input_jac)) {
    jac = finite_difference_input_jacobian(sys, x, u);
  } else {
    require(static_cast<bool>(sys.input_jac), ErrorKind::kInvalidArgument,
            sys.name + ": no analytic input jacobian");
    jac = sys.input_jac(x, u);
  }
  require(jac.rows() == sys.state_dim && jac.cols() == sys.internal_input_dim &&
              jac.allFinite(),
          ErrorKind::kNumericFault, sys.name + ": non-finite input jacobian");
  return jac;
}

namespace detail {

inline double param(const std::map<std::string, double>& p,
                    const std::string& key, double fallback) {
  auto it = p.find(key);
  return it == p.end() ? fallback : it->second;
}

inline void reject_unknown(const std::map<std::string, double>& p,
                           std::initializer_list<const char*> known,
                           const std::string& family) {
  for (const auto& [key, value] : p) {
    bool ok = false;
    for (const char* k : known) ok = ok || key == k;
    require(ok, ErrorKind::kInvalidArgument,
            "unknown parameter '" + key + "' for plant " + family);
  }
}

}  // namespace detail

// x+ = x + tau (a sin x + tan u)
inline SystemSpec make_scalar(const std::map<std::string, double>& p = {}) {
  detail::reject_unknown(p, {"a", "tau"}, "scalar");
  const double a = detail::param(p, "a", 0.1);
  const double tau = detail::param(p, "tau", 0.01);
  SystemSpec s;
  s.name = "scalar";
  s.state_dim = s.internal_input_dim = s.external_input_dim = 1;
  s.state_box = Box::uniform(1, -std::numbers::pi / 2, std::numbers::pi / 2);
  s.external_box = Box::uniform(1, -1.0, 1.0);
  s.tau = tau;
  s.lip_x = 1.0;
  s.lip_u = 0.01;
  s.params = {{"a", a}, {"tau", tau}};
  s.step_fn = [a, tau](const Vec& x, const Vec& u) {
    Vec out(1);
    out[0] = x[0] + tau * (a * std::sin(x[0]) + std::tan(u[0]));
    return out;
  };
  s.input_jac = [tau](const Vec&, const Vec& u) {
    const double c = std::cos(u[0]);
    Mat j(1, 1);
    j(0, 0) = tau / (c * c);
    return j;
  };
  return s;
}

// Single-link manipulator: angle/velocity with viscous damping.
inline SystemSpec make_manipulator(const std::map<std::string, double>& p = {}) {
  detail::reject_unknown(p, {"M", "b", "tau"}, "manipulator");
  const double mass = detail::param(p, "M", 1.0);
  const double damping = detail::param(p, "b", 0.1);
  const double tau = detail::param(p, "tau", 0.01);
  SystemSpec s;
  s.name = "manipulator";
  s.state_dim = 2;
  s.internal_input_dim = s.external_input_dim = 1;
  s.state_box = Box::uniform(2, -std::numbers::pi / 4, std::numbers::pi / 4);
  s.external_box = Box::uniform(1, -0.5, 0.5);
  s.tau = tau;
  s.lip_x = 1.01;
  s.lip_u = 0.01;
  s.params = {{"M", mass}, {"b", damping}, {"tau", tau}};
  s.step_fn = [=](const Vec& x, const Vec& u) {
    Vec out(2);
    out[0] = x[0] + tau * x[1];
    out[1] = x[1] + tau * ((u[0] - damping * x[1]) / mass);
    return out;
  };
  s.input_jac = [=](const Vec&, const Vec&) {
    Mat j(2, 1);
    j << 0.0, tau / mass;
    return j;
  };
  return s;
}

// Moore-Greitzer jet engine, no-stall mode.
inline SystemSpec make_jet(const std::map<std::string, double>& p = {}) {
  detail::reject_unknown(p, {"tau"}, "jet");
  const double tau = detail::param(p, "tau", 0.01);
  SystemSpec s;
  s.name = "jet";
  s.state_dim = 2;
  s.internal_input_dim = s.external_input_dim = 1;
  s.state_box = Box::uniform(2, -0.25, 0.25);
  s.external_box = Box::uniform(1, -0.5, 0.5);
  s.tau = tau;
  s.lip_x = 0.93;
  s.lip_u = 0.01;
  s.params = {{"tau", tau}};
  s.step_fn = [=](const Vec& x, const Vec& u) {
    Vec out(2);
    const double x1 = x[0];
    out[0] = x1 + tau * (-x[1] - 1.5 * x1 * x1 - 0.5 * x1 * x1 * x1);
    out[1] = x[1] + tau * u[0];
    return out;
  };
  s.input_jac = [=](const Vec&, const Vec&) {
    Mat j(2, 1);
    j << 0.0, tau;
    return j;
  };
  return s;
}

// Rigid spacecraft angular velocities; three torques, one external input.
inline SystemSpec make_spacecraft(const std::map<std::string, double>& p = {}) {
  detail::reject_unknown(p, {"J1", "J2", "J3", "tau"}, "spacecraft");
  const double j1 = detail::param(p, "J1", 200.0);
  const double j2 = detail::param(p, "J2", 200.0);
  const double j3 = detail::param(p, "J3", 100.0);
  const double tau = detail::param(p, "tau", 0.01);
  SystemSpec s;
  s.name = "spacecraft";
  s.state_dim = 3;
  s.internal_input_dim = 3;
  s.external_input_dim = 1;
  s.state_box = Box::uniform(3, -0.25, 0.25);
  s.external_box = Box::uniform(1, -1.0, 1.0);
  s.tau = tau;
  s.lip_x = 1.0;
  s.lip_u = 0.01;
  s.params = {{"J1", j1}, {"J2", j2}, {"J3", j3}, {"tau", tau}};
  s.step_fn = [=](const Vec& x, const Vec& u) {
    Vec out(3);
    out[0] = x[0] + tau * ((j2 - j3) / j1 * x[1] * x[2] + u[0] / j1);
    out[1] = x[1] + tau * ((j3 - j1) / j2 * x[0] * x[2] + u[1] / j2);
    out[2] = x[2] + tau * ((j1 - j2) / j3 * x[0] * x[1] + u[2] / j3);
    return out;
  };
  s.input_jac = [=](const Vec&, const Vec&) {
    Mat j = Mat::Zero(3, 3);
    j(0, 0) = tau / j1;
    j(1, 1) = tau / j2;
    j(2, 2) = tau / j3;
    return j;
  };
  return s;
}

/// x+ = A x + B u; Lipschitz constants are the spectral norms.
inline SystemSpec make_linear(const Mat& a, const Mat& b, Box state_box,
                              Box external_box, double tau = 1.0) {
  require(a.rows() == a.cols() && b.rows() == a.rows() && b.cols() > 0,
          ErrorKind::kInvalidArgument, "linear plant: shape mismatch");
  SystemSpec s;
  s.name = "linear";
  s.state_dim = static_cast<int>(a.rows());
  s.internal_input_dim = static_cast<int>(b.cols());
  s.external_input_dim = external_box.dim();
  s.state_box = std::move(state_box);
  s.external_box = std::move(external_box);
  s.tau = tau;
  Eigen::JacobiSVD<Mat> sa(a), sb(b);
  s.lip_x = sa.singularValues()(0);
  s.lip_u = sb.singularValues()(0);
  s.step_fn = [a, b](const Vec& x, const Vec& u) -> Vec { return a * x + b * u; };
  s.input_jac = [b](const Vec&, const Vec&) -> Mat { return b; };
  return s;
}

inline SystemSpec make_benchmark(const std::string& name,
                                 const std::map<std::string, double>& p = {}) {
  if (name == "scalar") return make_scalar(p);
  if (name == "manipulator") return make_manipulator(p);
  if (name == "jet") return make_jet(p);
  if (name == "spacecraft") return make_spacecraft(p);
  fail(ErrorKind::kInvalidArgument, "unknown benchmark '" + name + "'");
}

}  // namespace deltaiss
