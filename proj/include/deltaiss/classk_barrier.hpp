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
#include <cmath>

#include "deltaiss/common.hpp"

namespace deltaiss {

enum class ClassK { kA1 = 0, kA2 = 1, kA3 = 2, kSigma = 3 };

/// Power-law comparison functions alpha_i(s) = k_i s^gamma_i, sigma(s) = k_w s^gamma_w.
struct ClassKBundle {
  std::array<double, 4> k{1e-5, 0.5, 1e-4, 0.01};
  std::array<double, 4> gamma{2.0, 2.0, 2.0, 2.0};
  double kh = 1.0;

  double gain(ClassK which) const { return k[static_cast<int>(which)]; }
  double degree(ClassK which) const { return gamma[static_cast<int>(which)]; }

  void validate() const {
    for (int i = 0; i < 4; ++i) {
      require(k[i] > 0, ErrorKind::kInvalidArgument, "class-K gains must be positive");
      require(gamma[i] >= 1, ErrorKind::kInvalidArgument, "class-K degrees must be >= 1");
    }
    require(k[0] < k[1], ErrorKind::kInvalidArgument,
            "class-K lower bound gain k1 must be below k2");
    require(kh > 0, ErrorKind::kInvalidArgument, "barrier scaling kh must be positive");
  }
};

inline double classk_eval(const ClassKBundle& b, ClassK which, double s) {
  require(s >= 0, ErrorKind::kInvalidArgument, "class-K argument must be non-negative");
  return b.gain(which) * std::pow(s, b.degree(which));
}

/// Lipschitz constant of k s^gamma on [0, D]: k gamma D^(gamma - 1).
inline double classk_lipschitz(double k, double gamma, double diameter) {
  require(diameter > 0, ErrorKind::kInvalidArgument, "diameter must be positive");
  return k * gamma * std::pow(diameter, gamma - 1.0);
}

inline double classk_lipschitz(const ClassKBundle& b, ClassK which, double diameter) {
  return classk_lipschitz(b.gain(which), b.degree(which), diameter);
}

/// Box barrier h(x) = max_i max(lo_i - x_i, x_i - hi_i): zero on the
/// boundary, negative inside, positive outside, 1-Lipschitz (Euclidean).
struct BarrierFn {
  Box box;

  explicit BarrierFn(Box b) : box(std::move(b)) { box.validate("barrier box"); }

  static constexpr double lipschitz() { return 1.0; }

  double operator()(const Vec& x) const { return eval(x, nullptr); }

  /// Value and, optionally, the active face's subgradient (+-e_i).
  double eval(const Vec& x, Vec* grad) const {
    require(x.size() == box.dim(), ErrorKind::kInvalidArgument,
            "barrier: state dimension mismatch");
    double best = -std::numeric_limits<double>::infinity();
    int arg = 0;
    double sign = 1.0;
    for (int i = 0; i < box.dim(); ++i) {
      const double below = box.lo[i] - x[i];
      const double above = x[i] - box.hi[i];
      if (below > best) {
        best = below;
        arg = i;
        sign = -1.0;
      }
      if (above > best) {
        best = above;
        arg = i;
        sign = 1.0;
      }
    }
    if (grad) {
      grad->setZero(box.dim());
      (*grad)[arg] = sign;
    }
    return best;
  }
};

inline double barrier_eval(const BarrierFn& bf, const Vec& x) { return bf(x); }

}  // namespace deltaiss
