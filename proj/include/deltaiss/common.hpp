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

#include <charconv>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <iomanip>
#include <limits>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <system_error>
#include <vector>

#include <Eigen/Core>
#include <openssl/evp.h>

namespace deltaiss {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

enum class ErrorKind {
  kInvalidArgument,
  kNumericFault,
  kCapacity,
  kInfeasibleBarrier,
  kProvenance,
  kTrainingFailed,
  kIo,
};

inline const char* to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::kInvalidArgument: return "invalid-argument";
    case ErrorKind::kNumericFault: return "numeric-fault";
    case ErrorKind::kCapacity: return "capacity";
    case ErrorKind::kInfeasibleBarrier: return "infeasible-barrier";
    case ErrorKind::kProvenance: return "provenance";
    case ErrorKind::kTrainingFailed: return "training-failed";
    case ErrorKind::kIo: return "io";
  }
  return "unknown";
}

/// Single exception type for the library; callers dispatch on kind().
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(std::string(to_string(kind)) + ": " + what),
        kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& what) {
  throw Error(kind, what);
}

inline void require(bool cond, ErrorKind kind, const std::string& what) {
  if (!cond) fail(kind, what);
}

inline bool all_finite(const Vec& v) { return v.allFinite(); }

/// Axis-aligned box [lo, hi] in R^d.
struct Box {
  Vec lo;
  Vec hi;

  Box() = default;
  Box(Vec lower, Vec upper) : lo(std::move(lower)), hi(std::move(upper)) {}

  static Box uniform(int dim, double lower, double upper) {
    return Box(Vec::Constant(dim, lower), Vec::Constant(dim, upper));
  }

  int dim() const { return static_cast<int>(lo.size()); }

  void validate(const std::string& name) const {
    require(lo.size() == hi.size() && lo.size() > 0,
            ErrorKind::kInvalidArgument, name + ": box dimension mismatch");
    for (int i = 0; i < dim(); ++i) {
      require(std::isfinite(lo[i]) && std::isfinite(hi[i]) && lo[i] < hi[i],
              ErrorKind::kInvalidArgument,
              name + ": lower bound must be strictly below upper bound");
    }
  }

  bool contains(const Vec& x, double tol = 0.0) const {
    for (int i = 0; i < dim(); ++i) {
      if (x[i] < lo[i] - tol || x[i] > hi[i] + tol) return false;
    }
    return true;
  }

  /// Euclidean diameter.
  double diameter() const { return (hi - lo).norm(); }

  Vec center() const { return 0.5 * (lo + hi); }

  Vec clamp(const Vec& x) const { return x.cwiseMax(lo).cwiseMin(hi); }

  bool operator==(const Box& o) const {
    return lo.size() == o.lo.size() && lo == o.lo && hi == o.hi;
  }
};

/// Shortest decimal string that parses back to the same double.
inline std::string format_double(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

inline double parse_double(std::string_view s) {
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) {
    s.remove_prefix(1);
  }
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) {
    s.remove_suffix(1);
  }
  if (!s.empty() && s.front() == '+') s.remove_prefix(1);
  double v = 0.0;
  auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  require(res.ec == std::errc() && res.ptr == s.data() + s.size(),
          ErrorKind::kInvalidArgument,
          "not a number: '" + std::string(s) + "'");
  return v;
}

inline std::string sha256_hex(std::string_view data) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  EVP_MD_CTX* ctx = EVP_MD_CTX_new();
  require(ctx != nullptr, ErrorKind::kIo, "cannot allocate digest context");
  bool ok = EVP_DigestInit_ex(ctx, EVP_sha256(), nullptr) == 1 &&
            EVP_DigestUpdate(ctx, data.data(), data.size()) == 1 &&
            EVP_DigestFinal_ex(ctx, digest, &len) == 1;
  EVP_MD_CTX_free(ctx);
  require(ok, ErrorKind::kIo, "sha256 failed");
  static constexpr char kHex[] = "0123456789abcdef";
  std::string out;
  out.reserve(2 * len);
  for (unsigned int i = 0; i < len; ++i) {
    out.push_back(kHex[digest[i] >> 4]);
    out.push_back(kHex[digest[i] & 0xF]);
  }
  return out;
}

inline std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  require(static_cast<bool>(in), ErrorKind::kIo, "cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void write_file(const std::string& path, std::string_view content) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  require(static_cast<bool>(out), ErrorKind::kIo, "cannot write " + path);
  out.write(content.data(), static_cast<std::streamsize>(content.size()));
  require(static_cast<bool>(out), ErrorKind::kIo, "write failed: " + path);
}

inline std::vector<std::string> split(std::string_view s, char sep) {
  std::vector<std::string> out;
  size_t start = 0;
  while (true) {
    size_t pos = s.find(sep, start);
    out.emplace_back(s.substr(start, pos - start));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

inline std::string trim(std::string_view s) {
  size_t b = 0, e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  return std::string(s.substr(b, e - b));
}

}  // namespace deltaiss
