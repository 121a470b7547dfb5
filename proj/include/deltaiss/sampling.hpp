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
#include <cstdint>
#include <numeric>
#include <string>
#include <vector>

#include <json.hpp>

#include "deltaiss/common.hpp"
#include "deltaiss/random.hpp"

namespace deltaiss {

inline constexpr std::size_t kDefaultCoverCap = 5'000'000;

// Corner cells of the grid reach exactly eps in exact arithmetic, so rounded
// distances may exceed eps by a few ulps; the audit allows this relative slack.
inline constexpr double kCoverTolerance = 1e-12;

/// Finite sample set whose eps-balls (Euclidean) cover `box`.
struct CoverDataset {
  std::vector<Vec> points;
  double eps = 0.0;
  Box box;
  std::string rule = "grid-euclidean";

  std::size_t count() const { return points.size(); }
  int dim() const { return box.dim(); }
};

/// Per-dimension centers: lo + d/2 + j d for all but the last, which sits at
/// hi - d/2; a single center sits at the midpoint.
inline std::vector<double> grid_axis(double lo, double hi, double spacing,
                                     std::size_t count) {
  std::vector<double> axis(count);
  if (count == 1) {
    axis[0] = 0.5 * (lo + hi);
    return axis;
  }
  for (std::size_t j = 0; j + 1 < count; ++j) {
    axis[j] = lo + 0.5 * spacing + static_cast<double>(j) * spacing;
  }
  axis[count - 1] = hi - 0.5 * spacing;
  return axis;
}

/// Grid spacing for covering radius eps in n dimensions.
inline double cover_spacing(double eps, int n) {
  return 2.0 * eps / std::sqrt(static_cast<double>(n));
}

/// Number of grid points cover_box would produce (without building them).
inline double cover_count(const Box& box, double eps) {
  const double spacing = cover_spacing(eps, box.dim());
  double total = 1.0;
  for (int i = 0; i < box.dim(); ++i) {
    total *= std::max(1.0, std::ceil((box.hi[i] - box.lo[i]) / spacing));
  }
  return total;
}

inline CoverDataset cover_box(const Box& box, double eps,
                              std::size_t cap = kDefaultCoverCap) {
  box.validate("cover_box");
  require(eps > 0 && std::isfinite(eps), ErrorKind::kInvalidArgument,
          "cover_box: eps must be positive");
  const int n = box.dim();
  const double spacing = cover_spacing(eps, n);
  const double required = cover_count(box, eps);
  if (required > static_cast<double>(cap)) {
    std::ostringstream msg;
    msg << "cover_box: eps=" << format_double(eps) << " requires "
        << std::setprecision(0) << std::fixed << required
        << " points, above the cap of " << cap;
    fail(ErrorKind::kCapacity, msg.str());
  }
  std::vector<std::vector<double>> axes(n);
  for (int i = 0; i < n; ++i) {
    const auto c = static_cast<std::size_t>(
        std::max(1.0, std::ceil((box.hi[i] - box.lo[i]) / spacing)));
    axes[i] = grid_axis(box.lo[i], box.hi[i], spacing, c);
  }
  CoverDataset ds;
  ds.eps = eps;
  ds.box = box;
  ds.points.reserve(static_cast<std::size_t>(required));
  // Row-major enumeration: the last coordinate varies fastest.
  std::vector<std::size_t> idx(n, 0);
  while (true) {
    Vec p(n);
    for (int i = 0; i < n; ++i) p[i] = axes[i][idx[i]];
    ds.points.push_back(std::move(p));
    int d = n - 1;
    while (d >= 0 && ++idx[d] == axes[d].size()) {
      idx[d] = 0;
      --d;
    }
    if (d < 0) break;
  }
  return ds;
}

/// Nearest-sample queries by a sweep over points sorted on the first axis.
class NearestIndex {
 public:
  explicit NearestIndex(const std::vector<Vec>& points) : points_(points) {
    order_.resize(points.size());
    std::iota(order_.begin(), order_.end(), std::size_t{0});
    std::stable_sort(order_.begin(), order_.end(),
                     [&](std::size_t a, std::size_t b) {
                       return points[a][0] < points[b][0];
                     });
    keys_.reserve(order_.size());
    for (std::size_t i : order_) keys_.push_back(points[i][0]);
  }

  /// Euclidean distance to the nearest point.
  double distance(const Vec& q) const {
    const std::size_t start = static_cast<std::size_t>(
        std::lower_bound(keys_.begin(), keys_.end(), q[0]) - keys_.begin());
    double best2 = std::numeric_limits<double>::infinity();
    for (std::size_t i = start; i < keys_.size(); ++i) {
      const double dx = keys_[i] - q[0];
      if (dx * dx >= best2) break;
      best2 = std::min(best2, (points_[order_[i]] - q).squaredNorm());
    }
    for (std::size_t i = start; i-- > 0;) {
      const double dx = q[0] - keys_[i];
      if (dx * dx >= best2) break;
      best2 = std::min(best2, (points_[order_[i]] - q).squaredNorm());
    }
    return std::sqrt(best2);
  }

 private:
  const std::vector<Vec>& points_;
  std::vector<std::size_t> order_;
  std::vector<double> keys_;
};

struct AuditResult {
  bool pass = false;
  double worst = 0.0;
  Vec worst_point;
};

inline AuditResult covering_audit(const CoverDataset& ds, std::size_t trials,
                                  std::uint64_t seed) {
  require(trials >= 1, ErrorKind::kInvalidArgument,
          "covering_audit: trials must be >= 1");
  AuditResult res;
  if (ds.points.empty()) return res;
  NearestIndex index(ds.points);
  Rng rng(seed);
  res.pass = true;
  for (std::size_t t = 0; t < trials; ++t) {
    Vec q = rng.uniform_in(ds.box);
    const double d = index.distance(q);
    if (d > res.worst) {
      res.worst = d;
      res.worst_point = q;
    }
  }
  // Vertices are where grid coverage is tightest.
  const int n = ds.dim();
  if (n <= 16) {
    for (std::uint64_t mask = 0; mask < (std::uint64_t{1} << n); ++mask) {
      Vec v(n);
      for (int i = 0; i < n; ++i) v[i] = (mask >> i) & 1 ? ds.box.hi[i] : ds.box.lo[i];
      const double d = index.distance(v);
      if (d > res.worst) {
        res.worst = d;
        res.worst_point = v;
      }
    }
  }
  res.pass = res.worst <= ds.eps * (1.0 + kCoverTolerance);
  return res;
}

/// One training tuple (x_q, x_r, w_q, w_r), stored as dataset indices.
struct SampleTuple {
  std::uint32_t q = 0;
  std::uint32_t r = 0;
  std::uint32_t wq = 0;
  std::uint32_t wr = 0;

  bool diagonal() const { return q == r; }
  bool operator==(const SampleTuple&) const = default;
};

struct BatchOptions {
  double diagonal_fraction = 0.1;
  double nn_fraction = 0.1;
};

/// For every point, the indices of the points at minimal distance.
inline std::vector<std::vector<std::uint32_t>> nearest_neighbors(
    const std::vector<Vec>& points) {
  const std::size_t n = points.size();
  std::vector<std::vector<std::uint32_t>> nn(n);
  for (std::size_t i = 0; i < n; ++i) {
    double best = std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < n; ++j) {
      if (j == i) continue;
      best = std::min(best, (points[i] - points[j]).squaredNorm());
    }
    for (std::size_t j = 0; j < n; ++j) {
      if (j == i) continue;
      if ((points[i] - points[j]).squaredNorm() <= best * (1.0 + 1e-9)) {
        nn[i].push_back(static_cast<std::uint32_t>(j));
      }
    }
  }
  return nn;
}

class BatchSampler {
 public:
  BatchSampler(const CoverDataset& xs, const CoverDataset& ws,
               BatchOptions options)
      : nx_(xs.count()), nw_(ws.count()), options_(options) {
    require(nx_ > 0 && nw_ > 0, ErrorKind::kInvalidArgument,
            "draw_batch: datasets must be nonempty");
    require(options.diagonal_fraction >= 0 && options.nn_fraction >= 0 &&
                options.diagonal_fraction + options.nn_fraction <= 1.0,
            ErrorKind::kInvalidArgument, "draw_batch: invalid batch fractions");
    if (nx_ > 1 && options.nn_fraction > 0) neighbors_ = nearest_neighbors(xs.points);
  }

  std::vector<SampleTuple> draw(std::size_t size, Rng& rng) const {
    require(size > 0, ErrorKind::kInvalidArgument, "draw_batch: size must be > 0");
    const auto n_diag = static_cast<std::size_t>(
        std::llround(options_.diagonal_fraction * static_cast<double>(size)));
    auto n_nn = static_cast<std::size_t>(
        std::llround(options_.nn_fraction * static_cast<double>(size)));
    n_nn = std::min(n_nn, size - std::min(size, n_diag));
    if (nx_ == 1) n_nn = 0;
    std::vector<SampleTuple> batch;
    batch.reserve(size);
    auto pick_w = [&](SampleTuple& t) {
      t.wq = static_cast<std::uint32_t>(rng.index(nw_));
      t.wr = static_cast<std::uint32_t>(rng.index(nw_));
    };
    for (std::size_t i = 0; i < size; ++i) {
      SampleTuple t;
      t.q = static_cast<std::uint32_t>(rng.index(nx_));
      if (i < n_diag || nx_ == 1) {
        t.r = t.q;
      } else if (i < n_diag + n_nn) {
        const auto& nb = neighbors_[t.q];
        t.r = nb[rng.index(nb.size())];
      } else {
        // Off-diagonal: draw r != q uniformly.
        auto r = static_cast<std::uint32_t>(rng.index(nx_ - 1));
        t.r = r >= t.q ? r + 1 : r;
      }
      pick_w(t);
      batch.push_back(t);
    }
    return batch;
  }

 private:
  std::size_t nx_;
  std::size_t nw_;
  BatchOptions options_;
  std::vector<std::vector<std::uint32_t>> neighbors_;
};

inline std::vector<SampleTuple> draw_batch(const CoverDataset& xs,
                                           const CoverDataset& ws,
                                           std::size_t size,
                                           std::uint64_t rng_seed,
                                           BatchOptions options = {}) {
  BatchSampler sampler(xs, ws, options);
  Rng rng(rng_seed);
  return sampler.draw(size, rng);
}

// ---- CSV persistence -------------------------------------------------------

inline std::string dataset_csv(const CoverDataset& ds, const std::string& prefix) {
  std::string out;
  for (int i = 0; i < ds.dim(); ++i) {
    if (i) out += ',';
    out += prefix + std::to_string(i);
  }
  out += '\n';
  for (const Vec& p : ds.points) {
    for (int i = 0; i < p.size(); ++i) {
      if (i) out += ',';
      out += format_double(p[i]);
    }
    out += '\n';
  }
  return out;
}

inline nlohmann::ordered_json dataset_metadata(const CoverDataset& ds,
                                               const std::string& csv) {
  nlohmann::ordered_json meta;
  meta["eps"] = ds.eps;
  meta["box"]["lo"] = std::vector<double>(ds.box.lo.data(), ds.box.lo.data() + ds.dim());
  meta["box"]["hi"] = std::vector<double>(ds.box.hi.data(), ds.box.hi.data() + ds.dim());
  meta["count"] = ds.count();
  meta["rule"] = ds.rule;
  meta["content_hash"] = sha256_hex(csv);
  return meta;
}

/// Writes <path>.csv and <path>.meta.json; returns the CSV content hash.
inline std::string save_dataset(const CoverDataset& ds, const std::string& path,
                                const std::string& prefix) {
  const std::string csv = dataset_csv(ds, prefix);
  auto meta = dataset_metadata(ds, csv);
  write_file(path + ".csv", csv);
  write_file(path + ".meta.json", meta.dump(2) + "\n");
  return meta["content_hash"].get<std::string>();
}

inline CoverDataset load_dataset(const std::string& path, std::string* hash_out = nullptr) {
  const std::string csv = read_file(path + ".csv");
  const auto meta = nlohmann::json::parse(read_file(path + ".meta.json"));
  const std::string hash = sha256_hex(csv);
  require(meta.at("content_hash").get<std::string>() == hash,
          ErrorKind::kProvenance, path + ".csv does not match its metadata hash");
  CoverDataset ds;
  ds.eps = meta.at("eps").get<double>();
  ds.rule = meta.at("rule").get<std::string>();
  auto lo = meta.at("box").at("lo").get<std::vector<double>>();
  auto hi = meta.at("box").at("hi").get<std::vector<double>>();
  ds.box = Box(Eigen::Map<Vec>(lo.data(), static_cast<Eigen::Index>(lo.size())),
               Eigen::Map<Vec>(hi.data(), static_cast<Eigen::Index>(hi.size())));
  auto lines = split(csv, '\n');
  for (std::size_t i = 1; i < lines.size(); ++i) {
    if (trim(lines[i]).empty()) continue;
    auto cells = split(lines[i], ',');
    require(static_cast<int>(cells.size()) == ds.dim(), ErrorKind::kIo,
            path + ".csv: row " + std::to_string(i) + " has wrong width");
    Vec p(ds.dim());
    for (int j = 0; j < ds.dim(); ++j) p[j] = parse_double(cells[j]);
    ds.points.push_back(std::move(p));
  }
  require(ds.points.size() == meta.at("count").get<std::size_t>(), ErrorKind::kIo,
          path + ".csv: point count disagrees with metadata");
  if (hash_out) *hash_out = hash;
  return ds;
}

}  // namespace deltaiss
