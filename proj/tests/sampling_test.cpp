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

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <numbers>

#include <gtest/gtest.h>

#include "deltaiss/sampling.hpp"
#include "deltaiss/systems.hpp"

namespace deltaiss {
namespace {

double nearest(const CoverDataset& ds, const Vec& q) {
  double best = std::numeric_limits<double>::infinity();
  for (const Vec& p : ds.points) best = std::min(best, (p - q).norm());
  return best;
}

// Worst nearest-sample distance over a regular fine grid of the box.
double fine_grid_worst(const CoverDataset& ds, double h) {
  const int n = ds.dim();
  std::vector<int> steps(n);
  for (int i = 0; i < n; ++i) {
    steps[i] = static_cast<int>(std::ceil((ds.box.hi[i] - ds.box.lo[i]) / h));
  }
  std::vector<int> idx(n, 0);
  double worst = 0;
  while (true) {
    Vec q(n);
    for (int i = 0; i < n; ++i) {
      q[i] = std::min(ds.box.hi[i], ds.box.lo[i] + idx[i] * h);
    }
    worst = std::max(worst, nearest(ds, q));
    int d = n - 1;
    while (d >= 0 && ++idx[d] > steps[d]) idx[d--] = 0;
    if (d < 0) break;
  }
  return worst;
}

TEST(CoverBox, UnitIntervalHalfRadius) {
  const auto ds = cover_box(Box::uniform(1, -1, 1), 0.5);
  ASSERT_EQ(ds.count(), 2u);
  EXPECT_DOUBLE_EQ(ds.points[0][0], -0.5);
  EXPECT_DOUBLE_EQ(ds.points[1][0], 0.5);
  EXPECT_LE(fine_grid_worst(ds, 1e-3), 0.5 * (1 + kCoverTolerance));
}

TEST(CoverBox, SingleCenter) {
  const auto ds = cover_box(Box::uniform(1, -1, 1), 1.0);
  ASSERT_EQ(ds.count(), 1u);
  EXPECT_EQ(ds.points[0][0], 0.0);
}

TEST(CoverBox, UnitSquare) {
  const auto ds = cover_box(Box::uniform(2, 0, 1), 0.1);
  EXPECT_LE(ds.count(), 64u);
  EXPECT_EQ(cover_count(Box::uniform(2, 0, 1), 0.1), 64.0);
  EXPECT_LE(fine_grid_worst(ds, 1e-3), 0.1 * (1 + kCoverTolerance));
}

TEST(CoverBox, ScalarDeskGrid) {
  const auto s = make_benchmark("scalar");
  const auto ds = cover_box(s.state_box, 0.008);
  EXPECT_EQ(ds.count(), static_cast<std::size_t>(std::ceil(std::numbers::pi / 0.016)));
  EXPECT_EQ(ds.count(), 197u);
  EXPECT_EQ(cover_box(s.external_box, 0.01).count(), 100u);
}

TEST(CoverBox, CapacityAndArguments) {
  const auto s = make_benchmark("spacecraft");
  try {
    cover_box(s.state_box, 1e-9);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kCapacity);
  }
  EXPECT_THROW(cover_box(Box::uniform(1, 0, 1), 0.0), Error);
  EXPECT_THROW(cover_box(Box::uniform(1, 0, 1), 0.01, 10), Error);
}

TEST(CoverBox, PointsInsideBox) {
  const auto ds = cover_box(Box::uniform(3, -0.25, 0.25), 0.05);
  for (const Vec& p : ds.points) EXPECT_TRUE(ds.box.contains(p));
}

TEST(CoveringAudit, GridPasses) {
  const auto a = covering_audit(cover_box(Box::uniform(1, -1, 1), 0.5), 100000, 1);
  EXPECT_TRUE(a.pass);
  EXPECT_LE(a.worst, 0.5);
  const auto b = covering_audit(cover_box(Box::uniform(2, 0, 1), 0.1), 100000, 2);
  EXPECT_TRUE(b.pass);
}

TEST(CoveringAudit, UnderCoverFails) {
  CoverDataset ds;
  ds.box = Box::uniform(1, -1, 1);
  ds.eps = 0.5;
  ds.points.push_back(Vec::Constant(1, -0.5));
  const auto a = covering_audit(ds, 1000, 3);
  EXPECT_FALSE(a.pass);
  EXPECT_DOUBLE_EQ(a.worst, 1.5);
  EXPECT_DOUBLE_EQ(a.worst_point[0], 1.0);
}

TEST(CoveringAudit, NearestIndexMatchesBruteForce) {
  Rng rng(4);
  const auto ds = cover_box(Box::uniform(3, -1, 1), 0.3);
  NearestIndex index(ds.points);
  for (int t = 0; t < 2000; ++t) {
    const Vec q = rng.uniform_in(ds.box);
    EXPECT_EQ(index.distance(q), nearest(ds, q));
  }
}

class BatchTest : public ::testing::Test {
 protected:
  CoverDataset xs = cover_box(Box::uniform(2, -1, 1), 0.2);
  CoverDataset ws = cover_box(Box::uniform(1, -1, 1), 0.25);
};

TEST_F(BatchTest, Deterministic) {
  EXPECT_EQ(draw_batch(xs, ws, 4, 7), draw_batch(xs, ws, 4, 7));
  EXPECT_NE(draw_batch(xs, ws, 64, 7), draw_batch(xs, ws, 64, 8));
}

TEST_F(BatchTest, DiagonalFraction) {
  const auto b = draw_batch(xs, ws, 100, 5, {0.25, 0.0});
  const auto diag = std::count_if(b.begin(), b.end(), [](const SampleTuple& t) {
    return t.diagonal();
  });
  EXPECT_EQ(diag, 25);
}

TEST_F(BatchTest, MembershipAndNeighbors) {
  BatchSampler sampler(xs, ws, {0.1, 0.2});
  Rng rng(9);
  std::size_t draws = 0;
  while (draws < 10000) {
    const auto b = sampler.draw(100, rng);
    for (std::size_t i = 0; i < b.size(); ++i) {
      const auto& t = b[i];
      ASSERT_LT(t.q, xs.count());
      ASSERT_LT(t.r, xs.count());
      ASSERT_LT(t.wq, ws.count());
      ASSERT_LT(t.wr, ws.count());
      if (i < 10) {
        EXPECT_TRUE(t.diagonal());
      } else {
        EXPECT_FALSE(t.diagonal());
      }
      if (i >= 10 && i < 30) {
        // Nearest-neighbor tuples: no point is strictly closer to x_q.
        const double d = (xs.points[t.q] - xs.points[t.r]).norm();
        for (std::size_t j = 0; j < xs.count(); ++j) {
          if (j == t.q) continue;
          EXPECT_GE((xs.points[t.q] - xs.points[j]).norm(), d * (1 - 1e-9));
        }
      }
    }
    draws += b.size();
  }
}

TEST_F(BatchTest, InvalidOptions) {
  EXPECT_THROW(draw_batch(xs, ws, 0, 1), Error);
  EXPECT_THROW(draw_batch(xs, ws, 8, 1, {0.8, 0.5}), Error);
}

TEST(Datasets, SaveLoadRoundTripAndTamper) {
  const auto dir = std::filesystem::temp_directory_path() / "deltaiss_sampling_test";
  std::filesystem::create_directories(dir);
  const auto ds = cover_box(Box::uniform(2, -0.25, 0.25), 0.02);
  const std::string path = (dir / "xs").string();
  const std::string hash = save_dataset(ds, path, "x");
  std::string loaded_hash;
  const auto back = load_dataset(path, &loaded_hash);
  EXPECT_EQ(hash, loaded_hash);
  ASSERT_EQ(back.count(), ds.count());
  for (std::size_t i = 0; i < ds.count(); ++i) EXPECT_EQ(back.points[i], ds.points[i]);
  EXPECT_EQ(back.eps, ds.eps);

  std::string csv = read_file(path + ".csv");
  csv[csv.size() - 2] = csv[csv.size() - 2] == '1' ? '2' : '1';
  write_file(path + ".csv", csv);
  try {
    load_dataset(path);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kProvenance);
  }
  std::filesystem::remove_all(dir);
}

}  // namespace
}  // namespace deltaiss
