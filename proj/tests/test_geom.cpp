// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "core/geom.hpp"
#include "oracles.hpp"

using namespace carf;
using geom::PointCloud;

namespace {

PointCloud random_cloud(std::size_t n, std::uint64_t seed, double span = 1.0) {
  PointCloud c;
  Rng rng(seed);
  c.pts.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    c.pts.push_back({rng.uniform(-span, span), rng.uniform(-span, span), rng.uniform(-span, span)});
  }
  return c;
}

}  // namespace

TEST_SUITE_BEGIN("geom");

TEST_CASE("fps with n_out == N is a permutation") {
  const PointCloud c = random_cloud(17, 3);
  auto idx = geom::farthest_point_sample(c, 17, 5);
  std::sort(idx.begin(), idx.end());
  for (std::uint32_t i = 0; i < 17; ++i) CHECK(idx[i] == i);
}

TEST_CASE("fps with n_out == 1 returns the seed point") {
  const PointCloud c = random_cloud(9, 4);
  CHECK(geom::farthest_point_sample(c, 1, 12)[0] == 12 % 9);
}

TEST_CASE("fps on the unit cube matches the greedy oracle") {
  PointCloud cube;
  for (int x = 0; x <= 1; ++x)
    for (int y = 0; y <= 1; ++y)
      for (int z = 0; z <= 1; ++z) cube.pts.push_back({double(x), double(y), double(z)});
  const auto got = geom::farthest_point_sample(cube, 4, 0);
  const auto want = oracle::fps(cube.pts, 4, 0);
  CHECK(got == std::vector<std::uint32_t>(want.begin(), want.end()));
  // greedy from a corner always takes the antipodal corner second
  CHECK(got[0] == 0);
  CHECK(got[1] == 7);
}

TEST_CASE("fps matches the greedy oracle on random clouds") {
  for (std::uint64_t seed = 0; seed < 30; ++seed) {
    const PointCloud c = random_cloud(24 + seed % 17, seed);
    const std::size_t n_out = 1 + seed % 12;
    CHECK(geom::farthest_point_sample(c, n_out, seed * 7) == oracle::fps(c.pts, n_out, seed * 7));
  }
}

TEST_CASE("fps picks the same points under input permutation") {
  const PointCloud c = random_cloud(20, 9);
  const auto base = geom::farthest_point_sample(c, 8, 4);

  // reverse the cloud; keep the same physical seed point
  PointCloud rev;
  rev.pts.assign(c.pts.rbegin(), c.pts.rend());
  const std::uint32_t seed_rev = static_cast<std::uint32_t>(c.pts.size()) - 1 - 4;
  const auto perm = geom::farthest_point_sample(rev, 8, seed_rev);
  for (std::size_t i = 0; i < base.size(); ++i) {
    CHECK(c.pts[base[i]] == rev.pts[perm[i]]);
  }
}

TEST_CASE("random_sample basics") {
  auto perm = geom::random_sample(12, 12, 77);
  std::sort(perm.begin(), perm.end());
  for (std::uint32_t i = 0; i < 12; ++i) CHECK(perm[i] == i);

  CHECK(geom::random_sample(30, 7, 5) == geom::random_sample(30, 7, 5));
  CHECK(geom::random_sample(30, 7, 5) != geom::random_sample(30, 7, 6));
  CHECK_THROWS_AS(geom::random_sample(5, 6, 0), InvalidArgument);
}

TEST_CASE("random_sample single draws are uniform within 3 sigma") {
  const std::size_t draws = 100000;
  std::array<std::size_t, 4> counts{0, 0, 0, 0};
  for (std::size_t s = 0; s < draws; ++s) counts[geom::random_sample(4, 1, s)[0]]++;
  const double expect = draws / 4.0;
  const double sigma = std::sqrt(draws * 0.25 * 0.75);
  for (std::size_t c : counts) {
    CHECK(std::abs(static_cast<double>(c) - expect) < 3.0 * sigma);
  }
}

TEST_CASE("knn of a cloud against itself finds the point first") {
  const PointCloud c = random_cloud(15, 21);
  const auto nn = geom::knn(c, c, 1);
  for (std::size_t i = 0; i < c.size(); ++i) {
    CHECK(nn.index(i, 0) == i);
    CHECK(nn.distance(i, 0) == 0.0);
  }
}

TEST_CASE("knn on collinear points") {
  PointCloud src;
  src.pts = {{0, 0, 0}, {1, 0, 0}, {2, 0, 0}};
  PointCloud q;
  q.pts = {{0, 0, 0}};
  const auto nn = geom::knn(q, src, 2);
  CHECK(nn.index(0, 0) == 0);
  CHECK(nn.index(0, 1) == 1);
}

TEST_CASE("grid path agrees exactly with brute force") {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const PointCloud q = random_cloud(64, seed * 2 + 1);
    const PointCloud s = random_cloud(64, seed * 2 + 2);
    const std::size_t k = 1 + seed % 9;
    const auto a = geom::knn(q, s, k);
    const auto b = geom::knn_bruteforce(q, s, k);
    CHECK(a.indices == b.indices);
    CHECK(a.distances == b.distances);
  }
  // degenerate geometry: duplicated points, collinear, coplanar
  PointCloud s;
  s.pts = {{0, 0, 0}, {0, 0, 0}, {1, 0, 0}, {2, 0, 0}, {2, 0, 0}, {0, 1, 0}, {0, 2, 0}};
  const PointCloud q = random_cloud(40, 99, 3.0);
  const auto a = geom::knn(q, s, 3);
  const auto b = geom::knn_bruteforce(q, s, 3);
  CHECK(a.indices == b.indices);
  CHECK(a.distances == b.distances);
}

TEST_CASE("grid path agrees with brute force on a large cloud") {
  const PointCloud q = random_cloud(700, 5);
  const PointCloud s = random_cloud(900, 6);
  const auto a = geom::knn(q, s, 8);
  const auto b = geom::knn_bruteforce(q, s, 8);
  CHECK(a.indices == b.indices);
  CHECK(a.distances == b.distances);
}

TEST_CASE("knn pads with the nearest index when k exceeds the population") {
  PointCloud src;
  src.pts = {{0, 0, 0}, {3, 0, 0}};
  PointCloud q;
  q.pts = {{1, 0, 0}};
  const auto nn = geom::knn(q, src, 4);
  CHECK(nn.index(0, 0) == 0);
  CHECK(nn.index(0, 1) == 1);
  CHECK(nn.index(0, 2) == 0);
  CHECK(nn.index(0, 3) == 0);
  CHECK(std::isinf(nn.distance(0, 2)));
  CHECK(std::isinf(nn.distance(0, 3)));
}

TEST_CASE("knn rows are sorted and start at the closest point") {
  const PointCloud q = random_cloud(25, 31);
  const PointCloud s = random_cloud(40, 32);
  const auto nn = geom::knn(q, s, 5);
  for (std::size_t i = 0; i < q.size(); ++i) {
    for (std::size_t j = 1; j < 5; ++j) CHECK(nn.distance(i, j) >= nn.distance(i, j - 1));
    for (std::size_t sj = 0; sj < s.size(); ++sj) {
      CHECK(nn.distance(i, 0) <= std::sqrt(sq_dist(q.pts[i], s.pts[sj])) + 1e-15);
    }
  }
}

TEST_CASE("knn rejects empty sources") {
  PointCloud q = random_cloud(3, 1);
  PointCloud empty;
  CHECK_THROWS_AS(geom::knn(q, empty, 1), InvalidArgument);
}

TEST_CASE("three_nn puts all weight on a coincident source point") {
  PointCloud src = random_cloud(10, 41);
  PointCloud q;
  q.pts = {src.pts[4]};
  const auto tn = geom::three_nn_weights(q, src);
  CHECK(tn.idx[0][0] == 4);
  CHECK(tn.weights[0][0] == doctest::Approx(1.0).epsilon(1e-6));
}

TEST_CASE("three_nn is symmetric for an equidistant query") {
  PointCloud src;
  src.pts = {{1, 0, 0}, {-0.5, std::sqrt(3) / 2, 0}, {-0.5, -std::sqrt(3) / 2, 0}};
  PointCloud q;
  q.pts = {{0, 0, 0}};
  const auto tn = geom::three_nn_weights(q, src);
  for (int t = 0; t < 3; ++t) CHECK(tn.weights[0][t] == doctest::Approx(1.0 / 3).epsilon(1e-12));
}

TEST_CASE("three_nn matches the formula oracle") {
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    const PointCloud q = random_cloud(12, seed * 3 + 1);
    const PointCloud s = random_cloud(9, seed * 3 + 2);
    const auto got = geom::three_nn_weights(q, s);
    std::vector<std::array<std::uint32_t, 3>> oidx;
    std::vector<Vec3> ow;
    oracle::three_nn(q.pts, s.pts, oidx, ow);
    for (std::size_t i = 0; i < q.size(); ++i) {
      CHECK(got.idx[i] == oidx[i]);
      double sum = 0.0;
      for (int t = 0; t < 3; ++t) {
        CHECK(got.weights[i][t] == doctest::Approx(ow[i][t]).epsilon(1e-12));
        CHECK(got.weights[i][t] >= 0.0);
        sum += got.weights[i][t];
      }
      CHECK(std::abs(sum - 1.0) <= 1e-12);
    }
  }
}

TEST_SUITE_END();
