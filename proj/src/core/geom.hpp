// SPDX-License-Identifier: Apache-2.0
//
// Non-differentiable geometric kernels: sampling, neighbour search and
// interpolation weights. All routines are pure and deterministic; ties break
// toward the lowest index everywhere.
#pragma once

#include <cstdint>
#include <vector>

#include "core/common.hpp"

namespace carf::geom {

struct PointCloud {
  std::vector<Vec3> pts;

  std::size_t size() const { return pts.size(); }
};

/// Row-major n x k neighbour table. Rows are sorted by nondecreasing
/// distance. When k exceeds the source size, rows are padded by repeating the
/// nearest index with an infinite distance as the pad flag.
struct NeighborIndex {
  std::size_t n = 0, k = 0;
  std::vector<std::uint32_t> indices;
  std::vector<double> distances;

  std::uint32_t index(std::size_t row, std::size_t j) const { return indices[row * k + j]; }
  double distance(std::size_t row, std::size_t j) const { return distances[row * k + j]; }
};

/// Greedy max-min selection. The first pick is seed % n; every further pick
/// maximizes the distance to the already-selected set.
std::vector<std::uint32_t> farthest_point_sample(const PointCloud& cloud, std::size_t n_out,
                                                 std::uint64_t seed);

/// Uniform sample of n_out distinct indices from [0, n), deterministic per seed.
std::vector<std::uint32_t> random_sample(std::size_t n, std::size_t n_out, std::uint64_t seed);

/// Exact Euclidean k-NN, uniform-grid accelerated. Agrees exactly (including
/// tie-breaks) with knn_bruteforce.
NeighborIndex knn(const PointCloud& query, const PointCloud& source, std::size_t k);

/// Reference O(n*m) path kept as the second route of the dual-route contract.
NeighborIndex knn_bruteforce(const PointCloud& query, const PointCloud& source, std::size_t k);

struct ThreeNN {
  std::vector<std::array<std::uint32_t, 3>> idx;
  std::vector<Vec3> weights;  // nonnegative, rows sum to 1
};

/// Indices and normalized inverse-distance weights of the three nearest
/// source points per query (epsilon = 1e-8). Sources with fewer than three
/// points repeat the nearest.
ThreeNN three_nn_weights(const PointCloud& query, const PointCloud& source);

}  // namespace carf::geom
