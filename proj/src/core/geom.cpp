// SPDX-License-Identifier: Apache-2.0
#include "core/geom.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <unordered_map>

namespace carf::geom {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

void check_cloud(const PointCloud& c, const char* who) {
  if (c.pts.empty()) throw InvalidArgument(std::string(who) + ": empty point cloud");
  for (const Vec3& p : c.pts) {
    if (!std::isfinite(p[0]) || !std::isfinite(p[1]) || !std::isfinite(p[2])) {
      throw InvalidArgument(std::string(who) + ": non-finite coordinate");
    }
  }
}

// Fixed-capacity best-k list ordered by (distance^2, index).
struct BestK {
  std::size_t k;
  std::vector<std::pair<double, std::uint32_t>> heap;  // sorted ascending

  explicit BestK(std::size_t k_) : k(k_) { heap.reserve(k_ + 1); }

  double worst() const { return heap.size() < k ? kInf : heap.back().first; }

  bool admissible(double d2, std::uint32_t idx) const {
    if (heap.size() < k) return true;
    const auto& w = heap.back();
    return d2 < w.first || (d2 == w.first && idx < w.second);
  }

  void offer(double d2, std::uint32_t idx) {
    if (!admissible(d2, idx)) return;
    auto pos = std::lower_bound(heap.begin(), heap.end(), std::make_pair(d2, idx));
    heap.insert(pos, {d2, idx});
    if (heap.size() > k) heap.pop_back();
  }
};

void emit_row(const BestK& best, std::size_t row, std::size_t k, NeighborIndex& out) {
  const std::size_t found = best.heap.size();
  for (std::size_t j = 0; j < k; ++j) {
    if (j < found) {
      out.indices[row * k + j] = best.heap[j].second;
      out.distances[row * k + j] = std::sqrt(best.heap[j].first);
    } else {
      // Pad by repeating the nearest, flagged with an infinite distance.
      out.indices[row * k + j] = best.heap[0].second;
      out.distances[row * k + j] = kInf;
    }
  }
}

}  // namespace

std::vector<std::uint32_t> farthest_point_sample(const PointCloud& cloud, std::size_t n_out,
                                                 std::uint64_t seed) {
  check_cloud(cloud, "farthest_point_sample");
  const std::size_t n = cloud.size();
  if (n_out < 1 || n_out > n) throw InvalidArgument("farthest_point_sample: n_out out of range");
  std::vector<std::uint32_t> picked;
  picked.reserve(n_out);
  const std::uint32_t first = static_cast<std::uint32_t>(seed % n);
  picked.push_back(first);
  std::vector<double> d2(n);
  for (std::size_t i = 0; i < n; ++i) d2[i] = sq_dist(cloud.pts[i], cloud.pts[first]);
  while (picked.size() < n_out) {
    std::size_t best = 0;
    double best_d = -1.0;
    for (std::size_t i = 0; i < n; ++i) {
      if (d2[i] > best_d) {  // strict: ties keep the lowest index
        best_d = d2[i];
        best = i;
      }
    }
    picked.push_back(static_cast<std::uint32_t>(best));
    for (std::size_t i = 0; i < n; ++i) d2[i] = std::min(d2[i], sq_dist(cloud.pts[i], cloud.pts[best]));
  }
  return picked;
}

std::vector<std::uint32_t> random_sample(std::size_t n, std::size_t n_out, std::uint64_t seed) {
  if (n == 0) throw InvalidArgument("random_sample: empty population");
  if (n_out < 1 || n_out > n) throw InvalidArgument("random_sample: n_out out of range");
  std::vector<std::uint32_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0u);
  Rng rng(seed);
  for (std::size_t i = 0; i < n_out; ++i) {
    const std::size_t j = i + static_cast<std::size_t>(rng.below(n - i));
    std::swap(idx[i], idx[j]);
  }
  idx.resize(n_out);
  return idx;
}

NeighborIndex knn_bruteforce(const PointCloud& query, const PointCloud& source, std::size_t k) {
  check_cloud(query, "knn");
  check_cloud(source, "knn");
  if (k < 1) throw InvalidArgument("knn: k must be positive");
  NeighborIndex out;
  out.n = query.size();
  out.k = k;
  out.indices.resize(out.n * k);
  out.distances.resize(out.n * k);
  const std::size_t m = source.size();
  for (std::size_t qi = 0; qi < out.n; ++qi) {
    BestK best(std::min(k, m));
    for (std::size_t si = 0; si < m; ++si) {
      best.offer(sq_dist(query.pts[qi], source.pts[si]), static_cast<std::uint32_t>(si));
    }
    emit_row(best, qi, k, out);
  }
  return out;
}

namespace {

struct UniformGrid {
  Vec3 lo{0, 0, 0};
  double cell = 1.0;
  std::array<std::int64_t, 3> dims{1, 1, 1};
  std::unordered_map<std::uint64_t, std::vector<std::uint32_t>> cells;

  std::uint64_t key(std::int64_t x, std::int64_t y, std::int64_t z) const {
    return (static_cast<std::uint64_t>(x) << 42) ^ (static_cast<std::uint64_t>(y) << 21) ^
           static_cast<std::uint64_t>(z);
  }

  std::array<std::int64_t, 3> cell_of(const Vec3& p) const {
    std::array<std::int64_t, 3> c;
    for (int a = 0; a < 3; ++a) {
      std::int64_t v = static_cast<std::int64_t>(std::floor((p[a] - lo[a]) / cell));
      c[a] = std::clamp<std::int64_t>(v, 0, dims[a] - 1);
    }
    return c;
  }
};

UniformGrid build_grid(const PointCloud& source) {
  UniformGrid g;
  Vec3 hi = source.pts[0];
  g.lo = source.pts[0];
  for (const Vec3& p : source.pts) {
    for (int a = 0; a < 3; ++a) {
      g.lo[a] = std::min(g.lo[a], p[a]);
      hi[a] = std::max(hi[a], p[a]);
    }
  }
  const double ext =
      std::max({hi[0] - g.lo[0], hi[1] - g.lo[1], hi[2] - g.lo[2], 1e-12});
  // Aim for a few points per cell; cap the grid resolution.
  const double target = std::cbrt(static_cast<double>(source.size()));
  g.cell = std::max(ext / std::min(target * 2.0, 192.0), 1e-9);
  for (int a = 0; a < 3; ++a) {
    g.dims[a] = std::max<std::int64_t>(
        1, static_cast<std::int64_t>(std::floor((hi[a] - g.lo[a]) / g.cell)) + 1);
  }
  for (std::size_t i = 0; i < source.size(); ++i) {
    const auto c = g.cell_of(source.pts[i]);
    g.cells[g.key(c[0], c[1], c[2])].push_back(static_cast<std::uint32_t>(i));
  }
  return g;
}

}  // namespace

NeighborIndex knn(const PointCloud& query, const PointCloud& source, std::size_t k) {
  check_cloud(query, "knn");
  check_cloud(source, "knn");
  if (k < 1) throw InvalidArgument("knn: k must be positive");
  // Small problems: the scan is faster than building a grid.
  if (source.size() * query.size() <= 4096) return knn_bruteforce(query, source, k);

  const UniformGrid grid = build_grid(source);
  NeighborIndex out;
  out.n = query.size();
  out.k = k;
  out.indices.resize(out.n * k);
  out.distances.resize(out.n * k);
  const std::size_t m = source.size();
  const std::int64_t max_ring =
      std::max({grid.dims[0], grid.dims[1], grid.dims[2]});

  for (std::size_t qi = 0; qi < out.n; ++qi) {
    const Vec3& q = query.pts[qi];
    const auto qc = grid.cell_of(q);
    BestK best(std::min(k, m));

    auto scan_cell = [&](std::int64_t x, std::int64_t y, std::int64_t z) {
      if (x < 0 || y < 0 || z < 0 || x >= grid.dims[0] || y >= grid.dims[1] || z >= grid.dims[2])
        return;
      auto it = grid.cells.find(grid.key(x, y, z));
      if (it == grid.cells.end()) return;
      for (std::uint32_t si : it->second) best.offer(sq_dist(q, source.pts[si]), si);
    };

    for (std::int64_t r = 0; r <= max_ring; ++r) {
      if (r > 0) {
        // Any point in a cell at Chebyshev ring r is at least (r-1)*cell away
        // from q only when q lies inside its own cell; the clamp above can
        // break that, so fall back to exhaustive rings for clamped queries.
        const auto exact = std::array<double, 3>{(q[0] - grid.lo[0]) / grid.cell,
                                                 (q[1] - grid.lo[1]) / grid.cell,
                                                 (q[2] - grid.lo[2]) / grid.cell};
        const bool inside = exact[0] >= 0 && exact[1] >= 0 && exact[2] >= 0 &&
                            exact[0] < static_cast<double>(grid.dims[0]) &&
                            exact[1] < static_cast<double>(grid.dims[1]) &&
                            exact[2] < static_cast<double>(grid.dims[2]);
        if (inside && best.heap.size() == best.k) {
          const double bound = static_cast<double>(r - 1) * grid.cell;
          if (bound * bound > best.worst()) break;
        }
      }
      // Visit the Chebyshev ring at radius r around qc.
      if (r == 0) {
        scan_cell(qc[0], qc[1], qc[2]);
        continue;
      }
      for (std::int64_t dx = -r; dx <= r; ++dx) {
        for (std::int64_t dy = -r; dy <= r; ++dy) {
          const bool face_xy = (std::abs(dx) == r || std::abs(dy) == r);
          if (face_xy) {
            for (std::int64_t dz = -r; dz <= r; ++dz)
              scan_cell(qc[0] + dx, qc[1] + dy, qc[2] + dz);
          } else {
            scan_cell(qc[0] + dx, qc[1] + dy, qc[2] - r);
            scan_cell(qc[0] + dx, qc[1] + dy, qc[2] + r);
          }
        }
      }
    }
    emit_row(best, qi, k, out);
  }
  return out;
}

ThreeNN three_nn_weights(const PointCloud& query, const PointCloud& source) {
  constexpr double kEps = 1e-8;
  const NeighborIndex nn = knn(query, source, 3);
  ThreeNN out;
  out.idx.resize(query.size());
  out.weights.resize(query.size());
  for (std::size_t i = 0; i < query.size(); ++i) {
    Vec3 w{0, 0, 0};
    double total = 0.0;
    for (int t = 0; t < 3; ++t) {
      out.idx[i][t] = nn.index(i, t);
      const double d = nn.distance(i, t);
      w[t] = std::isinf(d) ? 0.0 : 1.0 / (d + kEps);
      total += w[t];
    }
    for (int t = 0; t < 3; ++t) out.weights[i][t] = w[t] / total;
  }
  return out;
}

}  // namespace carf::geom
