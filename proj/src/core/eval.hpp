// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "core/common.hpp"
#include "core/tensor.hpp"

namespace carf::eval {

struct CameraIntrinsics {
  double fx = 1050.0, fy = 1050.0;
  double cx = 479.5, cy = 269.5;
};

struct MetricsReport {
  double epe3d = 0.0;
  double acc3d_strict = 0.0;
  double acc3d_relax = 0.0;
  double outliers3d = 0.0;
  double epe2d = 0.0;
  double acc2d = 0.0;
  std::size_t points = 0;
  std::size_t points_2d = 0;
  std::size_t excluded_2d = 0;  // nonpositive-depth projections
};

/// Weighted multi-scale endpoint loss: sum_l w_l * (1/N_l) * sum_i ||pred - gt||.
/// flows, gt and weights are parallel (any level order); differentiable.
Tensor multiscale_loss(const std::vector<Tensor>& flows,
                       const std::vector<std::vector<Vec3>>& gt,
                       const std::vector<double>& weights);

struct Metrics3 {
  double epe3d = 0.0, acc_strict = 0.0, acc_relax = 0.0, outliers = 0.0;
  std::size_t count = 0;
};
/// Thresholds (strict inequalities): accuracy <0.05m or <5% / <0.1m or <10%;
/// outliers >0.3m or >10%. mask==nullptr means all points valid.
Metrics3 metrics_3d(std::span<const Vec3> pred, std::span<const Vec3> gt,
                    const std::vector<std::uint8_t>* mask);

struct Metrics2 {
  double epe2d = 0.0, acc2d = 0.0;
  std::size_t count = 0, excluded = 0;
};
/// Pinhole-projected optical-flow error; points whose projections have
/// nonpositive depth are excluded and counted.
Metrics2 metrics_2d(std::span<const Vec3> pc1, std::span<const Vec3> pred,
                    std::span<const Vec3> gt, const CameraIntrinsics& intr,
                    const std::vector<std::uint8_t>* mask);

/// Pools per-point errors across scenes; the final report is independent of
/// the order scenes (or points) were added in.
class MetricsAccumulator {
 public:
  void add(std::span<const Vec3> pc1, std::span<const Vec3> pred, std::span<const Vec3> gt,
           const std::vector<std::uint8_t>* mask, const CameraIntrinsics* intr);
  MetricsReport finalize() const;

 private:
  std::vector<double> err3_, err2_;
  std::size_t n3_ = 0, strict_ = 0, relax_ = 0, outlier_ = 0;
  std::size_t n2_ = 0, acc2_ = 0, excluded2_ = 0;
  bool any2d_ = false;
};

/// One key=value line per metric (the six metric names), then counts.
std::string report_lines(const MetricsReport& r);
/// Single-line machine-readable record keyed by the six metric names.
std::string report_record(const MetricsReport& r);

}  // namespace carf::eval
