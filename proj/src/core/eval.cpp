// SPDX-License-Identifier: Apache-2.0
#include "core/eval.hpp"

#include <cmath>
#include <cstdio>
#include <limits>

namespace carf::eval {

Tensor multiscale_loss(const std::vector<Tensor>& flows,
                       const std::vector<std::vector<Vec3>>& gt,
                       const std::vector<double>& weights) {
  if (flows.empty()) throw InvalidArgument("multiscale_loss: no levels");
  if (flows.size() != gt.size() || flows.size() != weights.size()) {
    throw InvalidArgument("multiscale_loss: level/weight count mismatch");
  }
  Tensor total;
  for (std::size_t l = 0; l < flows.size(); ++l) {
    const Tensor& f = flows[l];
    if (f.rank() != 2 || f.dim(1) != 3) throw InvalidArgument("multiscale_loss: flow must be [n,3]");
    if (f.dim(0) != gt[l].size()) {
      throw InvalidArgument("multiscale_loss: gt rows mismatch at level " + std::to_string(l));
    }
    const std::size_t n = f.dim(0);
    Tensor gt_t = Tensor::from_points(gt[l]);
    Tensor per_point = l2_norm_last_axis(sub(f, gt_t));
    Tensor level = scale(reduce_sum(per_point), weights[l] / static_cast<double>(n));
    total = total.valid() ? add(total, level) : level;
  }
  return total;
}

namespace {

// Relative error with explicit conventions at the edges: exact prediction is
// 0 regardless of gt, and any error against a zero gt counts as infinite.
double rel_err(double err, double gt_norm) {
  if (err == 0.0) return 0.0;
  if (gt_norm == 0.0) return std::numeric_limits<double>::infinity();
  return err / gt_norm;
}

double norm3(const Vec3& v) {
  return std::sqrt(v[0] * v[0] + v[1] * v[1] + v[2] * v[2]);
}

}  // namespace

Metrics3 metrics_3d(std::span<const Vec3> pred, std::span<const Vec3> gt,
                    const std::vector<std::uint8_t>* mask) {
  if (pred.size() != gt.size()) throw InvalidArgument("metrics_3d: shape mismatch");
  if (mask && mask->size() != pred.size()) throw InvalidArgument("metrics_3d: mask size mismatch");
  std::vector<double> errs;
  errs.reserve(pred.size());
  std::size_t strict = 0, relax = 0, outlier = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    if (mask && !(*mask)[i]) continue;
    const Vec3 d{pred[i][0] - gt[i][0], pred[i][1] - gt[i][1], pred[i][2] - gt[i][2]};
    const double err = norm3(d);
    const double rel = rel_err(err, norm3(gt[i]));
    errs.push_back(err);
    if (err < 0.05 || rel < 0.05) ++strict;
    if (err < 0.1 || rel < 0.1) ++relax;
    if (err > 0.3 || rel > 0.1) ++outlier;
  }
  if (errs.empty()) throw InvalidArgument("metrics_3d: empty mask");
  Metrics3 m;
  m.count = errs.size();
  m.epe3d = canonical_sum_inplace(errs) / static_cast<double>(m.count);
  m.acc_strict = static_cast<double>(strict) / static_cast<double>(m.count);
  m.acc_relax = static_cast<double>(relax) / static_cast<double>(m.count);
  m.outliers = static_cast<double>(outlier) / static_cast<double>(m.count);
  return m;
}

Metrics2 metrics_2d(std::span<const Vec3> pc1, std::span<const Vec3> pred,
                    std::span<const Vec3> gt, const CameraIntrinsics& intr,
                    const std::vector<std::uint8_t>* mask) {
  if (pc1.size() != pred.size() || pc1.size() != gt.size()) {
    throw InvalidArgument("metrics_2d: shape mismatch");
  }
  if (mask && mask->size() != pc1.size()) throw InvalidArgument("metrics_2d: mask size mismatch");
  if (!(intr.fx > 0.0) || !(intr.fy > 0.0)) throw InvalidArgument("metrics_2d: fx, fy must be positive");

  auto project = [&](const Vec3& p) {
    return std::array<double, 2>{intr.fx * p[0] / p[2] + intr.cx, intr.fy * p[1] / p[2] + intr.cy};
  };
  std::vector<double> errs;
  std::size_t acc = 0, excluded = 0;
  for (std::size_t i = 0; i < pc1.size(); ++i) {
    if (mask && !(*mask)[i]) continue;
    const Vec3 p = pc1[i];
    const Vec3 pp{p[0] + pred[i][0], p[1] + pred[i][1], p[2] + pred[i][2]};
    const Vec3 pg{p[0] + gt[i][0], p[1] + gt[i][1], p[2] + gt[i][2]};
    if (!(p[2] > 0.0) || !(pp[2] > 0.0) || !(pg[2] > 0.0)) {
      ++excluded;
      continue;
    }
    const auto u0 = project(p), up = project(pp), ug = project(pg);
    const std::array<double, 2> of_pred{up[0] - u0[0], up[1] - u0[1]};
    const std::array<double, 2> of_gt{ug[0] - u0[0], ug[1] - u0[1]};
    const double dx = of_pred[0] - of_gt[0], dy = of_pred[1] - of_gt[1];
    const double err = std::sqrt(dx * dx + dy * dy);
    const double gt_norm = std::sqrt(of_gt[0] * of_gt[0] + of_gt[1] * of_gt[1]);
    errs.push_back(err);
    if (err < 3.0 || rel_err(err, gt_norm) < 0.05) ++acc;
  }
  if (errs.empty()) throw DataError("metrics_2d: all points behind camera");
  Metrics2 m;
  m.count = errs.size();
  m.excluded = excluded;
  m.epe2d = canonical_sum_inplace(errs) / static_cast<double>(m.count);
  m.acc2d = static_cast<double>(acc) / static_cast<double>(m.count);
  return m;
}

void MetricsAccumulator::add(std::span<const Vec3> pc1, std::span<const Vec3> pred,
                             std::span<const Vec3> gt, const std::vector<std::uint8_t>* mask,
                             const CameraIntrinsics* intr) {
  for (std::size_t i = 0; i < pred.size(); ++i) {
    if (mask && !(*mask)[i]) continue;
    const Vec3 d{pred[i][0] - gt[i][0], pred[i][1] - gt[i][1], pred[i][2] - gt[i][2]};
    const double err = norm3(d);
    const double rel = rel_err(err, norm3(gt[i]));
    err3_.push_back(err);
    ++n3_;
    if (err < 0.05 || rel < 0.05) ++strict_;
    if (err < 0.1 || rel < 0.1) ++relax_;
    if (err > 0.3 || rel > 0.1) ++outlier_;
  }
  if (!intr) return;
  any2d_ = true;
  auto project = [&](const Vec3& p) {
    return std::array<double, 2>{intr->fx * p[0] / p[2] + intr->cx,
                                 intr->fy * p[1] / p[2] + intr->cy};
  };
  for (std::size_t i = 0; i < pred.size(); ++i) {
    if (mask && !(*mask)[i]) continue;
    const Vec3 p = pc1[i];
    const Vec3 pp{p[0] + pred[i][0], p[1] + pred[i][1], p[2] + pred[i][2]};
    const Vec3 pg{p[0] + gt[i][0], p[1] + gt[i][1], p[2] + gt[i][2]};
    if (!(p[2] > 0.0) || !(pp[2] > 0.0) || !(pg[2] > 0.0)) {
      ++excluded2_;
      continue;
    }
    const auto u0 = project(p), up = project(pp), ug = project(pg);
    const double dx = (up[0] - u0[0]) - (ug[0] - u0[0]);
    const double dy = (up[1] - u0[1]) - (ug[1] - u0[1]);
    const double err = std::sqrt(dx * dx + dy * dy);
    const double gt_norm = std::hypot(ug[0] - u0[0], ug[1] - u0[1]);
    err2_.push_back(err);
    ++n2_;
    if (err < 3.0 || rel_err(err, gt_norm) < 0.05) ++acc2_;
  }
}

MetricsReport MetricsAccumulator::finalize() const {
  if (n3_ == 0) throw InvalidArgument("metrics: no evaluated points");
  MetricsReport r;
  r.points = n3_;
  std::vector<double> e3 = err3_;
  r.epe3d = canonical_sum_inplace(e3) / static_cast<double>(n3_);
  r.acc3d_strict = static_cast<double>(strict_) / static_cast<double>(n3_);
  r.acc3d_relax = static_cast<double>(relax_) / static_cast<double>(n3_);
  r.outliers3d = static_cast<double>(outlier_) / static_cast<double>(n3_);
  if (any2d_ && n2_ > 0) {
    std::vector<double> e2 = err2_;
    r.epe2d = canonical_sum_inplace(e2) / static_cast<double>(n2_);
    r.acc2d = static_cast<double>(acc2_) / static_cast<double>(n2_);
    r.points_2d = n2_;
    r.excluded_2d = excluded2_;
  }
  return r;
}

std::string report_lines(const MetricsReport& r) {
  char buf[512];
  std::snprintf(buf, sizeof(buf),
                "epe3d = %.6f\nacc3d_strict = %.6f\nacc3d_relax = %.6f\noutliers3d = %.6f\n"
                "epe2d = %.6f\nacc2d = %.6f\n",
                r.epe3d, r.acc3d_strict, r.acc3d_relax, r.outliers3d, r.epe2d, r.acc2d);
  return buf;
}

std::string report_record(const MetricsReport& r) {
  char buf[512];
  std::snprintf(buf, sizeof(buf),
                "epe3d=%.6f acc3d_strict=%.6f acc3d_relax=%.6f outliers3d=%.6f "
                "epe2d=%.6f acc2d=%.6f",
                r.epe3d, r.acc3d_strict, r.acc3d_relax, r.outliers3d, r.epe2d, r.acc2d);
  return buf;
}

}  // namespace carf::eval
