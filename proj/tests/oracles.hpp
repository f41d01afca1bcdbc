// SPDX-License-Identifier: Apache-2.0
//
// Independent straight-loop reference implementations used as oracles by the
// unit and acceptance suites. Everything here is plain loops over plain
// arrays: no tensor engine, no shared code with src/ beyond the parameter
// values they are handed.
#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "core/common.hpp"
#include "core/params.hpp"

namespace oracle {

using carf::Vec3;
using Mat = std::vector<std::vector<double>>;  // row major

struct OLinear {
  Mat w;  // [in][out]
  std::vector<double> b;
};

struct OMlp {
  std::vector<OLinear> layers;
  bool relu_final = true;
};

/// Pulls the weights of an Mlp registered as `<name>.<i>.{w,b}`.
OMlp load_mlp(const carf::ParamRegistry& reg, const std::string& name, std::size_t layer_count,
              bool relu_final);
/// Pulls a bare Linear registered as `<name>.{w,b}`.
OLinear load_linear(const carf::ParamRegistry& reg, const std::string& name);

std::vector<double> linear_row(const OLinear& lin, const std::vector<double>& x);
std::vector<double> mlp_row(const OMlp& mlp, std::vector<double> x);

/// Naive softmax over a vector (no max subtraction).
std::vector<double> softmax_vec(const std::vector<double>& x);

std::array<double, 10> spatial_encode(const Vec3& center, const Vec3& neighbor);

// ---- geometry oracles -------------------------------------------------------

std::vector<std::uint32_t> fps(const std::vector<Vec3>& pts, std::size_t n_out,
                               std::uint64_t seed);
/// Rows sorted by (distance, index); k > n pads by repeating the nearest
/// index with +inf distance.
void knn(const std::vector<Vec3>& query, const std::vector<Vec3>& source, std::size_t k,
         std::vector<std::vector<std::uint32_t>>& idx, std::vector<std::vector<double>>& dist);
void three_nn(const std::vector<Vec3>& query, const std::vector<Vec3>& source,
              std::vector<std::array<std::uint32_t, 3>>& idx, std::vector<Vec3>& weights);

// ---- layer oracles ----------------------------------------------------------

struct SetConvWeights {
  OMlp point_mlp, fc_d, weight_mlp;
  bool context_aware = true;
};

/// Context-aware set conv over given sampling/grouping.
Mat set_conv(const std::vector<Vec3>& coords, const Mat& feats,
             const std::vector<std::uint32_t>& sample_idx,
             const std::vector<std::vector<std::uint32_t>>& neighbors,
             const SetConvWeights& w);

struct CostVolumeWeights {
  OMlp h_mlp, attn1, attn2;
};

/// Two-stage attentive cost volume; neighbour tables supplied by the caller.
Mat cost_volume(const std::vector<Vec3>& x1, const Mat& f1, const std::vector<Vec3>& x2,
                const Mat& f2, const std::vector<std::vector<std::uint32_t>>& nn_cross,
                const std::vector<std::vector<std::uint32_t>>& nn_self,
                const CostVolumeWeights& w);

struct UpconvWeights {
  OMlp mlp1, fuse;
  bool has_fuse = true;
};

Mat set_upconv(const std::vector<Vec3>& sparse_xyz, const Mat& sparse_emb,
               const std::vector<Vec3>& dense_xyz, const Mat& dense_feats,
               const std::vector<std::vector<std::uint32_t>>& neighbors, const UpconvWeights& w);

struct PredictorWeights {
  OMlp emb_mlp;
  OLinear fc;
  bool residual = true;
};

void predictor(const Mat& pf, const Mat& re, const Mat& e_up, const Mat& coarse,
               const PredictorWeights& w, Mat& flow_out, Mat& emb_out);

// ---- loss / metrics oracles ---------------------------------------------------

double multiscale_loss(const std::vector<Mat>& flows, const std::vector<std::vector<Vec3>>& gt,
                       const std::vector<double>& weights);

struct M3 {
  double epe3d, acc_strict, acc_relax, outliers;
};
M3 metrics_3d(const std::vector<Vec3>& pred, const std::vector<Vec3>& gt);

struct M2 {
  double epe2d, acc2d;
  std::size_t counted;
};
M2 metrics_2d(const std::vector<Vec3>& pc1, const std::vector<Vec3>& pred,
              const std::vector<Vec3>& gt, double fx, double fy, double cx, double cy);

/// Assign each pc1 point the displacement to its nearest pc2 point and return
/// the resulting EPE3D.
double nearest_neighbor_flow_epe(const std::vector<Vec3>& pc1, const std::vector<Vec3>& pc2,
                                 const std::vector<Vec3>& gt);

}  // namespace oracle
