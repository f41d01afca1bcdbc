// SPDX-License-Identifier: Apache-2.0
//
// Differentiable building blocks: context-aware set conv, attentive cost
// volume, set upconv, coordinate warping and the residual scene-flow
// predictor. Layers are pure functions of (inputs, params); neighbour
// selection is non-differentiable, gradients flow through coordinates only
// where those coordinates are themselves computed (warped points).
#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "core/geom.hpp"
#include "core/params.hpp"
#include "core/tensor.hpp"

namespace carf::layers {

enum class SamplerKind { random, fps };
// full: absolute positions + relative offset + distance (10 channels).
// relative: offset + distance only (4 channels); translation-invariant.
enum class EncodingKind { full, relative };

inline std::size_t encoding_width(EncodingKind k) { return k == EncodingKind::full ? 10 : 4; }

/// One pyramid level: coordinates plus (optionally) features. The first
/// pyramid layer runs on bare coordinates, which then double as features.
struct LevelCloud {
  Tensor coords;    // [n, 3]
  Tensor features;  // [n, c] or invalid

  std::size_t size() const { return coords.dim(0); }
  geom::PointCloud raw() const { return geom::PointCloud{coords.rows3()}; }
  const Tensor& feats_or_coords() const { return features.valid() ? features : coords; }
};

/// 10-vector of one (center, neighbour) pair: center, neighbour, offset, norm.
std::array<double, 10> spatial_encode(const Vec3& center, const Vec3& neighbor);

/// Batched encoding: centers [n,3] x grouped [n,k,3] -> [n,k,10] (or [n,k,4]).
Tensor spatial_encoding(const Tensor& centers, const Tensor& grouped, EncodingKind kind);

/// x [n,3] + flow [n,3]; differentiable in both.
Tensor warp(const Tensor& coords, const Tensor& flow);

class Linear {
 public:
  Linear() = default;
  Linear(ParamRegistry& reg, const std::string& name, std::size_t in, std::size_t out);
  Tensor apply(const Tensor& x) const;  // [..., in] -> [..., out]
  const Tensor& weight() const { return w_; }
  const Tensor& bias() const { return b_; }

 private:
  Tensor w_, b_;
  std::size_t in_ = 0, out_ = 0;
};

/// Shared MLP: Linear+ReLU chain; `relu_final` decides the last activation
/// (feature MLPs keep it, logit/flow heads drop it).
class Mlp {
 public:
  Mlp() = default;
  Mlp(ParamRegistry& reg, const std::string& name, std::size_t in,
      const std::vector<std::size_t>& widths, bool relu_final);
  Tensor apply(const Tensor& x) const;
  const std::vector<Linear>& linears() const { return layers_; }

 private:
  std::vector<Linear> layers_;
  bool relu_final_ = true;
};

struct SetConvResult {
  LevelCloud cloud;
  std::vector<std::uint32_t> sample_idx;
};

class ContextAwareSetConv {
 public:
  ContextAwareSetConv() = default;
  ContextAwareSetConv(ParamRegistry& reg, const std::string& name, std::size_t in_channels,
                      std::size_t out_channels, std::size_t fc_d_channels, bool context_aware,
                      EncodingKind encoding = EncodingKind::full);

  SetConvResult forward(const LevelCloud& input, std::size_t n_out, std::size_t k,
                        SamplerKind sampler, std::uint64_t seed) const;
  /// Aggregation with caller-supplied sampling and grouping.
  LevelCloud forward_grouped(const LevelCloud& input, const std::vector<std::uint32_t>& sample_idx,
                             const geom::NeighborIndex& neighbors) const;

  std::size_t out_channels() const { return out_; }

 private:
  Mlp point_mlp_;   // per-neighbour feature lift
  Mlp fc_d_;        // spatial-encoding projection feeding the weight net
  Mlp weight_mlp_;  // aggregation logits (softmax over neighbours, per channel)
  bool context_aware_ = true;
  EncodingKind encoding_ = EncodingKind::full;
  std::size_t in_ = 0, out_ = 0;
};

class AttentiveCostVolume {
 public:
  AttentiveCostVolume() = default;
  AttentiveCostVolume(ParamRegistry& reg, const std::string& name, std::size_t c1, std::size_t c2,
                      std::size_t out_channels, std::size_t k1, std::size_t k2);

  /// Two-stage attentive matching: cross-frame then self-neighbourhood.
  Tensor forward(const LevelCloud& pc1, const LevelCloud& pc2) const;

  std::size_t out_channels() const { return out_; }

 private:
  Mlp h_mlp_;
  Mlp attn1_mlp_;
  Mlp attn2_mlp_;
  std::size_t c1_ = 0, c2_ = 0, out_ = 0, k1_ = 8, k2_ = 8;
};

class SetUpconv {
 public:
  SetUpconv() = default;
  /// skip_channels == 0 builds the variant without the fuse MLP.
  SetUpconv(ParamRegistry& reg, const std::string& name, std::size_t emb_channels,
            std::size_t skip_channels, std::size_t out_channels);

  Tensor forward(const LevelCloud& sparse, const Tensor& dense_coords, const Tensor& dense_feats,
                 std::size_t k) const;

  std::size_t out_channels() const { return out_; }

 private:
  Mlp mlp1_;
  Mlp fuse_;
  std::size_t emb_ = 0, skip_ = 0, out_ = 0;
};

class SceneFlowPredictor {
 public:
  SceneFlowPredictor() = default;
  SceneFlowPredictor(ParamRegistry& reg, const std::string& name, std::size_t c_pf,
                     std::size_t c_re, std::size_t c_up, std::size_t emb_channels, bool residual);

  struct Out {
    Tensor flow;       // [n, 3]
    Tensor embedding;  // [n, emb]
  };
  Out forward(const Tensor& pf, const Tensor& re, const Tensor& e_up,
              const Tensor& coarse_flow) const;

  const Linear& flow_head() const { return fc_; }
  std::size_t emb_channels() const { return emb_out_; }

 private:
  Mlp emb_mlp_;
  Linear fc_;
  bool residual_ = true;
  std::size_t emb_out_ = 0;
};

/// Upconv + three-NN flow interpolation + warping + re-embedding + predictor.
class ResidualFlowRefinement {
 public:
  ResidualFlowRefinement() = default;
  ResidualFlowRefinement(ParamRegistry& reg, const std::string& name,
                         std::size_t level_feat_channels, std::size_t prev_emb_channels,
                         std::size_t cv_channels, std::size_t up_channels,
                         std::size_t predictor_channels, std::size_t k_up, std::size_t k1,
                         std::size_t k2, bool residual);

  struct Out {
    Tensor flow;          // [n, 3] refined
    Tensor embedding;     // [n, emb]
    Tensor coarse_dense;  // [n, 3] interpolated incoming flow
  };
  Out forward(const Tensor& prev_flow, const LevelCloud& prev, const LevelCloud& pc1,
              const LevelCloud& pc2) const;

  const SceneFlowPredictor& predictor() const { return pred_; }

 private:
  SetUpconv up_;
  AttentiveCostVolume cv_;
  SceneFlowPredictor pred_;
  std::size_t k_up_ = 8;
};

}  // namespace carf::layers
