// SPDX-License-Identifier: Apache-2.0
//
// Coarse-to-fine assembly: shared context-aware pyramid over both frames,
// attentive cost volume, embedding set convs, initial coarse flow, three
// residual refinement layers plus the interpolation+MLP final level.
#pragma once

#include <array>
#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "core/adam.hpp"
#include "core/layers.hpp"
#include "core/params.hpp"

namespace carf::net {

struct NetworkConfig {
  std::size_t n_input = 8192;
  // Frame-1 pyramid levels l1..l4 = n/4, n/8, n/32, n/128.
  std::array<std::size_t, 4> level_sizes = {2048, 1024, 256, 64};
  // Point counts of the two embedding set convs after the cost volume.
  std::array<std::size_t, 2> embedding_conv_sizes = {64, 16};
  std::array<std::size_t, 4> channels = {32, 64, 128, 256};
  std::size_t cv_channels = 128;
  std::size_t up_channels = 128;
  std::size_t predictor_channels = 128;
  std::size_t fc_d_channels = 16;
  std::size_t k_pyramid = 16;
  std::size_t k_cv1 = 8;
  std::size_t k_cv2 = 8;
  std::size_t k_up = 8;
  // phi_1..phi_4, finest level first.
  std::array<double, 4> loss_weights = {0.2, 0.4, 0.8, 1.6};
  bool context_aware = true;
  bool residual_learning = true;

  /// Derives the level/embedding point counts from n_input at the standard
  /// ratios (n/4, n/8, n/32, n/128 and n/128, n/512).
  static NetworkConfig for_input(std::size_t n_input);
  void validate() const;
};

/// Everything a forward pass produced, for supervision and inspection.
struct PyramidState {
  struct Level {
    layers::LevelCloud cloud;
    std::vector<std::uint32_t> parent_idx;  // into the previous level
  };
  std::vector<std::uint32_t> input_idx1, input_idx2;  // into the caller's clouds
  std::array<Level, 4> f1, f2;                        // l1..l4
  // Composed frame-1 index chains: level l coordinates == input[gt_chain[l]].
  std::array<std::vector<std::uint32_t>, 4> gt_chain;
  Tensor cv_embedding;        // at l3
  Tensor initial_coarse;      // flow at l4 before refinement
  std::array<Tensor, 4> coarse_dense;  // interpolated incoming flow per supervised level
  std::array<Tensor, 4> embeddings;    // refined embeddings, coarse (l4) to fine (l1)
};

struct ForwardResult {
  /// Supervised flows, coarse to fine: l4 (n/128), l3 (n/32), l2 (n/8), l1 (n/4).
  std::array<Tensor, 4> flows;
  PyramidState state;
};

class Network {
 public:
  Network(NetworkConfig cfg, std::uint64_t param_seed);

  /// Both clouds need >= n_input points; larger clouds are subsampled
  /// (seeded). sample_seed drives every sampling choice of this pass.
  ForwardResult forward(const std::vector<Vec3>& pc1, const std::vector<Vec3>& pc2,
                        std::uint64_t sample_seed) const;

  const NetworkConfig& config() const { return cfg_; }
  ParamRegistry& registry() { return reg_; }
  const ParamRegistry& registry() const { return reg_; }

  /// Shared-parameter wiring proof: the set conv applied to frame 2 at level
  /// `level` (0-based) is the same object used for frame 1.
  const layers::ContextAwareSetConv& pyramid_conv(std::size_t level) const;

 private:
  NetworkConfig cfg_;
  ParamRegistry reg_;
  std::array<layers::ContextAwareSetConv, 4> convs_;
  layers::AttentiveCostVolume cv_main_;
  std::array<layers::ContextAwareSetConv, 2> emb_convs_;
  layers::SetUpconv up0_;
  layers::Linear coarse_fc_;
  std::array<layers::ResidualFlowRefinement, 3> refine_;
  layers::Mlp final_mlp_;
  layers::Linear final_fc_;
};

// ---- checkpoint file ---------------------------------------------------------
// Little-endian: magic "CARF", version u32=1, param count u32; per param:
// name length u32, UTF-8 name, rank u32, dims u32 x rank, payload f32; then
// one length-prefixed UTF-8 key=value config block.

struct NamedBlob {
  std::string name;
  std::vector<std::uint32_t> dims;
  std::vector<float> data;
};

void write_checkpoint(const std::string& path, const std::vector<NamedBlob>& blobs,
                      const std::string& config_text);
struct CheckpointContents {
  std::vector<NamedBlob> blobs;
  std::string config_text;
};
CheckpointContents read_checkpoint(const std::string& path);

/// Network parameters (plus optimizer state when given) as checkpoint blobs.
std::vector<NamedBlob> export_blobs(const Network& net, const Adam* optimizer);

/// Copies parameter blobs back into the registry; restores optimizer state
/// when `optimizer` is given and "opt.*" blobs are present. Throws
/// ConfigError on any mismatch with the constructed network.
void import_blobs(Network& net, const std::vector<NamedBlob>& blobs, Adam* optimizer);

}  // namespace carf::net
