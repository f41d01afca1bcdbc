// SPDX-License-Identifier: Apache-2.0
#include "core/layers.hpp"

#include <cmath>

namespace carf::layers {

std::array<double, 10> spatial_encode(const Vec3& center, const Vec3& neighbor) {
  std::array<double, 10> d;
  for (int a = 0; a < 3; ++a) d[a] = center[a];
  for (int a = 0; a < 3; ++a) d[3 + a] = neighbor[a];
  for (int a = 0; a < 3; ++a) d[6 + a] = neighbor[a] - center[a];
  d[9] = std::sqrt(d[6] * d[6] + d[7] * d[7] + d[8] * d[8]);
  return d;
}

Tensor spatial_encoding(const Tensor& centers, const Tensor& grouped, EncodingKind kind) {
  if (centers.rank() != 2 || centers.dim(1) != 3) {
    throw InvalidArgument("spatial_encoding: centers must be [n,3]");
  }
  if (grouped.rank() != 3 || grouped.dim(2) != 3 || grouped.dim(0) != centers.dim(0)) {
    throw InvalidArgument("spatial_encoding: grouped must be [n,k,3]");
  }
  const std::size_t n = centers.dim(0), k = grouped.dim(1);
  Tensor cb = repeat_mid(centers, k);
  Tensor rel = sub(grouped, cb);
  Tensor dist = reshape(l2_norm_last_axis(rel), {n, k, 1});
  if (kind == EncodingKind::full) return concat({cb, grouped, rel, dist}, 2);
  return concat({rel, dist}, 2);
}

Tensor warp(const Tensor& coords, const Tensor& flow) { return add(coords, flow); }

// ---- Linear / Mlp ----------------------------------------------------------

Linear::Linear(ParamRegistry& reg, const std::string& name, std::size_t in, std::size_t out)
    : in_(in), out_(out) {
  w_ = reg.create(name + ".w", {in, out}, in);
  b_ = reg.create_zeros(name + ".b", {out});
}

Tensor Linear::apply(const Tensor& x) const {
  if (x.shape().back() != in_) {
    throw InvalidArgument("linear: trailing axis " + std::to_string(x.shape().back()) +
                          " != " + std::to_string(in_));
  }
  const std::size_t rows = x.size() / in_;
  Tensor flat = reshape(x, {rows, in_});
  Tensor y = add_bias(matmul(flat, w_), b_);
  std::vector<std::size_t> out_shape = x.shape();
  out_shape.back() = out_;
  return reshape(y, std::move(out_shape));
}

Mlp::Mlp(ParamRegistry& reg, const std::string& name, std::size_t in,
         const std::vector<std::size_t>& widths, bool relu_final)
    : relu_final_(relu_final) {
  if (widths.empty()) throw InvalidArgument("mlp: empty width list");
  std::size_t cur = in;
  for (std::size_t i = 0; i < widths.size(); ++i) {
    layers_.emplace_back(reg, name + "." + std::to_string(i), cur, widths[i]);
    cur = widths[i];
  }
}

Tensor Mlp::apply(const Tensor& x) const {
  Tensor h = x;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    h = layers_[i].apply(h);
    if (i + 1 < layers_.size() || relu_final_) h = relu(h);
  }
  return h;
}

// ---- ContextAwareSetConv ----------------------------------------------------

ContextAwareSetConv::ContextAwareSetConv(ParamRegistry& reg, const std::string& name,
                                         std::size_t in_channels, std::size_t out_channels,
                                         std::size_t fc_d_channels, bool context_aware,
                                         EncodingKind encoding)
    : context_aware_(context_aware), encoding_(encoding), in_(in_channels), out_(out_channels) {
  point_mlp_ = Mlp(reg, name + ".point_mlp", 3 + in_channels, {out_channels, out_channels}, true);
  if (context_aware_) {
    fc_d_ = Mlp(reg, name + ".fc_d", encoding_width(encoding), {fc_d_channels}, true);
    weight_mlp_ = Mlp(reg, name + ".weight_mlp", fc_d_channels + out_channels + in_channels,
                      {out_channels, out_channels}, false);
  }
}

SetConvResult ContextAwareSetConv::forward(const LevelCloud& input, std::size_t n_out,
                                           std::size_t k, SamplerKind sampler,
                                           std::uint64_t seed) const {
  const std::size_t n_in = input.size();
  if (n_out > n_in) throw InvalidArgument("set_conv: n_out exceeds input size");
  const geom::PointCloud raw = input.raw();
  std::vector<std::uint32_t> sample_idx;
  if (sampler == SamplerKind::fps) {
    sample_idx = geom::farthest_point_sample(raw, n_out, seed);
  } else {
    sample_idx = geom::random_sample(n_in, n_out, seed);
  }
  geom::PointCloud centers;
  centers.pts.reserve(n_out);
  for (std::uint32_t i : sample_idx) centers.pts.push_back(raw.pts[i]);
  const geom::NeighborIndex nbrs = geom::knn(centers, raw, k);
  LevelCloud out = forward_grouped(input, sample_idx, nbrs);
  return {std::move(out), std::move(sample_idx)};
}

LevelCloud ContextAwareSetConv::forward_grouped(const LevelCloud& input,
                                                const std::vector<std::uint32_t>& sample_idx,
                                                const geom::NeighborIndex& neighbors) const {
  const Tensor& feats = input.feats_or_coords();
  if (feats.shape().back() != in_) {
    throw InvalidArgument("set_conv: feature width " + std::to_string(feats.shape().back()) +
                          " != configured " + std::to_string(in_));
  }
  const std::size_t n_out = sample_idx.size();
  const std::size_t k = neighbors.k;
  if (neighbors.n != n_out) throw InvalidArgument("set_conv: neighbour rows != samples");

  Tensor centers = gather_rows(input.coords, sample_idx);
  Tensor grouped_xyz = reshape(gather_rows(input.coords, neighbors.indices), {n_out, k, 3});
  Tensor rel = sub(grouped_xyz, repeat_mid(centers, k));
  Tensor grouped_f = reshape(gather_rows(feats, neighbors.indices), {n_out, k, in_});
  Tensor pf_k = point_mlp_.apply(concat({rel, grouped_f}, 2));  // [n',k,out]

  Tensor out_feats;
  if (context_aware_) {
    Tensor d = spatial_encoding(centers, grouped_xyz, encoding_);
    Tensor logits = weight_mlp_.apply(concat({fc_d_.apply(d), pf_k, grouped_f}, 2));
    Tensor w = softmax(logits, 1);  // over the k neighbours, per channel
    out_feats = reduce_sum_axis(mul(pf_k, w), 1);
  } else {
    out_feats = reduce_max_axis(pf_k, 1);
  }
  return LevelCloud{centers, out_feats};
}

// ---- AttentiveCostVolume -----------------------------------------------------

AttentiveCostVolume::AttentiveCostVolume(ParamRegistry& reg, const std::string& name,
                                         std::size_t c1, std::size_t c2, std::size_t out_channels,
                                         std::size_t k1, std::size_t k2)
    : c1_(c1), c2_(c2), out_(out_channels), k1_(k1), k2_(k2) {
  h_mlp_ = Mlp(reg, name + ".h_mlp", c1 + c2 + 10, {out_channels, out_channels}, true);
  attn1_mlp_ = Mlp(reg, name + ".attn1", 10 + out_channels, {out_channels, out_channels}, false);
  attn2_mlp_ = Mlp(reg, name + ".attn2", 10 + out_channels, {out_channels, out_channels}, false);
}

Tensor AttentiveCostVolume::forward(const LevelCloud& pc1, const LevelCloud& pc2) const {
  if (!pc1.features.valid() || !pc2.features.valid()) {
    throw InvalidArgument("cost_volume: both clouds need features");
  }
  if (pc1.features.dim(1) != c1_ || pc2.features.dim(1) != c2_) {
    throw InvalidArgument("cost_volume: feature width mismatch");
  }
  const std::size_t n1 = pc1.size();
  const geom::PointCloud raw1 = pc1.raw();
  const geom::PointCloud raw2 = pc2.raw();

  // Stage 1: attend over cross-frame neighbours.
  const geom::NeighborIndex nn1 = geom::knn(raw1, raw2, k1_);
  Tensor y = reshape(gather_rows(pc2.coords, nn1.indices), {n1, k1_, 3});
  Tensor d1 = spatial_encoding(pc1.coords, y, EncodingKind::full);
  Tensor fb = repeat_mid(pc1.features, k1_);
  Tensor gg = reshape(gather_rows(pc2.features, nn1.indices), {n1, k1_, c2_});
  Tensor h = h_mlp_.apply(concat({fb, gg, d1}, 2));
  Tensor a = softmax(attn1_mlp_.apply(concat({d1, h}, 2)), 1);
  Tensor e1 = reduce_sum_axis(mul(a, h), 1);  // [n1, out]

  // Stage 2: attend over the point's own neighbourhood in frame 1.
  const geom::NeighborIndex nn2 = geom::knn(raw1, raw1, k2_);
  Tensor xg = reshape(gather_rows(pc1.coords, nn2.indices), {n1, k2_, 3});
  Tensor d2 = spatial_encoding(pc1.coords, xg, EncodingKind::full);
  Tensor eg = reshape(gather_rows(e1, nn2.indices), {n1, k2_, out_});
  Tensor w2 = softmax(attn2_mlp_.apply(concat({d2, eg}, 2)), 1);
  return reduce_sum_axis(mul(w2, eg), 1);
}

// ---- SetUpconv ---------------------------------------------------------------

SetUpconv::SetUpconv(ParamRegistry& reg, const std::string& name, std::size_t emb_channels,
                     std::size_t skip_channels, std::size_t out_channels)
    : emb_(emb_channels), skip_(skip_channels), out_(out_channels) {
  mlp1_ = Mlp(reg, name + ".mlp1", 3 + emb_channels, {out_channels}, true);
  if (skip_channels > 0) {
    fuse_ = Mlp(reg, name + ".fuse", out_channels + skip_channels, {out_channels}, true);
  }
}

Tensor SetUpconv::forward(const LevelCloud& sparse, const Tensor& dense_coords,
                          const Tensor& dense_feats, std::size_t k) const {
  if (!sparse.features.valid()) throw InvalidArgument("set_upconv: sparse embedding missing");
  if (sparse.features.dim(1) != emb_) throw InvalidArgument("set_upconv: embedding width mismatch");
  const std::size_t n = dense_coords.dim(0);
  const geom::NeighborIndex nn =
      geom::knn(geom::PointCloud{dense_coords.rows3()}, sparse.raw(), k);
  Tensor sx = reshape(gather_rows(sparse.coords, nn.indices), {n, k, 3});
  Tensor rel = sub(sx, repeat_mid(dense_coords, k));
  Tensor eg = reshape(gather_rows(sparse.features, nn.indices), {n, k, emb_});
  Tensor agg = reduce_max_axis(mlp1_.apply(concat({rel, eg}, 2)), 1);  // [n, out]
  if (skip_ == 0) return agg;
  if (!dense_feats.valid()) throw InvalidArgument("set_upconv: dense features missing");
  if (dense_feats.dim(1) != skip_) throw InvalidArgument("set_upconv: skip width mismatch");
  return fuse_.apply(concat({agg, dense_feats}, 1));
}

// ---- SceneFlowPredictor -------------------------------------------------------

SceneFlowPredictor::SceneFlowPredictor(ParamRegistry& reg, const std::string& name,
                                       std::size_t c_pf, std::size_t c_re, std::size_t c_up,
                                       std::size_t emb_channels, bool residual)
    : residual_(residual), emb_out_(emb_channels) {
  emb_mlp_ = Mlp(reg, name + ".emb_mlp", c_pf + c_re + c_up, {emb_channels, emb_channels}, true);
  fc_ = Linear(reg, name + ".fc", emb_channels, 3);
}

SceneFlowPredictor::Out SceneFlowPredictor::forward(const Tensor& pf, const Tensor& re,
                                                    const Tensor& e_up,
                                                    const Tensor& coarse_flow) const {
  const std::size_t n = pf.dim(0);
  if (re.dim(0) != n || e_up.dim(0) != n || coarse_flow.dim(0) != n) {
    throw InvalidArgument("scene_flow_predictor: row count mismatch");
  }
  Tensor emb = emb_mlp_.apply(concat({pf, re, e_up}, 1));
  Tensor res = fc_.apply(emb);
  Tensor flow = residual_ ? add(res, coarse_flow) : res;
  return {flow, emb};
}

// ---- ResidualFlowRefinement ---------------------------------------------------

ResidualFlowRefinement::ResidualFlowRefinement(ParamRegistry& reg, const std::string& name,
                                               std::size_t level_feat_channels,
                                               std::size_t prev_emb_channels,
                                               std::size_t cv_channels, std::size_t up_channels,
                                               std::size_t predictor_channels, std::size_t k_up,
                                               std::size_t k1, std::size_t k2, bool residual)
    : k_up_(k_up) {
  up_ = SetUpconv(reg, name + ".upconv", prev_emb_channels, level_feat_channels, up_channels);
  cv_ = AttentiveCostVolume(reg, name + ".costvol", level_feat_channels, level_feat_channels,
                            cv_channels, k1, k2);
  pred_ = SceneFlowPredictor(reg, name + ".predictor", level_feat_channels, cv_channels,
                             up_channels, predictor_channels, residual);
}

ResidualFlowRefinement::Out ResidualFlowRefinement::forward(const Tensor& prev_flow,
                                                            const LevelCloud& prev,
                                                            const LevelCloud& pc1,
                                                            const LevelCloud& pc2) const {
  const geom::ThreeNN tn = geom::three_nn_weights(pc1.raw(), prev.raw());
  Tensor coarse = interp3(prev_flow, tn.idx, tn.weights);
  Tensor e_up = up_.forward(prev, pc1.coords, pc1.features, k_up_);
  Tensor warped = warp(pc1.coords, coarse);
  Tensor re = cv_.forward(LevelCloud{warped, pc1.features}, pc2);
  auto po = pred_.forward(pc1.features, re, e_up, coarse);
  return {po.flow, po.embedding, coarse};
}

}  // namespace carf::layers
