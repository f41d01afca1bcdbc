// SPDX-License-Identifier: Apache-2.0
#include "oracles.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace oracle {

namespace {

Mat to_mat(const carf::Tensor& t) {
  if (t.rank() != 2) throw std::runtime_error("oracle: expected rank-2 parameter");
  Mat m(t.dim(0), std::vector<double>(t.dim(1)));
  const auto& v = t.values();
  for (std::size_t i = 0; i < t.dim(0); ++i)
    for (std::size_t j = 0; j < t.dim(1); ++j) m[i][j] = v[i * t.dim(1) + j];
  return m;
}

double dist(const Vec3& a, const Vec3& b) {
  const double dx = a[0] - b[0], dy = a[1] - b[1], dz = a[2] - b[2];
  return std::sqrt(dx * dx + dy * dy + dz * dz);
}

}  // namespace

OLinear load_linear(const carf::ParamRegistry& reg, const std::string& name) {
  OLinear lin;
  lin.w = to_mat(reg.find(name + ".w"));
  lin.b = reg.find(name + ".b").values();
  return lin;
}

OMlp load_mlp(const carf::ParamRegistry& reg, const std::string& name, std::size_t layer_count,
              bool relu_final) {
  OMlp mlp;
  mlp.relu_final = relu_final;
  for (std::size_t i = 0; i < layer_count; ++i) {
    mlp.layers.push_back(load_linear(reg, name + "." + std::to_string(i)));
  }
  return mlp;
}

std::vector<double> linear_row(const OLinear& lin, const std::vector<double>& x) {
  const std::size_t in = lin.w.size(), out = lin.b.size();
  if (x.size() != in) throw std::runtime_error("oracle linear: width mismatch");
  std::vector<double> y = lin.b;
  for (std::size_t i = 0; i < in; ++i)
    for (std::size_t j = 0; j < out; ++j) y[j] += x[i] * lin.w[i][j];
  return y;
}

std::vector<double> mlp_row(const OMlp& mlp, std::vector<double> x) {
  for (std::size_t l = 0; l < mlp.layers.size(); ++l) {
    x = linear_row(mlp.layers[l], x);
    if (l + 1 < mlp.layers.size() || mlp.relu_final) {
      for (double& v : x) v = v > 0.0 ? v : 0.0;
    }
  }
  return x;
}

std::vector<double> softmax_vec(const std::vector<double>& x) {
  std::vector<double> e(x.size());
  double denom = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    e[i] = std::exp(x[i]);
    denom += e[i];
  }
  for (double& v : e) v /= denom;
  return e;
}

std::array<double, 10> spatial_encode(const Vec3& c, const Vec3& nb) {
  return {c[0],         c[1],         c[2],         nb[0],       nb[1],
          nb[2],        nb[0] - c[0], nb[1] - c[1], nb[2] - c[2],
          dist(nb, c)};
}

// ---- geometry ---------------------------------------------------------------

std::vector<std::uint32_t> fps(const std::vector<Vec3>& pts, std::size_t n_out,
                               std::uint64_t seed) {
  std::vector<std::uint32_t> sel;
  sel.push_back(static_cast<std::uint32_t>(seed % pts.size()));
  while (sel.size() < n_out) {
    double best = -1.0;
    std::uint32_t best_i = 0;
    for (std::uint32_t i = 0; i < pts.size(); ++i) {
      double dmin = std::numeric_limits<double>::infinity();
      for (std::uint32_t s : sel) dmin = std::min(dmin, dist(pts[i], pts[s]));
      if (dmin > best) {
        best = dmin;
        best_i = i;
      }
    }
    sel.push_back(best_i);
  }
  return sel;
}

void knn(const std::vector<Vec3>& query, const std::vector<Vec3>& source, std::size_t k,
         std::vector<std::vector<std::uint32_t>>& idx, std::vector<std::vector<double>>& dd) {
  idx.assign(query.size(), {});
  dd.assign(query.size(), {});
  for (std::size_t q = 0; q < query.size(); ++q) {
    std::vector<std::pair<double, std::uint32_t>> all(source.size());
    for (std::uint32_t s = 0; s < source.size(); ++s) all[s] = {dist(query[q], source[s]), s};
    std::sort(all.begin(), all.end());
    for (std::size_t j = 0; j < k; ++j) {
      if (j < all.size()) {
        idx[q].push_back(all[j].second);
        dd[q].push_back(all[j].first);
      } else {
        idx[q].push_back(all[0].second);
        dd[q].push_back(std::numeric_limits<double>::infinity());
      }
    }
  }
}

void three_nn(const std::vector<Vec3>& query, const std::vector<Vec3>& source,
              std::vector<std::array<std::uint32_t, 3>>& idx, std::vector<Vec3>& weights) {
  std::vector<std::vector<std::uint32_t>> nn;
  std::vector<std::vector<double>> dd;
  knn(query, source, 3, nn, dd);
  idx.resize(query.size());
  weights.resize(query.size());
  for (std::size_t q = 0; q < query.size(); ++q) {
    double w[3], total = 0.0;
    for (int t = 0; t < 3; ++t) {
      idx[q][t] = nn[q][t];
      w[t] = std::isinf(dd[q][t]) ? 0.0 : 1.0 / (dd[q][t] + 1e-8);
      total += w[t];
    }
    for (int t = 0; t < 3; ++t) weights[q][t] = w[t] / total;
  }
}

// ---- layers -----------------------------------------------------------------

Mat set_conv(const std::vector<Vec3>& coords, const Mat& feats,
             const std::vector<std::uint32_t>& sample_idx,
             const std::vector<std::vector<std::uint32_t>>& neighbors, const SetConvWeights& w) {
  const std::size_t n_out = sample_idx.size();
  Mat out(n_out);
  for (std::size_t j = 0; j < n_out; ++j) {
    const Vec3 center = coords[sample_idx[j]];
    const std::size_t k = neighbors[j].size();

    // per-neighbour lifted features
    Mat pfk(k);
    for (std::size_t t = 0; t < k; ++t) {
      const Vec3 nb = coords[neighbors[j][t]];
      std::vector<double> in{nb[0] - center[0], nb[1] - center[1], nb[2] - center[2]};
      const auto& f = feats[neighbors[j][t]];
      in.insert(in.end(), f.begin(), f.end());
      pfk[t] = mlp_row(w.point_mlp, in);
    }
    const std::size_t c = pfk[0].size();

    if (!w.context_aware) {
      out[j].assign(c, -std::numeric_limits<double>::infinity());
      for (std::size_t t = 0; t < k; ++t)
        for (std::size_t ch = 0; ch < c; ++ch) out[j][ch] = std::max(out[j][ch], pfk[t][ch]);
      continue;
    }

    // contextual logits per neighbour
    Mat logits(k);
    for (std::size_t t = 0; t < k; ++t) {
      const Vec3 nb = coords[neighbors[j][t]];
      const auto d = spatial_encode(center, nb);
      std::vector<double> fcd = mlp_row(w.fc_d, std::vector<double>(d.begin(), d.end()));
      std::vector<double> in = fcd;
      in.insert(in.end(), pfk[t].begin(), pfk[t].end());
      const auto& f = feats[neighbors[j][t]];
      in.insert(in.end(), f.begin(), f.end());
      logits[t] = mlp_row(w.weight_mlp, in);
    }

    // softmax over neighbours, per channel, then the weighted sum
    out[j].assign(c, 0.0);
    for (std::size_t ch = 0; ch < c; ++ch) {
      std::vector<double> col(k);
      for (std::size_t t = 0; t < k; ++t) col[t] = logits[t][ch];
      const std::vector<double> sm = softmax_vec(col);
      for (std::size_t t = 0; t < k; ++t) out[j][ch] += pfk[t][ch] * sm[t];
    }
  }
  return out;
}

Mat cost_volume(const std::vector<Vec3>& x1, const Mat& f1, const std::vector<Vec3>& x2,
                const Mat& f2, const std::vector<std::vector<std::uint32_t>>& nn_cross,
                const std::vector<std::vector<std::uint32_t>>& nn_self,
                const CostVolumeWeights& w) {
  const std::size_t n1 = x1.size();

  // Stage 1: cross-frame attention.
  Mat e1(n1);
  for (std::size_t i = 0; i < n1; ++i) {
    const std::size_t k = nn_cross[i].size();
    Mat h(k), logit(k);
    for (std::size_t t = 0; t < k; ++t) {
      const std::uint32_t jj = nn_cross[i][t];
      const auto d = spatial_encode(x1[i], x2[jj]);
      std::vector<double> in = f1[i];
      in.insert(in.end(), f2[jj].begin(), f2[jj].end());
      in.insert(in.end(), d.begin(), d.end());
      h[t] = mlp_row(w.h_mlp, in);
      std::vector<double> ain(d.begin(), d.end());
      ain.insert(ain.end(), h[t].begin(), h[t].end());
      logit[t] = mlp_row(w.attn1, ain);
    }
    const std::size_t c = h[0].size();
    e1[i].assign(c, 0.0);
    for (std::size_t ch = 0; ch < c; ++ch) {
      std::vector<double> col(k);
      for (std::size_t t = 0; t < k; ++t) col[t] = logit[t][ch];
      const auto sm = softmax_vec(col);
      for (std::size_t t = 0; t < k; ++t) e1[i][ch] += h[t][ch] * sm[t];
    }
  }

  // Stage 2: self-neighbourhood attention over the stage-1 embeddings.
  Mat out(n1);
  for (std::size_t i = 0; i < n1; ++i) {
    const std::size_t k = nn_self[i].size();
    Mat logit(k);
    for (std::size_t t = 0; t < k; ++t) {
      const std::uint32_t jj = nn_self[i][t];
      const auto d = spatial_encode(x1[i], x1[jj]);
      std::vector<double> in(d.begin(), d.end());
      in.insert(in.end(), e1[jj].begin(), e1[jj].end());
      logit[t] = mlp_row(w.attn2, in);
    }
    const std::size_t c = e1[0].size();
    out[i].assign(c, 0.0);
    for (std::size_t ch = 0; ch < c; ++ch) {
      std::vector<double> col(k);
      for (std::size_t t = 0; t < k; ++t) col[t] = logit[t][ch];
      const auto sm = softmax_vec(col);
      for (std::size_t t = 0; t < k; ++t) out[i][ch] += e1[nn_self[i][t]][ch] * sm[t];
    }
  }
  return out;
}

Mat set_upconv(const std::vector<Vec3>& sparse_xyz, const Mat& sparse_emb,
               const std::vector<Vec3>& dense_xyz, const Mat& dense_feats,
               const std::vector<std::vector<std::uint32_t>>& neighbors, const UpconvWeights& w) {
  const std::size_t n = dense_xyz.size();
  Mat out(n);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t k = neighbors[i].size();
    std::vector<double> agg;
    for (std::size_t t = 0; t < k; ++t) {
      const std::uint32_t jj = neighbors[i][t];
      std::vector<double> in{sparse_xyz[jj][0] - dense_xyz[i][0],
                             sparse_xyz[jj][1] - dense_xyz[i][1],
                             sparse_xyz[jj][2] - dense_xyz[i][2]};
      in.insert(in.end(), sparse_emb[jj].begin(), sparse_emb[jj].end());
      const std::vector<double> v = mlp_row(w.mlp1, in);
      if (agg.empty()) {
        agg = v;
      } else {
        for (std::size_t ch = 0; ch < v.size(); ++ch) agg[ch] = std::max(agg[ch], v[ch]);
      }
    }
    if (!w.has_fuse) {
      out[i] = agg;
      continue;
    }
    std::vector<double> in = agg;
    in.insert(in.end(), dense_feats[i].begin(), dense_feats[i].end());
    out[i] = mlp_row(w.fuse, in);
  }
  return out;
}

void predictor(const Mat& pf, const Mat& re, const Mat& e_up, const Mat& coarse,
               const PredictorWeights& w, Mat& flow_out, Mat& emb_out) {
  const std::size_t n = pf.size();
  flow_out.assign(n, {});
  emb_out.assign(n, {});
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<double> in = pf[i];
    in.insert(in.end(), re[i].begin(), re[i].end());
    in.insert(in.end(), e_up[i].begin(), e_up[i].end());
    emb_out[i] = mlp_row(w.emb_mlp, in);
    std::vector<double> res = linear_row(w.fc, emb_out[i]);
    if (w.residual) {
      for (int a = 0; a < 3; ++a) res[a] += coarse[i][a];
    }
    flow_out[i] = res;
  }
}

// ---- loss / metrics -----------------------------------------------------------

double multiscale_loss(const std::vector<Mat>& flows, const std::vector<std::vector<Vec3>>& gt,
                       const std::vector<double>& weights) {
  double total = 0.0;
  for (std::size_t l = 0; l < flows.size(); ++l) {
    double level = 0.0;
    for (std::size_t i = 0; i < flows[l].size(); ++i) {
      const double dx = flows[l][i][0] - gt[l][i][0];
      const double dy = flows[l][i][1] - gt[l][i][1];
      const double dz = flows[l][i][2] - gt[l][i][2];
      level += std::sqrt(dx * dx + dy * dy + dz * dz);
    }
    total += weights[l] * level / static_cast<double>(flows[l].size());
  }
  return total;
}

M3 metrics_3d(const std::vector<Vec3>& pred, const std::vector<Vec3>& gt) {
  M3 m{0, 0, 0, 0};
  const std::size_t n = pred.size();
  for (std::size_t i = 0; i < n; ++i) {
    const double err = dist(pred[i], gt[i]);
    const double gn = std::sqrt(gt[i][0] * gt[i][0] + gt[i][1] * gt[i][1] + gt[i][2] * gt[i][2]);
    double rel;
    if (err == 0.0) rel = 0.0;
    else if (gn == 0.0) rel = std::numeric_limits<double>::infinity();
    else rel = err / gn;
    m.epe3d += err;
    if (err < 0.05 || rel < 0.05) m.acc_strict += 1.0;
    if (err < 0.1 || rel < 0.1) m.acc_relax += 1.0;
    if (err > 0.3 || rel > 0.1) m.outliers += 1.0;
  }
  m.epe3d /= static_cast<double>(n);
  m.acc_strict /= static_cast<double>(n);
  m.acc_relax /= static_cast<double>(n);
  m.outliers /= static_cast<double>(n);
  return m;
}

M2 metrics_2d(const std::vector<Vec3>& pc1, const std::vector<Vec3>& pred,
              const std::vector<Vec3>& gt, double fx, double fy, double cx, double cy) {
  M2 m{0, 0, 0};
  for (std::size_t i = 0; i < pc1.size(); ++i) {
    const Vec3 p = pc1[i];
    const Vec3 pp{p[0] + pred[i][0], p[1] + pred[i][1], p[2] + pred[i][2]};
    const Vec3 pg{p[0] + gt[i][0], p[1] + gt[i][1], p[2] + gt[i][2]};
    if (!(p[2] > 0.0) || !(pp[2] > 0.0) || !(pg[2] > 0.0)) continue;
    const double u0 = fx * p[0] / p[2] + cx, v0 = fy * p[1] / p[2] + cy;
    const double up = fx * pp[0] / pp[2] + cx, vp = fy * pp[1] / pp[2] + cy;
    const double ug = fx * pg[0] / pg[2] + cx, vg = fy * pg[1] / pg[2] + cy;
    const double ex = (up - u0) - (ug - u0), ey = (vp - v0) - (vg - v0);
    const double err = std::sqrt(ex * ex + ey * ey);
    const double gn = std::sqrt((ug - u0) * (ug - u0) + (vg - v0) * (vg - v0));
    double rel;
    if (err == 0.0) rel = 0.0;
    else if (gn == 0.0) rel = std::numeric_limits<double>::infinity();
    else rel = err / gn;
    m.epe2d += err;
    if (err < 3.0 || rel < 0.05) m.acc2d += 1.0;
    m.counted++;
  }
  if (m.counted > 0) {
    m.epe2d /= static_cast<double>(m.counted);
    m.acc2d /= static_cast<double>(m.counted);
  }
  return m;
}

double nearest_neighbor_flow_epe(const std::vector<Vec3>& pc1, const std::vector<Vec3>& pc2,
                                 const std::vector<Vec3>& gt) {
  double total = 0.0;
  for (std::size_t i = 0; i < pc1.size(); ++i) {
    double best = std::numeric_limits<double>::infinity();
    Vec3 flow{0, 0, 0};
    for (const Vec3& q : pc2) {
      const double d = dist(pc1[i], q);
      if (d < best) {
        best = d;
        flow = {q[0] - pc1[i][0], q[1] - pc1[i][1], q[2] - pc1[i][2]};
      }
    }
    const double ex = flow[0] - gt[i][0], ey = flow[1] - gt[i][1], ez = flow[2] - gt[i][2];
    total += std::sqrt(ex * ex + ey * ey + ez * ez);
  }
  return total / static_cast<double>(pc1.size());
}

}  // namespace oracle
