// SPDX-License-Identifier: Apache-2.0
#include "core/network.hpp"

#include <cstring>
#include <fstream>
#include <unordered_map>
#include <unordered_set>

namespace carf::net {

using layers::ContextAwareSetConv;
using layers::EncodingKind;
using layers::LevelCloud;
using layers::SamplerKind;

NetworkConfig NetworkConfig::for_input(std::size_t n_input) {
  NetworkConfig cfg;
  cfg.n_input = n_input;
  cfg.level_sizes = {n_input / 4, n_input / 8, std::max<std::size_t>(n_input / 32, 1),
                     std::max<std::size_t>(n_input / 128, 1)};
  cfg.embedding_conv_sizes = {std::max<std::size_t>(n_input / 128, 1),
                              std::max<std::size_t>(n_input / 512, 1)};
  return cfg;
}

void NetworkConfig::validate() const {
  if (n_input < 8) throw ConfigError("n_input must be at least 8");
  if (level_sizes[0] != n_input / 4) {
    throw ConfigError("level_sizes[0] must equal n_input/4");
  }
  std::size_t prev = n_input;
  for (std::size_t s : level_sizes) {
    if (s < 1 || s >= prev) throw ConfigError("level sizes must be strictly decreasing");
    prev = s;
  }
  if (embedding_conv_sizes[0] > level_sizes[2] || embedding_conv_sizes[1] > embedding_conv_sizes[0]) {
    throw ConfigError("embedding conv sizes must not grow");
  }
  if (embedding_conv_sizes[1] < 1) throw ConfigError("embedding conv sizes must be positive");
  for (std::size_t c : channels)
    if (c < 1) throw ConfigError("channel widths must be positive");
  if (cv_channels < 1 || up_channels < 1 || predictor_channels < 1 || fc_d_channels < 1) {
    throw ConfigError("derived channel widths must be positive");
  }
  if (k_pyramid < 1 || k_cv1 < 1 || k_cv2 < 1 || k_up < 1) {
    throw ConfigError("neighbourhood sizes must be positive");
  }
  for (double w : loss_weights)
    if (!(w >= 0.0)) throw ConfigError("loss weights must be nonnegative");
}

Network::Network(NetworkConfig cfg, std::uint64_t param_seed) : cfg_(cfg), reg_(param_seed) {
  cfg_.validate();
  const auto& ch = cfg_.channels;
  convs_[0] = ContextAwareSetConv(reg_, "pyramid.conv1", 3, ch[0], cfg_.fc_d_channels,
                                  cfg_.context_aware);
  convs_[1] = ContextAwareSetConv(reg_, "pyramid.conv2", ch[0], ch[1], cfg_.fc_d_channels,
                                  cfg_.context_aware);
  convs_[2] = ContextAwareSetConv(reg_, "pyramid.conv3", ch[1], ch[2], cfg_.fc_d_channels,
                                  cfg_.context_aware);
  convs_[3] = ContextAwareSetConv(reg_, "pyramid.conv4", ch[2], ch[3], cfg_.fc_d_channels,
                                  cfg_.context_aware);
  cv_main_ = layers::AttentiveCostVolume(reg_, "costvol", ch[2], ch[2], cfg_.cv_channels,
                                         cfg_.k_cv1, cfg_.k_cv2);
  emb_convs_[0] = ContextAwareSetConv(reg_, "embconv.0", cfg_.cv_channels, cfg_.cv_channels,
                                      cfg_.fc_d_channels, cfg_.context_aware);
  emb_convs_[1] = ContextAwareSetConv(reg_, "embconv.1", cfg_.cv_channels, cfg_.cv_channels,
                                      cfg_.fc_d_channels, cfg_.context_aware);
  up0_ = layers::SetUpconv(reg_, "upconv0", cfg_.cv_channels, ch[3], cfg_.up_channels);
  coarse_fc_ = layers::Linear(reg_, "coarse_fc", cfg_.up_channels, 3);
  const bool res = cfg_.residual_learning;
  refine_[0] = layers::ResidualFlowRefinement(reg_, "refine.0", ch[3], cfg_.up_channels,
                                              cfg_.cv_channels, cfg_.up_channels,
                                              cfg_.predictor_channels, cfg_.k_up, cfg_.k_cv1,
                                              cfg_.k_cv2, res);
  refine_[1] = layers::ResidualFlowRefinement(reg_, "refine.1", ch[2], cfg_.predictor_channels,
                                              cfg_.cv_channels, cfg_.up_channels,
                                              cfg_.predictor_channels, cfg_.k_up, cfg_.k_cv1,
                                              cfg_.k_cv2, res);
  refine_[2] = layers::ResidualFlowRefinement(reg_, "refine.2", ch[1], cfg_.predictor_channels,
                                              cfg_.cv_channels, cfg_.up_channels,
                                              cfg_.predictor_channels, cfg_.k_up, cfg_.k_cv1,
                                              cfg_.k_cv2, res);
  final_mlp_ = layers::Mlp(reg_, "final.mlp", cfg_.predictor_channels + ch[0],
                           {cfg_.predictor_channels, cfg_.predictor_channels}, true);
  final_fc_ = layers::Linear(reg_, "final.fc", cfg_.predictor_channels, 3);
}

const ContextAwareSetConv& Network::pyramid_conv(std::size_t level) const {
  return convs_.at(level);
}

namespace {

std::vector<std::uint32_t> identity_indices(std::size_t n) {
  std::vector<std::uint32_t> idx(n);
  for (std::size_t i = 0; i < n; ++i) idx[i] = static_cast<std::uint32_t>(i);
  return idx;
}

}  // namespace

ForwardResult Network::forward(const std::vector<Vec3>& pc1, const std::vector<Vec3>& pc2,
                               std::uint64_t sample_seed) const {
  const std::size_t n = cfg_.n_input;
  if (pc1.size() < n || pc2.size() < n) {
    throw DataError("forward: input clouds need at least " + std::to_string(n) + " points (got " +
                    std::to_string(pc1.size()) + " and " + std::to_string(pc2.size()) + ")");
  }
  ForwardResult out;
  PyramidState& st = out.state;

  auto take = [&](const std::vector<Vec3>& pts, std::uint64_t tag) {
    std::vector<std::uint32_t> idx = pts.size() == n
                                         ? identity_indices(n)
                                         : geom::random_sample(pts.size(), n, mix_seed(sample_seed, tag));
    std::vector<Vec3> sel(n);
    for (std::size_t i = 0; i < n; ++i) sel[i] = pts[idx[i]];
    return std::make_pair(std::move(idx), std::move(sel));
  };
  auto [idx1, in1] = take(pc1, 0xA1);
  auto [idx2, in2] = take(pc2, 0xA2);
  st.input_idx1 = std::move(idx1);
  st.input_idx2 = std::move(idx2);

  // Shared pyramid; frame 2 additionally reuses conv4 output at l4 via the
  // same layer objects (same parameters by construction).
  auto run_pyramid = [&](const std::vector<Vec3>& pts, std::array<PyramidState::Level, 4>& dst,
                         std::uint64_t tag) {
    LevelCloud cur{Tensor::from_points(pts), Tensor()};
    for (std::size_t l = 0; l < 4; ++l) {
      const SamplerKind sampler = l == 0 ? SamplerKind::random : SamplerKind::fps;
      auto res = convs_[l].forward(cur, cfg_.level_sizes[l], cfg_.k_pyramid, sampler,
                                   mix_seed(sample_seed, tag, l));
      dst[l].cloud = res.cloud;
      dst[l].parent_idx = std::move(res.sample_idx);
      cur = dst[l].cloud;
    }
  };
  run_pyramid(in1, st.f1, 0xB1);
  run_pyramid(in2, st.f2, 0xB2);

  // Frame-1 gt index chains (level l coords == input coords at gt_chain[l]).
  st.gt_chain[0] = st.f1[0].parent_idx;
  for (std::size_t l = 1; l < 4; ++l) {
    st.gt_chain[l].resize(st.f1[l].parent_idx.size());
    for (std::size_t i = 0; i < st.gt_chain[l].size(); ++i) {
      st.gt_chain[l][i] = st.gt_chain[l - 1][st.f1[l].parent_idx[i]];
    }
  }

  // Cost volume at l3 and the two embedding set convs.
  st.cv_embedding = cv_main_.forward(st.f1[2].cloud, st.f2[2].cloud);
  LevelCloud emb_cloud{st.f1[2].cloud.coords, st.cv_embedding};
  for (std::size_t i = 0; i < 2; ++i) {
    auto res = emb_convs_[i].forward(emb_cloud, cfg_.embedding_conv_sizes[i], cfg_.k_pyramid,
                                     SamplerKind::fps, mix_seed(sample_seed, 0xC0, i));
    emb_cloud = res.cloud;
  }

  // Initial coarse flow at l4.
  const LevelCloud& f1_l4 = st.f1[3].cloud;
  Tensor e0 = up0_.forward(emb_cloud, f1_l4.coords, f1_l4.features, cfg_.k_up);
  st.initial_coarse = coarse_fc_.apply(e0);

  // Three residual refinements: l4 in place, l4 -> l3, l3 -> l2.
  auto r0 = refine_[0].forward(st.initial_coarse, LevelCloud{f1_l4.coords, e0}, f1_l4,
                               st.f2[3].cloud);
  auto r1 = refine_[1].forward(r0.flow, LevelCloud{f1_l4.coords, r0.embedding}, st.f1[2].cloud,
                               st.f2[2].cloud);
  auto r2 = refine_[2].forward(r1.flow, LevelCloud{st.f1[2].cloud.coords, r1.embedding},
                               st.f1[1].cloud, st.f2[1].cloud);

  // Final level: three-NN interpolation to l1 plus an MLP residual head.
  const geom::ThreeNN tn = geom::three_nn_weights(st.f1[0].cloud.raw(), st.f1[1].cloud.raw());
  Tensor interp_flow = interp3(r2.flow, tn.idx, tn.weights);
  Tensor interp_emb = interp3(r2.embedding, tn.idx, tn.weights);
  Tensor e_fin = final_mlp_.apply(concat({interp_emb, st.f1[0].cloud.features}, 1));
  Tensor res_fin = final_fc_.apply(e_fin);
  Tensor flow_l1 = cfg_.residual_learning ? add(res_fin, interp_flow) : res_fin;

  out.flows = {r0.flow, r1.flow, r2.flow, flow_l1};
  st.coarse_dense = {r0.coarse_dense, r1.coarse_dense, r2.coarse_dense, interp_flow};
  st.embeddings = {r0.embedding, r1.embedding, r2.embedding, e_fin};
  return out;
}

// ---- checkpoint I/O ----------------------------------------------------------

namespace {

constexpr char kMagic[4] = {'C', 'A', 'R', 'F'};
constexpr std::uint32_t kVersion = 1;

void put_u32(std::string& buf, std::uint32_t v) {
  char b[4];
  b[0] = static_cast<char>(v & 0xff);
  b[1] = static_cast<char>((v >> 8) & 0xff);
  b[2] = static_cast<char>((v >> 16) & 0xff);
  b[3] = static_cast<char>((v >> 24) & 0xff);
  buf.append(b, 4);
}

void put_f32(std::string& buf, float v) {
  char b[4];
  std::memcpy(b, &v, 4);
  buf.append(b, 4);
}

struct Reader {
  const std::string& buf;
  std::size_t pos = 0;

  void need(std::size_t n, const char* section) {
    if (pos + n > buf.size()) {
      throw FormatError(FormatFault::truncated,
                        std::string("checkpoint truncated reading ") + section);
    }
  }
  std::uint32_t u32(const char* section) {
    need(4, section);
    std::uint32_t v = 0;
    for (int i = 3; i >= 0; --i) v = (v << 8) | static_cast<unsigned char>(buf[pos + i]);
    pos += 4;
    return v;
  }
  float f32(const char* section) {
    need(4, section);
    float v;
    std::memcpy(&v, buf.data() + pos, 4);
    pos += 4;
    return v;
  }
  std::string bytes(std::size_t n, const char* section) {
    need(n, section);
    std::string s = buf.substr(pos, n);
    pos += n;
    return s;
  }
};

}  // namespace

void write_checkpoint(const std::string& path, const std::vector<NamedBlob>& blobs,
                      const std::string& config_text) {
  std::string buf;
  buf.append(kMagic, 4);
  put_u32(buf, kVersion);
  put_u32(buf, static_cast<std::uint32_t>(blobs.size()));
  for (const NamedBlob& b : blobs) {
    std::size_t numel = 1;
    for (std::uint32_t d : b.dims) numel *= d;
    if (numel != b.data.size()) {
      throw InvalidArgument("checkpoint blob '" + b.name + "': dims/payload mismatch");
    }
    put_u32(buf, static_cast<std::uint32_t>(b.name.size()));
    buf.append(b.name);
    put_u32(buf, static_cast<std::uint32_t>(b.dims.size()));
    for (std::uint32_t d : b.dims) put_u32(buf, d);
    for (float v : b.data) put_f32(buf, v);
  }
  put_u32(buf, static_cast<std::uint32_t>(config_text.size()));
  buf.append(config_text);

  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw DataError("cannot open checkpoint for writing: " + path);
  f.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  if (!f) throw DataError("failed writing checkpoint: " + path);
}

CheckpointContents read_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot open checkpoint: " + path);
  std::string buf((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());

  Reader r{buf};
  const std::string magic = r.bytes(4, "magic");
  if (std::memcmp(magic.data(), kMagic, 4) != 0) {
    throw FormatError(FormatFault::bad_magic, "checkpoint magic mismatch");
  }
  const std::uint32_t version = r.u32("version");
  if (version != kVersion) {
    throw FormatError(FormatFault::bad_version,
                      "unsupported checkpoint version " + std::to_string(version));
  }
  const std::uint32_t count = r.u32("param count");
  CheckpointContents out;
  out.blobs.reserve(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    NamedBlob b;
    const std::uint32_t name_len = r.u32("param name length");
    if (name_len > 4096) throw FormatError(FormatFault::inconsistent, "oversized parameter name");
    b.name = r.bytes(name_len, "param name");
    const std::uint32_t rank = r.u32("param rank");
    if (rank > 8) throw FormatError(FormatFault::inconsistent, "oversized parameter rank");
    std::size_t numel = 1;
    for (std::uint32_t d = 0; d < rank; ++d) {
      b.dims.push_back(r.u32("param dims"));
      if (b.dims.back() == 0) throw FormatError(FormatFault::inconsistent, "zero extent");
      numel *= b.dims.back();
      if (numel > (1u << 30)) throw FormatError(FormatFault::inconsistent, "oversized parameter");
    }
    b.data.reserve(numel);
    for (std::size_t e = 0; e < numel; ++e) b.data.push_back(r.f32("param payload"));
    out.blobs.push_back(std::move(b));
  }
  const std::uint32_t cfg_len = r.u32("config length");
  out.config_text = r.bytes(cfg_len, "config block");
  if (r.pos != buf.size()) {
    throw FormatError(FormatFault::inconsistent, "trailing bytes after config block");
  }
  return out;
}

std::vector<NamedBlob> export_blobs(const Network& net, const Adam* optimizer) {
  std::vector<NamedBlob> blobs;
  auto to_blob = [](const std::string& name, const std::vector<std::size_t>& shape,
                    const std::vector<double>& values) {
    NamedBlob b;
    b.name = name;
    for (std::size_t d : shape) b.dims.push_back(static_cast<std::uint32_t>(d));
    b.data.reserve(values.size());
    for (double v : values) b.data.push_back(static_cast<float>(v));
    return b;
  };
  for (const auto& [name, t] : net.registry().entries()) {
    blobs.push_back(to_blob(name, t.shape(), t.values()));
  }
  if (optimizer) {
    const auto& params = net.registry().entries();
    for (std::size_t i = 0; i < params.size(); ++i) {
      blobs.push_back(to_blob("opt.adam.m." + params[i].first, params[i].second.shape(),
                              optimizer->first_moments()[i]));
      blobs.push_back(to_blob("opt.adam.v." + params[i].first, params[i].second.shape(),
                              optimizer->second_moments()[i]));
    }
    NamedBlob step;
    step.name = "opt.adam.step";
    step.dims = {1};
    step.data = {static_cast<float>(optimizer->step_count())};
    blobs.push_back(std::move(step));
  }
  return blobs;
}

void import_blobs(Network& net, const std::vector<NamedBlob>& blobs, Adam* optimizer) {
  std::unordered_map<std::string, const NamedBlob*> by_name;
  for (const NamedBlob& b : blobs) {
    if (!by_name.emplace(b.name, &b).second) {
      throw ConfigError("checkpoint has duplicate blob '" + b.name + "'");
    }
  }
  std::unordered_set<std::string> used;
  auto fetch = [&](const std::string& name, const std::vector<std::size_t>& shape) {
    auto it = by_name.find(name);
    if (it == by_name.end()) throw ConfigError("checkpoint missing parameter '" + name + "'");
    const NamedBlob& b = *it->second;
    if (b.dims.size() != shape.size()) {
      throw ConfigError("checkpoint parameter '" + name + "' rank mismatch");
    }
    for (std::size_t i = 0; i < shape.size(); ++i) {
      if (b.dims[i] != shape[i]) {
        throw ConfigError("checkpoint parameter '" + name + "' shape mismatch");
      }
    }
    used.insert(name);
    return &b;
  };

  for (const auto& [name, t] : net.registry().entries()) {
    const NamedBlob* b = fetch(name, t.shape());
    Tensor handle = t;  // same node; handles are shared references
    auto& vals = handle.mutable_values();
    for (std::size_t i = 0; i < vals.size(); ++i) vals[i] = static_cast<double>(b->data[i]);
  }

  const bool has_opt_state = by_name.count("opt.adam.step") != 0;
  if (optimizer && has_opt_state) {
    const auto& params = net.registry().entries();
    std::vector<std::vector<double>> m, v;
    for (const auto& [name, t] : params) {
      const NamedBlob* mb = fetch("opt.adam.m." + name, t.shape());
      const NamedBlob* vb = fetch("opt.adam.v." + name, t.shape());
      m.emplace_back(mb->data.begin(), mb->data.end());
      v.emplace_back(vb->data.begin(), vb->data.end());
    }
    const NamedBlob* sb = fetch("opt.adam.step", {1});
    optimizer->restore(static_cast<std::uint64_t>(sb->data[0]), std::move(m), std::move(v));
    used.insert("opt.adam.step");
  }

  for (const NamedBlob& b : blobs) {
    if (used.count(b.name)) continue;
    if (b.name.rfind("opt.", 0) == 0) continue;  // optimizer state may be ignored
    throw ConfigError("checkpoint has unexpected blob '" + b.name + "'");
  }
}

}  // namespace carf::net
