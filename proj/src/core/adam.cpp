// SPDX-License-Identifier: Apache-2.0
#include "core/adam.hpp"

#include <cmath>

namespace carf {

Adam::Adam(AdamConfig cfg, std::vector<Tensor> params)
    : cfg_(cfg), params_(std::move(params)) {
  if (!(cfg_.lr > 0.0)) throw InvalidArgument("adam: lr must be positive");
  if (!(cfg_.beta1 > 0.0 && cfg_.beta1 < 1.0)) throw InvalidArgument("adam: beta1 not in (0,1)");
  if (!(cfg_.beta2 > 0.0 && cfg_.beta2 < 1.0)) throw InvalidArgument("adam: beta2 not in (0,1)");
  if (!(cfg_.epsilon > 0.0)) throw InvalidArgument("adam: epsilon must be positive");
  if (!(cfg_.decay_rate > 0.0 && cfg_.decay_rate <= 1.0)) {
    throw InvalidArgument("adam: decay_rate not in (0,1]");
  }
  if (cfg_.decay_step == 0) throw InvalidArgument("adam: decay_step must be positive");
  m_.reserve(params_.size());
  v_.reserve(params_.size());
  for (const Tensor& p : params_) {
    m_.emplace_back(p.size(), 0.0);
    v_.emplace_back(p.size(), 0.0);
  }
}

double Adam::effective_lr(std::uint64_t epoch) const {
  return cfg_.lr * std::pow(cfg_.decay_rate, static_cast<double>(epoch / cfg_.decay_step));
}

void Adam::step(std::uint64_t epoch) {
  const double lr = effective_lr(epoch);
  const std::uint64_t t = step_count_ + 1;
  const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t));
  const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t));
  for (std::size_t pi = 0; pi < params_.size(); ++pi) {
    Tensor& p = params_[pi];
    if (!p.has_grad()) throw InvalidArgument("adam: parameter has no gradient");
    const auto& g = p.grad();
    auto& vals = p.mutable_values();
    auto& m = m_[pi];
    auto& v = v_[pi];
    for (std::size_t i = 0; i < vals.size(); ++i) {
      m[i] = cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * g[i];
      v[i] = cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * g[i] * g[i];
      const double mhat = m[i] / bc1;
      const double vhat = v[i] / bc2;
      vals[i] = to_f32_grid(vals[i] - lr * mhat / (std::sqrt(vhat) + cfg_.epsilon));
      m[i] = to_f32_grid(m[i]);
      v[i] = to_f32_grid(v[i]);
    }
  }
  step_count_ = t;
}

void Adam::restore(std::uint64_t step_count, std::vector<std::vector<double>> m,
                   std::vector<std::vector<double>> v) {
  if (m.size() != params_.size() || v.size() != params_.size()) {
    throw ConfigError("adam: restored state does not match parameter count");
  }
  for (std::size_t i = 0; i < params_.size(); ++i) {
    if (m[i].size() != params_[i].size() || v[i].size() != params_[i].size()) {
      throw ConfigError("adam: restored moment shape mismatch");
    }
  }
  m_ = std::move(m);
  v_ = std::move(v);
  step_count_ = step_count;
}

}  // namespace carf
