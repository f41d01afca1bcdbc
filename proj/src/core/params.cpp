// SPDX-License-Identifier: Apache-2.0
#include "core/params.hpp"

#include <cmath>

namespace carf {

namespace {

std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

}  // namespace

Tensor ParamRegistry::insert(const std::string& name, Tensor t) {
  if (by_name_.count(name)) {
    throw InvalidArgument("parameter '" + name + "' registered twice");
  }
  by_name_[name] = entries_.size();
  entries_.emplace_back(name, t);
  return t;
}

Tensor ParamRegistry::create(const std::string& name, std::vector<std::size_t> shape,
                             std::size_t fan_in) {
  if (fan_in == 0) throw InvalidArgument("parameter fan_in must be positive");
  Tensor t = Tensor::zeros(std::move(shape), true);
  const double bound = std::sqrt(1.0 / static_cast<double>(fan_in));
  Rng rng(mix_seed(seed_, fnv1a(name)));
  auto& v = t.mutable_values();
  for (double& x : v) x = to_f32_grid(rng.uniform(-bound, bound));
  return insert(name, t);
}

Tensor ParamRegistry::create_zeros(const std::string& name, std::vector<std::size_t> shape) {
  return insert(name, Tensor::zeros(std::move(shape), true));
}

Tensor ParamRegistry::find(const std::string& name) const {
  auto it = by_name_.find(name);
  if (it == by_name_.end()) throw InvalidArgument("unknown parameter '" + name + "'");
  return entries_[it->second].second;
}

std::vector<Tensor> ParamRegistry::tensors() const {
  std::vector<Tensor> out;
  out.reserve(entries_.size());
  for (const auto& [name, t] : entries_) out.push_back(t);
  return out;
}

}  // namespace carf
