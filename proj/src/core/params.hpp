// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "core/tensor.hpp"

namespace carf {

/// Owner of every learnable tensor. Each parameter is registered exactly once
/// under a unique dotted name; the name (not registration order) seeds its
/// initializer, so construction-order changes do not reshuffle weights.
class ParamRegistry {
 public:
  explicit ParamRegistry(std::uint64_t seed) : seed_(seed) {}

  /// Uniform init in [-sqrt(1/fan_in), +sqrt(1/fan_in)], snapped to the f32
  /// grid (see checkpoint format).
  Tensor create(const std::string& name, std::vector<std::size_t> shape, std::size_t fan_in);
  Tensor create_zeros(const std::string& name, std::vector<std::size_t> shape);

  const std::vector<std::pair<std::string, Tensor>>& entries() const { return entries_; }
  Tensor find(const std::string& name) const;
  bool contains(const std::string& name) const { return by_name_.count(name) != 0; }
  std::vector<Tensor> tensors() const;
  std::uint64_t seed() const { return seed_; }

 private:
  Tensor insert(const std::string& name, Tensor t);

  std::uint64_t seed_;
  std::vector<std::pair<std::string, Tensor>> entries_;
  std::unordered_map<std::string, std::size_t> by_name_;
};

}  // namespace carf
