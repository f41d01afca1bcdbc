// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <vector>

#include "core/tensor.hpp"

namespace carf {

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.99;
  double epsilon = 1e-8;
  double decay_rate = 0.5;      // multiplied in every decay_step epochs
  std::uint64_t decay_step = 80;  // epochs between decays
};

/// Adam with bias correction and a stepped exponential lr schedule.
///
/// Updates are computed in doubles; the parameters and both moment buffers
/// are then snapped to the f32 grid so that a saved checkpoint restores the
/// exact live state and resumed runs replay bitwise.
class Adam {
 public:
  Adam(AdamConfig cfg, std::vector<Tensor> params);

  /// One update using the gradients currently on the parameters.
  /// `epoch` drives the lr schedule: lr_eff = lr * decay_rate^(epoch/decay_step).
  void step(std::uint64_t epoch);

  double effective_lr(std::uint64_t epoch) const;
  std::uint64_t step_count() const { return step_count_; }

  const AdamConfig& config() const { return cfg_; }
  const std::vector<Tensor>& params() const { return params_; }
  const std::vector<std::vector<double>>& first_moments() const { return m_; }
  const std::vector<std::vector<double>>& second_moments() const { return v_; }

  /// Restores optimizer state (moments + step counter), e.g. from a checkpoint.
  void restore(std::uint64_t step_count, std::vector<std::vector<double>> m,
               std::vector<std::vector<double>> v);

 private:
  AdamConfig cfg_;
  std::vector<Tensor> params_;
  std::vector<std::vector<double>> m_, v_;
  std::uint64_t step_count_ = 0;
};

}  // namespace carf
