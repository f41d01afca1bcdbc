// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string>

#include "core/network.hpp"

namespace carf::run {

/// Everything a training/eval run needs, parseable from `key = value` text
/// with '#' comments. Unknown keys are rejected with a line number.
struct RunConfig {
  net::NetworkConfig net;
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.99;
  double epsilon = 1e-8;
  double decay_rate = 0.5;
  std::uint64_t decay_step = 80;  // epochs between lr decays
  std::size_t batch_size = 4;
  std::uint64_t max_steps = 200;
  std::uint64_t seed = 1;
  std::uint64_t checkpoint_every = 0;  // steps; 0 = final only
  std::size_t threads = 1;

  /// Desk-scale defaults: n_input 512, standard level ratios, batch 4.
  static RunConfig desk_default();
  static RunConfig parse_file(const std::string& path);
  static RunConfig parse_text(const std::string& text, const std::string& origin);

  std::string to_text() const;
  void validate() const;

  AdamConfig adam() const {
    return AdamConfig{lr, beta1, beta2, epsilon, decay_rate, decay_step};
  }
};

}  // namespace carf::run
