// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <functional>
#include <memory>
#include <optional>
#include <string>

#include "core/eval.hpp"
#include "core/runconfig.hpp"
#include "core/traindata.hpp"

namespace carf::run {

struct StepInfo {
  std::uint64_t step = 0;
  std::uint64_t epoch = 0;
  double loss = 0.0;
  double lr = 0.0;
};
using StepCallback = std::function<void(const StepInfo&)>;

struct TrainOutcome {
  std::uint64_t steps = 0;
  double first_loss = 0.0;
  double final_loss = 0.0;
  std::size_t skipped_scenes = 0;
};

/// Full training run: deterministic batches, multi-scale loss, Adam with the
/// stepped lr schedule, checkpoints at cadence and at the end (with optimizer
/// state), CSV loss log (step,loss,lr). `resume_ckpt` restores parameters,
/// optimizer state and the step counter; its config must match `cfg`.
TrainOutcome train(const RunConfig& cfg, const std::string& data_dir, const std::string& out_ckpt,
                   const std::string& resume_ckpt = "", const std::string& loss_log_path = "",
                   const StepCallback& on_step = nullptr);

/// Network + config restored from a checkpoint.
struct LoadedNet {
  RunConfig cfg;
  std::unique_ptr<net::Network> network;
};
LoadedNet load_net(const std::string& ckpt_path);

/// Saves params (+ optimizer state when given) with the config block.
void save_net(const std::string& path, const net::Network& network, const RunConfig& cfg,
              const Adam* optimizer);

struct EvalOptions {
  std::optional<eval::CameraIntrinsics> intrinsics;  // engaged => 2D metrics
  std::string dump_flow_dir;                         // empty = no dumps
  std::function<void(const std::string&, const eval::MetricsReport&)> per_scene;
};

/// Evaluates a checkpoint over every scene in a directory at the network's
/// output resolution (n_input/4 points per scene).
eval::MetricsReport evaluate(const std::string& data_dir, const std::string& ckpt_path,
                             const EvalOptions& opts = {});

/// Same but with an already-loaded network (ablation/acceptance runs).
eval::MetricsReport evaluate_net(const std::string& data_dir, const net::Network& network,
                                 const RunConfig& cfg, const EvalOptions& opts = {});

/// Runs the network on two clouds and writes an SFPC file: pc1 = the output
/// resolution coordinates, pc2 = the sampled frame-2 input, gt_flow slot =
/// the predicted flow. Returns the flow row count.
std::size_t infer(const std::string& pc1_path, const std::string& pc2_path,
                  const std::string& ckpt_path, const std::string& out_path);

}  // namespace carf::run
