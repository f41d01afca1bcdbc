// SPDX-License-Identifier: Apache-2.0
#include "core/trainer.hpp"

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <thread>

namespace carf::run {

namespace {

// Per-level ground truth rows for the supervised flows (coarse to fine).
std::vector<std::vector<Vec3>> gt_per_level(const net::PyramidState& st,
                                            const std::vector<Vec3>& gt_input) {
  std::vector<std::vector<Vec3>> out(4);
  for (int level = 3; level >= 0; --level) {
    const auto& chain = st.gt_chain[level];
    std::vector<Vec3> rows(chain.size());
    for (std::size_t i = 0; i < chain.size(); ++i) rows[i] = gt_input[chain[i]];
    out[3 - level] = std::move(rows);  // flows[0] is the l4 (coarsest) output
  }
  return out;
}

Tensor scene_loss(const net::Network& network, const net::ForwardResult& fwd,
                  const std::vector<Vec3>& gt_input) {
  const auto& lw = network.config().loss_weights;  // phi_1..phi_4, finest first
  const std::vector<double> weights{lw[3], lw[2], lw[1], lw[0]};
  const std::vector<Tensor> flows(fwd.flows.begin(), fwd.flows.end());
  return eval::multiscale_loss(flows, gt_per_level(fwd.state, gt_input), weights);
}

RunConfig normalized(const RunConfig& cfg) {
  RunConfig c = cfg;
  c.max_steps = 0;
  c.checkpoint_every = 0;
  c.threads = 1;
  return c;
}

std::vector<std::string> list_scene_files(const std::string& dir) {
  namespace fs = std::filesystem;
  std::error_code ec;
  if (!fs::is_directory(dir, ec)) throw DataError("not a directory: " + dir);
  std::vector<std::string> files;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (e.is_regular_file() && e.path().extension() == ".sfpc") files.push_back(e.path().string());
  }
  std::sort(files.begin(), files.end());
  if (files.empty()) throw DataError("no scene files in " + dir);
  return files;
}

}  // namespace

void save_net(const std::string& path, const net::Network& network, const RunConfig& cfg,
              const Adam* optimizer) {
  net::write_checkpoint(path, net::export_blobs(network, optimizer), cfg.to_text());
}

LoadedNet load_net(const std::string& ckpt_path) {
  const net::CheckpointContents ck = net::read_checkpoint(ckpt_path);
  LoadedNet out;
  out.cfg = RunConfig::parse_text(ck.config_text, ckpt_path + "(config)");
  out.network = std::make_unique<net::Network>(out.cfg.net, out.cfg.seed);
  net::import_blobs(*out.network, ck.blobs, nullptr);
  return out;
}

TrainOutcome train(const RunConfig& cfg, const std::string& data_dir, const std::string& out_ckpt,
                   const std::string& resume_ckpt, const std::string& loss_log_path,
                   const StepCallback& on_step) {
  cfg.validate();
  data::BatchStream stream(data_dir, cfg.batch_size, cfg.seed, cfg.net.n_input,
                           /*require_gt=*/true);
  net::Network network(cfg.net, cfg.seed);
  Adam adam(cfg.adam(), network.registry().tensors());

  std::uint64_t start_step = 0;
  if (!resume_ckpt.empty()) {
    const net::CheckpointContents ck = net::read_checkpoint(resume_ckpt);
    const RunConfig resumed = RunConfig::parse_text(ck.config_text, resume_ckpt + "(config)");
    if (normalized(resumed).to_text() != normalized(cfg).to_text()) {
      throw ConfigError("resume checkpoint config does not match the run config");
    }
    net::import_blobs(network, ck.blobs, &adam);
    start_step = adam.step_count();
  }

  std::ofstream log;
  if (!loss_log_path.empty()) {
    log.open(loss_log_path, start_step > 0 ? std::ios::app : std::ios::trunc);
    if (!log) throw DataError("cannot open loss log: " + loss_log_path);
    if (start_step == 0) log << "step,loss,lr\n";
  }

  const std::size_t steps_per_epoch = stream.steps_per_epoch();
  const std::vector<Tensor> params = network.registry().tensors();

  TrainOutcome outcome;
  outcome.skipped_scenes = stream.skipped();

  for (std::uint64_t step = start_step + 1; step <= cfg.max_steps; ++step) {
    const std::uint64_t epoch = (step - 1) / steps_per_epoch;
    const std::size_t batch_index = static_cast<std::size_t>((step - 1) % steps_per_epoch);
    const auto items = stream.batch(epoch, batch_index);
    const std::size_t b = items.size();

    std::vector<double> item_loss(b, 0.0);
    std::vector<std::vector<std::vector<double>>> item_grads(b);
    std::vector<std::exception_ptr> item_error(b);

    auto run_item = [&](std::size_t i) {
      try {
        const auto& pair = items[i].pair;
        const auto fwd =
            network.forward(pair.pc1, pair.pc2, mix_seed(cfg.seed, 0xF0, step, i));
        Tensor loss = scene_loss(network, fwd, pair.gt_flow);
        item_loss[i] = loss.item();
        backward_collect(scale(loss, 1.0 / static_cast<double>(b)), params, item_grads[i]);
      } catch (...) {
        item_error[i] = std::current_exception();
      }
    };

    const std::size_t workers = std::min<std::size_t>(cfg.threads, b);
    if (workers <= 1) {
      for (std::size_t i = 0; i < b; ++i) run_item(i);
    } else {
      std::vector<std::thread> pool;
      for (std::size_t w = 0; w < workers; ++w) {
        pool.emplace_back([&, w] {
          for (std::size_t i = w; i < b; i += workers) run_item(i);
        });
      }
      for (auto& t : pool) t.join();
    }
    for (std::size_t i = 0; i < b; ++i) {
      if (item_error[i]) std::rethrow_exception(item_error[i]);
    }

    // Sum per-item gradients at the batch barrier, in item order.
    for (Tensor p : params) p.zero_grad();
    for (std::size_t i = 0; i < b; ++i) {
      for (std::size_t pi = 0; pi < params.size(); ++pi) {
        Tensor p = params[pi];
        p.accumulate_grad(item_grads[i][pi]);
      }
    }
    adam.step(epoch);

    double batch_loss = 0.0;
    for (double l : item_loss) batch_loss += l;
    batch_loss /= static_cast<double>(b);
    if (step == start_step + 1) outcome.first_loss = batch_loss;
    outcome.final_loss = batch_loss;
    outcome.steps = step;

    const double lr = adam.effective_lr(epoch);
    if (log.is_open()) {
      char line[128];
      std::snprintf(line, sizeof(line), "%llu,%.17g,%.17g\n",
                    static_cast<unsigned long long>(step), batch_loss, lr);
      log << line;
    }
    if (on_step) on_step(StepInfo{step, epoch, batch_loss, lr});

    if (cfg.checkpoint_every > 0 && step % cfg.checkpoint_every == 0) {
      save_net(out_ckpt, network, cfg, &adam);
    }
  }

  save_net(out_ckpt, network, cfg, &adam);
  return outcome;
}

eval::MetricsReport evaluate_net(const std::string& data_dir, const net::Network& network,
                                 const RunConfig& cfg, const EvalOptions& opts) {
  const std::vector<std::string> files = list_scene_files(data_dir);
  eval::MetricsAccumulator acc;
  const eval::CameraIntrinsics* intr = opts.intrinsics ? &*opts.intrinsics : nullptr;

  for (std::size_t i = 0; i < files.size(); ++i) {
    data::ScenePair pair = data::read_scene(files[i]);
    if (!pair.has_gt()) throw DataError("scene has no ground-truth flow: " + files[i]);
    pair = data::subsample_pair(pair, cfg.net.n_input, mix_seed(cfg.seed, 0xE5, i));
    const auto fwd = network.forward(pair.pc1, pair.pc2, mix_seed(cfg.seed, 0xE6, i));

    const auto& chain = fwd.state.gt_chain[0];  // output resolution = l1
    const std::vector<Vec3> pred = fwd.flows[3].rows3();
    const std::vector<Vec3> coords = fwd.state.f1[0].cloud.coords.rows3();
    std::vector<Vec3> gt(chain.size());
    for (std::size_t r = 0; r < chain.size(); ++r) gt[r] = pair.gt_flow[chain[r]];
    std::vector<std::uint8_t> mask;
    if (pair.has_mask()) {
      mask.resize(chain.size());
      for (std::size_t r = 0; r < chain.size(); ++r) mask[r] = pair.mask[chain[r]];
    }
    const std::vector<std::uint8_t>* mask_p = mask.empty() ? nullptr : &mask;

    acc.add(coords, pred, gt, mask_p, intr);
    if (opts.per_scene) {
      eval::MetricsAccumulator one;
      one.add(coords, pred, gt, mask_p, intr);
      opts.per_scene(std::filesystem::path(files[i]).stem().string(), one.finalize());
    }
    if (!opts.dump_flow_dir.empty()) {
      data::ScenePair dump;
      dump.pc1 = coords;
      dump.pc2 = pair.pc2;
      dump.gt_flow = pred;
      const std::string name = std::filesystem::path(files[i]).stem().string() + ".flow.sfpc";
      data::write_scene(dump, (std::filesystem::path(opts.dump_flow_dir) / name).string());
    }
  }
  return acc.finalize();
}

eval::MetricsReport evaluate(const std::string& data_dir, const std::string& ckpt_path,
                             const EvalOptions& opts) {
  const LoadedNet loaded = load_net(ckpt_path);
  return evaluate_net(data_dir, *loaded.network, loaded.cfg, opts);
}

std::size_t infer(const std::string& pc1_path, const std::string& pc2_path,
                  const std::string& ckpt_path, const std::string& out_path) {
  const LoadedNet loaded = load_net(ckpt_path);
  std::vector<Vec3> cloud1, cloud2;
  if (pc1_path == pc2_path) {
    data::ScenePair pair = data::read_scene(pc1_path);
    cloud1 = std::move(pair.pc1);
    cloud2 = std::move(pair.pc2);
  } else {
    cloud1 = data::read_scene(pc1_path).pc1;
    cloud2 = data::read_scene(pc2_path).pc1;
  }
  const auto fwd = loaded.network->forward(cloud1, cloud2, loaded.cfg.seed);

  data::ScenePair out;
  out.pc1 = fwd.state.f1[0].cloud.coords.rows3();
  out.pc2.reserve(fwd.state.input_idx2.size());
  for (std::uint32_t i : fwd.state.input_idx2) out.pc2.push_back(cloud2[i]);
  out.gt_flow = fwd.flows[3].rows3();
  data::write_scene(out, out_path);
  return out.gt_flow.size();
}

}  // namespace carf::run
