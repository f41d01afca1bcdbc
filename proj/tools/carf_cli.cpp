// SPDX-License-Identifier: Apache-2.0
//
// Command-line front end. Everything goes through the C API in carf/carf.h;
// exit codes: 0 success, 2 usage error, 3 data error, 4 config error,
// 5 numeric failure.
#include <cstdint>
#include <cstdio>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "carf/carf.h"

namespace {

int status_to_exit(carf_status s) {
  switch (s) {
    case CARF_OK: return 0;
    case CARF_ERROR_INVALID_ARGUMENT: return 2;
    case CARF_ERROR_DATA: return 3;
    case CARF_ERROR_CONFIG: return 4;
    case CARF_ERROR_NUMERIC: return 5;
    case CARF_ERROR_INTERNAL: return 1;
  }
  return 1;
}

int finish(carf_status s) {
  if (s != CARF_OK) std::fprintf(stderr, "error: %s\n", carf_last_error());
  return status_to_exit(s);
}

bool parse_intrinsics(const std::string& text, double out[4]) {
  return std::sscanf(text.c_str(), "%lf,%lf,%lf,%lf", &out[0], &out[1], &out[2], &out[3]) == 4;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"carf — context-aware residual scene flow on point clouds"};
  app.require_subcommand(1);

  // gen-data
  auto* gen = app.add_subcommand("gen-data", "Generate synthetic scene pairs");
  std::string gen_out, gen_pattern = "rigid";
  std::uint32_t gen_scenes = 16, gen_points = 2048;
  double gen_motion = 0.3, gen_noise = 0.0;
  std::uint64_t gen_seed = 1;
  gen->add_option("--out", gen_out, "Output directory")->required();
  gen->add_option("--scenes", gen_scenes, "Number of scenes");
  gen->add_option("--points", gen_points, "Points per frame");
  gen->add_option("--pattern", gen_pattern, "shelf|rigid|mixed");
  gen->add_option("--motion-scale", gen_motion, "Motion magnitude in meters");
  gen->add_option("--noise", gen_noise, "Coordinate noise sigma in meters");
  gen->add_option("--seed", gen_seed, "Generator seed");

  // train
  auto* train = app.add_subcommand("train", "Train on a directory of scenes");
  std::string train_data, train_config, train_out, train_resume, train_log;
  unsigned train_threads = 0;
  bool train_quiet = false;
  train->add_option("--data", train_data, "Scene directory")->required();
  train->add_option("--config", train_config, "Run config file")->required();
  train->add_option("--out", train_out, "Output checkpoint path")->required();
  train->add_option("--resume", train_resume, "Checkpoint to resume from");
  train->add_option("--log", train_log, "Loss log CSV (default: <out>.loss.csv)");
  train->add_option("--threads", train_threads, "Batch-item worker threads (1 = bitwise runs)");
  train->add_flag("--quiet", train_quiet, "Suppress per-step lines");

  // eval
  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint");
  std::string eval_data, eval_ckpt, eval_intr, eval_dump;
  bool eval_per_scene = false;
  eval->add_option("--data", eval_data, "Scene directory")->required();
  eval->add_option("--checkpoint", eval_ckpt, "Checkpoint path")->required();
  eval->add_option("--intrinsics", eval_intr, "fx,fy,cx,cy for the 2D metrics");
  eval->add_option("--dump-flow", eval_dump, "Directory for predicted-flow SFPC dumps");
  eval->add_flag("--per-scene", eval_per_scene, "Print one record per scene");

  // infer
  auto* infer = app.add_subcommand("infer", "Predict flow for one pair");
  std::string infer_pc1, infer_pc2, infer_ckpt, infer_out;
  infer->add_option("--pc1", infer_pc1, "Frame-1 SFPC file")->required();
  infer->add_option("--pc2", infer_pc2, "Frame-2 SFPC file")->required();
  infer->add_option("--checkpoint", infer_ckpt, "Checkpoint path")->required();
  infer->add_option("--out", infer_out, "Output SFPC flow file")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);  // --help
    app.exit(e);
    return 2;
  }

  if (gen->parsed()) {
    return finish(carf_generate_scenes(gen_out.c_str(), gen_scenes, gen_points,
                                       gen_pattern.c_str(), gen_motion, gen_noise, gen_seed));
  }

  if (train->parsed()) {
    if (train_log.empty()) train_log = train_out + ".loss.csv";
    carf_train_callback cb = nullptr;
    if (!train_quiet) {
      cb = [](void*, std::uint64_t step, double loss, double lr) {
        std::printf("step=%llu loss=%.6f lr=%.3g\n", static_cast<unsigned long long>(step), loss,
                    lr);
      };
    }
    return finish(carf_train(train_data.c_str(), train_config.c_str(), train_out.c_str(),
                             train_resume.empty() ? nullptr : train_resume.c_str(),
                             train_log.c_str(), train_threads, cb, nullptr));
  }

  if (eval->parsed()) {
    double intr[4];
    const double* intr_p = nullptr;
    if (!eval_intr.empty()) {
      if (!parse_intrinsics(eval_intr, intr)) {
        std::fprintf(stderr, "error: --intrinsics expects fx,fy,cx,cy\n");
        return 2;
      }
      intr_p = intr;
    }
    carf_eval_callback per_scene = nullptr;
    if (eval_per_scene) {
      per_scene = [](void*, const char* scene, const carf_metrics* m) {
        std::printf("scene=%s epe3d=%.6f acc3d_strict=%.6f acc3d_relax=%.6f outliers3d=%.6f\n",
                    scene, m->epe3d, m->acc3d_strict, m->acc3d_relax, m->outliers3d);
      };
    }
    carf_metrics m{};
    const carf_status s =
        carf_evaluate(eval_data.c_str(), eval_ckpt.c_str(), intr_p,
                      eval_dump.empty() ? nullptr : eval_dump.c_str(), per_scene, nullptr, &m);
    if (s == CARF_OK) {
      std::printf("epe3d = %.6f\nacc3d_strict = %.6f\nacc3d_relax = %.6f\noutliers3d = %.6f\n"
                  "epe2d = %.6f\nacc2d = %.6f\n",
                  m.epe3d, m.acc3d_strict, m.acc3d_relax, m.outliers3d, m.epe2d, m.acc2d);
      std::printf("epe3d=%.6f acc3d_strict=%.6f acc3d_relax=%.6f outliers3d=%.6f epe2d=%.6f "
                  "acc2d=%.6f\n",
                  m.epe3d, m.acc3d_strict, m.acc3d_relax, m.outliers3d, m.epe2d, m.acc2d);
    }
    return finish(s);
  }

  if (infer->parsed()) {
    return finish(
        carf_infer(infer_pc1.c_str(), infer_pc2.c_str(), infer_ckpt.c_str(), infer_out.c_str()));
  }

  return 2;
}
