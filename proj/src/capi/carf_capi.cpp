// SPDX-License-Identifier: Apache-2.0
#include "carf/carf.h"

#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <memory>
#include <string>

#include <json.hpp>

#include "core/trainer.hpp"

using nlohmann::json;

namespace {

thread_local std::string t_last_error = "ok";

carf_status fail(carf_status code, const std::string& msg) {
  t_last_error = msg;
  return code;
}

carf_status run_guarded(const std::function<carf_status()>& body) {
  try {
    return body();
  } catch (const carf::InvalidArgument& e) {
    return fail(CARF_ERROR_INVALID_ARGUMENT, e.what());
  } catch (const carf::ConfigError& e) {
    return fail(CARF_ERROR_CONFIG, e.what());
  } catch (const carf::NumericError& e) {
    return fail(CARF_ERROR_NUMERIC, e.what());
  } catch (const carf::DataError& e) {
    return fail(CARF_ERROR_DATA, e.what());
  } catch (const std::exception& e) {
    return fail(CARF_ERROR_INTERNAL, e.what());
  } catch (...) {
    return fail(CARF_ERROR_INTERNAL, "unknown error");
  }
}

carf_metrics to_c(const carf::eval::MetricsReport& r) {
  carf_metrics m{};
  m.epe3d = r.epe3d;
  m.acc3d_strict = r.acc3d_strict;
  m.acc3d_relax = r.acc3d_relax;
  m.outliers3d = r.outliers3d;
  m.epe2d = r.epe2d;
  m.acc2d = r.acc2d;
  m.points = r.points;
  m.excluded_2d = r.excluded_2d;
  return m;
}

}  // namespace

extern "C" {

struct carf_scene {
  carf::data::ScenePair pair;
};

struct carf_net {
  carf::run::LoadedNet loaded;
};

const char* carf_last_error(void) { return t_last_error.c_str(); }

const char* carf_version(void) { return "1.0.0"; }

carf_status carf_scene_create(const float* pc1_xyz, size_t n1, const float* pc2_xyz, size_t n2,
                              const float* gt_flow_xyz, const uint8_t* mask, carf_scene** out) {
  return run_guarded([&]() -> carf_status {
    if (!pc1_xyz || !pc2_xyz || !out || n1 == 0 || n2 == 0) {
      return fail(CARF_ERROR_INVALID_ARGUMENT, "carf_scene_create: bad arguments");
    }
    auto scene = std::make_unique<carf_scene>();
    auto read_pts = [](const float* src, size_t n) {
      std::vector<carf::Vec3> pts(n);
      for (size_t i = 0; i < n; ++i) {
        pts[i] = {static_cast<double>(src[3 * i]), static_cast<double>(src[3 * i + 1]),
                  static_cast<double>(src[3 * i + 2])};
      }
      return pts;
    };
    scene->pair.pc1 = read_pts(pc1_xyz, n1);
    scene->pair.pc2 = read_pts(pc2_xyz, n2);
    if (gt_flow_xyz) scene->pair.gt_flow = read_pts(gt_flow_xyz, n1);
    if (mask) scene->pair.mask.assign(mask, mask + n1);
    *out = scene.release();
    return CARF_OK;
  });
}

carf_status carf_scene_read(const char* path, carf_scene** out) {
  return run_guarded([&]() -> carf_status {
    if (!path || !out) return fail(CARF_ERROR_INVALID_ARGUMENT, "carf_scene_read: bad arguments");
    auto scene = std::make_unique<carf_scene>();
    scene->pair = carf::data::read_scene(path);
    *out = scene.release();
    return CARF_OK;
  });
}

carf_status carf_scene_write(const carf_scene* scene, const char* path) {
  return run_guarded([&]() -> carf_status {
    if (!scene || !path) return fail(CARF_ERROR_INVALID_ARGUMENT, "carf_scene_write: bad arguments");
    carf::data::write_scene(scene->pair, path);
    return CARF_OK;
  });
}

void carf_scene_free(carf_scene* scene) { delete scene; }

size_t carf_scene_count(const carf_scene* scene, int frame) {
  if (!scene) return 0;
  if (frame == 1) return scene->pair.pc1.size();
  if (frame == 2) return scene->pair.pc2.size();
  return 0;
}

int carf_scene_has_flow(const carf_scene* scene) {
  return scene && scene->pair.has_gt() ? 1 : 0;
}

carf_status carf_scene_points(const carf_scene* scene, int frame, float* out) {
  return run_guarded([&]() -> carf_status {
    if (!scene || !out) return fail(CARF_ERROR_INVALID_ARGUMENT, "carf_scene_points: bad arguments");
    const std::vector<carf::Vec3>* src = nullptr;
    if (frame == 1) src = &scene->pair.pc1;
    else if (frame == 2) src = &scene->pair.pc2;
    else if (frame == 0) src = &scene->pair.gt_flow;
    if (!src || src->empty()) {
      return fail(CARF_ERROR_INVALID_ARGUMENT, "carf_scene_points: no such block");
    }
    for (size_t i = 0; i < src->size(); ++i) {
      for (int a = 0; a < 3; ++a) out[3 * i + a] = static_cast<float>((*src)[i][a]);
    }
    return CARF_OK;
  });
}

carf_status carf_generate_scenes(const char* out_dir, uint32_t scenes, uint32_t points,
                                 const char* pattern, double motion_scale, double noise_sigma,
                                 uint64_t seed) {
  return run_guarded([&]() -> carf_status {
    if (!out_dir || !pattern) {
      return fail(CARF_ERROR_INVALID_ARGUMENT, "carf_generate_scenes: bad arguments");
    }
    const carf::data::Pattern pat = carf::data::parse_pattern(pattern);
    namespace fs = std::filesystem;
    std::error_code ec;
    fs::create_directories(out_dir, ec);
    if (!fs::is_directory(out_dir)) {
      throw carf::DataError(std::string("cannot create output directory: ") + out_dir);
    }

    json manifest;
    manifest["version"] = 1;
    manifest["scenes"] = json::array();
    for (uint32_t i = 0; i < scenes; ++i) {
      carf::data::SceneRecipe recipe;
      recipe.pattern = pat;
      recipe.motion_scale = motion_scale;
      recipe.noise_sigma = noise_sigma;
      recipe.points_per_frame = points;
      recipe.seed = carf::mix_seed(seed, 0x9c, i);
      const carf::data::ScenePair pair = carf::data::generate_scene(recipe);
      char name[64];
      std::snprintf(name, sizeof(name), "scene_%05u.sfpc", i);
      carf::data::write_scene(pair, (fs::path(out_dir) / name).string());
      manifest["scenes"].push_back({{"file", name},
                                    {"pattern", carf::data::pattern_name(pat)},
                                    {"object_count", recipe.object_count},
                                    {"motion_scale", motion_scale},
                                    {"noise_sigma", noise_sigma},
                                    {"points_per_frame", points},
                                    {"seed", recipe.seed}});
    }
    std::ofstream mf(fs::path(out_dir) / "manifest.json", std::ios::trunc);
    if (!mf) throw carf::DataError("cannot write manifest.json");
    mf << manifest.dump(2) << "\n";
    return CARF_OK;
  });
}

carf_status carf_net_load(const char* checkpoint_path, carf_net** out) {
  return run_guarded([&]() -> carf_status {
    if (!checkpoint_path || !out) {
      return fail(CARF_ERROR_INVALID_ARGUMENT, "carf_net_load: bad arguments");
    }
    auto net = std::make_unique<carf_net>();
    net->loaded = carf::run::load_net(checkpoint_path);
    *out = net.release();
    return CARF_OK;
  });
}

void carf_net_free(carf_net* net) { delete net; }

size_t carf_net_input_points(const carf_net* net) {
  return net ? net->loaded.cfg.net.n_input : 0;
}

size_t carf_net_output_points(const carf_net* net) {
  return net ? net->loaded.cfg.net.level_sizes[0] : 0;
}

carf_status carf_net_infer(const carf_net* net, const carf_scene* scene, uint64_t seed,
                           float* out_coords, float* out_flow) {
  return run_guarded([&]() -> carf_status {
    if (!net || !scene || !out_coords || !out_flow) {
      return fail(CARF_ERROR_INVALID_ARGUMENT, "carf_net_infer: bad arguments");
    }
    const auto fwd = net->loaded.network->forward(scene->pair.pc1, scene->pair.pc2, seed);
    const auto coords = fwd.state.f1[0].cloud.coords.rows3();
    const auto flow = fwd.flows[3].rows3();
    for (size_t i = 0; i < coords.size(); ++i) {
      for (int a = 0; a < 3; ++a) {
        out_coords[3 * i + a] = static_cast<float>(coords[i][a]);
        out_flow[3 * i + a] = static_cast<float>(flow[i][a]);
      }
    }
    return CARF_OK;
  });
}

carf_status carf_train(const char* data_dir, const char* config_path, const char* out_ckpt,
                       const char* resume_ckpt, const char* loss_log_path, unsigned threads,
                       carf_train_callback on_step, void* user) {
  return run_guarded([&]() -> carf_status {
    if (!data_dir || !config_path || !out_ckpt) {
      return fail(CARF_ERROR_INVALID_ARGUMENT, "carf_train: bad arguments");
    }
    carf::run::RunConfig cfg = carf::run::RunConfig::parse_file(config_path);
    if (threads > 0) cfg.threads = threads;
    carf::run::StepCallback cb;
    if (on_step) {
      cb = [on_step, user](const carf::run::StepInfo& s) { on_step(user, s.step, s.loss, s.lr); };
    }
    carf::run::train(cfg, data_dir, out_ckpt, resume_ckpt ? resume_ckpt : "",
                     loss_log_path ? loss_log_path : "", cb);
    return CARF_OK;
  });
}

carf_status carf_evaluate(const char* data_dir, const char* checkpoint_path,
                          const double* intrinsics, const char* dump_flow_dir,
                          carf_eval_callback per_scene, void* user, carf_metrics* out) {
  return run_guarded([&]() -> carf_status {
    if (!data_dir || !checkpoint_path || !out) {
      return fail(CARF_ERROR_INVALID_ARGUMENT, "carf_evaluate: bad arguments");
    }
    carf::run::EvalOptions opts;
    carf::eval::CameraIntrinsics intr;
    if (intrinsics) {
      intr.fx = intrinsics[0];
      intr.fy = intrinsics[1];
      intr.cx = intrinsics[2];
      intr.cy = intrinsics[3];
    }
    opts.intrinsics = intr;
    if (dump_flow_dir) opts.dump_flow_dir = dump_flow_dir;
    if (per_scene) {
      opts.per_scene = [per_scene, user](const std::string& name,
                                         const carf::eval::MetricsReport& r) {
        const carf_metrics m = to_c(r);
        per_scene(user, name.c_str(), &m);
      };
    }
    *out = to_c(carf::run::evaluate(data_dir, checkpoint_path, opts));
    return CARF_OK;
  });
}

carf_status carf_infer(const char* pc1_path, const char* pc2_path, const char* checkpoint_path,
                       const char* out_path) {
  return run_guarded([&]() -> carf_status {
    if (!pc1_path || !pc2_path || !checkpoint_path || !out_path) {
      return fail(CARF_ERROR_INVALID_ARGUMENT, "carf_infer: bad arguments");
    }
    carf::run::infer(pc1_path, pc2_path, checkpoint_path, out_path);
    return CARF_OK;
  });
}

}  // extern "C"
