/* SPDX-License-Identifier: Apache-2.0
 *
 * carf — context-aware residual scene-flow estimation on point clouds.
 *
 * C interface of the shared library. All functions return carf_status;
 * carf_last_error() holds a human-readable message for the calling thread
 * after a failure. Objects returned through out-parameters are owned by the
 * caller and released with the matching *_free function.
 */
#ifndef CARF_H
#define CARF_H

#include <stddef.h>
#include <stdint.h>

#ifdef __cplusplus
extern "C" {
#endif

typedef enum carf_status {
  CARF_OK = 0,
  CARF_ERROR_INVALID_ARGUMENT = 1, /* bad flag value, bad shape, misuse */
  CARF_ERROR_DATA = 2,             /* missing/malformed input files or scenes */
  CARF_ERROR_CONFIG = 3,           /* config parse error or checkpoint mismatch */
  CARF_ERROR_NUMERIC = 4,          /* non-finite value produced */
  CARF_ERROR_INTERNAL = 5
} carf_status;

/* Message describing the last failure on this thread (never NULL). */
const char* carf_last_error(void);

const char* carf_version(void);

/* ---- scene pairs (SFPC files) ------------------------------------------ */

typedef struct carf_scene carf_scene;

/* Builds a scene pair from raw arrays; gt_flow and mask may be NULL. */
carf_status carf_scene_create(const float* pc1_xyz, size_t n1, const float* pc2_xyz, size_t n2,
                              const float* gt_flow_xyz, const uint8_t* mask, carf_scene** out);
carf_status carf_scene_read(const char* path, carf_scene** out);
carf_status carf_scene_write(const carf_scene* scene, const char* path);
void carf_scene_free(carf_scene* scene);

size_t carf_scene_count(const carf_scene* scene, int frame /* 1 or 2 */);
int carf_scene_has_flow(const carf_scene* scene);
/* Copies n*3 floats into out. frame: 1, 2, or 0 for the gt_flow block. */
carf_status carf_scene_points(const carf_scene* scene, int frame, float* out);

/* Synthetic scene generation. pattern: "shelf" | "rigid" | "mixed".
 * Writes `scenes` files named scene_00000.sfpc ... plus manifest.json. */
carf_status carf_generate_scenes(const char* out_dir, uint32_t scenes, uint32_t points,
                                 const char* pattern, double motion_scale, double noise_sigma,
                                 uint64_t seed);

/* ---- networks ------------------------------------------------------------ */

typedef struct carf_net carf_net;

carf_status carf_net_load(const char* checkpoint_path, carf_net** out);
void carf_net_free(carf_net* net);
/* Input point budget of the network (clouds must have at least this many). */
size_t carf_net_input_points(const carf_net* net);
/* Rows of the predicted flow = n_input/4. */
size_t carf_net_output_points(const carf_net* net);

/* Predicts flow for a pair; out_coords/out_flow hold output_points*3 floats. */
carf_status carf_net_infer(const carf_net* net, const carf_scene* scene, uint64_t seed,
                           float* out_coords, float* out_flow);

/* ---- drivers -------------------------------------------------------------- */

typedef void (*carf_train_callback)(void* user, uint64_t step, double loss, double lr);

/* Trains from a config file over a directory of *.sfpc scenes. resume_ckpt
 * and loss_log_path may be NULL; threads == 0 keeps the config value (1 is
 * bitwise deterministic; batch items parallelize across threads otherwise).
 * Writes the checkpoint to out_ckpt. */
carf_status carf_train(const char* data_dir, const char* config_path, const char* out_ckpt,
                       const char* resume_ckpt, const char* loss_log_path, unsigned threads,
                       carf_train_callback on_step, void* user);

typedef struct carf_metrics {
  double epe3d;
  double acc3d_strict;
  double acc3d_relax;
  double outliers3d;
  double epe2d;
  double acc2d;
  uint64_t points;
  uint64_t excluded_2d;
} carf_metrics;

typedef void (*carf_eval_callback)(void* user, const char* scene, const carf_metrics* m);

/* Evaluates a checkpoint over a scene directory. intrinsics: NULL for the
 * built-in synthetic camera, else {fx, fy, cx, cy}. dump_flow_dir: when not
 * NULL, per-scene predicted-flow SFPC files are written there. */
carf_status carf_evaluate(const char* data_dir, const char* checkpoint_path,
                          const double* intrinsics, const char* dump_flow_dir,
                          carf_eval_callback per_scene, void* user, carf_metrics* out);

/* Runs inference and writes an SFPC flow file (pc1 + predicted flow). If the
 * two input paths are equal, the pair stored in that one file is used. */
carf_status carf_infer(const char* pc1_path, const char* pc2_path, const char* checkpoint_path,
                       const char* out_path);

#ifdef __cplusplus
} /* extern "C" */
#endif

#endif /* CARF_H */
