// SPDX-License-Identifier: Apache-2.0
//
// Synthetic scene-pair generation aimed at two hard regimes — repetitive
// slab stacks where nearest-neighbour association is ambiguous, and rigid
// bodies under long translations — plus the on-disk scene-pair format and
// deterministic batching.
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "core/common.hpp"

namespace carf::data {

enum class Pattern { shelf, rigid, mixed };

Pattern parse_pattern(const std::string& name);
const char* pattern_name(Pattern p);

struct SceneRecipe {
  Pattern pattern = Pattern::rigid;
  std::size_t object_count = 3;
  double motion_scale = 0.3;   // meters
  double noise_sigma = 0.0;    // meters, coordinates only
  std::size_t points_per_frame = 2048;
  std::uint64_t seed = 0;
};

struct ScenePair {
  std::vector<Vec3> pc1, pc2;
  std::vector<Vec3> gt_flow;        // empty when absent
  std::vector<std::uint8_t> mask;   // empty when absent (= all valid)

  bool has_gt() const { return !gt_flow.empty(); }
  bool has_mask() const { return !mask.empty(); }
};

/// The rigid fields a scene was built from, for verification against an
/// independent transform evaluation.
struct SceneDetail {
  struct ObjectMotion {
    std::array<double, 9> rot;  // row-major
    Vec3 pivot;
    Vec3 t;
  };
  std::vector<ObjectMotion> motions;
  std::vector<std::uint32_t> motion_of_point;  // per pc1 row
};

/// Frame 2 is an independent resample of the moved surfaces; gt_flow is the
/// exact rigid displacement of each (already noised) frame-1 point, so noise
/// never contaminates the ground truth. All outputs live on the f32 grid.
ScenePair generate_scene(const SceneRecipe& recipe, SceneDetail* detail = nullptr);

// SFPC file, little-endian: magic "SFPC", version u32=1, n1 u32, n2 u32,
// flags u32 (bit0 gt_flow, bit1 mask), pc1 f32*n1*3, pc2 f32*n2*3,
// [gt_flow f32*n1*3], [mask u8*n1].
void write_scene(const ScenePair& pair, const std::string& path);
ScenePair read_scene(const std::string& path);

/// Deterministic epoch iteration over a directory of *.sfpc files. Files that
/// fail to parse are skipped and counted. Every emitted frame is subsampled
/// to n_input points; gt rows follow the frame-1 indices.
class BatchStream {
 public:
  BatchStream(const std::string& dir, std::size_t batch_size, std::uint64_t seed,
              std::size_t n_input, bool require_gt);

  std::size_t scene_count() const { return files_.size(); }
  std::size_t skipped() const { return skipped_; }
  std::size_t steps_per_epoch() const;
  const std::vector<std::string>& files() const { return files_; }

  struct Item {
    ScenePair pair;
    std::string name;
  };
  /// Batch `batch_index` of epoch `epoch`; both inputs define the result.
  std::vector<Item> batch(std::uint64_t epoch, std::size_t batch_index) const;

 private:
  std::vector<std::string> files_;  // absolute paths, sorted
  std::size_t batch_size_;
  std::uint64_t seed_;
  std::size_t n_input_;
  bool require_gt_;
  std::size_t skipped_ = 0;
};

/// Subsample a pair to n points per frame (frame-wise seeds derived from
/// `seed`); gt_flow and mask follow the frame-1 selection.
ScenePair subsample_pair(const ScenePair& pair, std::size_t n, std::uint64_t seed);

}  // namespace carf::data
