// SPDX-License-Identifier: Apache-2.0
#include "core/traindata.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>

#include "core/geom.hpp"

namespace carf::data {

Pattern parse_pattern(const std::string& name) {
  if (name == "shelf") return Pattern::shelf;
  if (name == "rigid") return Pattern::rigid;
  if (name == "mixed") return Pattern::mixed;
  throw InvalidArgument("unknown pattern '" + name + "' (expected shelf|rigid|mixed)");
}

const char* pattern_name(Pattern p) {
  switch (p) {
    case Pattern::shelf: return "shelf";
    case Pattern::rigid: return "rigid";
    case Pattern::mixed: return "mixed";
  }
  return "?";
}

namespace {

struct RigidMotion {
  std::array<double, 9> rot = {1, 0, 0, 0, 1, 0, 0, 0, 1};  // row-major
  Vec3 pivot{0, 0, 0};
  Vec3 t{0, 0, 0};

  Vec3 apply(const Vec3& x) const {
    const Vec3 r{x[0] - pivot[0], x[1] - pivot[1], x[2] - pivot[2]};
    return {rot[0] * r[0] + rot[1] * r[1] + rot[2] * r[2] + pivot[0] + t[0],
            rot[3] * r[0] + rot[4] * r[1] + rot[5] * r[2] + pivot[1] + t[1],
            rot[6] * r[0] + rot[7] * r[1] + rot[8] * r[2] + pivot[2] + t[2]};
  }
};

std::array<double, 9> axis_angle(const Vec3& axis, double angle) {
  const double c = std::cos(angle), s = std::sin(angle), ic = 1.0 - c;
  const double x = axis[0], y = axis[1], z = axis[2];
  return {c + x * x * ic,     x * y * ic - z * s, x * z * ic + y * s,
          y * x * ic + z * s, c + y * y * ic,     y * z * ic - x * s,
          z * x * ic - y * s, z * y * ic + x * s, c + z * z * ic};
}

Vec3 random_unit(Rng& rng) {
  for (;;) {
    Vec3 v{rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1)};
    const double n2 = v[0] * v[0] + v[1] * v[1] + v[2] * v[2];
    if (n2 > 1e-6 && n2 <= 1.0) {
      const double n = std::sqrt(n2);
      return {v[0] / n, v[1] / n, v[2] / n};
    }
  }
}

struct SurfaceShape {
  bool box = true;
  Vec3 center{0, 0, 0};
  Vec3 half{0.1, 0.1, 0.1};  // half extents / radii

  double area() const {
    const double a = half[0], b = half[1], c = half[2];
    if (box) return 8.0 * (a * b + b * c + c * a);
    // Thomsen approximation, fine for point budgeting
    const double p = 1.6075;
    const double ap = std::pow(a, p), bp = std::pow(b, p), cp = std::pow(c, p);
    return 4.0 * 3.14159265358979323846 * std::pow((ap * bp + ap * cp + bp * cp) / 3.0, 1.0 / p);
  }

  Vec3 sample(Rng& rng) const {
    if (!box) {
      Vec3 u{rng.normal(), rng.normal(), rng.normal()};
      const double n = std::sqrt(u[0] * u[0] + u[1] * u[1] + u[2] * u[2]);
      if (n < 1e-9) return center;
      return {center[0] + half[0] * u[0] / n, center[1] + half[1] * u[1] / n,
              center[2] + half[2] * u[2] / n};
    }
    // pick a face pair proportional to its area, then a side and a point
    const double axy = half[0] * half[1], ayz = half[1] * half[2], azx = half[2] * half[0];
    const double r = rng.uniform01() * (axy + ayz + azx);
    int fixed_axis;  // axis orthogonal to the chosen face
    if (r < axy) fixed_axis = 2;
    else if (r < axy + ayz) fixed_axis = 0;
    else fixed_axis = 1;
    const double side = rng.uniform01() < 0.5 ? -1.0 : 1.0;
    Vec3 p;
    for (int a = 0; a < 3; ++a) {
      p[a] = a == fixed_axis ? side * half[a] : rng.uniform(-half[a], half[a]);
    }
    return {center[0] + p[0], center[1] + p[1], center[2] + p[2]};
  }
};

struct SceneModel {
  std::vector<SurfaceShape> shapes;
  std::vector<std::size_t> motion_of;  // shape -> motion
  std::vector<RigidMotion> motions;
};

void add_shelf(SceneModel& model, Rng& rng, std::size_t slab_count, double motion_scale) {
  const std::size_t k = std::max<std::size_t>(3, slab_count);
  const int axis = static_cast<int>(rng.below(3));  // stacking axis
  const double w = rng.uniform(0.8, 1.2);
  const double d = rng.uniform(0.4, 0.6);
  const double thick = rng.uniform(0.05, 0.09);
  const double gap = thick * rng.uniform(0.9, 1.1);  // comparable to thickness
  const double period = thick + gap;
  // Scenes sit in front of the synthetic camera (origin, +z optical axis).
  Vec3 base{rng.uniform(-0.3, 0.3), rng.uniform(-0.3, 0.3), 2.5 + rng.uniform(-0.3, 0.3)};
  const double sign = rng.uniform01() < 0.5 ? -1.0 : 1.0;

  RigidMotion motion;  // pure translation along the stacking axis
  motion.t[axis] = sign * motion_scale;
  const std::size_t mi = model.motions.size();
  model.motions.push_back(motion);

  for (std::size_t i = 0; i < k; ++i) {
    SurfaceShape s;
    s.box = true;
    s.half = {w / 2, d / 2, thick / 2};
    std::swap(s.half[2], s.half[axis]);
    s.center = base;
    s.center[axis] += (static_cast<double>(i) - static_cast<double>(k - 1) / 2.0) * period;
    model.shapes.push_back(s);
    model.motion_of.push_back(mi);
  }
}

void add_rigid_objects(SceneModel& model, Rng& rng, std::size_t count, double motion_scale) {
  for (std::size_t i = 0; i < count; ++i) {
    SurfaceShape s;
    s.box = rng.uniform01() < 0.5;
    s.center = {rng.uniform(-0.6, 0.6), rng.uniform(-0.6, 0.6), 2.5 + rng.uniform(-0.6, 0.6)};
    s.half = {rng.uniform(0.08, 0.2), rng.uniform(0.08, 0.2), rng.uniform(0.08, 0.2)};

    RigidMotion motion;
    const double angle = std::min(0.6, rng.uniform(0.2, 0.5) * motion_scale);
    motion.rot = axis_angle(random_unit(rng), angle);
    motion.pivot = s.center;
    const Vec3 dir = random_unit(rng);
    const double mag = motion_scale * rng.uniform(0.5, 1.0);
    motion.t = {dir[0] * mag, dir[1] * mag, dir[2] * mag};

    model.shapes.push_back(s);
    model.motion_of.push_back(model.motions.size());
    model.motions.push_back(motion);
  }
}

std::vector<std::size_t> allocate_points(const SceneModel& model, std::size_t total) {
  std::vector<double> area(model.shapes.size());
  double sum = 0.0;
  for (std::size_t i = 0; i < area.size(); ++i) {
    area[i] = model.shapes[i].area();
    sum += area[i];
  }
  std::vector<std::size_t> counts(area.size(), 0);
  std::vector<std::pair<double, std::size_t>> frac;
  std::size_t assigned = 0;
  for (std::size_t i = 0; i < area.size(); ++i) {
    const double exact = static_cast<double>(total) * area[i] / sum;
    counts[i] = static_cast<std::size_t>(exact);
    assigned += counts[i];
    frac.emplace_back(exact - static_cast<double>(counts[i]), i);
  }
  std::sort(frac.begin(), frac.end(), [](const auto& a, const auto& b) {
    if (a.first != b.first) return a.first > b.first;
    return a.second < b.second;
  });
  for (std::size_t r = 0; assigned < total; ++r, ++assigned) counts[frac[r % frac.size()].second]++;
  return counts;
}

}  // namespace

ScenePair generate_scene(const SceneRecipe& recipe, SceneDetail* detail) {
  if (recipe.points_per_frame == 0) throw InvalidArgument("recipe asks for zero points");
  if (recipe.motion_scale < 0 || recipe.noise_sigma < 0) {
    throw InvalidArgument("recipe motion/noise must be nonnegative");
  }
  Rng model_rng(mix_seed(recipe.seed, 0x10));
  SceneModel model;
  switch (recipe.pattern) {
    case Pattern::shelf:
      add_shelf(model, model_rng, std::max<std::size_t>(3, recipe.object_count),
                recipe.motion_scale);
      break;
    case Pattern::rigid:
      add_rigid_objects(model, model_rng, std::max<std::size_t>(1, recipe.object_count),
                        recipe.motion_scale);
      break;
    case Pattern::mixed: {
      add_shelf(model, model_rng, 3, recipe.motion_scale);
      add_rigid_objects(model, model_rng, std::max<std::size_t>(1, recipe.object_count),
                        recipe.motion_scale);
      break;
    }
  }
  const std::vector<std::size_t> counts = allocate_points(model, recipe.points_per_frame);

  ScenePair pair;
  pair.pc1.reserve(recipe.points_per_frame);
  pair.gt_flow.reserve(recipe.points_per_frame);
  pair.pc2.reserve(recipe.points_per_frame);

  if (detail) {
    detail->motions.clear();
    detail->motion_of_point.clear();
    for (const RigidMotion& m : model.motions) {
      detail->motions.push_back(SceneDetail::ObjectMotion{m.rot, m.pivot, m.t});
    }
  }

  Rng rng1(mix_seed(recipe.seed, 0x21));
  Rng noise1(mix_seed(recipe.seed, 0x31));
  for (std::size_t si = 0; si < model.shapes.size(); ++si) {
    const RigidMotion& motion = model.motions[model.motion_of[si]];
    for (std::size_t c = 0; c < counts[si]; ++c) {
      Vec3 p = model.shapes[si].sample(rng1);
      for (int a = 0; a < 3; ++a) {
        p[a] = to_f32_grid(p[a] + recipe.noise_sigma * noise1.normal());
      }
      const Vec3 moved = motion.apply(p);
      pair.pc1.push_back(p);
      pair.gt_flow.push_back(
          {to_f32_grid(moved[0] - p[0]), to_f32_grid(moved[1] - p[1]), to_f32_grid(moved[2] - p[2])});
      if (detail) {
        detail->motion_of_point.push_back(static_cast<std::uint32_t>(model.motion_of[si]));
      }
    }
  }

  Rng rng2(mix_seed(recipe.seed, 0x22));
  Rng noise2(mix_seed(recipe.seed, 0x32));
  for (std::size_t si = 0; si < model.shapes.size(); ++si) {
    const RigidMotion& motion = model.motions[model.motion_of[si]];
    for (std::size_t c = 0; c < counts[si]; ++c) {
      const Vec3 moved = motion.apply(model.shapes[si].sample(rng2));
      Vec3 q;
      for (int a = 0; a < 3; ++a) {
        q[a] = to_f32_grid(moved[a] + recipe.noise_sigma * noise2.normal());
      }
      pair.pc2.push_back(q);
    }
  }
  return pair;
}

// ---- SFPC I/O ---------------------------------------------------------------

namespace {

constexpr char kMagic[4] = {'S', 'F', 'P', 'C'};
constexpr std::uint32_t kVersion = 1;

void put_u32(std::string& buf, std::uint32_t v) {
  char b[4];
  b[0] = static_cast<char>(v & 0xff);
  b[1] = static_cast<char>((v >> 8) & 0xff);
  b[2] = static_cast<char>((v >> 16) & 0xff);
  b[3] = static_cast<char>((v >> 24) & 0xff);
  buf.append(b, 4);
}

void put_points(std::string& buf, const std::vector<Vec3>& pts) {
  for (const Vec3& p : pts) {
    for (int a = 0; a < 3; ++a) {
      const float f = static_cast<float>(p[a]);
      char b[4];
      std::memcpy(b, &f, 4);
      buf.append(b, 4);
    }
  }
}

struct Reader {
  const std::string& buf;
  std::size_t pos = 0;

  void need(std::size_t n, const char* section) {
    if (pos + n > buf.size()) {
      throw FormatError(FormatFault::truncated,
                        std::string("scene file truncated reading ") + section);
    }
  }
  std::uint32_t u32(const char* section) {
    need(4, section);
    std::uint32_t v = 0;
    for (int i = 3; i >= 0; --i) v = (v << 8) | static_cast<unsigned char>(buf[pos + i]);
    pos += 4;
    return v;
  }
  std::vector<Vec3> points(std::size_t n, const char* section) {
    need(n * 12, section);
    std::vector<Vec3> out(n);
    for (std::size_t i = 0; i < n; ++i) {
      for (int a = 0; a < 3; ++a) {
        float f;
        std::memcpy(&f, buf.data() + pos, 4);
        pos += 4;
        out[i][a] = static_cast<double>(f);
      }
    }
    return out;
  }
};

}  // namespace

void write_scene(const ScenePair& pair, const std::string& path) {
  if (pair.pc1.empty() || pair.pc2.empty()) throw InvalidArgument("scene frames must be nonempty");
  if (pair.has_gt() && pair.gt_flow.size() != pair.pc1.size()) {
    throw InvalidArgument("gt_flow row count must match pc1");
  }
  if (pair.has_mask() && pair.mask.size() != pair.pc1.size()) {
    throw InvalidArgument("mask length must match pc1");
  }
  for (const Vec3& g : pair.gt_flow) {
    if (!std::isfinite(g[0]) || !std::isfinite(g[1]) || !std::isfinite(g[2])) {
      throw InvalidArgument("gt_flow must be finite");
    }
  }
  std::string buf;
  buf.append(kMagic, 4);
  put_u32(buf, kVersion);
  put_u32(buf, static_cast<std::uint32_t>(pair.pc1.size()));
  put_u32(buf, static_cast<std::uint32_t>(pair.pc2.size()));
  const std::uint32_t flags =
      (pair.has_gt() ? 1u : 0u) | (pair.has_mask() ? 2u : 0u);
  put_u32(buf, flags);
  put_points(buf, pair.pc1);
  put_points(buf, pair.pc2);
  if (pair.has_gt()) put_points(buf, pair.gt_flow);
  if (pair.has_mask()) buf.append(reinterpret_cast<const char*>(pair.mask.data()), pair.mask.size());

  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw DataError("cannot open scene file for writing: " + path);
  f.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  if (!f) throw DataError("failed writing scene file: " + path);
}

ScenePair read_scene(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot open scene file: " + path);
  std::string buf((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());

  Reader r{buf};
  r.need(4, "magic");
  if (std::memcmp(buf.data(), kMagic, 4) != 0) {
    throw FormatError(FormatFault::bad_magic, "scene file magic mismatch: " + path);
  }
  r.pos = 4;
  const std::uint32_t version = r.u32("version");
  if (version != kVersion) {
    throw FormatError(FormatFault::bad_version,
                      "unsupported scene file version " + std::to_string(version));
  }
  const std::uint32_t n1 = r.u32("pc1 count");
  const std::uint32_t n2 = r.u32("pc2 count");
  const std::uint32_t flags = r.u32("flags");
  if (n1 == 0 || n2 == 0) throw FormatError(FormatFault::inconsistent, "empty frame in scene file");
  if (flags & ~3u) {
    throw FormatError(FormatFault::inconsistent, "unknown flag bits in scene file");
  }
  ScenePair pair;
  pair.pc1 = r.points(n1, "pc1 coordinates");
  pair.pc2 = r.points(n2, "pc2 coordinates");
  if (flags & 1u) pair.gt_flow = r.points(n1, "gt_flow block");
  if (flags & 2u) {
    r.need(n1, "mask block");
    pair.mask.assign(buf.begin() + static_cast<std::ptrdiff_t>(r.pos),
                     buf.begin() + static_cast<std::ptrdiff_t>(r.pos + n1));
    r.pos += n1;
  }
  if (r.pos != buf.size()) {
    throw FormatError(FormatFault::inconsistent, "scene file size does not match header");
  }
  return pair;
}

// ---- batching ----------------------------------------------------------------

ScenePair subsample_pair(const ScenePair& pair, std::size_t n, std::uint64_t seed) {
  if (pair.pc1.size() < n || pair.pc2.size() < n) {
    throw DataError("scene has fewer than " + std::to_string(n) + " points per frame");
  }
  const auto idx1 = geom::random_sample(pair.pc1.size(), n, mix_seed(seed, 1));
  const auto idx2 = geom::random_sample(pair.pc2.size(), n, mix_seed(seed, 2));
  ScenePair out;
  out.pc1.reserve(n);
  out.pc2.reserve(n);
  for (std::uint32_t i : idx1) out.pc1.push_back(pair.pc1[i]);
  for (std::uint32_t i : idx2) out.pc2.push_back(pair.pc2[i]);
  if (pair.has_gt()) {
    out.gt_flow.reserve(n);
    for (std::uint32_t i : idx1) out.gt_flow.push_back(pair.gt_flow[i]);
  }
  if (pair.has_mask()) {
    out.mask.reserve(n);
    for (std::uint32_t i : idx1) out.mask.push_back(pair.mask[i]);
  }
  return out;
}

BatchStream::BatchStream(const std::string& dir, std::size_t batch_size, std::uint64_t seed,
                         std::size_t n_input, bool require_gt)
    : batch_size_(batch_size), seed_(seed), n_input_(n_input), require_gt_(require_gt) {
  if (batch_size_ == 0) throw InvalidArgument("batch size must be positive");
  if (n_input_ == 0) throw InvalidArgument("n_input must be positive");
  namespace fs = std::filesystem;
  std::error_code ec;
  if (!fs::is_directory(dir, ec)) throw DataError("not a directory: " + dir);
  std::vector<std::string> candidates;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (e.is_regular_file() && e.path().extension() == ".sfpc") {
      candidates.push_back(e.path().string());
    }
  }
  std::sort(candidates.begin(), candidates.end());
  for (const std::string& p : candidates) {
    try {
      const ScenePair pair = read_scene(p);
      if (require_gt_ && !pair.has_gt()) {
        throw DataError("scene has no ground-truth flow: " + p);
      }
      files_.push_back(p);
    } catch (const FormatError&) {
      ++skipped_;
    }
  }
  if (files_.empty()) throw DataError("no usable scene files in " + dir);
}

std::size_t BatchStream::steps_per_epoch() const {
  return (files_.size() + batch_size_ - 1) / batch_size_;
}

std::vector<BatchStream::Item> BatchStream::batch(std::uint64_t epoch,
                                                  std::size_t batch_index) const {
  if (batch_index >= steps_per_epoch()) throw InvalidArgument("batch index out of range");
  std::vector<std::uint32_t> order(files_.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<std::uint32_t>(i);
  Rng rng(mix_seed(seed_, 0x5u, epoch));
  for (std::size_t i = 0; i + 1 < order.size(); ++i) {
    const std::size_t j = i + static_cast<std::size_t>(rng.below(order.size() - i));
    std::swap(order[i], order[j]);
  }
  const std::size_t lo = batch_index * batch_size_;
  const std::size_t hi = std::min(files_.size(), lo + batch_size_);
  std::vector<Item> items;
  items.reserve(hi - lo);
  for (std::size_t i = lo; i < hi; ++i) {
    const std::uint32_t scene = order[i];
    ScenePair pair = read_scene(files_[scene]);
    if (require_gt_ && !pair.has_gt()) {
      throw DataError("scene has no ground-truth flow: " + files_[scene]);
    }
    items.push_back(Item{subsample_pair(pair, n_input_, mix_seed(seed_, epoch, scene)),
                         std::filesystem::path(files_[scene]).stem().string()});
  }
  return items;
}

}  // namespace carf::data
