// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace carf {

using Vec3 = std::array<double, 3>;

/// Error taxonomy. The C API and the CLI map these onto stable status and
/// exit codes, so new failure modes should reuse one of these classes.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Caller passed something structurally wrong (bad shape, bad flag value).
class InvalidArgument : public Error {
 public:
  using Error::Error;
};

/// Problem with input data: missing/unreadable files, malformed payloads.
class DataError : public Error {
 public:
  using Error::Error;
};

/// Problem with a run configuration or a config/checkpoint mismatch.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// A computation produced NaN/Inf or otherwise left the numeric contract.
class NumericError : public Error {
 public:
  using Error::Error;
};

enum class FormatFault { bad_magic, bad_version, truncated, inconsistent };

/// Binary-format failure with a machine-checkable fault class.
class FormatError : public DataError {
 public:
  FormatError(FormatFault fault, const std::string& msg)
      : DataError(msg), fault_(fault) {}
  FormatFault fault() const { return fault_; }

 private:
  FormatFault fault_;
};

/// splitmix64 step; used to derive independent stream seeds from one master
/// seed so that no call site depends on wall-clock entropy or global state.
inline uint64_t mix_seed(uint64_t a, uint64_t b) {
  uint64_t z = a + 0x9e3779b97f4a7c15ULL + b * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

inline uint64_t mix_seed(uint64_t a, uint64_t b, uint64_t c) {
  return mix_seed(mix_seed(a, b), c);
}

inline uint64_t mix_seed(uint64_t a, uint64_t b, uint64_t c, uint64_t d) {
  return mix_seed(mix_seed(a, b, c), d);
}

/// Deterministic RNG. mt19937_64 output is pinned by the standard and the
/// derived draws below avoid std::uniform_*_distribution, whose results vary
/// across standard libraries.
class Rng {
 public:
  explicit Rng(uint64_t seed) : gen_(seed) {}

  uint64_t next() { return gen_(); }

  /// Unbiased integer in [0, bound) via rejection sampling. bound > 0.
  uint64_t below(uint64_t bound) {
    if (bound == 0) throw InvalidArgument("Rng::below: zero bound");
    const uint64_t threshold = (~bound + 1) % bound;
    for (;;) {
      const uint64_t r = next();
      if (r >= threshold) return r % bound;
    }
  }

  /// Uniform in [0, 1) with 53 random bits.
  double uniform01() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

  /// Standard normal via Box-Muller (no cached second value, so the draw
  /// count per call is fixed and replay stays aligned).
  double normal() {
    const double u1 = 1.0 - uniform01();
    const double u2 = uniform01();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586476925286766559 * u2);
  }

 private:
  std::mt19937_64 gen_;
};

/// Sum in a canonical (value-sorted) order. Reductions that must be exactly
/// invariant under permutations of their inputs (neighbour shuffles, point
/// shuffles) go through this instead of a left-to-right accumulation.
inline double canonical_sum_inplace(std::vector<double>& xs) {
  std::sort(xs.begin(), xs.end());
  double acc = 0.0;
  for (double x : xs) acc += x;
  return acc;
}

inline double canonical_sum(std::span<const double> xs) {
  std::vector<double> scratch(xs.begin(), xs.end());
  return canonical_sum_inplace(scratch);
}

/// Round to the nearest float and widen back. Persistent training state
/// (parameters, Adam moments) lives on this grid so that the f32 checkpoint
/// payload round-trips bitwise and resumed runs replay exactly.
/// The volatile keeps the narrowing conversion out of reach of the
/// vectorizer: gcc 11 -O3 SLP folds double->float->double chains to identity.
inline double to_f32_grid(double v) {
  volatile float f = static_cast<float>(v);
  return static_cast<double>(f);
}

inline double sq_dist(const Vec3& a, const Vec3& b) {
  const double dx = a[0] - b[0];
  const double dy = a[1] - b[1];
  const double dz = a[2] - b[2];
  return dx * dx + dy * dy + dz * dz;
}

}  // namespace carf
