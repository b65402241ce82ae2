#pragma once

#include <Eigen/Core>

#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>

namespace fedseg {

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct ShapeError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct IngestError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct TrainingError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct FormatError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Spatial extent of a volume. Two-dimensional data has depth == 1.
/// Voxel (z, y, x) lives at linear index (z * height + y) * width + x.
struct Shape3 {
  int depth = 1;
  int height = 0;
  int width = 0;

  [[nodiscard]] std::size_t voxels() const {
    return static_cast<std::size_t>(depth) * height * width;
  }
  [[nodiscard]] std::size_t slice_voxels() const {
    return static_cast<std::size_t>(height) * width;
  }
  [[nodiscard]] bool is_2d() const { return depth == 1; }
  [[nodiscard]] std::size_t index(int z, int y, int x) const {
    return (static_cast<std::size_t>(z) * height + y) * width + x;
  }
  [[nodiscard]] bool contains(int z, int y, int x) const {
    return z >= 0 && z < depth && y >= 0 && y < height && x >= 0 && x < width;
  }

  friend bool operator==(const Shape3&, const Shape3&) = default;
};

std::string to_string(const Shape3& shape);

using MaskArray = Eigen::Array<std::uint8_t, Eigen::Dynamic, 1>;

/// Number of nonzero voxels.
inline std::size_t count_nonzero(const MaskArray& mask) {
  return static_cast<std::size_t>((mask != 0).count());
}

/// splitmix64 finalizer; used to derive independent seeds from a base seed.
constexpr std::uint64_t mix_seed(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

constexpr std::uint64_t derive_seed(std::uint64_t base, std::uint64_t a, std::uint64_t b = 0) {
  return mix_seed(mix_seed(mix_seed(base) ^ (a + 0x632BE59BD9B4E019ULL)) ^ (b + 0x8CB92BA72F3D8DD7ULL));
}

/// Round half away from zero to the nearest count.
inline std::size_t round_count(double value) {
  return value <= 0.0 ? 0 : static_cast<std::size_t>(value + 0.5);
}

}  // namespace fedseg
