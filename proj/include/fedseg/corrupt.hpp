#pragma once

#include "fedseg/common.hpp"
#include "fedseg/volume.hpp"

#include <cstdint>
#include <random>
#include <string>
#include <string_view>
#include <vector>

namespace fedseg {

// Morphology runs in the dimensionality of the mask: 2D when shape.depth == 1,
// 3D otherwise. Erosion/dilation iterate a face-connected cross element;
// connected components use full connectivity (8 in 2D, 26 in 3D). The image
// border never erodes a mask and dilation does not wrap, so
// erode(m) <= dilate(erode(m)) <= m <= erode(dilate(m)) <= dilate(m).

MaskArray erode_mask(const MaskArray& mask, const Shape3& shape, int radius);
MaskArray dilate_mask(const MaskArray& mask, const Shape3& shape, int radius);

/// Component label per voxel (0 = background, 1..n = component id, in
/// raster order of first voxel). Returns the number of components.
int label_components(const MaskArray& mask, const Shape3& shape, std::vector<int>& labels);
int count_components(const MaskArray& mask, const Shape3& shape);

/// Zeroes round(lesion_fraction * n) components chosen uniformly.
MaskArray remove_lesions(const MaskArray& mask, const Shape3& shape, double lesion_fraction,
                         std::mt19937_64& rng);

enum class NoiseKind { none, erosion, dilation, removal };

std::string_view to_string(NoiseKind kind);
NoiseKind parse_noise_kind(std::string_view name);

struct NoiseSpec {
  NoiseKind kind = NoiseKind::none;
  int magnitude_voxels = 0;
  double lesion_fraction = 0.0;
  double sample_fraction = 0.0;
  std::uint64_t seed = 0;

  /// Throws ConfigError when the kind-specific fields are out of range.
  void validate() const;

  friend bool operator==(const NoiseSpec&, const NoiseSpec&) = default;
};

struct SubjectCorruption {
  std::string subject_id;
  bool applied = false;
  NoiseKind kind = NoiseKind::none;
  std::size_t voxels_added = 0;
  std::size_t voxels_removed = 0;
  std::size_t lesions_removed = 0;
};

struct CorruptionReport {
  std::string site_id;
  NoiseSpec spec;
  std::vector<SubjectCorruption> subjects;

  [[nodiscard]] std::size_t applied_count() const;
};

struct CorruptedSite {
  std::vector<Volume> volumes;
  CorruptionReport report;
};

/// Corrupts masks of exactly round(sample_fraction * N) uniformly chosen
/// subjects. clean_mask is filled from the incoming mask when absent and is
/// never modified afterwards.
CorruptedSite apply_site_noise(std::vector<Volume> site_volumes, const NoiseSpec& spec);

}  // namespace fedseg
