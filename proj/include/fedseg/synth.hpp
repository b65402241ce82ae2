#pragma once

#include "fedseg/volume.hpp"

#include <array>
#include <cstdint>
#include <vector>

namespace fedseg {

struct SynthConfig {
  int image_size = 64;  // voxels per in-plane side
  int depth = 1;        // slices per subject; 1 produces 2D subjects
  int subjects_per_site = 20;
  int n_sites = 3;
  std::array<int, 2> lesion_count_range{1, 8};
  std::array<double, 2> lesion_radius_range{1.0, 5.0};
  double background_texture_scale = 0.25;
  double noise_std = 0.1;
  /// Lesion minus background intensity per channel (FLAIR-like, T1-like).
  std::array<double, 2> channel_contrast{1.0, -0.6};
  /// Box-blur passes applied to the lesion intensity profile; 0 gives sharp edges.
  int boundary_blur = 1;
  std::uint64_t seed = 0;

  /// Throws ConfigError on invalid values.
  void validate() const;

  friend bool operator==(const SynthConfig&, const SynthConfig&) = default;
};

struct SplitSpec {
  int train_per_site = 5;
  int val = 6;
  int test = 24;

  friend bool operator==(const SplitSpec&, const SplitSpec&) = default;
};

/// One synthetic subject. `lesion_count` receives the number of lesions placed.
Volume generate_subject(const SynthConfig& cfg, std::uint64_t subject_seed,
                        int* lesion_count = nullptr);

/// Generates n_sites * subjects_per_site subjects, keeps the first
/// train_per_site of each site for training and draws validation and test
/// subjects round-robin across sites from the remainder.
FederationDataset generate_federation(const SynthConfig& cfg, const SplitSpec& split);

/// Seed used for subject `index` of site `site` (both zero-based).
std::uint64_t subject_seed(const SynthConfig& cfg, int site, int index);

}  // namespace fedseg
