#pragma once

#include "fedseg/common.hpp"

#include <Eigen/Core>

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace fedseg {

/// Image intensities, one row per channel, one column per voxel.
using ImageArray = Eigen::Array<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// A subject: multi-channel image, the (possibly corrupted) training mask and
/// the untouched ground truth when corruption has been applied.
struct Volume {
  std::string subject_id;
  std::string site_id;
  std::uint64_t seed = 0;
  Shape3 shape;
  ImageArray image;  // channels x voxels
  MaskArray mask;
  std::optional<MaskArray> clean_mask;

  [[nodiscard]] int channels() const { return static_cast<int>(image.rows()); }

  /// Ground truth for evaluation: clean_mask when present, otherwise mask.
  [[nodiscard]] const MaskArray& truth() const { return clean_mask ? *clean_mask : mask; }

  /// Throws ShapeError when image/mask sizes disagree with shape or the
  /// mask is not binary.
  void validate() const;
};

/// One axial slice of a volume, ready for the 2D network.
struct SliceRecord {
  std::string subject_id;
  int slice_index = 0;
  int height = 0;
  int width = 0;
  ImageArray image;  // channels x (height * width)
  MaskArray mask;
};

struct FederationDataset {
  std::vector<std::string> site_ids;
  std::vector<std::vector<Volume>> site_train;
  std::vector<Volume> central_validation;
  std::vector<Volume> test;

  [[nodiscard]] std::size_t n_sites() const { return site_train.size(); }
};

}  // namespace fedseg
