#pragma once

#include "fedseg/common.hpp"

#include <array>
#include <filesystem>
#include <vector>

namespace fedseg::nifti {

/// Scalar NIfTI-1 volume converted to float (scl_slope/scl_inter applied).
/// Voxel order is x fastest, so Shape3{nz, ny, nx}::index(z, y, x) addresses it.
struct Image {
  Shape3 shape;
  std::vector<float> data;
  std::array<float, 3> pixdim{1.0f, 1.0f, 1.0f};
};

/// Reads single-file NIfTI-1 (.nii or gzip-compressed .nii.gz). Supports the
/// integer and floating datatypes up to 64 bits; 4D files must have nt == 1.
Image read(const std::filesystem::path& path);

/// Writes a float32 NIfTI-1 single file; gzip-compressed when the name ends in .gz.
void write(const std::filesystem::path& path, const Image& image);

}  // namespace fedseg::nifti
