#pragma once

#include "fedseg/volume.hpp"

#include <filesystem>
#include <string>
#include <vector>

namespace fedseg {

enum class MaskPolicy { required, optional };

/// Loads `<dir>/<modality>.nii[.gz]` for each entry of modality_order plus
/// `<dir>/mask.nii[.gz]`. Mask values are binarized (nonzero -> 1). With
/// MaskPolicy::optional a missing mask yields an all-zero mask.
Volume load_volume(const std::filesystem::path& dir, const std::vector<std::string>& modality_order,
                   MaskPolicy mask_policy = MaskPolicy::required);

/// Z-scores each channel over the brain region (voxels nonzero in any
/// channel); voxels outside stay exactly 0.
Volume normalize(Volume volume);

/// Every axial slice holding at least one nonzero image voxel, in order.
std::vector<SliceRecord> slices(const Volume& volume);

/// Writes slice masks back into a zero mask of the given shape.
MaskArray reassemble_mask(const std::vector<SliceRecord>& records, const Shape3& shape);

/// Manifest JSON:
///   { "root": "<dir, relative to the manifest>",
///     "modality_order": ["flair", "t1"],
///     "sites": [{"site_id": "a", "subjects": ["s01", ...]}, ...],
///     "central_validation": [...], "test": [...] }
/// Subject directories live under root. Volumes come back normalized.
FederationDataset load_manifest(const std::filesystem::path& manifest_path);

}  // namespace fedseg
