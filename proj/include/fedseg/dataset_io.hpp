#pragma once

#include "fedseg/corrupt.hpp"
#include "fedseg/volume.hpp"

#include <nlohmann/json.hpp>

#include <filesystem>
#include <vector>

namespace fedseg {

// On-disk layout
//
//   <root>/dataset.json          partition membership (site_ids, site_train,
//                                central_validation, test: lists of subject ids)
//   <root>/<subject_id>/image.npy       float32 [channels, depth, height, width]
//   <root>/<subject_id>/mask.npy        uint8   [depth, height, width]
//   <root>/<subject_id>/clean_mask.npy  uint8, only when it differs from mask
//   <root>/<subject_id>/meta.json       {subject_id, site_id, seed}
//
// Reading back reproduces every field bit for bit.

void save_volume(const std::filesystem::path& dir, const Volume& volume);
Volume load_saved_volume(const std::filesystem::path& dir);

void save_dataset(const std::filesystem::path& root, const FederationDataset& dataset);
FederationDataset load_dataset(const std::filesystem::path& root);

nlohmann::json to_json(const NoiseSpec& spec);
NoiseSpec noise_spec_from_json(const nlohmann::json& j);
nlohmann::json to_json(const CorruptionReport& report);

}  // namespace fedseg
