#include "fedseg/ingest.hpp"

#include "fedseg/nifti.hpp"

#include <nlohmann/json.hpp>

#include <cmath>
#include <fstream>
#include <optional>

namespace fedseg {
namespace fs = std::filesystem;

namespace {

std::optional<fs::path> find_volume(const fs::path& dir, const std::string& stem) {
  for (const char* ext : {".nii.gz", ".nii"}) {
    auto p = dir / (stem + ext);
    if (fs::exists(p)) return p;
  }
  return std::nullopt;
}

}  // namespace

Volume load_volume(const fs::path& dir, const std::vector<std::string>& modality_order,
                   MaskPolicy mask_policy) {
  if (modality_order.empty()) throw IngestError("modality_order is empty");
  Volume v;
  v.subject_id = dir.filename().string();
  for (std::size_t c = 0; c < modality_order.size(); ++c) {
    const auto path = find_volume(dir, modality_order[c]);
    if (!path) throw IngestError(dir.string() + ": missing modality '" + modality_order[c] + "'");
    const auto img = nifti::read(*path);
    if (c == 0) {
      v.shape = img.shape;
      v.image.resize(static_cast<Eigen::Index>(modality_order.size()),
                     static_cast<Eigen::Index>(img.shape.voxels()));
    } else if (img.shape != v.shape) {
      throw IngestError(path->string() + ": shape " + to_string(img.shape) + " does not match " +
                        modality_order[0] + " shape " + to_string(v.shape));
    }
    v.image.row(static_cast<Eigen::Index>(c)) =
        Eigen::Map<const Eigen::ArrayXf>(img.data.data(), static_cast<Eigen::Index>(img.data.size()))
            .transpose();
  }

  const auto mask_path = find_volume(dir, "mask");
  if (mask_path) {
    const auto m = nifti::read(*mask_path);
    if (m.shape != v.shape)
      throw IngestError(mask_path->string() + ": mask shape " + to_string(m.shape) +
                        " does not match image shape " + to_string(v.shape));
    v.mask.resize(static_cast<Eigen::Index>(m.data.size()));
    for (std::size_t i = 0; i < m.data.size(); ++i) v.mask[static_cast<Eigen::Index>(i)] = m.data[i] != 0.0f;
    v.clean_mask = v.mask;
  } else if (mask_policy == MaskPolicy::required) {
    throw IngestError(dir.string() + ": missing mask");
  } else {
    v.mask = MaskArray::Zero(static_cast<Eigen::Index>(v.shape.voxels()));
  }
  return v;
}

Volume normalize(Volume v) {
  const auto brain = (v.image != 0.0f).colwise().any().eval();
  const auto n = brain.count();
  for (Eigen::Index c = 0; c < v.image.rows(); ++c) {
    if ((v.image.row(c) == 0.0f).all())
      throw std::invalid_argument(v.subject_id + ": channel " + std::to_string(c) + " is all zero");
    double sum = 0.0, sq = 0.0;
    for (Eigen::Index i = 0; i < v.image.cols(); ++i)
      if (brain[i]) sum += v.image(c, i);
    const double mean = sum / static_cast<double>(n);
    for (Eigen::Index i = 0; i < v.image.cols(); ++i)
      if (brain[i]) sq += (v.image(c, i) - mean) * (v.image(c, i) - mean);
    const double sd = std::sqrt(sq / static_cast<double>(n));
    if (!(sd > 1e-12))
      throw std::invalid_argument(v.subject_id + ": channel " + std::to_string(c) +
                                  " has zero variance inside the brain");
    for (Eigen::Index i = 0; i < v.image.cols(); ++i)
      v.image(c, i) = brain[i] ? static_cast<float>((v.image(c, i) - mean) / sd) : 0.0f;
  }
  return v;
}

std::vector<SliceRecord> slices(const Volume& v) {
  std::vector<SliceRecord> out;
  const auto plane = static_cast<Eigen::Index>(v.shape.slice_voxels());
  for (int z = 0; z < v.shape.depth; ++z) {
    const auto block = v.image.middleCols(z * plane, plane);
    if (!(block != 0.0f).any()) continue;
    SliceRecord r;
    r.subject_id = v.subject_id;
    r.slice_index = z;
    r.height = v.shape.height;
    r.width = v.shape.width;
    r.image = block;
    r.mask = v.mask.segment(z * plane, plane);
    out.push_back(std::move(r));
  }
  return out;
}

MaskArray reassemble_mask(const std::vector<SliceRecord>& records, const Shape3& shape) {
  MaskArray mask = MaskArray::Zero(static_cast<Eigen::Index>(shape.voxels()));
  const auto plane = static_cast<Eigen::Index>(shape.slice_voxels());
  for (const auto& r : records) {
    if (r.height != shape.height || r.width != shape.width || r.slice_index >= shape.depth)
      throw ShapeError("slice " + std::to_string(r.slice_index) + " does not fit shape " + to_string(shape));
    mask.segment(r.slice_index * plane, plane) = r.mask;
  }
  return mask;
}

FederationDataset load_manifest(const fs::path& manifest_path) {
  std::ifstream in(manifest_path);
  if (!in) throw IngestError("cannot open manifest " + manifest_path.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw IngestError(manifest_path.string() + ": " + e.what());
  }
  const fs::path root = manifest_path.parent_path() / j.value("root", std::string("."));
  const auto order = j.value("modality_order", std::vector<std::string>{"flair", "t1"});

  auto load = [&](const std::string& id, const std::string& site) {
    Volume v = normalize(load_volume(root / id, order));
    v.site_id = site;
    return v;
  };
  FederationDataset ds;
  for (const auto& site : j.at("sites")) {
    const auto site_id = site.at("site_id").get<std::string>();
    ds.site_ids.push_back(site_id);
    auto& list = ds.site_train.emplace_back();
    for (const auto& id : site.at("subjects")) list.push_back(load(id.get<std::string>(), site_id));
  }
  for (const auto& id : j.value("central_validation", nlohmann::json::array()))
    ds.central_validation.push_back(load(id.get<std::string>(), "center"));
  for (const auto& id : j.value("test", nlohmann::json::array()))
    ds.test.push_back(load(id.get<std::string>(), "test"));
  return ds;
}

}  // namespace fedseg
