#include "fedseg/dataset_io.hpp"

#include "fedseg/npy.hpp"

#include <fstream>

namespace fedseg {
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open " + path.string());
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

void write_json(const fs::path& path, const json& j) {
  std::ofstream out(path);
  if (!out) throw FormatError("cannot open " + path.string() + " for writing");
  out << j.dump(2) << '\n';
}

std::vector<std::size_t> mask_dims(const Shape3& s) {
  return {static_cast<std::size_t>(s.depth), static_cast<std::size_t>(s.height),
          static_cast<std::size_t>(s.width)};
}

MaskArray load_mask(const fs::path& path, const Shape3& shape) {
  const auto arr = npy::read(path);
  if (arr.shape != mask_dims(shape)) throw FormatError(path.string() + ": mask shape disagrees with image");
  const auto bytes = npy::to_bytes(arr);
  return Eigen::Map<const MaskArray>(bytes.data(), static_cast<Eigen::Index>(bytes.size()));
}

}  // namespace

void save_volume(const fs::path& dir, const Volume& v) {
  v.validate();
  fs::create_directories(dir);
  const auto c = static_cast<std::size_t>(v.channels());
  npy::write(dir / "image.npy",
             npy::from_floats(v.image.data(), {c, static_cast<std::size_t>(v.shape.depth),
                                               static_cast<std::size_t>(v.shape.height),
                                               static_cast<std::size_t>(v.shape.width)}));
  npy::write(dir / "mask.npy", npy::from_bytes(v.mask.data(), mask_dims(v.shape)));
  const bool has_clean = v.clean_mask && !(*v.clean_mask == v.mask).all();
  if (has_clean) npy::write(dir / "clean_mask.npy", npy::from_bytes(v.clean_mask->data(), mask_dims(v.shape)));
  else fs::remove(dir / "clean_mask.npy");
  write_json(dir / "meta.json", json{{"subject_id", v.subject_id},
                                     {"site_id", v.site_id},
                                     {"seed", v.seed},
                                     {"has_clean_mask", v.clean_mask.has_value()}});
}

Volume load_saved_volume(const fs::path& dir) {
  const json meta = read_json(dir / "meta.json");
  Volume v;
  v.subject_id = meta.at("subject_id").get<std::string>();
  v.site_id = meta.at("site_id").get<std::string>();
  v.seed = meta.at("seed").get<std::uint64_t>();

  const auto img = npy::read(dir / "image.npy");
  if (img.shape.size() != 4) throw FormatError((dir / "image.npy").string() + ": expected 4 dims");
  v.shape = Shape3{static_cast<int>(img.shape[1]), static_cast<int>(img.shape[2]),
                   static_cast<int>(img.shape[3])};
  const auto values = npy::to_floats(img);
  v.image = Eigen::Map<const ImageArray>(values.data(), static_cast<Eigen::Index>(img.shape[0]),
                                         static_cast<Eigen::Index>(v.shape.voxels()));
  v.mask = load_mask(dir / "mask.npy", v.shape);
  if (fs::exists(dir / "clean_mask.npy")) v.clean_mask = load_mask(dir / "clean_mask.npy", v.shape);
  else if (meta.value("has_clean_mask", false)) v.clean_mask = v.mask;
  v.validate();
  return v;
}

void save_dataset(const fs::path& root, const FederationDataset& ds) {
  fs::create_directories(root);
  json index;
  index["site_ids"] = ds.site_ids;
  json sites = json::array();
  for (const auto& site : ds.site_train) {
    json ids = json::array();
    for (const auto& v : site) {
      save_volume(root / v.subject_id, v);
      ids.push_back(v.subject_id);
    }
    sites.push_back(ids);
  }
  index["site_train"] = sites;
  for (const auto& [key, list] : {std::pair{"central_validation", &ds.central_validation},
                                  std::pair{"test", &ds.test}}) {
    json ids = json::array();
    for (const auto& v : *list) {
      save_volume(root / v.subject_id, v);
      ids.push_back(v.subject_id);
    }
    index[key] = ids;
  }
  write_json(root / "dataset.json", index);
}

FederationDataset load_dataset(const fs::path& root) {
  const json index = read_json(root / "dataset.json");
  FederationDataset ds;
  ds.site_ids = index.at("site_ids").get<std::vector<std::string>>();
  for (const auto& ids : index.at("site_train")) {
    auto& list = ds.site_train.emplace_back();
    for (const auto& id : ids) list.push_back(load_saved_volume(root / id.get<std::string>()));
  }
  if (ds.site_train.size() != ds.site_ids.size())
    throw FormatError((root / "dataset.json").string() + ": site_ids and site_train lengths differ");
  for (const auto& id : index.at("central_validation"))
    ds.central_validation.push_back(load_saved_volume(root / id.get<std::string>()));
  for (const auto& id : index.at("test")) ds.test.push_back(load_saved_volume(root / id.get<std::string>()));
  return ds;
}

json to_json(const NoiseSpec& spec) {
  return json{{"kind", std::string(to_string(spec.kind))},
              {"magnitude_voxels", spec.magnitude_voxels},
              {"lesion_fraction", spec.lesion_fraction},
              {"sample_fraction", spec.sample_fraction},
              {"seed", spec.seed}};
}

NoiseSpec noise_spec_from_json(const json& j) {
  NoiseSpec spec;
  spec.kind = parse_noise_kind(j.at("kind").get<std::string>());
  spec.magnitude_voxels = j.value("magnitude_voxels", 0);
  spec.lesion_fraction = j.value("lesion_fraction", 0.0);
  spec.sample_fraction = j.value("sample_fraction", 0.0);
  spec.seed = j.value("seed", std::uint64_t{0});
  spec.validate();
  return spec;
}

json to_json(const CorruptionReport& report) {
  json subjects = json::array();
  for (const auto& s : report.subjects)
    subjects.push_back({{"subject_id", s.subject_id},
                        {"applied", s.applied},
                        {"kind", std::string(to_string(s.kind))},
                        {"voxels_added", s.voxels_added},
                        {"voxels_removed", s.voxels_removed},
                        {"lesions_removed", s.lesions_removed}});
  return json{{"site_id", report.site_id},
              {"spec", to_json(report.spec)},
              {"applied_count", report.applied_count()},
              {"subjects", subjects}};
}

}  // namespace fedseg
