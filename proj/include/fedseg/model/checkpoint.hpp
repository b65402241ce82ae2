#pragma once

#include "fedseg/model/weights.hpp"

#include <nlohmann/json.hpp>

#include <filesystem>
#include <string>
#include <vector>

namespace fedseg {

// Checkpoint container, all integers little-endian:
//
//   offset 0   8 bytes   magic "FEDSEGCK"
//   offset 8   uint32    format version (1)
//   offset 12  uint64    header length H
//   offset 20  H bytes   UTF-8 JSON header:
//                          { "fingerprint": str, "scalar": "float32"|"float64",
//                            "entries": [{"name", "shape", "trainable", "offset", "count"}],
//                            "meta": {...} }
//   then       payload   IEEE-754 float64 values of every entry, concatenated
//                        in header order; "offset"/"count" are in elements.
//
// float32 weights widen to float64 exactly, so a save/load cycle is lossless
// for both scalar types.

struct CheckpointEntry {
  std::string name;
  std::vector<int> shape;
  bool trainable = true;
  std::vector<double> values;
};

struct Checkpoint {
  std::string fingerprint;
  std::string scalar;
  std::vector<CheckpointEntry> entries;
  nlohmann::json meta = nlohmann::json::object();
};

void write_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint read_checkpoint(const std::filesystem::path& path);

template <typename Scalar>
Checkpoint to_checkpoint(const WeightVector<Scalar>& w, nlohmann::json meta = nlohmann::json::object()) {
  Checkpoint c;
  c.fingerprint = w.fingerprint();
  c.scalar = sizeof(Scalar) == 4 ? "float32" : "float64";
  c.meta = std::move(meta);
  for (const auto& e : w.entries()) {
    CheckpointEntry out{e.name, e.shape, e.trainable, {}};
    out.values.assign(e.values.data(), e.values.data() + e.values.size());
    c.entries.push_back(std::move(out));
  }
  return c;
}

template <typename Scalar>
WeightVector<Scalar> from_checkpoint(const Checkpoint& c) {
  WeightVector<Scalar> w(c.fingerprint);
  for (const auto& e : c.entries) {
    const auto i = w.add(e.name, e.shape, e.trainable);
    if (static_cast<std::size_t>(w[i].size()) != e.values.size())
      throw std::invalid_argument("checkpoint entry '" + e.name + "' has the wrong element count");
    for (std::size_t k = 0; k < e.values.size(); ++k)
      w[i][static_cast<Eigen::Index>(k)] = static_cast<Scalar>(e.values[k]);
  }
  return w;
}

template <typename Scalar>
void save_weights(const std::filesystem::path& path, const WeightVector<Scalar>& w,
                  nlohmann::json meta = nlohmann::json::object()) {
  write_checkpoint(path, to_checkpoint(w, std::move(meta)));
}

template <typename Scalar>
WeightVector<Scalar> load_weights(const std::filesystem::path& path) {
  return from_checkpoint<Scalar>(read_checkpoint(path));
}

}  // namespace fedseg
