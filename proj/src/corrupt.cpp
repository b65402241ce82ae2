#include "fedseg/corrupt.hpp"

#include <algorithm>
#include <array>
#include <numeric>
#include <stdexcept>

namespace fedseg {
namespace {

void check_mask(const MaskArray& mask, const Shape3& shape) {
  if (static_cast<std::size_t>(mask.size()) != shape.voxels())
    throw ShapeError("mask has " + std::to_string(mask.size()) + " voxels, shape " +
                     to_string(shape) + " needs " + std::to_string(shape.voxels()));
  if ((mask > 1).any()) throw std::invalid_argument("mask is not binary");
}

struct Offset {
  int dz, dy, dx;
};

std::vector<Offset> cross_offsets(const Shape3& shape) {
  std::vector<Offset> out{{0, -1, 0}, {0, 1, 0}, {0, 0, -1}, {0, 0, 1}};
  if (!shape.is_2d()) {
    out.push_back({-1, 0, 0});
    out.push_back({1, 0, 0});
  }
  return out;
}

std::vector<Offset> full_offsets(const Shape3& shape) {
  std::vector<Offset> out;
  const int zr = shape.is_2d() ? 0 : 1;
  for (int dz = -zr; dz <= zr; ++dz)
    for (int dy = -1; dy <= 1; ++dy)
      for (int dx = -1; dx <= 1; ++dx)
        if (dz != 0 || dy != 0 || dx != 0) out.push_back({dz, dy, dx});
  return out;
}

// One pass with the cross element. Erosion keeps a voxel when every in-bounds
// neighbour is set (the border does not erode); dilation sees nothing beyond
// the border. With these border values opening <= mask <= closing holds.
MaskArray morph_step(const MaskArray& in, const Shape3& shape, bool erode) {
  const auto offsets = cross_offsets(shape);
  MaskArray out(in.size());
  for (int z = 0; z < shape.depth; ++z)
    for (int y = 0; y < shape.height; ++y)
      for (int x = 0; x < shape.width; ++x) {
        const auto i = shape.index(z, y, x);
        if (erode) {
          bool keep = in[i] != 0;
          for (const auto& o : offsets) {
            if (!keep) break;
            const int zz = z + o.dz, yy = y + o.dy, xx = x + o.dx;
            keep = !shape.contains(zz, yy, xx) || in[shape.index(zz, yy, xx)] != 0;
          }
          out[i] = keep ? 1 : 0;
        } else {
          bool set = in[i] != 0;
          for (const auto& o : offsets) {
            if (set) break;
            const int zz = z + o.dz, yy = y + o.dy, xx = x + o.dx;
            set = shape.contains(zz, yy, xx) && in[shape.index(zz, yy, xx)] != 0;
          }
          out[i] = set ? 1 : 0;
        }
      }
  return out;
}

MaskArray morph(const MaskArray& mask, const Shape3& shape, int radius, bool erode) {
  check_mask(mask, shape);
  if (radius < 1) throw std::invalid_argument("morphology radius must be >= 1");
  MaskArray out = mask;
  for (int r = 0; r < radius; ++r) out = morph_step(out, shape, erode);
  return out;
}

}  // namespace

MaskArray erode_mask(const MaskArray& mask, const Shape3& shape, int radius) {
  return morph(mask, shape, radius, true);
}

MaskArray dilate_mask(const MaskArray& mask, const Shape3& shape, int radius) {
  return morph(mask, shape, radius, false);
}

int label_components(const MaskArray& mask, const Shape3& shape, std::vector<int>& labels) {
  check_mask(mask, shape);
  const auto offsets = full_offsets(shape);
  labels.assign(shape.voxels(), 0);
  int count = 0;
  std::vector<std::array<int, 3>> stack;
  for (int z = 0; z < shape.depth; ++z)
    for (int y = 0; y < shape.height; ++y)
      for (int x = 0; x < shape.width; ++x) {
        const auto seed = shape.index(z, y, x);
        if (mask[seed] == 0 || labels[seed] != 0) continue;
        ++count;
        labels[seed] = count;
        stack.push_back({z, y, x});
        while (!stack.empty()) {
          const auto [cz, cy, cx] = stack.back();
          stack.pop_back();
          for (const auto& o : offsets) {
            const int zz = cz + o.dz, yy = cy + o.dy, xx = cx + o.dx;
            if (!shape.contains(zz, yy, xx)) continue;
            const auto j = shape.index(zz, yy, xx);
            if (mask[j] != 0 && labels[j] == 0) {
              labels[j] = count;
              stack.push_back({zz, yy, xx});
            }
          }
        }
      }
  return count;
}

int count_components(const MaskArray& mask, const Shape3& shape) {
  std::vector<int> labels;
  return label_components(mask, shape, labels);
}

MaskArray remove_lesions(const MaskArray& mask, const Shape3& shape, double lesion_fraction,
                         std::mt19937_64& rng) {
  if (lesion_fraction < 0.0 || lesion_fraction > 1.0)
    throw std::invalid_argument("lesion_fraction must lie in [0, 1]");
  std::vector<int> labels;
  const int n = label_components(mask, shape, labels);
  const auto k = round_count(lesion_fraction * n);
  if (n == 0 || k == 0) return mask;

  std::vector<int> ids(n);
  std::iota(ids.begin(), ids.end(), 1);
  std::shuffle(ids.begin(), ids.end(), rng);
  std::vector<char> drop(n + 1, 0);
  for (std::size_t i = 0; i < k; ++i) drop[ids[i]] = 1;

  MaskArray out = mask;
  for (Eigen::Index i = 0; i < out.size(); ++i)
    if (labels[i] != 0 && drop[labels[i]]) out[i] = 0;
  return out;
}

std::string_view to_string(NoiseKind kind) {
  switch (kind) {
    case NoiseKind::none: return "none";
    case NoiseKind::erosion: return "erosion";
    case NoiseKind::dilation: return "dilation";
    case NoiseKind::removal: return "removal";
  }
  return "none";
}

NoiseKind parse_noise_kind(std::string_view name) {
  for (auto kind : {NoiseKind::none, NoiseKind::erosion, NoiseKind::dilation, NoiseKind::removal})
    if (to_string(kind) == name) return kind;
  throw ConfigError("unknown noise kind '" + std::string(name) + "'");
}

void NoiseSpec::validate() const {
  if (sample_fraction < 0.0 || sample_fraction > 1.0)
    throw ConfigError("noise sample_fraction must lie in [0, 1]");
  switch (kind) {
    case NoiseKind::erosion:
    case NoiseKind::dilation:
      if (magnitude_voxels < 1) throw ConfigError("erosion/dilation needs magnitude_voxels >= 1");
      break;
    case NoiseKind::removal:
      if (!(lesion_fraction > 0.0 && lesion_fraction <= 1.0))
        throw ConfigError("removal needs lesion_fraction in (0, 1]");
      break;
    case NoiseKind::none:
      break;
  }
}

std::size_t CorruptionReport::applied_count() const {
  return static_cast<std::size_t>(
      std::count_if(subjects.begin(), subjects.end(), [](const auto& s) { return s.applied; }));
}

CorruptedSite apply_site_noise(std::vector<Volume> site_volumes, const NoiseSpec& spec) {
  spec.validate();
  CorruptedSite out;
  out.report.spec = spec;
  if (!site_volumes.empty()) out.report.site_id = site_volumes.front().site_id;

  const std::size_t n = site_volumes.size();
  const std::size_t k = spec.kind == NoiseKind::none ? 0 : round_count(spec.sample_fraction * n);

  std::mt19937_64 rng(spec.seed);
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<char> selected(n, 0);
  for (std::size_t i = 0; i < k; ++i) selected[order[i]] = 1;

  for (std::size_t i = 0; i < n; ++i) {
    Volume& v = site_volumes[i];
    if (!v.clean_mask) v.clean_mask = v.mask;
    SubjectCorruption rec;
    rec.subject_id = v.subject_id;
    rec.kind = spec.kind;
    if (selected[i]) {
      rec.applied = true;
      MaskArray noisy;
      switch (spec.kind) {
        case NoiseKind::erosion:
          noisy = erode_mask(v.mask, v.shape, spec.magnitude_voxels);
          break;
        case NoiseKind::dilation:
          noisy = dilate_mask(v.mask, v.shape, spec.magnitude_voxels);
          break;
        case NoiseKind::removal: {
          // Per-subject stream so the outcome does not depend on visit order.
          std::mt19937_64 subject_rng(derive_seed(spec.seed, i, 1));
          const int before = count_components(v.mask, v.shape);
          noisy = remove_lesions(v.mask, v.shape, spec.lesion_fraction, subject_rng);
          rec.lesions_removed = static_cast<std::size_t>(before - count_components(noisy, v.shape));
          break;
        }
        case NoiseKind::none:
          noisy = v.mask;
          break;
      }
      rec.voxels_added = static_cast<std::size_t>(((noisy != 0) && (v.mask == 0)).count());
      rec.voxels_removed = static_cast<std::size_t>(((noisy == 0) && (v.mask != 0)).count());
      v.mask = std::move(noisy);
    }
    out.report.subjects.push_back(std::move(rec));
  }
  out.volumes = std::move(site_volumes);
  return out;
}

}  // namespace fedseg
