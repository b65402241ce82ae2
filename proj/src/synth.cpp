#include "fedseg/synth.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>
#include <random>
#include <string>

namespace fedseg {
namespace {

// Separable 3-tap box blur within each slice, borders clamped.
void box_blur(Eigen::ArrayXf& field, const Shape3& shape, int passes) {
  Eigen::ArrayXf tmp(field.size());
  for (int p = 0; p < passes; ++p) {
    for (int z = 0; z < shape.depth; ++z)
      for (int y = 0; y < shape.height; ++y)
        for (int x = 0; x < shape.width; ++x) {
          const int x0 = std::max(x - 1, 0), x1 = std::min(x + 1, shape.width - 1);
          tmp[shape.index(z, y, x)] =
              (field[shape.index(z, y, x0)] + field[shape.index(z, y, x)] +
               field[shape.index(z, y, x1)]) / 3.0f;
        }
    for (int z = 0; z < shape.depth; ++z)
      for (int y = 0; y < shape.height; ++y)
        for (int x = 0; x < shape.width; ++x) {
          const int y0 = std::max(y - 1, 0), y1 = std::min(y + 1, shape.height - 1);
          field[shape.index(z, y, x)] =
              (tmp[shape.index(z, y0, x)] + tmp[shape.index(z, y, x)] +
               tmp[shape.index(z, y1, x)]) / 3.0f;
        }
  }
}

struct Ellipsoid {
  int cz, cy, cx;
  double az, ay, ax;
  double angle;
};

std::vector<std::size_t> rasterize(const Ellipsoid& e, const Shape3& shape) {
  std::vector<std::size_t> voxels;
  const double c = std::cos(e.angle), s = std::sin(e.angle);
  const int ry = static_cast<int>(std::ceil(std::max(e.ay, e.ax)));
  const int rz = shape.is_2d() ? 0 : static_cast<int>(std::ceil(e.az));
  for (int dz = -rz; dz <= rz; ++dz)
    for (int dy = -ry; dy <= ry; ++dy)
      for (int dx = -ry; dx <= ry; ++dx) {
        const double u = (dx * c + dy * s) / e.ax;
        const double v = (-dx * s + dy * c) / e.ay;
        const double w = shape.is_2d() ? 0.0 : dz / e.az;
        if (u * u + v * v + w * w > 1.0) continue;
        const int z = e.cz + dz, y = e.cy + dy, x = e.cx + dx;
        if (shape.contains(z, y, x)) voxels.push_back(shape.index(z, y, x));
      }
  return voxels;
}

}  // namespace

void SynthConfig::validate() const {
  if (image_size < 16) throw ConfigError("synth image_size must be >= 16");
  if (depth < 1) throw ConfigError("synth depth must be >= 1");
  if (subjects_per_site < 1) throw ConfigError("synth subjects_per_site must be >= 1");
  if (n_sites < 1) throw ConfigError("synth n_sites must be >= 1");
  if (lesion_count_range[0] < 0 || lesion_count_range[1] < lesion_count_range[0])
    throw ConfigError("synth lesion_count_range must satisfy 0 <= min <= max");
  if (!(lesion_radius_range[0] > 0.0) || lesion_radius_range[1] < lesion_radius_range[0])
    throw ConfigError("synth lesion_radius_range must satisfy 0 < min <= max");
  if (lesion_radius_range[1] * 4 > image_size)
    throw ConfigError("synth lesion radius too large for image_size");
  if (background_texture_scale < 0.0 || noise_std < 0.0)
    throw ConfigError("synth texture and noise scales must be non-negative");
  if (boundary_blur < 0) throw ConfigError("synth boundary_blur must be >= 0");
}

std::uint64_t subject_seed(const SynthConfig& cfg, int site, int index) {
  return derive_seed(cfg.seed, static_cast<std::uint64_t>(site), static_cast<std::uint64_t>(index));
}

Volume generate_subject(const SynthConfig& cfg, std::uint64_t seed, int* lesion_count) {
  cfg.validate();
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  auto uniform = [&](double lo, double hi) { return lo + (hi - lo) * unit(rng); };

  const int n = cfg.image_size;
  Volume v;
  v.seed = seed;
  v.shape = Shape3{cfg.depth, n, n};
  const auto& shape = v.shape;
  const auto voxels = shape.voxels();

  // Circular brain region, identical in every slice.
  const double cy = n / 2.0 - 0.5 + uniform(-0.03, 0.03) * n;
  const double cx = n / 2.0 - 0.5 + uniform(-0.03, 0.03) * n;
  const double brain_radius = 0.42 * n * uniform(0.95, 1.05);
  std::vector<char> brain(voxels, 0);
  for (int z = 0; z < shape.depth; ++z)
    for (int y = 0; y < n; ++y)
      for (int x = 0; x < n; ++x)
        brain[shape.index(z, y, x)] = std::hypot(y - cy, x - cx) <= brain_radius;

  // Lesions: rotated ellipses kept one voxel apart so every lesion is its own
  // 8/26-connected component.
  const int wanted = std::uniform_int_distribution<int>(cfg.lesion_count_range[0],
                                                        cfg.lesion_count_range[1])(rng);
  v.mask = MaskArray::Zero(static_cast<Eigen::Index>(voxels));
  std::vector<char> blocked(voxels, 0);
  Eigen::ArrayXf profile = Eigen::ArrayXf::Zero(static_cast<Eigen::Index>(voxels));
  int placed = 0;
  for (int lesion = 0; lesion < wanted; ++lesion) {
    bool ok = false;
    for (int attempt = 0; attempt < 500 && !ok; ++attempt) {
      const double r = uniform(cfg.lesion_radius_range[0], cfg.lesion_radius_range[1]);
      Ellipsoid e{};
      e.ay = r * uniform(0.75, 1.25);
      e.ax = r * uniform(0.75, 1.25);
      e.az = r * uniform(0.75, 1.25);
      e.angle = uniform(0.0, std::numbers::pi);
      const double reach = brain_radius - std::max(e.ay, e.ax) - 2.0;
      if (reach <= 0.0) continue;
      const double rho = reach * std::sqrt(unit(rng));
      const double phi = uniform(0.0, 2.0 * std::numbers::pi);
      e.cy = static_cast<int>(std::lround(cy + rho * std::sin(phi)));
      e.cx = static_cast<int>(std::lround(cx + rho * std::cos(phi)));
      e.cz = shape.depth / 2;
      if (!shape.is_2d())
        e.cz = std::uniform_int_distribution<int>(0, shape.depth - 1)(rng);

      auto footprint = rasterize(e, shape);
      const bool clear = std::all_of(footprint.begin(), footprint.end(),
                                     [&](std::size_t i) { return brain[i] && !blocked[i]; });
      if (!clear) continue;
      ok = true;
      ++placed;
      const float amplitude = static_cast<float>(uniform(0.7, 1.3));
      for (auto i : footprint) {
        v.mask[static_cast<Eigen::Index>(i)] = 1;
        profile[static_cast<Eigen::Index>(i)] = amplitude;
      }
      // Block the footprint plus its full neighbourhood for later lesions.
      const int zr = shape.is_2d() ? 0 : 1;
      for (auto i : footprint) {
        const int z = static_cast<int>(i / shape.slice_voxels());
        const int y = static_cast<int>((i / shape.width) % shape.height);
        const int x = static_cast<int>(i % shape.width);
        for (int dz = -zr; dz <= zr; ++dz)
          for (int dy = -1; dy <= 1; ++dy)
            for (int dx = -1; dx <= 1; ++dx)
              if (shape.contains(z + dz, y + dy, x + dx))
                blocked[shape.index(z + dz, y + dy, x + dx)] = 1;
      }
    }
    if (!ok) throw ConfigError("could not place lesion " + std::to_string(lesion) +
                               "; reduce lesion count or radius");
  }
  if (lesion_count) *lesion_count = placed;
  box_blur(profile, shape, cfg.boundary_blur);

  v.image = ImageArray::Zero(2, static_cast<Eigen::Index>(voxels));
  std::normal_distribution<float> gauss(0.0f, static_cast<float>(cfg.noise_std));
  for (int c = 0; c < 2; ++c) {
    Eigen::ArrayXf texture(static_cast<Eigen::Index>(voxels));
    for (Eigen::Index i = 0; i < texture.size(); ++i) texture[i] = static_cast<float>(uniform(-1, 1));
    box_blur(texture, shape, 3);
    // After three blur passes the field std is roughly 0.1; rescale to unit-ish.
    texture *= static_cast<float>(cfg.background_texture_scale * 5.0);
    const auto contrast = static_cast<float>(cfg.channel_contrast[static_cast<std::size_t>(c)]);
    for (Eigen::Index i = 0; i < texture.size(); ++i) {
      if (!brain[static_cast<std::size_t>(i)]) continue;
      v.image(c, i) = 1.0f + texture[i] + contrast * profile[i] + gauss(rng);
    }
  }
  v.clean_mask = v.mask;
  return v;
}

FederationDataset generate_federation(const SynthConfig& cfg, const SplitSpec& split) {
  cfg.validate();
  if (split.train_per_site < 0 || split.val < 0 || split.test < 0)
    throw ConfigError("split counts must be non-negative");
  if (split.train_per_site > cfg.subjects_per_site)
    throw ConfigError("train_per_site " + std::to_string(split.train_per_site) +
                      " exceeds subjects_per_site " + std::to_string(cfg.subjects_per_site));
  const int remainder = cfg.n_sites * (cfg.subjects_per_site - split.train_per_site);
  if (split.val + split.test > remainder)
    throw ConfigError("val + test = " + std::to_string(split.val + split.test) +
                      " exceeds the " + std::to_string(remainder) + " held-out subjects");

  auto make = [&](int site, int index) {
    Volume v = generate_subject(cfg, subject_seed(cfg, site, index));
    char id[32];
    std::snprintf(id, sizeof id, "site%d_sub%03d", site + 1, index);
    v.subject_id = id;
    v.site_id = "site" + std::to_string(site + 1);
    return v;
  };

  FederationDataset ds;
  for (int s = 0; s < cfg.n_sites; ++s) {
    ds.site_ids.push_back("site" + std::to_string(s + 1));
    auto& list = ds.site_train.emplace_back();
    for (int i = 0; i < split.train_per_site; ++i) list.push_back(make(s, i));
  }
  // Held-out subjects, visited round-robin across sites.
  int taken = 0;
  for (int i = split.train_per_site; i < cfg.subjects_per_site && taken < split.val + split.test; ++i)
    for (int s = 0; s < cfg.n_sites && taken < split.val + split.test; ++s, ++taken)
      (taken < split.val ? ds.central_validation : ds.test).push_back(make(s, i));
  return ds;
}

}  // namespace fedseg
