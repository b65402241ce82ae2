#pragma once

// Deliberately naive reference implementations used only by tests.

#include "fedseg/common.hpp"

#include <cstdlib>
#include <map>
#include <random>
#include <vector>

namespace oracle {

using fedseg::MaskArray;
using fedseg::Shape3;

inline MaskArray random_mask(const Shape3& s, double density, std::mt19937_64& rng) {
  std::bernoulli_distribution b(density);
  MaskArray m(static_cast<Eigen::Index>(s.voxels()));
  for (Eigen::Index i = 0; i < m.size(); ++i) m[i] = b(rng) ? 1 : 0;
  return m;
}

// Out-of-bounds voxels count as background.
inline bool at(const MaskArray& m, const Shape3& s, int z, int y, int x) {
  return s.contains(z, y, x) && m[static_cast<Eigen::Index>(s.index(z, y, x))] != 0;
}

// Iterated cross erosion equals erosion by the L1 ball of the same radius,
// restricted to the image (the border itself does not erode).
inline MaskArray erode(const MaskArray& m, const Shape3& s, int r) {
  MaskArray out = MaskArray::Zero(m.size());
  const int rz = s.is_2d() ? 0 : r;
  for (int z = 0; z < s.depth; ++z)
    for (int y = 0; y < s.height; ++y)
      for (int x = 0; x < s.width; ++x) {
        bool keep = true;
        for (int dz = -rz; dz <= rz; ++dz)
          for (int dy = -r; dy <= r; ++dy)
            for (int dx = -r; dx <= r; ++dx)
              if (std::abs(dz) + std::abs(dy) + std::abs(dx) <= r && s.contains(z + dz, y + dy, x + dx) &&
                  !at(m, s, z + dz, y + dy, x + dx))
                keep = false;
        out[static_cast<Eigen::Index>(s.index(z, y, x))] = keep;
      }
  return out;
}

inline MaskArray dilate(const MaskArray& m, const Shape3& s, int r) {
  MaskArray out = MaskArray::Zero(m.size());
  const int rz = s.is_2d() ? 0 : r;
  for (int z = 0; z < s.depth; ++z)
    for (int y = 0; y < s.height; ++y)
      for (int x = 0; x < s.width; ++x) {
        bool hit = false;
        for (int dz = -rz; dz <= rz; ++dz)
          for (int dy = -r; dy <= r; ++dy)
            for (int dx = -r; dx <= r; ++dx)
              if (std::abs(dz) + std::abs(dy) + std::abs(dx) <= r && at(m, s, z + dz, y + dy, x + dx)) hit = true;
        out[static_cast<Eigen::Index>(s.index(z, y, x))] = hit;
      }
  return out;
}

// Components by repeated min-label propagation over the full neighbourhood
// until nothing changes. Returns a representative label per voxel (-1 for
// background).
inline std::vector<long> component_labels(const MaskArray& m, const Shape3& s) {
  std::vector<long> label(static_cast<std::size_t>(m.size()), -1);
  for (Eigen::Index i = 0; i < m.size(); ++i)
    if (m[i]) label[static_cast<std::size_t>(i)] = i;
  const int rz = s.is_2d() ? 0 : 1;
  for (bool changed = true; changed;) {
    changed = false;
    for (int z = 0; z < s.depth; ++z)
      for (int y = 0; y < s.height; ++y)
        for (int x = 0; x < s.width; ++x) {
          const auto i = s.index(z, y, x);
          if (label[i] < 0) continue;
          for (int dz = -rz; dz <= rz; ++dz)
            for (int dy = -1; dy <= 1; ++dy)
              for (int dx = -1; dx <= 1; ++dx)
                if (at(m, s, z + dz, y + dy, x + dx)) {
                  const auto j = s.index(z + dz, y + dy, x + dx);
                  if (label[j] < label[i]) {
                    label[i] = label[j];
                    changed = true;
                  }
                }
        }
  }
  return label;
}

inline int components(const MaskArray& m, const Shape3& s) {
  std::map<long, int> seen;
  for (long l : component_labels(m, s))
    if (l >= 0) seen[l] = 1;
  return static_cast<int>(seen.size());
}

inline bool subset(const MaskArray& a, const MaskArray& b) { return ((a != 0) <= (b != 0)).all(); }

// Hard correction rule evaluated literally for one voxel.
inline int dhlc(int y, double p0, double p1, double h0, double h1) {
  const int argmax = p1 > p0 ? 1 : 0;
  if (argmax == 0 && p0 > h0 && y == 1) return 0;
  if (argmax == 1 && p1 > h1 && y == 0) return 1;
  return y;
}

struct Counts {
  double p_dice = 0, v_dice = 0, precision = 0, recall = 0;
};

// Voxel-by-voxel loops with the documented empty-set conventions.
inline Counts metrics(const std::vector<fedseg::MaskArray>& p, const std::vector<fedseg::MaskArray>& y) {
  Counts c;
  double tp_all = 0, p_all = 0, y_all = 0;
  for (std::size_t s = 0; s < p.size(); ++s) {
    double tp = 0, np = 0, ny = 0;
    for (Eigen::Index i = 0; i < p[s].size(); ++i) {
      if (p[s][i] == 1 && y[s][i] == 1) tp += 1;
      if (p[s][i] == 1) np += 1;
      if (y[s][i] == 1) ny += 1;
    }
    if (np == 0 && ny == 0) {
      c.p_dice += 1;
      c.precision += 1;
      c.recall += 1;
    } else {
      c.p_dice += 2 * tp / (np + ny);
      c.precision += np == 0 ? 0 : tp / np;
      c.recall += ny == 0 ? 0 : tp / ny;
    }
    tp_all += tp;
    p_all += np;
    y_all += ny;
  }
  const double t = static_cast<double>(p.size());
  c.p_dice /= t;
  c.precision /= t;
  c.recall /= t;
  c.v_dice = p_all + y_all == 0 ? 1 : 2 * tp_all / (p_all + y_all);
  return c;
}

}  // namespace oracle
