#include "fedseg/volume.hpp"

namespace fedseg {

std::string to_string(const Shape3& shape) {
  return std::to_string(shape.depth) + "x" + std::to_string(shape.height) + "x" +
         std::to_string(shape.width);
}

void Volume::validate() const {
  const auto n = static_cast<Eigen::Index>(shape.voxels());
  if (image.cols() != n)
    throw ShapeError(subject_id + ": image has " + std::to_string(image.cols()) +
                     " voxels per channel, shape " + to_string(shape) + " needs " +
                     std::to_string(n));
  if (mask.size() != n) throw ShapeError(subject_id + ": mask size disagrees with image");
  if ((mask > 1).any()) throw ShapeError(subject_id + ": mask is not binary");
  if (clean_mask) {
    if (clean_mask->size() != n) throw ShapeError(subject_id + ": clean mask size disagrees");
    if ((*clean_mask > 1).any()) throw ShapeError(subject_id + ": clean mask is not binary");
  }
}

}  // namespace fedseg
