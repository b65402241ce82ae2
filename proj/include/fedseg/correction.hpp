#pragma once

#include "fedseg/common.hpp"
#include "fedseg/model/layers.hpp"
#include "fedseg/model/weights.hpp"

#include <cmath>
#include <stdexcept>
#include <string>
#include <string_view>

namespace fedseg {

enum class CorrectionMode { none, smoothing, soft, dhlc_local, celc_central };

std::string_view to_string(CorrectionMode mode);
CorrectionMode parse_correction_mode(std::string_view name);

struct CorrectionPolicy {
  CorrectionMode mode = CorrectionMode::none;
  double h0 = 0.90;          // lesion -> background threshold
  double h1 = 0.65;          // background -> lesion threshold
  double epsilon = 0.3;      // soft correction strength
  double alpha = 0.1;        // label smoothing constant
  int warmup_epochs = 10;    // epochs trained with mode treated as none
  double ema_decay = 0.99;   // local teacher decay (dhlc_local)

  /// Throws ConfigError when any field is out of range, whatever the mode.
  void validate() const;

  /// Mode in force at a given zero-based epoch.
  [[nodiscard]] CorrectionMode effective_mode(int epoch) const {
    return epoch < warmup_epochs ? CorrectionMode::none : mode;
  }

  friend bool operator==(const CorrectionPolicy&, const CorrectionPolicy&) = default;
};

struct CorrectionStats {
  std::size_t to_background = 0;  // label 1 -> 0
  std::size_t to_lesion = 0;      // label 0 -> 1

  CorrectionStats& operator+=(const CorrectionStats& o) {
    to_background += o.to_background;
    to_lesion += o.to_lesion;
    return *this;
  }
};

// Probability fields and soft targets are 2 x N: row 0 background, row 1 lesion.

template <typename Scalar>
void check_probabilities(const nn::Matrix<Scalar>& probs, double tolerance = 1e-6) {
  if (probs.rows() != 2) throw std::invalid_argument("probability field must have 2 rows");
  for (Eigen::Index i = 0; i < probs.cols(); ++i) {
    const double p0 = static_cast<double>(probs(0, i)), p1 = static_cast<double>(probs(1, i));
    if (!(p0 >= -tolerance && p1 >= -tolerance && std::abs(p0 + p1 - 1.0) <= tolerance))
      throw std::invalid_argument("probabilities at voxel " + std::to_string(i) + " are not normalized (" +
                                  std::to_string(p0) + ", " + std::to_string(p1) + ")");
  }
}

inline void check_labels(const MaskArray& labels, Eigen::Index n) {
  if (labels.size() != n)
    throw std::invalid_argument("label count " + std::to_string(labels.size()) + " != " + std::to_string(n));
  if ((labels > 1).any()) throw std::invalid_argument("labels must be binary");
}

template <typename Scalar>
nn::Matrix<Scalar> one_hot(const MaskArray& labels) {
  check_labels(labels, labels.size());
  nn::Matrix<Scalar> t(2, labels.size());
  for (Eigen::Index i = 0; i < labels.size(); ++i) {
    t(1, i) = labels[i] ? Scalar(1) : Scalar(0);
    t(0, i) = labels[i] ? Scalar(0) : Scalar(1);
  }
  return t;
}

/// (1 - alpha) * onehot(y) + alpha * uniform.
template <typename Scalar>
nn::Matrix<Scalar> smooth_labels(const MaskArray& labels, double alpha) {
  if (!(alpha >= 0.0 && alpha < 1.0)) throw std::invalid_argument("smoothing alpha must lie in [0, 1)");
  const auto keep = static_cast<Scalar>(1.0 - alpha);
  const auto spread = static_cast<Scalar>(alpha / 2.0);
  nn::Matrix<Scalar> t = one_hot<Scalar>(labels);
  return (keep * t.array() + spread).matrix();
}

/// (1 - epsilon) * onehot(y) + epsilon * p.
template <typename Scalar>
nn::Matrix<Scalar> soft_correct(const MaskArray& labels, const nn::Matrix<Scalar>& probs, double epsilon) {
  if (!(epsilon >= 0.0 && epsilon <= 1.0)) throw std::invalid_argument("correction epsilon must lie in [0, 1]");
  check_probabilities(probs);
  check_labels(labels, probs.cols());
  if (epsilon == 0.0) return one_hot<Scalar>(labels);
  if (epsilon == 1.0) return probs;
  const auto e = static_cast<Scalar>(epsilon);
  return ((Scalar(1) - e) * one_hot<Scalar>(labels).array() + e * probs.array()).matrix();
}

/// Decoupled hard correction, strict thresholds:
///   y=1 -> 0 when argmax p = 0 and p0 > h0
///   y=0 -> 1 when argmax p = 1 and p1 > h1
/// Ties in argmax resolve to background.
template <typename Scalar>
MaskArray dhlc_correct(const MaskArray& labels, const nn::Matrix<Scalar>& probs, double h0, double h1,
                       CorrectionStats* stats = nullptr) {
  check_probabilities(probs);
  check_labels(labels, probs.cols());
  MaskArray out = labels;
  CorrectionStats local;
  for (Eigen::Index j = 0; j < labels.size(); ++j) {
    const double p0 = static_cast<double>(probs(0, j)), p1 = static_cast<double>(probs(1, j));
    const int argmax = p1 > p0 ? 1 : 0;
    if (labels[j] == 1 && argmax == 0 && p0 > h0) {
      out[j] = 0;
      ++local.to_background;
    } else if (labels[j] == 0 && argmax == 1 && p1 > h1) {
      out[j] = 1;
      ++local.to_lesion;
    }
  }
  if (stats) *stats += local;
  return out;
}

/// teacher' = decay * teacher + (1 - decay) * student, elementwise over
/// every entry including batch-norm buffers.
template <typename Scalar>
WeightVector<Scalar> ema_update(const WeightVector<Scalar>& teacher, const WeightVector<Scalar>& student,
                                double decay) {
  require_combinable(teacher, student, "ema_update");
  if (!(decay >= 0.0 && decay <= 1.0)) throw std::invalid_argument("ema decay must lie in [0, 1]");
  if (decay == 0.0) return student;
  if (decay == 1.0) return teacher;
  WeightVector<Scalar> out = teacher;
  const auto d = static_cast<Scalar>(decay);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = d * teacher[i] + (Scalar(1) - d) * student[i];
  return out;
}

}  // namespace fedseg
