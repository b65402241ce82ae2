#pragma once

#include "fedseg/common.hpp"
#include "fedseg/model/layers.hpp"

#include <nlohmann/json.hpp>

#include <string>
#include <vector>

namespace fedseg {

struct SubjectMetrics {
  std::string subject_id;
  double p_dice = 0.0;
  double precision = 0.0;
  double recall = 0.0;
  std::size_t pred_voxels = 0;
  std::size_t gt_voxels = 0;
  std::size_t overlap = 0;
};

struct CohortMetrics {
  double p_dice = 0.0;
  double v_dice = 0.0;
  double precision = 0.0;
  double recall = 0.0;
};

/// Subject- and cohort-level overlap scores. Empty denominators follow the
/// conventions below and are recorded in `conventions` for reports:
///   both masks empty           -> dice = precision = recall = 1
///   empty prediction only      -> precision = 0
///   empty truth only           -> recall = 0
///   pooled sums both zero      -> V-Dice = 1
struct MetricsReport {
  std::vector<SubjectMetrics> subjects;
  CohortMetrics cohort;
  std::size_t subject_count = 0;
  std::string conventions =
      "both-empty: dice=precision=recall=1; empty-prediction: precision=0; empty-truth: recall=0; "
      "pooled-empty: v_dice=1";
};

/// Voxel-wise overlap of prediction and truth masks, one pair per subject.
MetricsReport evaluate(const std::vector<MaskArray>& predictions, const std::vector<MaskArray>& truths,
                       const std::vector<std::string>& subject_ids = {});

/// Argmax over the two channels; ties go to background (p1 > 0.5 strictly).
template <typename Scalar>
MaskArray binarize(const nn::Matrix<Scalar>& probs) {
  MaskArray out(probs.cols());
  for (Eigen::Index i = 0; i < probs.cols(); ++i) out[i] = probs(1, i) > probs(0, i) ? 1 : 0;
  return out;
}

enum class ValidationMetric { p_dice, v_dice, precision, recall };
std::string_view to_string(ValidationMetric m);
ValidationMetric parse_validation_metric(std::string_view name);
double select(const CohortMetrics& m, ValidationMetric which);

nlohmann::json to_json(const CohortMetrics& m);
CohortMetrics cohort_from_json(const nlohmann::json& j);
nlohmann::json to_json(const MetricsReport& r);

/// One row per subject plus a final "cohort" row (p_dice column holds the
/// cohort P-Dice, v_dice column is empty for subject rows).
std::string to_csv(const MetricsReport& r);

}  // namespace fedseg
