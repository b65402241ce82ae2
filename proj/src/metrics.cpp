#include "fedseg/metrics.hpp"

#include <iomanip>
#include <sstream>
#include <stdexcept>

namespace fedseg {

MetricsReport evaluate(const std::vector<MaskArray>& predictions, const std::vector<MaskArray>& truths,
                       const std::vector<std::string>& subject_ids) {
  if (predictions.size() != truths.size())
    throw std::invalid_argument("evaluate: " + std::to_string(predictions.size()) + " predictions vs " +
                                std::to_string(truths.size()) + " truths");
  if (predictions.empty()) throw std::invalid_argument("evaluate: empty cohort");
  if (!subject_ids.empty() && subject_ids.size() != predictions.size())
    throw std::invalid_argument("evaluate: subject id count mismatch");

  MetricsReport report;
  report.subject_count = predictions.size();
  std::size_t sum_pred = 0, sum_gt = 0, sum_overlap = 0;
  for (std::size_t s = 0; s < predictions.size(); ++s) {
    const auto& p = predictions[s];
    const auto& y = truths[s];
    if (p.size() != y.size())
      throw ShapeError("evaluate: subject " + std::to_string(s) + " prediction has " + std::to_string(p.size()) +
                       " voxels, truth has " + std::to_string(y.size()));
    SubjectMetrics m;
    m.subject_id = subject_ids.empty() ? std::to_string(s) : subject_ids[s];
    m.pred_voxels = count_nonzero(p);
    m.gt_voxels = count_nonzero(y);
    m.overlap = static_cast<std::size_t>(((p != 0) && (y != 0)).count());
    if (m.pred_voxels == 0 && m.gt_voxels == 0) {
      m.p_dice = m.precision = m.recall = 1.0;
    } else {
      m.p_dice = 2.0 * m.overlap / static_cast<double>(m.pred_voxels + m.gt_voxels);
      m.precision = m.pred_voxels == 0 ? 0.0 : m.overlap / static_cast<double>(m.pred_voxels);
      m.recall = m.gt_voxels == 0 ? 0.0 : m.overlap / static_cast<double>(m.gt_voxels);
    }
    sum_pred += m.pred_voxels;
    sum_gt += m.gt_voxels;
    sum_overlap += m.overlap;
    report.cohort.p_dice += m.p_dice;
    report.cohort.precision += m.precision;
    report.cohort.recall += m.recall;
    report.subjects.push_back(std::move(m));
  }
  const auto t = static_cast<double>(report.subject_count);
  report.cohort.p_dice /= t;
  report.cohort.precision /= t;
  report.cohort.recall /= t;
  report.cohort.v_dice =
      sum_pred + sum_gt == 0 ? 1.0 : 2.0 * sum_overlap / static_cast<double>(sum_pred + sum_gt);
  return report;
}

std::string_view to_string(ValidationMetric m) {
  switch (m) {
    case ValidationMetric::p_dice: return "p_dice";
    case ValidationMetric::v_dice: return "v_dice";
    case ValidationMetric::precision: return "precision";
    case ValidationMetric::recall: return "recall";
  }
  return "v_dice";
}

ValidationMetric parse_validation_metric(std::string_view name) {
  for (auto m : {ValidationMetric::p_dice, ValidationMetric::v_dice, ValidationMetric::precision,
                 ValidationMetric::recall})
    if (to_string(m) == name) return m;
  throw ConfigError("unknown validation metric '" + std::string(name) + "'");
}

double select(const CohortMetrics& m, ValidationMetric which) {
  switch (which) {
    case ValidationMetric::p_dice: return m.p_dice;
    case ValidationMetric::v_dice: return m.v_dice;
    case ValidationMetric::precision: return m.precision;
    case ValidationMetric::recall: return m.recall;
  }
  return m.v_dice;
}

nlohmann::json to_json(const CohortMetrics& m) {
  return {{"p_dice", m.p_dice}, {"v_dice", m.v_dice}, {"precision", m.precision}, {"recall", m.recall}};
}

CohortMetrics cohort_from_json(const nlohmann::json& j) {
  return {j.at("p_dice").get<double>(), j.at("v_dice").get<double>(), j.at("precision").get<double>(),
          j.at("recall").get<double>()};
}

nlohmann::json to_json(const MetricsReport& r) {
  auto subjects = nlohmann::json::array();
  for (const auto& s : r.subjects)
    subjects.push_back({{"subject_id", s.subject_id},
                        {"p_dice", s.p_dice},
                        {"precision", s.precision},
                        {"recall", s.recall},
                        {"pred_voxels", s.pred_voxels},
                        {"gt_voxels", s.gt_voxels},
                        {"overlap", s.overlap}});
  return {{"cohort", to_json(r.cohort)},
          {"subject_count", r.subject_count},
          {"conventions", r.conventions},
          {"subjects", subjects}};
}

std::string to_csv(const MetricsReport& r) {
  std::ostringstream out;
  out << std::setprecision(17);
  out << "subject_id,p_dice,v_dice,precision,recall,pred_voxels,gt_voxels\n";
  for (const auto& s : r.subjects)
    out << s.subject_id << ',' << s.p_dice << ",," << s.precision << ',' << s.recall << ',' << s.pred_voxels
        << ',' << s.gt_voxels << '\n';
  std::size_t pred = 0, gt = 0;
  for (const auto& s : r.subjects) {
    pred += s.pred_voxels;
    gt += s.gt_voxels;
  }
  out << "cohort," << r.cohort.p_dice << ',' << r.cohort.v_dice << ',' << r.cohort.precision << ','
      << r.cohort.recall << ',' << pred << ',' << gt << '\n';
  return out.str();
}

}  // namespace fedseg
