#pragma once

#include "fedseg/correction.hpp"
#include "fedseg/metrics.hpp"
#include "fedseg/model/unet.hpp"
#include "fedseg/volume.hpp"

#include <nlohmann/json.hpp>

#include <filesystem>
#include <functional>
#include <limits>
#include <random>
#include <string>
#include <vector>

namespace fedseg {

using Real = float;
using Weights = WeightVector<Real>;
using Network = UNet<Real>;

struct FederationConfig {
  UNetConfig model;
  int rounds = 20;
  int epochs_per_round = 1;  // one epoch over the site's slices per round
  double learning_rate = 7e-4;
  double weight_decay = 1e-5;
  int batch_size = 8;
  CorrectionPolicy policy;
  std::uint64_t seed = 0;
  ValidationMetric validation_metric = ValidationMetric::v_dice;
  bool deterministic = false;           // sequential site training
  std::filesystem::path checkpoint_dir;  // empty: no checkpoints
  bool resume = false;

  void validate() const;
  friend bool operator==(const FederationConfig&, const FederationConfig&) = default;
};

/// Training slices of one site. Labels are the site's (possibly noisy) masks.
struct SiteData {
  std::string site_id;
  std::vector<SliceRecord> slices;
};

SiteData make_site(const std::string& site_id, const std::vector<Volume>& volumes);

struct SiteRoundLog {
  int iterations = 0;
  double mean_loss = 0.0;
  CorrectionMode mode = CorrectionMode::none;
  CorrectionStats corrections;
};

struct RoundRecord {
  int round = 0;  // 1-based
  std::vector<std::string> site_ids;
  std::vector<SiteRoundLog> sites;
  CohortMetrics validation;
  double validation_score = 0.0;
  double best_validation_score = 0.0;
  bool teacher_promoted = false;
  double seconds = 0.0;
};

struct FederationState {
  int round = 0;  // completed rounds
  Weights student;
  Weights teacher;
  double best_val_score = -std::numeric_limits<double>::infinity();
  std::vector<RoundRecord> history;
};

struct FederationResult {
  Weights best;  // the teacher: best central model on validation
  Weights last;  // the final aggregate
  FederationState state;
};

/// Runs `epochs` passes over the site's slices starting from `start`.
/// `epoch_offset` is the global index of the first epoch (warm-up gating).
/// `teacher` is the fixed central teacher used in celc_central mode and is
/// never modified. Throws TrainingError on a non-finite step.
Weights train_site_round(const Network& net, const SiteData& site, const Weights& start, const Weights& teacher,
                         const FederationConfig& cfg, int epoch_offset, int epochs, std::mt19937_64& rng,
                         SiteRoundLog* log = nullptr);

/// Promotes `new_central` to teacher on strict improvement; the student is
/// always replaced. Returns true on promotion.
bool update_central_teacher(FederationState& state, const Weights& new_central, double val_score);

/// Binary predictions, one mask per volume, from inference-mode forwards.
std::vector<MaskArray> predict_volumes(const Network& net, const Weights& w, const std::vector<Volume>& volumes,
                                       int batch_size = 8);

MetricsReport evaluate_model(const Network& net, const Weights& w, const std::vector<Volume>& volumes,
                             int batch_size = 8);

using RoundCallback = std::function<void(const RoundRecord&)>;

/// Round loop: site rounds, even aggregation, validation on clean central
/// data, teacher promotion, redistribution. Checkpoints each round when
/// `cfg.checkpoint_dir` is set and resumes from the latest one when
/// `cfg.resume` is true.
FederationResult run_federation(const std::vector<SiteData>& sites, const std::vector<Volume>& validation,
                                const FederationConfig& cfg, const RoundCallback& on_round = {});

/// Pooled training: the same schedule as a single-site federation.
FederationResult train_centralized(const std::vector<SiteData>& sites, const std::vector<Volume>& validation,
                                   const FederationConfig& cfg, const RoundCallback& on_round = {});

nlohmann::json to_json(const RoundRecord& r);
RoundRecord round_from_json(const nlohmann::json& j);
nlohmann::json to_json(const std::vector<RoundRecord>& history);

nlohmann::json to_json(const CorrectionPolicy& p);
CorrectionPolicy policy_from_json(const nlohmann::json& j);
nlohmann::json to_json(const UNetConfig& c);
UNetConfig unet_config_from_json(const nlohmann::json& j);
nlohmann::json to_json(const FederationConfig& c);
FederationConfig federation_config_from_json(const nlohmann::json& j);

}  // namespace fedseg
