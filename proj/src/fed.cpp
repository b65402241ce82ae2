#include "fedseg/fed.hpp"

#include "fedseg/ingest.hpp"
#include "fedseg/model/checkpoint.hpp"
#include "fedseg/model/train.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <exception>
#include <fstream>
#include <numeric>
#include <thread>

namespace fedseg {
namespace fs = std::filesystem;

void FederationConfig::validate() const {
  model.validate();
  policy.validate();
  if (rounds < 1) throw ConfigError("rounds must be >= 1");
  if (epochs_per_round < 0) throw ConfigError("epochs_per_round must be >= 0");
  if (!(learning_rate > 0.0)) throw ConfigError("learning_rate must be > 0");
  if (!(weight_decay >= 0.0)) throw ConfigError("weight_decay must be >= 0");
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (resume && checkpoint_dir.empty()) throw ConfigError("resume requires a checkpoint directory");
}

SiteData make_site(const std::string& site_id, const std::vector<Volume>& volumes) {
  SiteData site{site_id, {}};
  for (const auto& v : volumes) {
    auto s = slices(v);
    std::move(s.begin(), s.end(), std::back_inserter(site.slices));
  }
  return site;
}

namespace {

int round_up(int v, int m) { return (v + m - 1) / m * m; }

struct Batch {
  nn::FeatureMap<Real> x;
  MaskArray labels;  // one per position; padding is background
};

// Zero-pads every slice to the common spatial size, rounded up to the
// network's spatial multiple.
Batch build_batch(const std::vector<const SliceRecord*>& records, int channels, int multiple) {
  int h = 0, w = 0;
  for (const auto* r : records) {
    h = std::max(h, r->height);
    w = std::max(w, r->width);
  }
  h = round_up(h, multiple);
  w = round_up(w, multiple);
  const int b = static_cast<int>(records.size());
  Batch out{nn::FeatureMap<Real>(channels, b, h, w), MaskArray::Zero(Eigen::Index{b} * h * w)};
  for (int i = 0; i < b; ++i) {
    const auto& r = *records[static_cast<std::size_t>(i)];
    if (r.image.rows() != channels)
      throw ShapeError("slice of " + r.subject_id + " has " + std::to_string(r.image.rows()) + " channels, expected " +
                       std::to_string(channels));
    for (int y = 0; y < r.height; ++y) {
      const auto src = Eigen::Index{y} * r.width;
      const auto dst = out.x.column(i, y, 0);
      out.x.data.block(0, dst, channels, r.width) = r.image.middleCols(src, r.width).matrix();
      out.labels.segment(dst, r.width) = r.mask.segment(src, r.width);
    }
  }
  return out;
}

nn::Matrix<Real> make_targets(const Network& net, const Batch& batch, const MaskArray& labels, CorrectionMode mode,
                              const FederationConfig& cfg, const Weights& student, const Weights& local_teacher,
                              const Weights& central_teacher, CorrectionStats& stats) {
  const auto& p = cfg.policy;
  switch (mode) {
    case CorrectionMode::none:
      return one_hot<Real>(labels);
    case CorrectionMode::smoothing:
      return smooth_labels<Real>(labels, p.alpha);
    case CorrectionMode::soft:
      return soft_correct<Real>(labels, predict_probabilities(net, student, batch.x), p.epsilon);
    case CorrectionMode::dhlc_local:
      return one_hot<Real>(dhlc_correct<Real>(labels, predict_probabilities(net, local_teacher, batch.x), p.h0, p.h1, &stats));
    case CorrectionMode::celc_central:
      return one_hot<Real>(
          dhlc_correct<Real>(labels, predict_probabilities(net, central_teacher, batch.x), p.h0, p.h1, &stats));
  }
  return one_hot<Real>(labels);
}

}  // namespace

Weights train_site_round(const Network& net, const SiteData& site, const Weights& start, const Weights& teacher,
                         const FederationConfig& cfg, int epoch_offset, int epochs, std::mt19937_64& rng,
                         SiteRoundLog* log) {
  require_combinable(start, teacher, "train_site_round");
  Weights w = start;
  Weights local_teacher = start;
  AdamState<Real> opt;
  AdamOptions adam;
  adam.learning_rate = cfg.learning_rate;
  adam.weight_decay = cfg.weight_decay;
  const int channels = net.config().in_channels;
  const int multiple = net.config().spatial_multiple();

  SiteRoundLog local;
  double loss_sum = 0.0;
  std::vector<std::size_t> order(site.slices.size());
  for (int e = 0; e < epochs; ++e) {
    const CorrectionMode mode = cfg.policy.effective_mode(epoch_offset + e);
    local.mode = mode;
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t begin = 0; begin < order.size(); begin += static_cast<std::size_t>(cfg.batch_size)) {
      const auto end = std::min(order.size(), begin + static_cast<std::size_t>(cfg.batch_size));
      std::vector<const SliceRecord*> records;
      for (auto i = begin; i < end; ++i) records.push_back(&site.slices[order[i]]);
      const Batch batch = build_batch(records, channels, multiple);
      const auto targets =
          make_targets(net, batch, batch.labels, mode, cfg, w, local_teacher, teacher, local.corrections);
      try {
        loss_sum += train_step(net, w, opt, batch.x, targets, adam);
      } catch (const TrainingError& err) {
        throw TrainingError(site.site_id + " epoch " + std::to_string(epoch_offset + e) + ": " + err.what());
      }
      ++local.iterations;
      if (cfg.policy.mode == CorrectionMode::dhlc_local)
        local_teacher = ema_update(local_teacher, w, cfg.policy.ema_decay);
    }
  }
  local.mean_loss = local.iterations ? loss_sum / local.iterations : 0.0;
  if (log) *log = local;
  return w;
}

bool update_central_teacher(FederationState& state, const Weights& new_central, double val_score) {
  state.student = new_central;
  if (val_score > state.best_val_score) {
    state.teacher = new_central;
    state.best_val_score = val_score;
    return true;
  }
  return false;
}

std::vector<MaskArray> predict_volumes(const Network& net, const Weights& w, const std::vector<Volume>& volumes,
                                       int batch_size) {
  std::vector<MaskArray> out;
  out.reserve(volumes.size());
  const int channels = net.config().in_channels;
  const int multiple = net.config().spatial_multiple();
  for (const auto& v : volumes) {
    auto recs = slices(v);
    for (std::size_t begin = 0; begin < recs.size(); begin += static_cast<std::size_t>(batch_size)) {
      const auto end = std::min(recs.size(), begin + static_cast<std::size_t>(batch_size));
      std::vector<const SliceRecord*> chunk;
      for (auto i = begin; i < end; ++i) chunk.push_back(&recs[i]);
      const Batch batch = build_batch(chunk, channels, multiple);
      const MaskArray pred = binarize(predict_probabilities(net, w, batch.x));
      for (std::size_t i = begin; i < end; ++i) {
        auto& r = recs[i];
        const int b = static_cast<int>(i - begin);
        for (int y = 0; y < r.height; ++y)
          r.mask.segment(Eigen::Index{y} * r.width, r.width) = pred.segment(batch.x.column(b, y, 0), r.width);
      }
    }
    out.push_back(reassemble_mask(recs, v.shape));
  }
  return out;
}

MetricsReport evaluate_model(const Network& net, const Weights& w, const std::vector<Volume>& volumes,
                             int batch_size) {
  std::vector<MaskArray> truths;
  std::vector<std::string> ids;
  for (const auto& v : volumes) {
    truths.push_back(v.truth());
    ids.push_back(v.subject_id);
  }
  return evaluate(predict_volumes(net, w, volumes, batch_size), truths, ids);
}

namespace {

nlohmann::json score_to_json(double v) { return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(nullptr); }
double score_from_json(const nlohmann::json& j) {
  return j.is_null() ? -std::numeric_limits<double>::infinity() : j.get<double>();
}

fs::path round_dir(const fs::path& root, int round) {
  char name[32];
  std::snprintf(name, sizeof name, "round_%04d", round);
  return root / name;
}

void write_json(const fs::path& path, const nlohmann::json& j) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << j.dump(2) << '\n';
}

void save_round(const fs::path& root, const FederationState& state, const FederationConfig& cfg) {
  const fs::path final_dir = round_dir(root, state.round);
  fs::path tmp = final_dir;
  tmp += ".tmp";
  fs::remove_all(tmp);
  fs::create_directories(tmp);
  save_weights(tmp / "student.ckpt", state.student, {{"round", state.round}, {"role", "student"}});
  save_weights(tmp / "teacher.ckpt", state.teacher, {{"round", state.round}, {"role", "teacher"}});
  write_json(tmp / "state.json", {{"round", state.round},
                                  {"best_val_score", score_to_json(state.best_val_score)},
                                  {"config", to_json(cfg)},
                                  {"history", to_json(state.history)}});
  fs::remove_all(final_dir);
  fs::rename(tmp, final_dir);
  write_json(root / "history.json", to_json(state.history));
}

bool load_latest_round(const fs::path& root, FederationState& state) {
  if (!fs::exists(root)) return false;
  int latest = 0;
  for (const auto& e : fs::directory_iterator(root)) {
    const auto name = e.path().filename().string();
    int r = 0;
    if (e.is_directory() && std::sscanf(name.c_str(), "round_%d", &r) == 1 && name.find(".tmp") == std::string::npos &&
        fs::exists(e.path() / "state.json"))
      latest = std::max(latest, r);
  }
  if (latest == 0) return false;
  const fs::path dir = round_dir(root, latest);
  std::ifstream in(dir / "state.json");
  const auto j = nlohmann::json::parse(in);
  state.round = j.at("round").get<int>();
  state.best_val_score = score_from_json(j.at("best_val_score"));
  state.history.clear();
  for (const auto& r : j.at("history")) state.history.push_back(round_from_json(r));
  state.student = load_weights<Real>(dir / "student.ckpt");
  state.teacher = load_weights<Real>(dir / "teacher.ckpt");
  return true;
}

}  // namespace

FederationResult run_federation(const std::vector<SiteData>& sites, const std::vector<Volume>& validation,
                                const FederationConfig& cfg, const RoundCallback& on_round) {
  cfg.validate();
  if (sites.empty()) throw ConfigError("federation needs at least one site");
  if (validation.empty()) throw ConfigError("federation needs a non-empty central validation set");
  const Network net(cfg.model);

  FederationState state;
  state.student = net.init(cfg.seed);
  state.teacher = state.student;
  if (cfg.resume && load_latest_round(cfg.checkpoint_dir, state)) {
    if (!state.student.combinable_with(net.layout()))
      throw ConfigError("checkpoint in " + cfg.checkpoint_dir.string() + " does not match the model configuration");
  }

  while (state.round < cfg.rounds) {
    const auto t0 = std::chrono::steady_clock::now();
    const int r = state.round;
    RoundRecord rec;
    rec.round = r + 1;
    rec.sites.resize(sites.size());
    std::vector<Weights> site_weights(sites.size());
    std::vector<std::exception_ptr> errors(sites.size());

    auto run_site = [&](std::size_t n) {
      try {
        std::mt19937_64 rng(derive_seed(cfg.seed, n + 1, static_cast<std::uint64_t>(r) + 1));
        site_weights[n] = train_site_round(net, sites[n], state.student, state.teacher, cfg, r * cfg.epochs_per_round,
                                           cfg.epochs_per_round, rng, &rec.sites[n]);
      } catch (...) {
        errors[n] = std::current_exception();
      }
    };
    if (cfg.deterministic || sites.size() == 1) {
      for (std::size_t n = 0; n < sites.size(); ++n) run_site(n);
    } else {
      std::vector<std::thread> workers;
      for (std::size_t n = 0; n < sites.size(); ++n) workers.emplace_back(run_site, n);
      for (auto& t : workers) t.join();
    }
    for (const auto& e : errors)
      if (e) std::rethrow_exception(e);

    const Weights central = aggregate(site_weights);
    rec.validation = evaluate_model(net, central, validation, cfg.batch_size).cohort;
    rec.validation_score = select(rec.validation, cfg.validation_metric);
    rec.teacher_promoted = update_central_teacher(state, central, rec.validation_score);
    rec.best_validation_score = state.best_val_score;
    for (const auto& s : sites) rec.site_ids.push_back(s.site_id);
    rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    state.round = r + 1;
    state.history.push_back(rec);
    if (!cfg.checkpoint_dir.empty()) save_round(cfg.checkpoint_dir, state, cfg);
    if (on_round) on_round(rec);
  }
  return {state.teacher, state.student, std::move(state)};
}

FederationResult train_centralized(const std::vector<SiteData>& sites, const std::vector<Volume>& validation,
                                   const FederationConfig& cfg, const RoundCallback& on_round) {
  SiteData pooled{"pooled", {}};
  for (const auto& s : sites) pooled.slices.insert(pooled.slices.end(), s.slices.begin(), s.slices.end());
  if (pooled.slices.empty()) throw ConfigError("centralized training needs a non-empty pool");
  return run_federation({pooled}, validation, cfg, on_round);
}

// ---------------------------------------------------------------------------
// JSON

nlohmann::json to_json(const RoundRecord& r) {
  auto sites = nlohmann::json::array();
  for (std::size_t i = 0; i < r.sites.size(); ++i) {
    const auto& s = r.sites[i];
    sites.push_back({{"site_id", i < r.site_ids.size() ? r.site_ids[i] : std::to_string(i)},
                     {"iterations", s.iterations},
                     {"mean_loss", s.mean_loss},
                     {"mode", std::string(to_string(s.mode))},
                     {"flipped_to_background", s.corrections.to_background},
                     {"flipped_to_lesion", s.corrections.to_lesion}});
  }
  return {{"round", r.round},
          {"sites", sites},
          {"validation", to_json(r.validation)},
          {"validation_score", r.validation_score},
          {"best_validation_score", r.best_validation_score},
          {"teacher_promoted", r.teacher_promoted},
          {"seconds", r.seconds}};
}

RoundRecord round_from_json(const nlohmann::json& j) {
  RoundRecord r;
  r.round = j.at("round").get<int>();
  for (const auto& s : j.at("sites")) {
    r.site_ids.push_back(s.at("site_id").get<std::string>());
    SiteRoundLog log;
    log.iterations = s.at("iterations").get<int>();
    log.mean_loss = s.at("mean_loss").get<double>();
    log.mode = parse_correction_mode(s.at("mode").get<std::string>());
    log.corrections.to_background = s.at("flipped_to_background").get<std::size_t>();
    log.corrections.to_lesion = s.at("flipped_to_lesion").get<std::size_t>();
    r.sites.push_back(log);
  }
  r.validation = cohort_from_json(j.at("validation"));
  r.validation_score = j.at("validation_score").get<double>();
  r.best_validation_score = j.at("best_validation_score").get<double>();
  r.teacher_promoted = j.at("teacher_promoted").get<bool>();
  r.seconds = j.value("seconds", 0.0);
  return r;
}

nlohmann::json to_json(const std::vector<RoundRecord>& history) {
  auto out = nlohmann::json::array();
  for (const auto& r : history) out.push_back(to_json(r));
  return out;
}

nlohmann::json to_json(const CorrectionPolicy& p) {
  return {{"mode", std::string(to_string(p.mode))},
          {"h0", p.h0},
          {"h1", p.h1},
          {"epsilon", p.epsilon},
          {"alpha", p.alpha},
          {"warmup_epochs", p.warmup_epochs},
          {"ema_decay", p.ema_decay}};
}

CorrectionPolicy policy_from_json(const nlohmann::json& j) {
  CorrectionPolicy p;
  p.mode = parse_correction_mode(j.value("mode", std::string("none")));
  p.h0 = j.value("h0", p.h0);
  p.h1 = j.value("h1", p.h1);
  p.epsilon = j.value("epsilon", p.epsilon);
  p.alpha = j.value("alpha", p.alpha);
  p.warmup_epochs = j.value("warmup_epochs", p.warmup_epochs);
  p.ema_decay = j.value("ema_decay", p.ema_decay);
  return p;
}

nlohmann::json to_json(const UNetConfig& c) {
  return {{"depth", c.depth},
          {"base_channels", c.base_channels},
          {"in_channels", c.in_channels},
          {"out_channels", c.out_channels},
          {"norm", "batch_norm"},
          {"activation", "prelu"},
          {"kernel", 3},
          {"bn_momentum", c.bn_momentum},
          {"bn_eps", c.bn_eps},
          {"prelu_init", c.prelu_init}};
}

UNetConfig unet_config_from_json(const nlohmann::json& j) {
  UNetConfig c;
  c.depth = j.value("depth", c.depth);
  c.base_channels = j.value("base_channels", c.base_channels);
  c.in_channels = j.value("in_channels", c.in_channels);
  c.out_channels = j.value("out_channels", c.out_channels);
  c.bn_momentum = j.value("bn_momentum", c.bn_momentum);
  c.bn_eps = j.value("bn_eps", c.bn_eps);
  c.prelu_init = j.value("prelu_init", c.prelu_init);
  return c;
}

nlohmann::json to_json(const FederationConfig& c) {
  return {{"model", to_json(c.model)},
          {"rounds", c.rounds},
          {"epochs_per_round", c.epochs_per_round},
          {"learning_rate", c.learning_rate},
          {"weight_decay", c.weight_decay},
          {"batch_size", c.batch_size},
          {"policy", to_json(c.policy)},
          {"seed", c.seed},
          {"validation_metric", std::string(to_string(c.validation_metric))},
          {"deterministic", c.deterministic},
          {"checkpoint_dir", c.checkpoint_dir.string()},
          {"resume", c.resume}};
}

FederationConfig federation_config_from_json(const nlohmann::json& j) {
  FederationConfig c;
  c.model = unet_config_from_json(j.value("model", nlohmann::json::object()));
  c.rounds = j.value("rounds", c.rounds);
  c.epochs_per_round = j.value("epochs_per_round", c.epochs_per_round);
  c.learning_rate = j.value("learning_rate", c.learning_rate);
  c.weight_decay = j.value("weight_decay", c.weight_decay);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.policy = policy_from_json(j.value("policy", nlohmann::json::object()));
  c.seed = j.value("seed", c.seed);
  c.validation_metric = parse_validation_metric(j.value("validation_metric", std::string("v_dice")));
  c.deterministic = j.value("deterministic", c.deterministic);
  c.checkpoint_dir = j.value("checkpoint_dir", std::string());
  c.resume = j.value("resume", c.resume);
  return c;
}

}  // namespace fedseg
