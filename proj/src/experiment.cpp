#include "fedseg/experiment.hpp"

#include "fedseg/dataset_io.hpp"
#include "fedseg/ingest.hpp"
#include "fedseg/model/checkpoint.hpp"

#include <yaml-cpp/yaml.h>

#include <chrono>
#include <ctime>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <thread>

#ifndef FEDSEG_VERSION
#define FEDSEG_VERSION "unknown"
#endif
#ifndef FEDSEG_GIT_REVISION
#define FEDSEG_GIT_REVISION "unknown"
#endif

namespace fedseg {
namespace fs = std::filesystem;

std::string_view to_string(DataSource s) {
  switch (s) {
    case DataSource::synth: return "synth";
    case DataSource::manifest: return "manifest";
    case DataSource::dataset: return "dataset";
  }
  return "synth";
}

std::string_view to_string(Paradigm p) { return p == Paradigm::federated ? "federated" : "centralized"; }

std::string code_version() { return std::string(FEDSEG_VERSION) + "+" + FEDSEG_GIT_REVISION; }

void ExperimentConfig::validate() const {
  auto scoped = [](const char* path, auto&& check) {
    try {
      check();
    } catch (const ConfigError& e) {
      throw ConfigError(std::string(path) + ": " + e.what());
    }
  };
  if (schema_version != kSchemaVersion)
    throw ConfigError("schema_version: unsupported version " + std::to_string(schema_version) + " (expected " +
                      std::to_string(kSchemaVersion) + ")");
  if (name.empty()) throw ConfigError("name: must not be empty");
  switch (data.source) {
    case DataSource::synth:
      scoped("data.synth", [&] { data.synth.validate(); });
      if (data.split.train_per_site < 1) throw ConfigError("data.split.train_per_site: must be >= 1");
      if (data.split.val < 1) throw ConfigError("data.split.val: must be >= 1");
      if (data.split.test < 0) throw ConfigError("data.split.test: must be >= 0");
      if (!noise.empty() && static_cast<int>(noise.size()) != data.synth.n_sites)
        throw ConfigError("noise: " + std::to_string(noise.size()) + " entries for " +
                          std::to_string(data.synth.n_sites) + " sites");
      break;
    case DataSource::manifest:
      if (data.manifest.empty()) throw ConfigError("data.manifest: required when data.source is manifest");
      break;
    case DataSource::dataset:
      if (data.dataset_dir.empty()) throw ConfigError("data.dataset_dir: required when data.source is dataset");
      break;
  }
  for (std::size_t i = 0; i < noise.size(); ++i) {
    const std::string path = "noise." + std::to_string(i);
    scoped(path.c_str(), [&] { noise[i].validate(); });
  }
  scoped("model", [&] { federation.model.validate(); });
  scoped("policy", [&] { federation.policy.validate(); });
  FederationConfig schedule = federation;
  schedule.policy = {};
  schedule.model = {};
  scoped("federation", [&] { schedule.validate(); });
}

// ---------------------------------------------------------------------------
// YAML parsing with source positions.

namespace {

class Reader {
 public:
  explicit Reader(std::string source) : source_(std::move(source)) {}

  [[noreturn]] void fail(const YAML::Node& node, const std::string& path, const std::string& msg) const {
    throw ConfigError(where(node.Mark()) + path + ": " + msg);
  }

  std::string where(const YAML::Mark& m) const {
    if (m.line < 0) return source_ + ": ";
    return source_ + ":" + std::to_string(m.line + 1) + ":" + std::to_string(m.column + 1) + ": ";
  }

  void remember(const std::string& path, const YAML::Node& node) { marks_[path] = node.Mark(); }

  // Anchors a validation error "a.b.c: message" at the longest known key path.
  [[noreturn]] void anchor(const std::string& message) const {
    const auto colon = message.find(": ");
    std::string path = colon == std::string::npos ? "" : message.substr(0, colon);
    const std::string rest = colon == std::string::npos ? message : message.substr(colon + 2);
    // Sub-validators name the field first ("h0 must lie ...").
    const auto word_end = rest.find_first_of(" :");
    const std::string field = rest.substr(0, word_end);
    std::string probe = path.empty() ? field : path + "." + field;
    std::string text = message;
    if (marks_.count(probe)) {
      path = probe;
      text = probe + ": " + rest;
    }
    std::string key = path;
    while (!key.empty() && !marks_.count(key)) {
      const auto dot = key.rfind('.');
      key = dot == std::string::npos ? "" : key.substr(0, dot);
    }
    const YAML::Mark m = key.empty() ? YAML::Mark::null_mark() : marks_.at(key);
    throw ConfigError(where(m) + text);
  }

  void check_keys(const YAML::Node& map, const std::string& path, std::initializer_list<const char*> allowed) {
    if (!map.IsMap()) fail(map, path.empty() ? "<root>" : path, "expected a mapping");
    const std::set<std::string> ok(allowed.begin(), allowed.end());
    for (const auto& kv : map) {
      const auto key = kv.first.as<std::string>();
      const std::string full = path.empty() ? key : path + "." + key;
      if (!ok.count(key)) fail(kv.first, full, "unknown key");
      remember(full, kv.second);
    }
  }

  template <typename T>
  void get(const YAML::Node& map, const char* key, const std::string& path, T& out) {
    const YAML::Node node = map[key];
    if (!node) return;
    const std::string full = path.empty() ? key : path + "." + key;
    try {
      out = node.as<T>();
    } catch (const YAML::Exception&) {
      fail(node, full, "expected " + type_name<T>());
    }
  }

  template <typename T, std::size_t N>
  void get(const YAML::Node& map, const char* key, const std::string& path, std::array<T, N>& out) {
    const YAML::Node node = map[key];
    if (!node) return;
    const std::string full = path.empty() ? key : path + "." + key;
    if (!node.IsSequence() || node.size() != N) fail(node, full, "expected a list of " + std::to_string(N) + " numbers");
    for (std::size_t i = 0; i < N; ++i) {
      try {
        out[i] = node[i].as<T>();
      } catch (const YAML::Exception&) {
        fail(node[i], full, "expected " + type_name<T>());
      }
    }
  }

  void get_path(const YAML::Node& map, const char* key, const std::string& path, fs::path& out) {
    std::string s = out.string();
    get(map, key, path, s);
    out = s;
  }

  template <typename Enum, typename Parse>
  void get_enum(const YAML::Node& map, const char* key, const std::string& path, Enum& out, Parse parse) {
    const YAML::Node node = map[key];
    if (!node) return;
    std::string s;
    get(map, key, path, s);
    try {
      out = parse(s);
    } catch (const ConfigError& e) {
      fail(node, path.empty() ? key : path + "." + key, e.what());
    }
  }

 private:
  template <typename T>
  static std::string type_name() {
    if constexpr (std::is_same_v<T, bool>) return "a boolean";
    else if constexpr (std::is_integral_v<T>) return "an integer";
    else if constexpr (std::is_floating_point_v<T>) return "a number";
    else return "a string";
  }

  std::string source_;
  std::map<std::string, YAML::Mark> marks_;
};

DataSource parse_source(const std::string& s) {
  for (auto v : {DataSource::synth, DataSource::manifest, DataSource::dataset})
    if (to_string(v) == s) return v;
  throw ConfigError("unknown data source '" + s + "' (synth, manifest, dataset)");
}

Paradigm parse_paradigm(const std::string& s) {
  if (s == "federated") return Paradigm::federated;
  if (s == "centralized") return Paradigm::centralized;
  throw ConfigError("unknown paradigm '" + s + "' (federated, centralized)");
}

// Seed stream tags for values derived from the global seed.
constexpr std::uint64_t kSynthTag = 1, kNoiseTag = 2, kTrainTag = 3;

}  // namespace

ExperimentConfig parse_experiment(const std::string& text, const std::string& source_name,
                                  std::optional<std::uint64_t> seed_override) {
  Reader rd(source_name);
  YAML::Node root;
  try {
    root = YAML::Load(text);
  } catch (const YAML::ParserException& e) {
    throw ConfigError(rd.where(e.mark) + "syntax error: " + e.msg);
  }
  if (!root || root.IsNull()) throw ConfigError(source_name + ": empty configuration");

  ExperimentConfig c;
  rd.check_keys(root, "",
                {"schema_version", "name", "seed", "output_dir", "data", "noise", "model", "federation", "policy"});
  if (!root["schema_version"]) rd.fail(root, "schema_version", "required");
  rd.get(root, "schema_version", "", c.schema_version);
  if (c.schema_version != kSchemaVersion)
    rd.fail(root["schema_version"], "schema_version",
            "unsupported version " + std::to_string(c.schema_version) + " (expected " + std::to_string(kSchemaVersion) +
                ")");
  rd.get(root, "name", "", c.name);
  rd.get(root, "seed", "", c.seed);
  if (seed_override) c.seed = *seed_override;
  rd.get_path(root, "output_dir", "", c.output_dir);

  bool synth_seed_set = false, train_seed_set = false;
  if (const auto data = root["data"]) {
    rd.check_keys(data, "data", {"source", "synth", "split", "manifest", "dataset_dir"});
    rd.get_enum(data, "source", "data", c.data.source, parse_source);
    if (const auto s = data["synth"]) {
      rd.check_keys(s, "data.synth",
                    {"image_size", "depth", "subjects_per_site", "n_sites", "lesion_count_range", "lesion_radius_range",
                     "background_texture_scale", "noise_std", "channel_contrast", "boundary_blur", "seed"});
      auto& sc = c.data.synth;
      rd.get(s, "image_size", "data.synth", sc.image_size);
      rd.get(s, "depth", "data.synth", sc.depth);
      rd.get(s, "subjects_per_site", "data.synth", sc.subjects_per_site);
      rd.get(s, "n_sites", "data.synth", sc.n_sites);
      rd.get(s, "lesion_count_range", "data.synth", sc.lesion_count_range);
      rd.get(s, "lesion_radius_range", "data.synth", sc.lesion_radius_range);
      rd.get(s, "background_texture_scale", "data.synth", sc.background_texture_scale);
      rd.get(s, "noise_std", "data.synth", sc.noise_std);
      rd.get(s, "channel_contrast", "data.synth", sc.channel_contrast);
      rd.get(s, "boundary_blur", "data.synth", sc.boundary_blur);
      synth_seed_set = static_cast<bool>(s["seed"]);
      rd.get(s, "seed", "data.synth", sc.seed);
    }
    if (const auto s = data["split"]) {
      rd.check_keys(s, "data.split", {"train_per_site", "val", "test"});
      rd.get(s, "train_per_site", "data.split", c.data.split.train_per_site);
      rd.get(s, "val", "data.split", c.data.split.val);
      rd.get(s, "test", "data.split", c.data.split.test);
    }
    rd.get_path(data, "manifest", "data", c.data.manifest);
    rd.get_path(data, "dataset_dir", "data", c.data.dataset_dir);
  }

  if (const auto noise = root["noise"]) {
    if (!noise.IsSequence()) rd.fail(noise, "noise", "expected a list with one entry per site");
    for (std::size_t i = 0; i < noise.size(); ++i) {
      const std::string path = "noise." + std::to_string(i);
      const auto n = noise[i];
      rd.remember(path, n);
      rd.check_keys(n, path, {"kind", "magnitude_voxels", "lesion_fraction", "sample_fraction", "seed"});
      NoiseSpec spec;
      rd.get_enum(n, "kind", path, spec.kind, parse_noise_kind);
      rd.get(n, "magnitude_voxels", path, spec.magnitude_voxels);
      rd.get(n, "lesion_fraction", path, spec.lesion_fraction);
      rd.get(n, "sample_fraction", path, spec.sample_fraction);
      spec.seed = derive_seed(c.seed, kNoiseTag, i);
      rd.get(n, "seed", path, spec.seed);
      c.noise.push_back(spec);
    }
  }

  auto& f = c.federation;
  if (const auto m = root["model"]) {
    rd.check_keys(m, "model", {"depth", "base_channels", "in_channels", "bn_momentum", "bn_eps", "prelu_init"});
    rd.get(m, "depth", "model", f.model.depth);
    rd.get(m, "base_channels", "model", f.model.base_channels);
    rd.get(m, "in_channels", "model", f.model.in_channels);
    rd.get(m, "bn_momentum", "model", f.model.bn_momentum);
    rd.get(m, "bn_eps", "model", f.model.bn_eps);
    rd.get(m, "prelu_init", "model", f.model.prelu_init);
  }
  if (const auto fed = root["federation"]) {
    rd.check_keys(fed, "federation",
                  {"paradigm", "rounds", "epochs_per_round", "learning_rate", "weight_decay", "batch_size",
                   "validation_metric", "deterministic", "seed"});
    rd.get_enum(fed, "paradigm", "federation", c.paradigm, parse_paradigm);
    rd.get(fed, "rounds", "federation", f.rounds);
    rd.get(fed, "epochs_per_round", "federation", f.epochs_per_round);
    rd.get(fed, "learning_rate", "federation", f.learning_rate);
    rd.get(fed, "weight_decay", "federation", f.weight_decay);
    rd.get(fed, "batch_size", "federation", f.batch_size);
    rd.get_enum(fed, "validation_metric", "federation", f.validation_metric, parse_validation_metric);
    rd.get(fed, "deterministic", "federation", f.deterministic);
    train_seed_set = static_cast<bool>(fed["seed"]);
    rd.get(fed, "seed", "federation", f.seed);
  }
  if (const auto p = root["policy"]) {
    rd.check_keys(p, "policy", {"mode", "h0", "h1", "epsilon", "alpha", "warmup_epochs", "ema_decay"});
    rd.get_enum(p, "mode", "policy", f.policy.mode, parse_correction_mode);
    rd.get(p, "h0", "policy", f.policy.h0);
    rd.get(p, "h1", "policy", f.policy.h1);
    rd.get(p, "epsilon", "policy", f.policy.epsilon);
    rd.get(p, "alpha", "policy", f.policy.alpha);
    rd.get(p, "warmup_epochs", "policy", f.policy.warmup_epochs);
    rd.get(p, "ema_decay", "policy", f.policy.ema_decay);
  }
  if (!synth_seed_set) c.data.synth.seed = derive_seed(c.seed, kSynthTag);
  if (!train_seed_set) f.seed = derive_seed(c.seed, kTrainTag);

  try {
    c.validate();
  } catch (const ConfigError& e) {
    rd.anchor(e.what());
  }
  return c;
}

ExperimentConfig load_experiment(const fs::path& path, std::optional<std::uint64_t> seed_override) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_experiment(ss.str(), path.string(), seed_override);
}

std::string serialize_experiment(const ExperimentConfig& c) {
  YAML::Emitter out;
  out.SetDoublePrecision(17);
  out << YAML::BeginMap;
  out << YAML::Key << "schema_version" << YAML::Value << c.schema_version;
  out << YAML::Key << "name" << YAML::Value << c.name;
  out << YAML::Key << "seed" << YAML::Value << c.seed;
  out << YAML::Key << "output_dir" << YAML::Value << c.output_dir.string();

  const auto& sc = c.data.synth;
  out << YAML::Key << "data" << YAML::Value << YAML::BeginMap;
  out << YAML::Key << "source" << YAML::Value << std::string(to_string(c.data.source));
  out << YAML::Key << "synth" << YAML::Value << YAML::BeginMap;
  out << YAML::Key << "image_size" << YAML::Value << sc.image_size;
  out << YAML::Key << "depth" << YAML::Value << sc.depth;
  out << YAML::Key << "subjects_per_site" << YAML::Value << sc.subjects_per_site;
  out << YAML::Key << "n_sites" << YAML::Value << sc.n_sites;
  out << YAML::Key << "lesion_count_range" << YAML::Value << YAML::Flow << YAML::BeginSeq << sc.lesion_count_range[0]
      << sc.lesion_count_range[1] << YAML::EndSeq;
  out << YAML::Key << "lesion_radius_range" << YAML::Value << YAML::Flow << YAML::BeginSeq
      << sc.lesion_radius_range[0] << sc.lesion_radius_range[1] << YAML::EndSeq;
  out << YAML::Key << "background_texture_scale" << YAML::Value << sc.background_texture_scale;
  out << YAML::Key << "noise_std" << YAML::Value << sc.noise_std;
  out << YAML::Key << "channel_contrast" << YAML::Value << YAML::Flow << YAML::BeginSeq << sc.channel_contrast[0]
      << sc.channel_contrast[1] << YAML::EndSeq;
  out << YAML::Key << "boundary_blur" << YAML::Value << sc.boundary_blur;
  out << YAML::Key << "seed" << YAML::Value << sc.seed;
  out << YAML::EndMap;
  out << YAML::Key << "split" << YAML::Value << YAML::BeginMap;
  out << YAML::Key << "train_per_site" << YAML::Value << c.data.split.train_per_site;
  out << YAML::Key << "val" << YAML::Value << c.data.split.val;
  out << YAML::Key << "test" << YAML::Value << c.data.split.test;
  out << YAML::EndMap;
  out << YAML::Key << "manifest" << YAML::Value << c.data.manifest.string();
  out << YAML::Key << "dataset_dir" << YAML::Value << c.data.dataset_dir.string();
  out << YAML::EndMap;

  out << YAML::Key << "noise" << YAML::Value << YAML::BeginSeq;
  for (const auto& n : c.noise) {
    out << YAML::BeginMap;
    out << YAML::Key << "kind" << YAML::Value << std::string(to_string(n.kind));
    out << YAML::Key << "magnitude_voxels" << YAML::Value << n.magnitude_voxels;
    out << YAML::Key << "lesion_fraction" << YAML::Value << n.lesion_fraction;
    out << YAML::Key << "sample_fraction" << YAML::Value << n.sample_fraction;
    out << YAML::Key << "seed" << YAML::Value << n.seed;
    out << YAML::EndMap;
  }
  out << YAML::EndSeq;

  const auto& f = c.federation;
  out << YAML::Key << "model" << YAML::Value << YAML::BeginMap;
  out << YAML::Key << "depth" << YAML::Value << f.model.depth;
  out << YAML::Key << "base_channels" << YAML::Value << f.model.base_channels;
  out << YAML::Key << "in_channels" << YAML::Value << f.model.in_channels;
  out << YAML::Key << "bn_momentum" << YAML::Value << f.model.bn_momentum;
  out << YAML::Key << "bn_eps" << YAML::Value << f.model.bn_eps;
  out << YAML::Key << "prelu_init" << YAML::Value << f.model.prelu_init;
  out << YAML::EndMap;

  out << YAML::Key << "federation" << YAML::Value << YAML::BeginMap;
  out << YAML::Key << "paradigm" << YAML::Value << std::string(to_string(c.paradigm));
  out << YAML::Key << "rounds" << YAML::Value << f.rounds;
  out << YAML::Key << "epochs_per_round" << YAML::Value << f.epochs_per_round;
  out << YAML::Key << "learning_rate" << YAML::Value << f.learning_rate;
  out << YAML::Key << "weight_decay" << YAML::Value << f.weight_decay;
  out << YAML::Key << "batch_size" << YAML::Value << f.batch_size;
  out << YAML::Key << "validation_metric" << YAML::Value << std::string(to_string(f.validation_metric));
  out << YAML::Key << "deterministic" << YAML::Value << f.deterministic;
  out << YAML::Key << "seed" << YAML::Value << f.seed;
  out << YAML::EndMap;

  out << YAML::Key << "policy" << YAML::Value << YAML::BeginMap;
  out << YAML::Key << "mode" << YAML::Value << std::string(to_string(f.policy.mode));
  out << YAML::Key << "h0" << YAML::Value << f.policy.h0;
  out << YAML::Key << "h1" << YAML::Value << f.policy.h1;
  out << YAML::Key << "epsilon" << YAML::Value << f.policy.epsilon;
  out << YAML::Key << "alpha" << YAML::Value << f.policy.alpha;
  out << YAML::Key << "warmup_epochs" << YAML::Value << f.policy.warmup_epochs;
  out << YAML::Key << "ema_decay" << YAML::Value << f.policy.ema_decay;
  out << YAML::EndMap;
  out << YAML::EndMap;
  return std::string(out.c_str()) + "\n";
}

// ---------------------------------------------------------------------------
// Pipeline

PreparedData prepare_data(const ExperimentConfig& config) {
  config.validate();
  PreparedData out;
  switch (config.data.source) {
    case DataSource::synth: out.dataset = generate_federation(config.data.synth, config.data.split); break;
    case DataSource::manifest: out.dataset = load_manifest(config.data.manifest); break;
    case DataSource::dataset: out.dataset = load_dataset(config.data.dataset_dir); break;
  }
  const auto n = out.dataset.n_sites();
  if (!config.noise.empty() && config.noise.size() != n)
    throw ConfigError("noise: " + std::to_string(config.noise.size()) + " entries for " + std::to_string(n) +
                      " sites in the data");
  for (std::size_t s = 0; s < n; ++s) {
    const NoiseSpec spec = config.noise.empty() ? NoiseSpec{} : config.noise[s];
    auto corrupted = apply_site_noise(std::move(out.dataset.site_train[s]), spec);
    corrupted.report.site_id = out.dataset.site_ids[s];
    out.dataset.site_train[s] = std::move(corrupted.volumes);
    out.reports.push_back(std::move(corrupted.report));
  }
  return out;
}

nlohmann::json design_defaults(const ExperimentConfig& c) {
  return {
      {"norm_layer", "batch_norm (momentum 0.1, eps 1e-5); running stats exchanged and averaged"},
      {"activation", "prelu, one slope per layer"},
      {"conv_kernel", "3x3, padding 1; stride 2 on the first conv of every encoder stage but the first"},
      {"upsampling", "2x2 transposed convolution"},
      {"skip_connections", "concatenate [skip, upsampled] before each decoder dual-conv"},
      {"aggregation", "unweighted elementwise mean over sites, including batch-norm statistics"},
      {"optimizer", "adam, L2 weight decay added to the gradient; state re-initialized per site per round"},
      {"iterations_per_round", "epochs_per_round passes over the site's slices"},
      {"teacher_promotion",
       "strict improvement of validation " + std::string(to_string(c.federation.validation_metric)) +
           ", best starts at -inf"},
      {"dhlc_local_teacher", "ema of the site student, reset to the distributed model each round"},
      {"ema_decay", c.federation.policy.ema_decay},
      {"soft_correction_source", "the student's own current predictions"},
      {"warmup", "mode treated as none while global epoch < warmup_epochs"},
      {"argmax_ties", "background"},
      {"metric_conventions", MetricsReport{}.conventions},
      {"morphology", "iterated face-connected cross; image border never erodes; mask dimensionality"},
      {"components", "8-connected (2D), 26-connected (3D)"},
      {"count_rounding", "half away from zero"},
      {"intensity_normalization", "z-score per channel over nonzero brain voxels (ingested data)"},
      {"padding", "zero-pad slices to a multiple of 2^(depth-1), padded voxels are background"},
      {"site_rng", "mt19937_64 seeded by derive_seed(federation.seed, site+1, round+1)"},
  };
}

void write_metrics(const fs::path& dir, const std::string& stem, const MetricsReport& report) {
  fs::create_directories(dir);
  std::ofstream(dir / (stem + ".json")) << to_json(report).dump(2) << '\n';
  std::ofstream(dir / (stem + ".csv")) << to_csv(report);
}

namespace {

std::string utc_now() {
  const auto t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

nlohmann::json checkpoint_meta(const ExperimentConfig& c, const std::string& role) {
  return {{"role", role}, {"model", to_json(c.federation.model)}, {"experiment", c.name}};
}

}  // namespace

RunOutcome run_experiment(const ExperimentConfig& config, const fs::path& out_dir, const RoundCallback& on_round) {
  config.validate();
  const auto started = utc_now();
  const auto t0 = std::chrono::steady_clock::now();

  PreparedData data = prepare_data(config);
  std::vector<SiteData> sites;
  for (std::size_t s = 0; s < data.dataset.n_sites(); ++s)
    sites.push_back(make_site(data.dataset.site_ids[s], data.dataset.site_train[s]));

  FederationConfig fc = config.federation;
  if (!out_dir.empty()) {
    fs::create_directories(out_dir);
    if (fc.checkpoint_dir.empty()) fc.checkpoint_dir = out_dir / "checkpoints";
    std::ofstream(out_dir / "config.yaml") << serialize_experiment(config);
    auto reports = nlohmann::json::array();
    for (const auto& r : data.reports) reports.push_back(to_json(r));
    std::ofstream(out_dir / "noise_report.json") << reports.dump(2) << '\n';
  }

  RunOutcome outcome;
  outcome.result = config.paradigm == Paradigm::federated
                       ? run_federation(sites, data.dataset.central_validation, fc, on_round)
                       : train_centralized(sites, data.dataset.central_validation, fc, on_round);
  const Network net(fc.model);
  outcome.validation = evaluate_model(net, outcome.result.best, data.dataset.central_validation, fc.batch_size);
  if (!data.dataset.test.empty())
    outcome.test = evaluate_model(net, outcome.result.best, data.dataset.test, fc.batch_size);
  const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

  nlohmann::json noise_seeds = nlohmann::json::array();
  for (const auto& n : config.noise) noise_seeds.push_back(n.seed);
  outcome.manifest = {
      {"schema_version", config.schema_version},
      {"name", config.name},
      {"code_version", code_version()},
      {"config_yaml", serialize_experiment(config)},
      {"paradigm", std::string(to_string(config.paradigm))},
      {"data_source", std::string(to_string(config.data.source))},
      {"federation", to_json(config.federation)},
      {"seeds",
       {{"global", config.seed},
        {"synth", config.data.synth.seed},
        {"noise", noise_seeds},
        {"training", config.federation.seed}}},
      {"design_defaults", design_defaults(config)},
      {"sites", data.dataset.site_ids},
      {"best_validation_score", outcome.result.state.best_val_score},
      {"validation", to_json(outcome.validation.cohort)},
      {"timing",
       {{"started", started},
        {"finished", utc_now()},
        {"seconds", seconds},
        {"threads", config.federation.deterministic ? 1u : std::max(1u, std::thread::hardware_concurrency())}}},
  };
  if (outcome.test) outcome.manifest["test"] = to_json(outcome.test->cohort);

  if (!out_dir.empty()) {
    save_weights(out_dir / "best.ckpt", outcome.result.best, checkpoint_meta(config, "best"));
    save_weights(out_dir / "last.ckpt", outcome.result.last, checkpoint_meta(config, "last"));
    std::ofstream(out_dir / "history.json") << to_json(outcome.result.state.history).dump(2) << '\n';
    write_metrics(out_dir, "metrics_validation", outcome.validation);
    if (outcome.test) write_metrics(out_dir, "metrics_test", *outcome.test);
    std::ofstream(out_dir / "manifest.json") << outcome.manifest.dump(2) << '\n';
  }
  return outcome;
}

}  // namespace fedseg
