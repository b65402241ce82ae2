#pragma once

#include "fedseg/corrupt.hpp"
#include "fedseg/fed.hpp"
#include "fedseg/metrics.hpp"
#include "fedseg/synth.hpp"

#include <nlohmann/json.hpp>

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace fedseg {

inline constexpr int kSchemaVersion = 1;

enum class DataSource { synth, manifest, dataset };
enum class Paradigm { federated, centralized };

std::string_view to_string(DataSource s);
std::string_view to_string(Paradigm p);

struct DataConfig {
  DataSource source = DataSource::synth;
  SynthConfig synth;
  SplitSpec split;
  std::filesystem::path manifest;     // source == manifest
  std::filesystem::path dataset_dir;  // source == dataset

  friend bool operator==(const DataConfig&, const DataConfig&) = default;
};

/// Everything needed to reproduce one run. Seeds left unset in the file are
/// derived from `seed` during parsing, so the resolved config is explicit.
struct ExperimentConfig {
  int schema_version = kSchemaVersion;
  std::string name = "experiment";
  std::uint64_t seed = 0;
  std::filesystem::path output_dir;
  DataConfig data;
  std::vector<NoiseSpec> noise;  // one per site, in site order
  Paradigm paradigm = Paradigm::federated;
  FederationConfig federation;  // model, schedule and correction policy

  /// Cross-field checks. Throws ConfigError naming the offending key path.
  void validate() const;
  friend bool operator==(const ExperimentConfig&, const ExperimentConfig&) = default;
};

/// Parses YAML text. Errors are ConfigErrors of the form
/// "<source>:<line>:<column>: <key.path>: <message>". `seed_override`
/// replaces the file's global seed before unset seeds are derived from it.
ExperimentConfig parse_experiment(const std::string& yaml_text, const std::string& source_name = "<config>",
                                  std::optional<std::uint64_t> seed_override = {});
ExperimentConfig load_experiment(const std::filesystem::path& path,
                                 std::optional<std::uint64_t> seed_override = {});

/// Fully resolved YAML; parse(serialize(c)) == c.
std::string serialize_experiment(const ExperimentConfig& config);

struct PreparedData {
  FederationDataset dataset;
  std::vector<CorruptionReport> reports;  // one per site
};

/// Loads or generates the data and applies the per-site noise.
PreparedData prepare_data(const ExperimentConfig& config);

struct RunOutcome {
  FederationResult result;
  MetricsReport validation;  // best model on the central validation set
  std::optional<MetricsReport> test;
  nlohmann::json manifest;
};

/// End-to-end run. When `out_dir` is non-empty it receives manifest.json,
/// config.yaml, history.json, noise_report.json, best.ckpt, last.ckpt,
/// checkpoints/round_NNNN/ and metrics files.
RunOutcome run_experiment(const ExperimentConfig& config, const std::filesystem::path& out_dir,
                          const RoundCallback& on_round = {});

/// Design choices in effect, recorded in every manifest.
nlohmann::json design_defaults(const ExperimentConfig& config);

std::string code_version();

void write_metrics(const std::filesystem::path& dir, const std::string& stem, const MetricsReport& report);

// ---------------------------------------------------------------------------
// Reporting over finished run directories.

struct RunSummary {
  std::filesystem::path dir;
  std::string name;
  std::string paradigm;
  std::string mode;
  double h1 = 0.0;
  int warmup_epochs = 0;
  std::optional<CohortMetrics> test;
  CohortMetrics validation;
  std::vector<double> validation_by_round;  // central validation score per round
};

RunSummary load_run_summary(const std::filesystem::path& run_dir);

/// Writes summary.csv, summary.txt and SVG plots (score vs round, and vs H1
/// and warm-up when the runs differ in those settings). Returns the text table.
std::string write_report(const std::vector<RunSummary>& runs, const std::filesystem::path& out_dir);

/// Minimal line-chart SVG. Each series is (label, x values, y values).
struct Series {
  std::string label;
  std::vector<double> x, y;
};
std::string line_plot_svg(const std::string& title, const std::string& x_label, const std::string& y_label,
                          const std::vector<Series>& series);

}  // namespace fedseg
