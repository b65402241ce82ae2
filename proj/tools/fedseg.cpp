// fedseg: synth, corrupt, train, eval and report subcommands.
#include "fedseg/dataset_io.hpp"
#include "fedseg/experiment.hpp"
#include "fedseg/model/checkpoint.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iostream>

namespace fs = std::filesystem;
using namespace fedseg;

namespace {

struct Common {
  std::string config;
  std::string out;
  std::optional<std::uint64_t> seed;
  bool deterministic = false;
};

void add_common(CLI::App* cmd, Common& c, bool config_required) {
  auto* opt = cmd->add_option("--config", c.config, "experiment YAML file");
  if (config_required) opt->required()->check(CLI::ExistingFile);
  cmd->add_option("--out", c.out, "output directory");
  cmd->add_option("--seed", c.seed, "global seed, overriding the config");
  cmd->add_flag("--deterministic", c.deterministic, "train sites sequentially");
}

ExperimentConfig load(const Common& c) {
  auto cfg = load_experiment(c.config, c.seed);
  if (c.deterministic) cfg.federation.deterministic = true;
  return cfg;
}

// --out, then the config's output_dir, then $FEDSEG_OUT/<name>, then ./runs/<name>.
fs::path output_root(const Common& c, const ExperimentConfig* cfg, const std::string& fallback_name) {
  if (!c.out.empty()) return c.out;
  if (cfg && !cfg->output_dir.empty()) return cfg->output_dir;
  const std::string name = cfg ? cfg->name : fallback_name;
  if (const char* env = std::getenv("FEDSEG_OUT"); env && *env) return fs::path(env) / name;
  return fs::path("runs") / name;
}

void write_config_copy(const fs::path& dir, const ExperimentConfig& cfg) {
  fs::create_directories(dir);
  std::ofstream(dir / "config.yaml") << serialize_experiment(cfg);
}

int cmd_synth(const Common& c) {
  auto cfg = load(c);
  if (cfg.data.source != DataSource::synth) throw ConfigError(c.config + ": data.source must be synth for synth");
  const auto dir = output_root(c, &cfg, cfg.name);
  const auto dataset = generate_federation(cfg.data.synth, cfg.data.split);
  save_dataset(dir, dataset);
  write_config_copy(dir, cfg);
  std::printf("wrote %zu sites, %zu validation and %zu test subjects to %s\n", dataset.n_sites(),
              dataset.central_validation.size(), dataset.test.size(), dir.string().c_str());
  return 0;
}

int cmd_corrupt(const Common& c, const std::string& dataset_dir) {
  auto cfg = load(c);
  if (!dataset_dir.empty()) {
    cfg.data.source = DataSource::dataset;
    cfg.data.dataset_dir = dataset_dir;
  }
  const auto dir = output_root(c, &cfg, cfg.name);
  auto prepared = prepare_data(cfg);
  save_dataset(dir, prepared.dataset);
  write_config_copy(dir, cfg);
  auto reports = nlohmann::json::array();
  for (const auto& r : prepared.reports) {
    reports.push_back(to_json(r));
    std::printf("%s: %s applied to %zu of %zu subjects\n", r.site_id.c_str(), std::string(to_string(r.spec.kind)).c_str(),
                r.applied_count(), r.subjects.size());
  }
  std::ofstream(dir / "noise_report.json") << reports.dump(2) << '\n';
  std::printf("wrote corrupted dataset to %s\n", dir.string().c_str());
  return 0;
}

int cmd_train(const Common& c, bool resume) {
  auto cfg = load(c);
  const auto dir = output_root(c, &cfg, cfg.name);
  cfg.federation.resume = resume;
  if (cfg.federation.checkpoint_dir.empty()) cfg.federation.checkpoint_dir = dir / "checkpoints";
  std::fprintf(stderr, "training %s (%s, mode %s, %d rounds) into %s\n", cfg.name.c_str(),
               std::string(to_string(cfg.paradigm)).c_str(), std::string(to_string(cfg.federation.policy.mode)).c_str(),
               cfg.federation.rounds, dir.string().c_str());
  const auto outcome = run_experiment(cfg, dir, [](const RoundRecord& r) {
    double loss = 0.0;
    for (const auto& s : r.sites) loss += s.mean_loss;
    std::fprintf(stderr, "round %3d  loss %.4f  val %.4f  best %.4f%s  (%.1fs)\n", r.round,
                 r.sites.empty() ? 0.0 : loss / static_cast<double>(r.sites.size()), r.validation_score,
                 r.best_validation_score, r.teacher_promoted ? "  *" : "", r.seconds);
  });
  const auto& m = outcome.test ? outcome.test->cohort : outcome.validation.cohort;
  std::printf("%s %s: P-Dice %.4f  V-Dice %.4f  Precision %.4f  Recall %.4f\n", cfg.name.c_str(),
              outcome.test ? "test" : "validation", m.p_dice, m.v_dice, m.precision, m.recall);
  return 0;
}

int cmd_eval(const Common& c, const std::string& checkpoint, const std::string& dataset_dir, const std::string& split,
             int batch_size) {
  FederationDataset dataset;
  const ExperimentConfig* cfg_ptr = nullptr;
  ExperimentConfig cfg;
  if (!dataset_dir.empty()) {
    dataset = load_dataset(dataset_dir);
  } else if (!c.config.empty()) {
    cfg = load(c);
    cfg_ptr = &cfg;
    dataset = prepare_data(cfg).dataset;
  } else {
    throw ConfigError("eval needs --dataset or --config");
  }

  const auto ckpt = read_checkpoint(checkpoint);
  if (!ckpt.meta.contains("model")) throw FormatError(checkpoint + ": checkpoint has no model description");
  const Network net(unet_config_from_json(ckpt.meta.at("model")));
  const auto weights = from_checkpoint<Real>(ckpt);

  std::vector<Volume> volumes;
  if (split == "test") {
    volumes = dataset.test;
  } else if (split == "validation") {
    volumes = dataset.central_validation;
  } else {
    for (const auto& site : dataset.site_train)
      for (const auto& v : site) volumes.push_back(v);
  }
  if (volumes.empty()) throw ConfigError("split '" + split + "' has no subjects");

  fs::path dir = c.out.empty() ? fs::path(checkpoint).parent_path() / ("eval_" + split) : fs::path(c.out);
  if (c.out.empty() && cfg_ptr && !cfg_ptr->output_dir.empty()) dir = cfg_ptr->output_dir;
  const auto report = evaluate_model(net, weights, volumes, batch_size);
  write_metrics(dir, "metrics_" + split, report);
  std::printf("%s on %s (%zu subjects): P-Dice %.4f  V-Dice %.4f  Precision %.4f  Recall %.4f\n", checkpoint.c_str(),
              split.c_str(), volumes.size(), report.cohort.p_dice, report.cohort.v_dice, report.cohort.precision,
              report.cohort.recall);
  return 0;
}

int cmd_report(const Common& c, const std::vector<std::string>& runs) {
  std::vector<RunSummary> summaries;
  for (const auto& r : runs) summaries.push_back(load_run_summary(r));
  const auto dir = output_root(c, nullptr, "report");
  std::cout << write_report(summaries, dir);
  std::printf("report written to %s\n", dir.string().c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Federated lesion segmentation with label correction"};
  app.require_subcommand(1);

  Common synth_opts, corrupt_opts, train_opts, eval_opts, report_opts;
  auto* synth = app.add_subcommand("synth", "generate a synthetic multi-site dataset");
  add_common(synth, synth_opts, true);

  std::string corrupt_dataset;
  auto* corrupt = app.add_subcommand("corrupt", "apply per-site label noise to a dataset");
  add_common(corrupt, corrupt_opts, true);
  corrupt->add_option("--dataset", corrupt_dataset, "dataset directory (default: the config's data section)")
      ->check(CLI::ExistingDirectory);

  bool resume = false;
  auto* train = app.add_subcommand("train", "run an experiment end to end");
  add_common(train, train_opts, true);
  train->add_flag("--resume", resume, "continue from the latest round checkpoint");

  std::string checkpoint, eval_dataset, split = "test";
  int batch_size = 8;
  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint on a dataset split");
  add_common(eval, eval_opts, false);
  eval->add_option("--checkpoint", checkpoint, "checkpoint file")->required()->check(CLI::ExistingFile);
  eval->add_option("--dataset", eval_dataset, "dataset directory")->check(CLI::ExistingDirectory);
  eval->add_option("--split", split, "test, validation or train")
      ->check(CLI::IsMember({"test", "validation", "train"}));
  eval->add_option("--batch-size", batch_size, "inference batch size")->check(CLI::PositiveNumber);

  std::vector<std::string> run_dirs;
  auto* report = app.add_subcommand("report", "compare finished runs");
  add_common(report, report_opts, false);
  report->add_option("runs", run_dirs, "run directories")->required()->check(CLI::ExistingDirectory);

  CLI11_PARSE(app, argc, argv);

  try {
    if (synth->parsed()) return cmd_synth(synth_opts);
    if (corrupt->parsed()) return cmd_corrupt(corrupt_opts, corrupt_dataset);
    if (train->parsed()) return cmd_train(train_opts, resume);
    if (eval->parsed()) return cmd_eval(eval_opts, checkpoint, eval_dataset, split, batch_size);
    if (report->parsed()) return cmd_report(report_opts, run_dirs);
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 1;
}
