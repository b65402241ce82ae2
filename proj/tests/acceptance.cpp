// Acceptance suite: prints one PASS/FAIL line per criterion and exits nonzero
// when any criterion fails. Trend criteria train desk-scale federations on
// synthetic data and compare medians over seeds.
#include "fedseg/corrupt.hpp"
#include "fedseg/correction.hpp"
#include "fedseg/experiment.hpp"
#include "fedseg/model/checkpoint.hpp"
#include "fedseg/model/train.hpp"

#include "oracles.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <numeric>
#include <random>
#include <sstream>

using namespace fedseg;
namespace fs = std::filesystem;

namespace {

struct Verdict {
  int id;
  std::string name;
  bool pass;
  std::string detail;
};

std::vector<Verdict> verdicts;

void verdict(int id, const std::string& name, bool pass, const std::string& detail) {
  verdicts.push_back({id, name, pass, detail});
  std::printf("%s  %d %s: %s\n", pass ? "PASS" : "FAIL", id, name.c_str(), detail.c_str());
  std::fflush(stdout);
}

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const auto n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

// ---------------------------------------------------------------------------
// Oracle suites

bool check_oracles(std::string& detail) {
  std::mt19937_64 rng(20240601);
  std::uniform_real_distribution<double> u;
  std::vector<std::string> failures;

  // Hard correction against the literal rule.
  int dhlc_bad = 0;
  for (int k = 0; k < 1000; ++k) {
    const int y = static_cast<int>(rng() & 1);
    const double p1 = k % 50 == 0 ? 0.5 : u(rng), p0 = 1.0 - p1;
    const double h0 = 0.5 + 0.5 * u(rng), h1 = 0.5 + 0.5 * u(rng);
    nn::Matrix<double> p(2, 1);
    p << p0, p1;
    MaskArray lab(1);
    lab[0] = static_cast<std::uint8_t>(y);
    if (dhlc_correct<double>(lab, p, h0, h1)[0] != oracle::dhlc(y, p0, p1, h0, h1)) ++dhlc_bad;
    if (dhlc_correct<double>(lab, p, 1.0, 1.0)[0] != y) ++dhlc_bad;
  }
  if (dhlc_bad) failures.push_back(fmt("dhlc %d mismatches", dhlc_bad));

  // Soft correction limits.
  {
    MaskArray lab(200);
    nn::Matrix<double> p(2, 200);
    for (Eigen::Index i = 0; i < 200; ++i) {
      lab[i] = static_cast<std::uint8_t>(rng() & 1);
      p(1, i) = u(rng);
      p(0, i) = 1.0 - p(1, i);
    }
    const double e0 = (soft_correct<double>(lab, p, 0.0) - one_hot<double>(lab)).cwiseAbs().maxCoeff();
    const double e1 = (soft_correct<double>(lab, p, 1.0) - p).cwiseAbs().maxCoeff();
    if (e0 > 1e-12 || e1 > 1e-12) failures.push_back(fmt("soft limits off by %.3g / %.3g", e0, e1));
  }

  // Aggregation.
  {
    auto scalar = [](std::vector<double> v) {
      WeightVector<double> w("toy");
      w.add("x", {static_cast<int>(v.size())});
      for (std::size_t i = 0; i < v.size(); ++i) w[0][static_cast<Eigen::Index>(i)] = v[i];
      return w;
    };
    const auto mean = aggregate(std::vector<WeightVector<double>>{scalar({1, 3}), scalar({3, 5})});
    bool ok = mean[0][0] == 2.0 && mean[0][1] == 4.0;
    std::vector<WeightVector<double>> sites;
    for (int s = 0; s < 5; ++s) sites.push_back(scalar({u(rng), u(rng), u(rng)}));
    const auto ref = aggregate(sites);
    for (int t = 0; t < 20; ++t) {
      std::shuffle(sites.begin(), sites.end(), rng);
      ok = ok && (aggregate(sites)[0] == ref[0]).all();
    }
    const std::vector<WeightVector<double>> reps(4, sites[0]);
    ok = ok && (aggregate(reps)[0] == sites[0][0]).all();
    if (!ok) failures.push_back("aggregation");
  }

  // Metrics against the counting oracle.
  {
    int bad = 0;
    for (int k = 0; k < 500; ++k) {
      const int subjects = 1 + static_cast<int>(rng() % 4);
      std::vector<MaskArray> p, y;
      for (int s = 0; s < subjects; ++s) {
        const Shape3 sh{1, 4, 5};
        p.push_back(oracle::random_mask(sh, u(rng) * 0.6, rng));
        y.push_back(oracle::random_mask(sh, u(rng) * 0.6, rng));
      }
      const auto got = evaluate(p, y).cohort;
      const auto ref = oracle::metrics(p, y);
      if (std::abs(got.p_dice - ref.p_dice) > 1e-9 || std::abs(got.v_dice - ref.v_dice) > 1e-9 ||
          std::abs(got.precision - ref.precision) > 1e-9 || std::abs(got.recall - ref.recall) > 1e-9)
        ++bad;
      if (subjects == 1 && std::abs(got.p_dice - got.v_dice) > 1e-12) ++bad;
    }
    if (bad) failures.push_back(fmt("metrics %d mismatches", bad));
  }

  // Morphology.
  {
    int bad = 0;
    for (int k = 0; k < 500; ++k) {
      const Shape3 sh = k % 2 ? Shape3{1, 12, 12} : Shape3{4, 7, 7};
      const auto m = oracle::random_mask(sh, 0.2 + 0.5 * u(rng), rng);
      const int r = 1 + static_cast<int>(rng() % 2);
      const auto open = dilate_mask(erode_mask(m, sh, r), sh, r);
      const auto close = erode_mask(dilate_mask(m, sh, r), sh, r);
      if (!oracle::subset(open, m) || !oracle::subset(m, close)) ++bad;
    }
    const Shape3 s2{1, 9, 9}, s3{5, 5, 5};
    MaskArray point2 = MaskArray::Zero(81), point3 = MaskArray::Zero(125);
    point2[s2.index(0, 4, 4)] = 1;
    point3[s3.index(2, 2, 2)] = 1;
    if (count_nonzero(dilate_mask(point2, s2, 1)) != 5 || count_nonzero(dilate_mask(point3, s3, 1)) != 7) ++bad;
    if (count_nonzero(erode_mask(point2, s2, 1)) != 0) ++bad;
    if (bad) failures.push_back(fmt("morphology %d failures", bad));
  }

  // EMA endpoints and linearity.
  {
    auto rnd = [&] {
      WeightVector<double> w("toy");
      w.add("a", {7});
      for (auto& v : w[0]) v = u(rng) * 4 - 2;
      return w;
    };
    bool ok = true;
    for (int k = 0; k < 50; ++k) {
      const auto t = rnd(), s = rnd();
      ok = ok && (ema_update(t, s, 0.0)[0] == s[0]).all() && (ema_update(t, s, 1.0)[0] == t[0]).all();
      const double d = u(rng);
      const auto e = ema_update(t, s, d);
      ok = ok && ((e[0] - (d * t[0] + (1 - d) * s[0])).abs() <= 1e-9).all();
    }
    if (!ok) failures.push_back("ema");
  }

  detail = failures.empty() ? "dhlc 1000 tuples, soft limits, aggregation, metrics 500 pairs, morphology 500 "
                              "masks, ema endpoints and linearity"
                            : "failed: ";
  for (const auto& f : failures) detail += f + "; ";
  return failures.empty();
}

bool check_training_sanity(std::string& detail) {
  UNet<float> net({3, 8, 2, 2});
  auto w = net.init(3);
  std::mt19937_64 rng(9);
  std::normal_distribution<float> n;
  nn::FeatureMap<float> x(2, 4, 32, 32);
  for (Eigen::Index i = 0; i < x.data.size(); ++i) x.data.data()[i] = n(rng);
  nn::Matrix<float> t = nn::Matrix<float>::Zero(2, x.positions());
  for (Eigen::Index i = 0; i < x.positions(); ++i) t(x.data(0, i) > 0.8f ? 1 : 0, i) = 1;

  auto uniform = w;
  uniform.at("head.weight").setZero();
  uniform.at("head.bias").setZero();
  const double ln2_err = std::abs(static_cast<double>(net.loss(uniform, x, t)) - std::log(2.0));

  const auto p = predict_probabilities(net, w, x);
  const double norm_err = ((p.colwise().sum().array() - 1.0f).abs()).maxCoeff();
  const bool shape_ok = p.rows() == 2 && p.cols() == x.positions();

  AdamState<float> s;
  AdamOptions opt;
  opt.learning_rate = 1e-4;
  const float first = train_step(net, w, s, x, t, opt);
  float last = first;
  for (int i = 0; i < 49; ++i) last = train_step(net, w, s, x, t, opt);

  detail = fmt("|loss - ln2| = %.2e at uniform output, loss %.4f -> %.4f over 50 steps, max |sum p - 1| = %.1e",
               ln2_err, first, last, norm_err);
  return ln2_err <= 1e-6 && last < first && norm_err <= 1e-5 && shape_ok;
}

// ---------------------------------------------------------------------------
// Desk-scale runs

// Three sites of seven 8-slice training subjects, 64x64, U-Net C=8 depth 3, 20 rounds.
const char* kDeskBase = R"(schema_version: 1
data:
  source: synth
  synth:
    image_size: 64
    depth: 8
    subjects_per_site: 19
    n_sites: 3
    lesion_count_range: [4, 14]
    lesion_radius_range: [1.0, 2.5]
    boundary_blur: 1
  split: {train_per_site: 7, val: 12, test: 24}
model: {depth: 3, base_channels: 8}
federation: {rounds: 20, batch_size: 4, learning_rate: 0.003, deterministic: true}
)";

const char* kCleanNoise = R"(noise:
  - {kind: none}
  - {kind: none}
  - {kind: none}
)";

// Clean first site, boundary noise on 40% of the samples of the others.
const char* kMixedNoise = R"(noise:
  - {kind: none}
  - {kind: erosion, magnitude_voxels: 2, sample_fraction: 0.4}
  - {kind: dilation, magnitude_voxels: 2, sample_fraction: 0.4}
)";

// Noise that only ever removes lesion voxels.
const char* kErosionNoise = R"(noise:
  - {kind: none}
  - {kind: erosion, magnitude_voxels: 2, sample_fraction: 0.8}
  - {kind: removal, lesion_fraction: 0.4, sample_fraction: 1.0}
)";

struct RunResult {
  std::string name;
  CohortMetrics test;
  double best_val = 0.0;
  std::vector<RoundRecord> history;
  double reevaluated_val = 0.0;
  double seconds = 0.0;
  bool reused = false;
};

struct Runner {
  fs::path root;
  bool reuse = false;
  std::map<std::string, RunResult> done;

  ExperimentConfig make(const std::string& name, const char* noise, const std::string& policy, std::uint64_t seed) {
    std::string yaml = kDeskBase;
    yaml += "name: " + name + "\nseed: " + std::to_string(seed) + "\n" + noise + "policy: " + policy + "\n";
    return parse_experiment(yaml, name);
  }

  RunResult run(const ExperimentConfig& cfg, const fs::path& dir_override = {}) {
    const auto dir = dir_override.empty() ? root / cfg.name : dir_override;
    if (dir_override.empty())
      if (auto it = done.find(cfg.name); it != done.end()) return it->second;

    RunResult r;
    r.name = cfg.name;
    const auto t0 = std::chrono::steady_clock::now();
    bool loaded = false;
    if (reuse && dir_override.empty() && fs::exists(dir / "manifest.json") && fs::exists(dir / "best.ckpt")) {
      std::ifstream in(dir / "manifest.json");
      const auto m = nlohmann::json::parse(in);
      if (m.value("config_yaml", std::string()) == serialize_experiment(cfg) && m.contains("test")) {
        r.test = cohort_from_json(m.at("test"));
        r.best_val = m.at("best_validation_score");
        std::ifstream h(dir / "history.json");
        for (const auto& j : nlohmann::json::parse(h)) r.history.push_back(round_from_json(j));
        loaded = r.reused = true;
      }
    }
    if (!loaded) {
      fs::remove_all(dir);
      const auto out = run_experiment(cfg, dir);
      r.test = out.test->cohort;
      r.best_val = out.result.state.best_val_score;
      r.history = out.result.state.history;
    }
    // Independent re-evaluation of the saved teacher on regenerated validation data.
    const auto ckpt = read_checkpoint(dir / "best.ckpt");
    const Network net(unet_config_from_json(ckpt.meta.at("model")));
    const auto data = prepare_data(cfg);
    r.reevaluated_val = select(evaluate_model(net, from_checkpoint<Real>(ckpt), data.dataset.central_validation).cohort,
                               cfg.federation.validation_metric);
    r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::fprintf(stderr, "  %-28s test P %.4f V %.4f prec %.4f rec %.4f  best val %.4f  %s %.0fs\n",
                 cfg.name.c_str(), r.test.p_dice, r.test.v_dice, r.test.precision, r.test.recall, r.best_val,
                 r.reused ? "reused" : "trained", r.seconds);
    if (dir_override.empty()) done[cfg.name] = r;
    return r;
  }

  // Median of a metric over seeds.
  template <typename F>
  double med(const std::string& prefix, const char* noise, const std::string& policy, const std::vector<int>& seeds,
             F metric) {
    std::vector<double> v;
    for (int s : seeds) v.push_back(metric(run(make(prefix + "_s" + std::to_string(s), noise, policy, s))));
    return median(v);
  }
};

auto v_dice = [](const RunResult& r) { return r.test.v_dice; };
auto p_dice = [](const RunResult& r) { return r.test.p_dice; };
auto precision = [](const RunResult& r) { return r.test.precision; };
auto recall = [](const RunResult& r) { return r.test.recall; };

const std::string kNone = "{mode: none}";
// Desk working point: H1 0.80, H0 0.90, ten warm-up epochs of twenty.
std::string celc(double h1 = 0.80, int warmup = 10, double h0 = 0.9) {
  return fmt("{mode: celc_central, h0: %.2f, h1: %.2f, warmup_epochs: %d}", h0, h1, warmup);
}
std::string dhlc(double h1 = 0.80, int warmup = 10, double h0 = 0.9) {
  return fmt("{mode: dhlc_local, h0: %.2f, h1: %.2f, warmup_epochs: %d, ema_decay: 0.99}", h0, h1, warmup);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"fedseg acceptance suite"};
  std::string out = "acceptance_runs";
  int n_seeds = 3;
  bool reuse = false, skip_trends = false;
  app.add_option("--out", out, "directory for run artifacts");
  app.add_option("--seeds", n_seeds, "seeds per trend")->check(CLI::Range(1, 9));
  app.add_flag("--reuse", reuse, "reuse finished runs whose resolved config is unchanged");
  app.add_flag("--skip-trends", skip_trends, "only the oracle and sanity criteria");
  CLI11_PARSE(app, argc, argv);

  const auto t0 = std::chrono::steady_clock::now();
  std::string detail;
  verdict(1, "oracle suites", check_oracles(detail), detail);
  verdict(2, "training sanity", check_training_sanity(detail), detail);

  if (!skip_trends) {
    Runner R{fs::path(out) / "runs", reuse, {}};
    std::vector<int> seeds(static_cast<std::size_t>(n_seeds));
    std::iota(seeds.begin(), seeds.end(), 1);

    // 3: boundary noise lowers federated test V-Dice.
    const double clean = R.med("clean_none", kCleanNoise, kNone, seeds, v_dice);
    const double noisy = R.med("mixed_none", kMixedNoise, kNone, seeds, v_dice);
    verdict(3, "noise degradation", clean - noisy >= 0.05,
            fmt("median test V-Dice clean %.4f, noisy %.4f, gap %.4f (need >= 0.05)", clean, noisy, clean - noisy));

    // 4: CELC recovers the gap and beats local correction and no correction.
    const double c4 = R.med("mixed_celc", kMixedNoise, celc(), seeds, v_dice);
    const double d4 = R.med("mixed_dhlc", kMixedNoise, dhlc(), seeds, v_dice);
    const double gap = clean - noisy;
    const double recovered = gap > 0 ? (c4 - noisy) / gap : 0.0;
    verdict(4, "CELC recovery", recovered >= 0.5 && c4 >= d4 - 0.01 && d4 - 0.01 >= noisy + 0.02,
            fmt("median V-Dice CELC %.4f, DHLC %.4f, none %.4f, clean %.4f; recovered %.0f%% of the gap "
                "(need >= 50%%, CELC >= DHLC - 0.01 >= none + 0.02)",
                c4, d4, noisy, clean, 100 * recovered));

    // 5: erosion and removal cost recall more than precision.
    const double clean_prec = R.med("clean_none", kCleanNoise, kNone, seeds, precision);
    const double clean_rec = R.med("clean_none", kCleanNoise, kNone, seeds, recall);
    const double ero_prec = R.med("erosion_none", kErosionNoise, kNone, seeds, precision);
    const double ero_rec = R.med("erosion_none", kErosionNoise, kNone, seeds, recall);
    verdict(5, "erosion asymmetry", clean_rec - ero_rec > clean_prec - ero_prec,
            fmt("median recall %.4f -> %.4f (drop %.4f), precision %.4f -> %.4f (drop %.4f)", clean_rec, ero_rec,
                clean_rec - ero_rec, clean_prec, ero_prec, clean_prec - ero_prec));

    // 6: threshold plateau over H1, collapse towards no correction at 0.95.
    std::map<double, double> by_h1;
    for (double h1 : {0.55, 0.65, 0.75, 0.95})
      by_h1[h1] = R.med(fmt("mixed_celc_h%02d", static_cast<int>(std::lround(h1 * 100))), kMixedNoise, celc(h1),
                        seeds, v_dice);
    const double lo = std::min({by_h1[0.55], by_h1[0.65], by_h1[0.75]});
    const double hi = std::max({by_h1[0.55], by_h1[0.65], by_h1[0.75]});
    verdict(6, "threshold plateau", hi - lo <= 0.03 && by_h1[0.95] <= hi - 0.02,
            fmt("median V-Dice H1 0.55 %.4f, 0.65 %.4f, 0.75 %.4f, 0.95 %.4f; spread %.4f (need <= 0.03), "
                "0.95 below best by %.4f (need >= 0.02)",
                by_h1[0.55], by_h1[0.65], by_h1[0.75], by_h1[0.95], hi - lo, hi - by_h1[0.95]));

    // 7: correction from the first epoch collapses.
    const double w0 = R.med("mixed_celc_w0", kMixedNoise, celc(0.80, 0), seeds, p_dice);
    const double w2 = R.med("mixed_celc_w2", kMixedNoise, celc(0.80, 2), seeds, p_dice);
    verdict(7, "warm-up necessity", w2 - w0 >= 0.15,
            fmt("median test P-Dice warm-up 0 %.4f, warm-up 2 %.4f, difference %.4f (need >= 0.15)", w0, w2,
                w2 - w0));

    // 8: every recorded run.
    int runs = 0, monotone_bad = 0, reeval_bad = 0;
    double worst = 0.0;
    for (const auto& [name, r] : R.done) {
      ++runs;
      double best = -std::numeric_limits<double>::infinity();
      for (const auto& rec : r.history) {
        if (rec.best_validation_score < best) ++monotone_bad;
        best = rec.best_validation_score;
      }
      const double err = std::abs(r.reevaluated_val - r.best_val);
      worst = std::max(worst, err);
      if (err > 1e-9 || best != r.best_val) ++reeval_bad;
    }
    verdict(8, "teacher monotonicity", monotone_bad == 0 && reeval_bad == 0 && runs > 0,
            fmt("%d runs: %d non-monotone histories, %d teachers not reproducing their score (max diff %.2e)", runs,
                monotone_bad, reeval_bad, worst));

    // 9: an identical deterministic rerun.
    const auto cfg = R.make("mixed_celc_s1", kMixedNoise, celc(), 1);
    const auto first = R.run(cfg);
    const auto again = R.run(cfg, fs::path(out) / "rerun");
    double diff = 0.0;
    for (auto [a, b] : {std::pair{first.test.p_dice, again.test.p_dice}, {first.test.v_dice, again.test.v_dice},
                        {first.test.precision, again.test.precision}, {first.test.recall, again.test.recall},
                        {first.best_val, again.best_val}})
      diff = std::max(diff, std::abs(a - b));
    bool same_len = first.history.size() == again.history.size();
    for (std::size_t i = 0; same_len && i < first.history.size(); ++i) {
      const auto &a = first.history[i].validation, &b = again.history[i].validation;
      for (auto [x, y] : {std::pair{a.p_dice, b.p_dice}, {a.v_dice, b.v_dice}, {a.precision, b.precision},
                          {a.recall, b.recall}})
        diff = std::max(diff, std::abs(x - y));
    }
    verdict(9, "reproducibility", same_len && diff <= 1e-6,
            fmt("deterministic rerun of %s: max metric difference %.2e over test metrics and %zu rounds", cfg.name.c_str(),
                diff, first.history.size()));
  }

  int failed = 0;
  nlohmann::json summary = nlohmann::json::array();
  for (const auto& v : verdicts) {
    failed += !v.pass;
    summary.push_back({{"criterion", v.id}, {"name", v.name}, {"pass", v.pass}, {"detail", v.detail}});
  }
  fs::create_directories(out);
  std::ofstream(fs::path(out) / "acceptance.json") << summary.dump(2) << '\n';
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  std::printf("%zu criteria, %d failed, %.0f s\n", verdicts.size(), failed, secs);
  return failed ? 1 : 0;
}
