#include "fedseg/fed.hpp"
#include "fedseg/ingest.hpp"
#include "fedseg/model/train.hpp"
#include "fedseg/synth.hpp"

#include <doctest.h>

#include <algorithm>
#include <filesystem>
#include <numeric>

using namespace fedseg;
namespace fs = std::filesystem;

namespace {

double max_diff(const Weights& a, const Weights& b) {
  REQUIRE(a.combinable_with(b));
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, static_cast<double>((a[i] - b[i]).abs().maxCoeff()));
  return m;
}

FederationDataset tiny_data(std::uint64_t seed = 3, int sites = 2) {
  SynthConfig s;
  s.image_size = 16;
  s.subjects_per_site = 5;
  s.n_sites = sites;
  s.lesion_count_range = {1, 3};
  s.lesion_radius_range = {1.0, 3.0};
  s.seed = seed;
  return generate_federation(s, SplitSpec{3, 2, 0});
}

FederationConfig tiny_config() {
  FederationConfig c;
  c.model.depth = 2;
  c.model.base_channels = 4;
  c.rounds = 2;
  c.batch_size = 2;
  c.learning_rate = 3e-3;
  c.seed = 11;
  c.deterministic = true;
  return c;
}

std::vector<SiteData> sites_of(const FederationDataset& d) {
  std::vector<SiteData> out;
  for (std::size_t s = 0; s < d.n_sites(); ++s) out.push_back(make_site(d.site_ids[s], d.site_train[s]));
  return out;
}

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / ("fedseg_test_" + name)) {
    fs::remove_all(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

}  // namespace

TEST_CASE("zero local epochs return the start weights") {
  const auto data = tiny_data();
  const auto cfg = tiny_config();
  const Network net(cfg.model);
  const auto start = net.init(1);
  std::mt19937_64 rng(5);
  SiteRoundLog log;
  const auto out = train_site_round(net, sites_of(data)[0], start, start, cfg, 0, 0, rng, &log);
  CHECK(max_diff(out, start) == 0.0);
  CHECK(log.iterations == 0);
}

TEST_CASE("central teacher is not modified by a celc site round") {
  const auto data = tiny_data();
  auto cfg = tiny_config();
  cfg.policy.mode = CorrectionMode::celc_central;
  cfg.policy.warmup_epochs = 0;
  const Network net(cfg.model);
  const auto teacher = net.init(2);
  const auto snapshot = teacher;
  std::mt19937_64 rng(5);
  SiteRoundLog log;
  const auto out = train_site_round(net, sites_of(data)[0], net.init(1), teacher, cfg, 0, 1, rng, &log);
  CHECK(max_diff(teacher, snapshot) == 0.0);
  CHECK(max_diff(out, net.init(1)) > 0.0);
  CHECK(log.mode == CorrectionMode::celc_central);
  CHECK(log.iterations == 2);  // 3 slices, batch 2, partial last batch kept
}

TEST_CASE("warm-up epochs train without correction") {
  const auto data = tiny_data();
  auto cfg = tiny_config();
  cfg.policy.mode = CorrectionMode::dhlc_local;
  cfg.policy.warmup_epochs = 3;
  const Network net(cfg.model);
  std::mt19937_64 rng(5);
  SiteRoundLog log;
  train_site_round(net, sites_of(data)[0], net.init(1), net.init(1), cfg, 2, 1, rng, &log);
  CHECK(log.mode == CorrectionMode::none);
  train_site_round(net, sites_of(data)[0], net.init(1), net.init(1), cfg, 3, 1, rng, &log);
  CHECK(log.mode == CorrectionMode::dhlc_local);
}

TEST_CASE("teacher promotion rule") {
  const Network net(tiny_config().model);
  FederationState st;
  st.student = st.teacher = net.init(0);
  const auto a = net.init(1), b = net.init(2), c = net.init(3);

  SUBCASE("first round promotes unconditionally") {
    CHECK(update_central_teacher(st, a, 0.0));
    CHECK(max_diff(st.teacher, a) == 0.0);
    CHECK(st.best_val_score == 0.0);
  }
  SUBCASE("lower or equal score keeps the teacher but replaces the student") {
    update_central_teacher(st, a, 0.5);
    CHECK_FALSE(update_central_teacher(st, b, 0.4));
    CHECK(max_diff(st.teacher, a) == 0.0);
    CHECK(max_diff(st.student, b) == 0.0);
    CHECK_FALSE(update_central_teacher(st, c, 0.5));
    CHECK(max_diff(st.teacher, a) == 0.0);
    CHECK(st.best_val_score == 0.5);
  }
  SUBCASE("strictly improving scores track the latest aggregate") {
    const Weights seq[] = {a, b, c};
    for (int i = 0; i < 3; ++i) {
      CHECK(update_central_teacher(st, seq[i], 0.1 * (i + 1)));
      CHECK(max_diff(st.teacher, seq[i]) == 0.0);
    }
  }
}

TEST_CASE("one round on one site equals plain supervised training") {
  const auto data = tiny_data(3, 1);
  auto cfg = tiny_config();
  cfg.rounds = 1;
  const auto sites = sites_of(data);
  const auto result = run_federation(sites, data.central_validation, cfg);

  // Independent loop: same init, same shuffle stream, one-hot targets.
  const Network net(cfg.model);
  auto w = net.init(cfg.seed);
  std::mt19937_64 rng(derive_seed(cfg.seed, 1, 1));
  AdamState<Real> opt;
  AdamOptions adam;
  adam.learning_rate = cfg.learning_rate;
  adam.weight_decay = cfg.weight_decay;
  const auto& slices = sites[0].slices;
  std::vector<std::size_t> order(slices.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::shuffle(order.begin(), order.end(), rng);
  const int hw = 16 * 16;
  for (std::size_t begin = 0; begin < order.size(); begin += 2) {
    const int b = static_cast<int>(std::min<std::size_t>(2, order.size() - begin));
    nn::FeatureMap<Real> x(2, b, 16, 16);
    nn::Matrix<Real> t = nn::Matrix<Real>::Zero(2, Eigen::Index{b} * hw);
    for (int i = 0; i < b; ++i) {
      const auto& s = slices[order[begin + static_cast<std::size_t>(i)]];
      x.data.middleCols(Eigen::Index{i} * hw, hw) = s.image.cast<Real>().matrix();
      for (int k = 0; k < hw; ++k) t(s.mask[k] ? 1 : 0, Eigen::Index{i} * hw + k) = 1;
    }
    train_step(net, w, opt, x, t, adam);
  }
  CHECK(max_diff(result.last, w) == 0.0);
  CHECK(result.state.history.size() == 1);
}

TEST_CASE("identical sites produce identical site models") {
  auto data = tiny_data();
  data.site_train[1] = data.site_train[0];
  auto cfg = tiny_config();
  cfg.rounds = 1;
  auto sites = sites_of(data);
  const Network net(cfg.model);
  const auto start = net.init(cfg.seed);
  std::mt19937_64 r0(7), r1(7);
  const auto a = train_site_round(net, sites[0], start, start, cfg, 0, 1, r0);
  const auto b = train_site_round(net, sites[1], start, start, cfg, 0, 1, r1);
  CHECK(max_diff(a, b) == 0.0);
  CHECK(max_diff(aggregate(std::vector<Weights>{a, b}), a) == 0.0);
}

TEST_CASE("single-site federation and pooled training coincide") {
  const auto data = tiny_data(4, 1);
  const auto cfg = tiny_config();
  const auto sites = sites_of(data);
  const auto fed = run_federation(sites, data.central_validation, cfg);
  const auto pooled = train_centralized(sites, data.central_validation, cfg);
  CHECK(max_diff(fed.last, pooled.last) == 0.0);
  CHECK(max_diff(fed.best, pooled.best) == 0.0);
}

TEST_CASE("pooled training rejects an empty pool") {
  const auto data = tiny_data();
  CHECK_THROWS_AS(train_centralized({}, data.central_validation, tiny_config()), ConfigError);
  CHECK_THROWS_AS(train_centralized({SiteData{"a", {}}}, data.central_validation, tiny_config()), ConfigError);
}

TEST_CASE("mode none ignores correction thresholds") {
  const auto data = tiny_data();
  auto a = tiny_config(), b = tiny_config();
  b.policy.h0 = 0.6;
  b.policy.h1 = 0.55;
  b.policy.epsilon = 0.3;
  const auto ra = run_federation(sites_of(data), data.central_validation, a);
  const auto rb = run_federation(sites_of(data), data.central_validation, b);
  CHECK(max_diff(ra.last, rb.last) == 0.0);
}

TEST_CASE("threaded and sequential site training agree") {
  const auto data = tiny_data();
  auto a = tiny_config(), b = tiny_config();
  b.deterministic = false;
  const auto ra = run_federation(sites_of(data), data.central_validation, a);
  const auto rb = run_federation(sites_of(data), data.central_validation, b);
  CHECK(max_diff(ra.last, rb.last) == 0.0);
  CHECK(ra.state.best_val_score == rb.state.best_val_score);
}

TEST_CASE("teacher reproduces the best validation score and the best never decreases") {
  const auto data = tiny_data();
  auto cfg = tiny_config();
  cfg.rounds = 4;
  cfg.policy.mode = CorrectionMode::celc_central;
  cfg.policy.warmup_epochs = 1;
  const auto r = run_federation(sites_of(data), data.central_validation, cfg);
  double best = -1.0;
  for (const auto& rec : r.state.history) {
    CHECK(rec.best_validation_score >= best);
    best = rec.best_validation_score;
  }
  const auto again = evaluate_model(Network(cfg.model), r.best, data.central_validation);
  CHECK(again.cohort.v_dice == doctest::Approx(r.state.best_val_score).epsilon(1e-12));
}

TEST_CASE("resuming from a checkpoint continues the same trajectory") {
  const auto data = tiny_data();
  TempDir dir("resume");
  auto cfg = tiny_config();
  cfg.rounds = 3;
  const auto full = run_federation(sites_of(data), data.central_validation, cfg);

  cfg.checkpoint_dir = dir.path;
  cfg.rounds = 1;
  run_federation(sites_of(data), data.central_validation, cfg);
  CHECK(fs::exists(dir.path / "round_0001" / "student.ckpt"));
  cfg.rounds = 3;
  cfg.resume = true;
  const auto resumed = run_federation(sites_of(data), data.central_validation, cfg);
  CHECK(max_diff(full.last, resumed.last) == 0.0);
  CHECK(max_diff(full.best, resumed.best) == 0.0);
  REQUIRE(resumed.state.history.size() == 3);
  CHECK(resumed.state.history[2].validation_score == full.state.history[2].validation_score);
}

TEST_CASE("history json round trip") {
  RoundRecord r;
  r.round = 2;
  r.site_ids = {"a", "b"};
  r.sites.resize(2);
  r.sites[1].iterations = 4;
  r.sites[1].mean_loss = 0.25;
  r.sites[1].mode = CorrectionMode::dhlc_local;
  r.validation = {0.5, 0.6, 0.7, 0.8};
  r.validation_score = 0.6;
  r.best_validation_score = 0.6;
  r.teacher_promoted = true;
  const auto back = round_from_json(to_json(r));
  CHECK(back.round == 2);
  CHECK(back.site_ids == r.site_ids);
  CHECK(back.sites[1].iterations == 4);
  CHECK(back.sites[1].mode == CorrectionMode::dhlc_local);
  CHECK(back.validation.recall == 0.8);
  CHECK(back.teacher_promoted);
}

TEST_CASE("federation config json round trip and validation") {
  auto c = tiny_config();
  c.policy.mode = CorrectionMode::soft;
  c.policy.epsilon = 0.4;
  c.validation_metric = ValidationMetric::p_dice;
  auto back = federation_config_from_json(to_json(c));
  back.checkpoint_dir = c.checkpoint_dir;
  CHECK(back == c);

  auto bad = c;
  bad.rounds = 0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = c;
  bad.batch_size = 0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = c;
  bad.resume = true;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
}
