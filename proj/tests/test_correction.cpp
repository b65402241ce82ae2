#include "fedseg/correction.hpp"

#include <doctest.h>

#include "oracles.hpp"

#include <random>

using namespace fedseg;

namespace {

nn::Matrix<double> probs(std::initializer_list<std::pair<double, double>> cols) {
  nn::Matrix<double> p(2, static_cast<Eigen::Index>(cols.size()));
  Eigen::Index j = 0;
  for (auto [p0, p1] : cols) {
    p(0, j) = p0;
    p(1, j++) = p1;
  }
  return p;
}

MaskArray labels(std::initializer_list<int> v) {
  MaskArray m(static_cast<Eigen::Index>(v.size()));
  Eigen::Index j = 0;
  for (int x : v) m[j++] = static_cast<std::uint8_t>(x);
  return m;
}

}  // namespace

TEST_CASE("label smoothing") {
  const auto y = labels({0, 1});
  const auto t0 = smooth_labels<double>(y, 0.0);
  CHECK(t0(0, 0) == 1.0);
  CHECK(t0(1, 1) == 1.0);
  CHECK(t0(1, 0) == 0.0);
  const auto t = smooth_labels<double>(labels({1}), 0.2);
  CHECK(t(0, 0) == doctest::Approx(0.1).epsilon(1e-15));
  CHECK(t(1, 0) == doctest::Approx(0.9).epsilon(1e-15));
  std::mt19937_64 rng(1);
  for (double a : {0.05, 0.3, 0.99}) {
    MaskArray r(50);
    for (auto& v : r) v = rng() & 1;
    const auto s = smooth_labels<double>(r, a);
    CHECK(((s.row(0) + s.row(1)).array() - 1.0).abs().maxCoeff() < 1e-12);
  }
  CHECK_THROWS_AS(smooth_labels<double>(y, 1.0), std::invalid_argument);
  CHECK_THROWS_AS(smooth_labels<double>(y, -0.1), std::invalid_argument);
}

TEST_CASE("soft correction limits and evaluation") {
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> u;
  nn::Matrix<double> p(2, 100);
  MaskArray y(100);
  for (Eigen::Index j = 0; j < 100; ++j) {
    p(1, j) = u(rng);
    p(0, j) = 1.0 - p(1, j);
    y[j] = rng() & 1;
  }
  const auto zero = soft_correct<double>(y, p, 0.0);
  CHECK((zero - one_hot<double>(y)).cwiseAbs().maxCoeff() <= 1e-12);
  const auto one = soft_correct<double>(y, p, 1.0);
  CHECK((one - p).cwiseAbs().maxCoeff() <= 1e-12);
  const auto t = soft_correct<double>(labels({1}), probs({{0.3, 0.7}}), 0.5);
  CHECK(t(0, 0) == doctest::Approx(0.15).epsilon(1e-15));
  CHECK(t(1, 0) == doctest::Approx(0.85).epsilon(1e-15));
  const auto mid = soft_correct<double>(y, p, 0.37);
  CHECK(((mid.row(0) + mid.row(1)).array() - 1.0).abs().maxCoeff() < 1e-12);
  CHECK(mid.minCoeff() >= 0.0);
  CHECK_THROWS_AS(soft_correct<double>(y, p, 1.5), std::invalid_argument);
}

TEST_CASE("DHLC worked cases") {
  CHECK(dhlc_correct<double>(labels({1}), probs({{0.95, 0.05}}), 0.90, 0.65)[0] == 0);
  CHECK(dhlc_correct<double>(labels({0}), probs({{0.30, 0.70}}), 0.90, 0.65)[0] == 1);
  CHECK(dhlc_correct<double>(labels({1}), probs({{0.6, 0.4}}), 0.90, 0.65)[0] == 1);
  CHECK(dhlc_correct<double>(labels({1}), probs({{1.0, 0.0}}), 1.0, 0.65)[0] == 1);
  // Exact threshold equality does not fire.
  CHECK(dhlc_correct<double>(labels({0}), probs({{0.25, 0.75}}), 0.9, 0.75)[0] == 0);
  // Argmax tie resolves to background.
  CHECK(dhlc_correct<double>(labels({1}), probs({{0.5, 0.5}}), 0.4, 0.4)[0] == 0);
  CHECK(dhlc_correct<double>(labels({0}), probs({{0.5, 0.5}}), 0.4, 0.4)[0] == 0);
}

TEST_CASE("DHLC matches the per-voxel rule on 1000 random tuples") {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u;
  const double grid[] = {0.5, 0.55, 0.65, 0.75, 0.9, 1.0};
  for (int t = 0; t < 1000; ++t) {
    const int y = static_cast<int>(rng() & 1);
    // Mix continuous probabilities with exact grid values to hit ties.
    const double p1 = t % 4 == 0 ? 1.0 - grid[rng() % 6] : (t % 4 == 1 ? grid[rng() % 6] : u(rng));
    const double p0 = 1.0 - p1;
    const double h0 = t % 3 == 0 ? grid[rng() % 6] : 0.01 + 0.99 * u(rng);
    const double h1 = t % 3 == 1 ? grid[rng() % 6] : 0.01 + 0.99 * u(rng);
    CorrectionStats stats;
    const auto out = dhlc_correct<double>(labels({y}), probs({{p0, p1}}), h0, h1, &stats);
    const int expected = oracle::dhlc(y, p0, p1, h0, h1);
    REQUIRE(out[0] == expected);
    CHECK(stats.to_background == static_cast<std::size_t>(y == 1 && expected == 0));
    CHECK(stats.to_lesion == static_cast<std::size_t>(y == 0 && expected == 1));
    CHECK(dhlc_correct<double>(labels({y}), probs({{p0, p1}}), 1.0, 1.0)[0] == y);
  }
}

TEST_CASE("DHLC is idempotent and disabled at unit thresholds") {
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> u;
  nn::Matrix<double> p(2, 500);
  MaskArray y(500);
  for (Eigen::Index j = 0; j < 500; ++j) {
    p(1, j) = u(rng);
    p(0, j) = 1 - p(1, j);
    y[j] = rng() & 1;
  }
  const auto once = dhlc_correct<double>(y, p, 0.7, 0.6);
  CHECK((dhlc_correct<double>(once, p, 0.7, 0.6) == once).all());
  CHECK((dhlc_correct<double>(y, p, 1.0, 1.0) == y).all());
}

TEST_CASE("probability and label contracts") {
  CHECK_THROWS_AS(dhlc_correct<double>(labels({1}), probs({{0.6, 0.6}}), 0.9, 0.65), std::invalid_argument);
  CHECK_THROWS_AS(dhlc_correct<double>(labels({2}), probs({{0.6, 0.4}}), 0.9, 0.65), std::invalid_argument);
  CHECK_THROWS_AS(dhlc_correct<double>(labels({1, 0}), probs({{0.6, 0.4}}), 0.9, 0.65), std::invalid_argument);
}

TEST_CASE("EMA endpoints, arithmetic and linearity") {
  WeightVector<double> t("f"), s("f");
  t.add("a", {1});
  s.add("a", {1});
  t[0] << 2.0;
  s[0] << 4.0;
  CHECK(ema_update(t, s, 0.0) == s);
  CHECK(ema_update(t, s, 1.0) == t);
  CHECK(ema_update(t, s, 0.99)[0][0] == doctest::Approx(2.02).epsilon(1e-15));

  std::mt19937_64 rng(5);
  std::normal_distribution<double> g;
  auto random_weights = [&] {
    WeightVector<double> w("f");
    w.add("a", {3, 4});
    w.add("b", {5}, false);
    for (std::size_t i = 0; i < w.size(); ++i)
      for (auto& v : w[i]) v = g(rng);
    return w;
  };
  for (int trial = 0; trial < 20; ++trial) {
    const auto t1 = random_weights(), t2 = random_weights(), s1 = random_weights(), s2 = random_weights();
    const double a = g(rng), b = g(rng), d = 0.9;
    auto combo = [&](const WeightVector<double>& x, const WeightVector<double>& y) {
      auto out = x;
      for (std::size_t i = 0; i < out.size(); ++i) out[i] = a * x[i] + b * y[i];
      return out;
    };
    const auto lhs = ema_update(combo(t1, t2), combo(s1, s2), d);
    const auto rhs = combo(ema_update(t1, s1, d), ema_update(t2, s2, d));
    for (std::size_t i = 0; i < lhs.size(); ++i) CHECK((lhs[i] - rhs[i]).abs().maxCoeff() <= 1e-9);
  }
  WeightVector<double> other("g");
  other.add("a", {1});
  CHECK_THROWS_AS(ema_update(t, other, 0.5), std::invalid_argument);
}

TEST_CASE("policy validation and warm-up gating") {
  CorrectionPolicy p;
  p.mode = CorrectionMode::dhlc_local;
  CHECK_NOTHROW(p.validate());
  p.h0 = 0.0;
  CHECK_THROWS_AS(p.validate(), ConfigError);
  p = {};
  p.mode = CorrectionMode::dhlc_local;
  p.ema_decay = 1.0;
  CHECK_THROWS_AS(p.validate(), ConfigError);
  p = {};
  p.mode = CorrectionMode::soft;
  p.epsilon = 2;
  CHECK_THROWS_AS(p.validate(), ConfigError);
  p = {};
  p.warmup_epochs = -1;
  CHECK_THROWS_AS(p.validate(), ConfigError);

  p = {};
  p.mode = CorrectionMode::celc_central;
  p.warmup_epochs = 2;
  CHECK(p.effective_mode(0) == CorrectionMode::none);
  CHECK(p.effective_mode(1) == CorrectionMode::none);
  CHECK(p.effective_mode(2) == CorrectionMode::celc_central);
  CHECK(parse_correction_mode("dhlc_local") == CorrectionMode::dhlc_local);
  CHECK_THROWS_AS(parse_correction_mode("dhlc"), ConfigError);
}
