// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include <nlohmann/json.hpp>

#include "mixt/error.hpp"
#include "mixt/metrics.hpp"
#include "mixt/random.hpp"

using namespace mixt;
using namespace mixt::metrics;

namespace {

using Row = std::array<double, kNumOptions>;

AnswerDistBatch batch_of(std::vector<Row> rows, std::vector<int> predicted = {}) {
  AnswerDistBatch b;
  b.p = std::move(rows);
  if (predicted.empty()) {
    for (const auto& r : b.p) predicted.push_back(static_cast<int>(std::max_element(r.begin(), r.end()) - r.begin()));
  }
  b.predicted = predicted;
  b.gold.assign(b.p.size(), 0);
  return b;
}

Row random_row(Rng& rng) {
  Row r;
  double s = 0.0;
  for (double& v : r) s += v = rng.uniform(0.0, 1.0);
  for (double& v : r) v /= s;
  return r;
}

// Normal-equation line through `pts`: (slope, intercept, ssr).
std::array<double, 3> ols(const std::vector<Point>& pts) {
  double n = 0, sx = 0, sy = 0, sxx = 0, sxy = 0;
  for (const auto& p : pts) {
    n += 1;
    sx += p.x;
    sy += p.y;
    sxx += p.x * p.x;
    sxy += p.x * p.y;
  }
  const double slope = (n * sxy - sx * sy) / (n * sxx - sx * sx);
  const double icpt = (sy - slope * sx) / n;
  double ssr = 0;
  for (const auto& p : pts) ssr += (p.y - icpt - slope * p.x) * (p.y - icpt - slope * p.x);
  return {slope, icpt, ssr};
}

PairMap random_map(Rng& rng, std::size_t layers) {
  PairMap m(layers);
  for (std::size_t l = 0; l < layers; ++l)
    for (std::size_t l2 = l + 1; l2 < layers; ++l2) m.at(l, l2) = rng.uniform(-1.0, 1.0);
  return m;
}

std::vector<Point> points(std::vector<double> ys, double x0 = 1.0) {
  std::vector<Point> out;
  for (double y : ys) out.push_back({x0++, y});
  return out;
}

}  // namespace

TEST_SUITE("metrics") {

TEST_CASE("output entropy boundary and worked values") {
  CHECK(output_entropy(batch_of({{0.25, 0.25, 0.25, 0.25}, {0.25, 0.25, 0.25, 0.25}})) == 1.0);
  CHECK(output_entropy(batch_of({{1, 0, 0, 0}, {0, 0, 1, 0}})) == 0.0);
  CHECK(std::abs(output_entropy(batch_of({{0.7, 0.1, 0.1, 0.1}})) - 0.6783) <= 1e-4);
  const double h = -(0.7 * std::log(0.7) + 0.3 * std::log(0.1));
  CHECK(output_entropy(batch_of({{0.7, 0.1, 0.1, 0.1}})) == doctest::Approx(h / std::log(4.0)).epsilon(1e-14));
}

TEST_CASE("prediction entropy and its transform") {
  const Row u{0.25, 0.25, 0.25, 0.25};
  CHECK(prediction_entropy(batch_of({u, u, u}, {2, 2, 2})) == 0.0);
  CHECK(transformed_pe(0.0) == 0.0);
  const double balanced = prediction_entropy(batch_of({u, u, u, u}, {0, 1, 2, 3}));
  CHECK(balanced == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(std::isfinite(transformed_pe(balanced)));
  CHECK(transformed_pe(1.0) == doctest::Approx(12.0).epsilon(1e-3));
  CHECK(prediction_entropy(batch_of({u, u, u, u}, {0, 1, 0, 1})) == 0.5);
  CHECK(transformed_pe(0.9) == doctest::Approx(1.0));
}

TEST_CASE("entropies stay in range and ignore relabeling") {
  Rng rng(31);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<Row> rows;
    std::vector<int> pred;
    const std::size_t n = 1 + rng.below(20);
    for (std::size_t i = 0; i < n; ++i) {
      rows.push_back(random_row(rng));
      pred.push_back(static_cast<int>(rng.below(4)));
    }
    const auto b = batch_of(rows, pred);
    const double oe = output_entropy(b), pe = prediction_entropy(b);
    CHECK(oe >= 0.0);
    CHECK(oe <= 1.0);
    CHECK(pe >= 0.0);
    CHECK(pe <= 1.0 + 1e-15);

    std::array<int, 4> perm{0, 1, 2, 3};
    for (std::size_t j = 3; j > 0; --j) std::swap(perm[j], perm[rng.below(j + 1)]);
    std::vector<Row> prow;
    std::vector<int> ppred;
    for (std::size_t i = 0; i < n; ++i) {
      Row r{};
      for (std::size_t j = 0; j < 4; ++j) r[static_cast<std::size_t>(perm[j])] = rows[i][j];
      prow.push_back(r);
      ppred.push_back(perm[static_cast<std::size_t>(pred[i])]);
    }
    const auto pb = batch_of(prow, ppred);
    CHECK(output_entropy(pb) == doctest::Approx(oe).epsilon(1e-14));
    CHECK(prediction_entropy(pb) == doctest::Approx(pe).epsilon(1e-14));
  }
}

TEST_CASE("batch validation") {
  CHECK_THROWS_AS(output_entropy(batch_of({{0.5, 0.5, 0.5, 0}})), Error);
  CHECK_THROWS_AS(output_entropy(batch_of({{1.2, -0.2, 0, 0}})), Error);
  CHECK_THROWS_AS(prediction_entropy(batch_of({{1, 0, 0, 0}}, {4})), Error);
  CHECK_THROWS_AS(output_entropy(AnswerDistBatch{}), Error);
  auto b = batch_of({{1, 0, 0, 0}, {0, 1, 0, 0}});
  b.gold = {0, 0};
  CHECK(accuracy(b) == 0.5);
}

TEST_CASE("trend fits") {
  std::vector<Point> oe, tpe;
  for (double acc : {0.25, 0.31, 0.4, 0.47, 0.55, 0.62}) {
    oe.push_back({acc, 1.20 - 1.30 * acc});
    tpe.push_back({acc, -0.90 + 4.87 * acc});
  }
  const auto f = trend_fit(oe);
  CHECK(std::abs(f.slope + 1.30) <= 1e-10);
  CHECK(std::abs(f.intercept - 1.20) <= 1e-10);
  const auto g = trend_fit(tpe);
  CHECK(std::abs(g.slope - 4.87) <= 1e-10);
  CHECK(std::abs(g.intercept + 0.90) <= 1e-10);

  const std::vector<Point> two{{0.3, 0.8}, {0.6, 0.1}};
  CHECK(trend_fit(two).residual <= 1e-30);

  Rng rng(5);
  std::vector<Point> noisy;
  for (int i = 0; i < 30; ++i) {
    const double x = rng.uniform(0.0, 1.0);
    noisy.push_back({x, 0.3 - 2.0 * x + 0.05 * rng.normal()});
  }
  const auto h = trend_fit(noisy);
  const auto o = ols(noisy);
  CHECK(std::abs(h.slope - o[0]) <= 1e-12);
  CHECK(std::abs(h.intercept - o[1]) <= 1e-12);
  CHECK(std::abs(h.residual - o[2]) <= 1e-12);

  const std::vector<Point> flat{{0.5, 1.0}, {0.5, 2.0}, {0.5, 3.0}};
  try {
    trend_fit(flat);
    FAIL("expected DegenerateFit");
  } catch (const Error& e) {
    CHECK(e.code() == Errc::DegenerateFit);
  }
}

TEST_CASE("inter-layer similarity") {
  const std::vector<double> a{1, 2, 3}, b{-2, 1, 0};
  CHECK(interlayer_similarity({{a, a}, {b, b}}).at(0, 1) == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(interlayer_similarity({{a, b}}).at(0, 1) == 0.0);

  // Three prompts, two layers, worked by hand: cosines 1/sqrt(2), 0, -1.
  const std::vector<std::vector<std::vector<double>>> h{
      {{1, 0}, {1, 1}},
      {{0, 2}, {3, 0}},
      {{1, 1}, {-2, -2}},
  };
  const double expect = (1.0 / std::sqrt(2.0) + 0.0 - 1.0) / 3.0;
  CHECK(std::abs(interlayer_similarity(h).at(0, 1) - expect) <= 1e-12);

  // A zero vector is skipped for that prompt only.
  const auto s = interlayer_similarity({{{0, 0}, {1, 0}}, {{1, 0}, {1, 0}}});
  CHECK(s.at(0, 1) == 1.0);
  REQUIRE_FALSE(s.skipped.empty());
  CHECK(s.skipped[0 * 2 + 1] == 1);

  CHECK_THROWS_AS(interlayer_similarity({{a, a}, {a}}), Error);

  Rng rng(8);
  std::vector<std::vector<std::vector<double>>> big(6, std::vector<std::vector<double>>(5, std::vector<double>(7)));
  for (auto& p : big)
    for (auto& l : p)
      for (double& v : l) v = rng.normal();
  const auto sim = interlayer_similarity(big);
  for (std::size_t l = 0; l < 5; ++l)
    for (std::size_t l2 = l + 1; l2 < 5; ++l2) {
      double acc = 0;
      for (const auto& p : big) {
        const double dot = std::inner_product(p[l].begin(), p[l].end(), p[l2].begin(), 0.0);
        const double na = std::sqrt(std::inner_product(p[l].begin(), p[l].end(), p[l].begin(), 0.0));
        const double nb = std::sqrt(std::inner_product(p[l2].begin(), p[l2].end(), p[l2].begin(), 0.0));
        acc += dot / (na * nb);
      }
      CHECK(std::abs(sim.at(l, l2) - acc / 6.0) <= 1e-12);
      CHECK(std::abs(sim.at(l, l2)) <= 1.0);
    }
}

TEST_CASE("geometry drift") {
  Rng rng(12);
  const PairMap a = random_map(rng, 6), b = random_map(rng, 6), c = random_map(rng, 6);
  const PairMap self = geometry_drift(a, a);
  for (std::size_t l = 0; l < 6; ++l)
    for (std::size_t l2 = l + 1; l2 < 6; ++l2) {
      CHECK(self.at(l, l2) == 0.0);
      CHECK(geometry_drift(a, b).at(l, l2) == std::abs(a.at(l, l2) - b.at(l, l2)));
      CHECK(geometry_drift(a, b).at(l, l2) == geometry_drift(b, a).at(l, l2));
      CHECK(geometry_drift(a, c).at(l, l2) <= geometry_drift(a, b).at(l, l2) + geometry_drift(b, c).at(l, l2));
    }

  PairMap ones(4), zeros(4);
  for (std::size_t l = 0; l < 4; ++l)
    for (std::size_t l2 = l + 1; l2 < 4; ++l2) ones.at(l, l2) = 1.0;
  const PairMap d = geometry_drift(zeros, ones);
  for (std::size_t l = 0; l < 4; ++l)
    for (std::size_t l2 = l + 1; l2 < 4; ++l2) CHECK(d.at(l, l2) == 1.0);

  try {
    geometry_drift(PairMap(3), PairMap(4));
    FAIL("expected LayerCountMismatch");
  } catch (const Error& e) {
    CHECK(e.code() == Errc::LayerCountMismatch);
  }

  const auto back = nlohmann::json(a).get<PairMap>();
  for (std::size_t l = 0; l < 6; ++l)
    for (std::size_t l2 = l + 1; l2 < 6; ++l2) CHECK(back.at(l, l2) == a.at(l, l2));
}

TEST_CASE("drift profile and summaries") {
  PairMap constant(5);
  for (std::size_t l = 0; l < 5; ++l)
    for (std::size_t l2 = l + 1; l2 < 5; ++l2) constant.at(l, l2) = 0.3;
  for (double v : drift_profile(constant)) CHECK(v == doctest::Approx(0.3).epsilon(1e-15));
  const auto pairs = output_side_pairs(5, 2);
  const auto cs = drift_summaries(constant, pairs);
  CHECK(cs.output_mean == doctest::Approx(0.3).epsilon(1e-15));
  CHECK(cs.global_mean == doctest::Approx(0.3).epsilon(1e-15));

  Rng rng(44);
  const PairMap m = random_map(rng, 7);
  const auto prof = drift_profile(m);
  REQUIRE(prof.size() == 6);
  CHECK(prof.back() == m.at(5, 6));
  for (std::size_t l = 0; l < 6; ++l) {
    double s = 0;
    for (std::size_t l2 = l + 1; l2 < 7; ++l2) s += m.at(l, l2);
    CHECK(std::abs(prof[l] - s / static_cast<double>(6 - l)) <= 1e-12);
  }

  const auto out = output_side_pairs(7, 4);
  std::size_t count = 0;
  for (std::size_t l = 0; l < 7; ++l)
    for (std::size_t l2 = l + 1; l2 < 7; ++l2)
      if (l2 >= 3) ++count;
  CHECK(out.size() == count);
  double so = 0, sg = 0;
  for (const auto& [l, l2] : out) {
    CHECK(l2 >= 3);
    so += m.at(l, l2);
  }
  for (std::size_t l = 0; l < 7; ++l)
    for (std::size_t l2 = l + 1; l2 < 7; ++l2) sg += m.at(l, l2);
  const auto sum = drift_summaries(m, out);
  CHECK(std::abs(sum.output_mean - so / static_cast<double>(count)) <= 1e-12);
  CHECK(std::abs(sum.global_mean - sg / 21.0) <= 1e-12);

  try {
    drift_summaries(m, {});
    FAIL("expected EmptyPairSet");
  } catch (const Error& e) {
    CHECK(e.code() == Errc::EmptyPairSet);
  }
}

TEST_CASE("segmented fit") {
  std::vector<Point> series;
  for (int x = 0; x <= 32; ++x) {
    const double y = x <= 17 ? 0.02 + 0.006 * x : 0.02 + 0.006 * 17 + 0.016 * (x - 17);
    series.push_back({static_cast<double>(x), y});
  }
  const auto f = segmented_fit(series);
  CHECK_FALSE(f.indeterminate);
  CHECK(std::abs(f.pre_slope - 0.006) <= 1e-9);
  CHECK(std::abs(f.post_slope - 0.016) <= 1e-9);
  CHECK(std::abs(f.breakpoint - 17.0) <= 1e-9);

  std::vector<Point> line;
  for (int x = 0; x < 8; ++x) line.push_back({static_cast<double>(x), 0.5 + 0.25 * x});
  const auto g = segmented_fit(line);
  CHECK(g.indeterminate);
  CHECK(std::abs(g.pre_slope - g.post_slope) <= 1e-12);
  CHECK(g.residual <= 1e-24);

  Rng rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<Point> noisy;
    const int brk = 3 + static_cast<int>(rng.below(10));
    for (int x = 0; x <= 16; ++x) {
      const double y = (x <= brk ? 0.01 * x : 0.01 * brk + 0.05 * (x - brk)) + 0.01 * rng.normal();
      noisy.push_back({static_cast<double>(x), y});
    }
    double best = 1e300;
    std::size_t best_split = 0;
    for (std::size_t s = 2; s + 2 <= noisy.size(); ++s) {
      const double ssr = ols({noisy.begin(), noisy.begin() + static_cast<long>(s)})[2] +
                         ols({noisy.begin() + static_cast<long>(s), noisy.end()})[2];
      if (ssr < best) {
        best = ssr;
        best_split = s;
      }
    }
    const auto h = segmented_fit(noisy);
    CHECK(h.split_x == noisy[best_split - 1].x);
    CHECK(std::abs(h.residual - best) <= 1e-12);
  }

  CHECK_THROWS_AS(segmented_fit(points({1, 2, 3})), Error);
}

TEST_CASE("transition threshold") {
  const auto worked = points({0.70, 0.69, 0.70, 0.68, 0.30, 0.28, 0.25});
  CHECK(transition_threshold(worked, 4, 0.1) == 5.0);

  auto extended = worked;
  extended.push_back({8, 0.2});
  extended.push_back({9, 0.5});
  CHECK(transition_threshold(extended, 4, 0.1) == 5.0);

  CHECK_FALSE(transition_threshold(points({0.7, 0.7, 0.7, 0.7, 0.7}), 3, 0.1).has_value());
  CHECK_FALSE(transition_threshold(points({0.7, 0.7, 0.7, 0.3, 0.7, 0.7}), 3, 0.1).has_value());

  // A drop that starts, recovers, then drops for good reports the final onset.
  CHECK(transition_threshold(points({0.7, 0.7, 0.7, 0.3, 0.7, 0.2, 0.1}), 3, 0.1) == 6.0);

  // Relative delta: 10% of a 0.5 plateau.
  const auto rel = points({0.5, 0.5, 0.5, 0.46, 0.44, 0.4});
  CHECK(transition_threshold(rel, ThresholdConfig{}) == 5.0);
  CHECK_FALSE(transition_threshold(rel, ThresholdConfig{.relative = false}).has_value());

  CHECK_THROWS_AS(transition_threshold(points({0.1, 0.2}), 0, 0.1), Error);
  CHECK_THROWS_AS(transition_threshold(points({0.1, 0.2}), 1, 0.0), Error);
  std::vector<Point> unsorted{{2, 0.5}, {1, 0.5}};
  CHECK_THROWS_AS(transition_threshold(unsorted, 1, 0.1), Error);

  // Threshold, when present, lies in the swept range.
  Rng rng(21);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<Point> s;
    for (int x = 0; x < 10; ++x) s.push_back({static_cast<double>(x), rng.uniform(0.0, 1.0)});
    const auto t = transition_threshold(s, 3, 0.1);
    if (t) {
      CHECK(*t >= 0.0);
      CHECK(*t <= 9.0);
    }
  }
}

}  // TEST_SUITE
