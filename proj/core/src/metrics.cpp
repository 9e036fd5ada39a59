// SPDX-License-Identifier: Apache-2.0
#include "mixt/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include <nlohmann/json.hpp>

#include "mixt/error.hpp"

namespace mixt::metrics {

namespace {

const double kLog4 = std::log(4.0);

double entropy4(const std::array<double, kNumOptions>& p) {
  double h = 0.0;
  for (double v : p) {
    if (v > 0.0) h -= v * std::log(v);
  }
  return h;
}

}  // namespace

void AnswerDistBatch::validate() const {
  if (gold.size() != p.size() || predicted.size() != p.size()) {
    throw Error(Errc::DimensionMismatch, "distribution, gold and predicted counts differ");
  }
  for (std::size_t i = 0; i < p.size(); ++i) {
    double s = 0.0;
    for (double v : p[i]) {
      if (!(v >= 0.0 && v <= 1.0)) throw Error(Errc::InvalidConfig, "probability outside [0, 1]");
      s += v;
    }
    if (std::abs(s - 1.0) > 1e-9) throw Error(Errc::InvalidConfig, "row " + std::to_string(i) + " does not sum to 1");
    for (int label : {gold[i], predicted[i]}) {
      if (label < 0 || label >= static_cast<int>(kNumOptions)) throw Error(Errc::InvalidConfig, "label out of range");
    }
  }
}

double output_entropy(const AnswerDistBatch& batch) {
  batch.validate();
  if (batch.p.empty()) throw Error(Errc::InvalidConfig, "empty answer batch");
  double s = 0.0;
  for (const auto& row : batch.p) s += entropy4(row);
  return s / static_cast<double>(batch.p.size()) / kLog4;
}

double prediction_entropy(const AnswerDistBatch& batch) {
  batch.validate();
  if (batch.predicted.empty()) throw Error(Errc::InvalidConfig, "empty answer batch");
  std::array<double, kNumOptions> freq{};
  for (int label : batch.predicted) freq[static_cast<std::size_t>(label)] += 1.0;
  for (double& f : freq) f /= static_cast<double>(batch.predicted.size());
  return entropy4(freq) / kLog4;
}

double transformed_pe(double pe) { return -std::log10(1.0 - std::min(pe, kPeClamp)); }

double accuracy(const AnswerDistBatch& batch) {
  batch.validate();
  if (batch.gold.empty()) throw Error(Errc::InvalidConfig, "empty answer batch");
  std::size_t hits = 0;
  for (std::size_t i = 0; i < batch.gold.size(); ++i) hits += batch.gold[i] == batch.predicted[i];
  return static_cast<double>(hits) / static_cast<double>(batch.gold.size());
}

LineFit trend_fit(std::span<const Point> points) {
  if (points.size() < 2) throw Error(Errc::DegenerateFit, "need at least two points");
  const double n = static_cast<double>(points.size());
  double mx = 0.0, my = 0.0;
  for (const auto& pt : points) {
    mx += pt.x;
    my += pt.y;
  }
  mx /= n;
  my /= n;
  double sxx = 0.0, sxy = 0.0;
  for (const auto& pt : points) {
    sxx += (pt.x - mx) * (pt.x - mx);
    sxy += (pt.x - mx) * (pt.y - my);
  }
  if (sxx == 0.0) throw Error(Errc::DegenerateFit, "all x values are equal");
  LineFit fit;
  fit.slope = sxy / sxx;
  fit.intercept = my - fit.slope * mx;
  for (const auto& pt : points) {
    const double r = pt.y - (fit.intercept + fit.slope * pt.x);
    fit.residual += r * r;
  }
  return fit;
}

void to_json(nlohmann::json& j, const PairMap& m) {
  // Upper triangle row by row: (0,1), (0,2), ..., (L-2, L-1).
  std::vector<double> upper;
  for (std::size_t l = 0; l < m.layers(); ++l) {
    for (std::size_t l2 = l + 1; l2 < m.layers(); ++l2) upper.push_back(m.at(l, l2));
  }
  j = nlohmann::json{{"layers", m.layers()}, {"upper", upper}};
  if (!m.skipped.empty()) j["skipped"] = m.skipped;
}

void from_json(const nlohmann::json& j, PairMap& m) {
  m = PairMap(j.at("layers").get<std::size_t>());
  const auto upper = j.at("upper").get<std::vector<double>>();
  if (upper.size() != m.pair_count()) throw Error(Errc::ParseError, "pair map has wrong number of entries");
  std::size_t i = 0;
  for (std::size_t l = 0; l < m.layers(); ++l) {
    for (std::size_t l2 = l + 1; l2 < m.layers(); ++l2) m.at(l, l2) = upper[i++];
  }
  m.skipped = j.value("skipped", std::vector<std::size_t>{});
}

PairMap interlayer_similarity(const std::vector<std::vector<std::vector<double>>>& hidden) {
  if (hidden.empty()) throw Error(Errc::InvalidConfig, "no prompts supplied");
  const std::size_t layers = hidden.front().size();
  PairMap sim(layers);
  sim.skipped.assign(layers * layers, 0);
  std::vector<double> norms(layers);
  for (const auto& prompt : hidden) {
    if (prompt.size() != layers) throw Error(Errc::LayerCountMismatch, "every prompt must supply every layer");
    for (std::size_t l = 0; l < layers; ++l) {
      double s = 0.0;
      for (double v : prompt[l]) s += v * v;
      norms[l] = std::sqrt(s);
    }
    for (std::size_t l = 0; l < layers; ++l) {
      for (std::size_t l2 = l + 1; l2 < layers; ++l2) {
        if (prompt[l].size() != prompt[l2].size()) throw Error(Errc::DimensionMismatch, "hidden widths differ");
        if (norms[l] == 0.0 || norms[l2] == 0.0) {
          ++sim.skipped[l * layers + l2];
          continue;
        }
        double dot = 0.0;
        for (std::size_t c = 0; c < prompt[l].size(); ++c) dot += prompt[l][c] * prompt[l2][c];
        sim.at(l, l2) += dot / (norms[l] * norms[l2]);
      }
    }
  }
  bool any_skipped = false;
  for (std::size_t l = 0; l < layers; ++l) {
    for (std::size_t l2 = l + 1; l2 < layers; ++l2) {
      const std::size_t used = hidden.size() - sim.skipped[l * layers + l2];
      any_skipped |= used != hidden.size();
      sim.at(l, l2) = used ? sim.at(l, l2) / static_cast<double>(used) : 0.0;
    }
  }
  if (!any_skipped) sim.skipped.clear();
  return sim;
}

PairMap geometry_drift(const PairMap& current, const PairMap& reference) {
  if (current.layers() != reference.layers()) {
    throw Error(Errc::LayerCountMismatch, "similarity maps cover different layer counts");
  }
  PairMap drift(current.layers());
  for (std::size_t l = 0; l < drift.layers(); ++l) {
    for (std::size_t l2 = l + 1; l2 < drift.layers(); ++l2) {
      drift.at(l, l2) = std::abs(current.at(l, l2) - reference.at(l, l2));
    }
  }
  return drift;
}

std::vector<double> drift_profile(const PairMap& drift) {
  std::vector<double> profile;
  for (std::size_t l = 0; l + 1 < drift.layers(); ++l) {
    double s = 0.0;
    for (std::size_t l2 = l + 1; l2 < drift.layers(); ++l2) s += drift.at(l, l2);
    profile.push_back(s / static_cast<double>(drift.layers() - 1 - l));
  }
  return profile;
}

std::vector<LayerPair> output_side_pairs(std::size_t layers, std::size_t last_layers) {
  std::vector<LayerPair> pairs;
  const std::size_t first_end = layers > last_layers ? layers - last_layers : 0;
  for (std::size_t l = 0; l < layers; ++l) {
    for (std::size_t l2 = std::max(l + 1, first_end); l2 < layers; ++l2) pairs.emplace_back(l, l2);
  }
  return pairs;
}

DriftSummary drift_summaries(const PairMap& drift, std::span<const LayerPair> output_pairs) {
  if (output_pairs.empty()) throw Error(Errc::EmptyPairSet, "output-side pair set is empty");
  if (drift.pair_count() == 0) throw Error(Errc::EmptyPairSet, "drift map has no layer pairs");
  DriftSummary s;
  for (const auto& [l, l2] : output_pairs) {
    if (l2 <= l || l2 >= drift.layers()) throw Error(Errc::AxisOutOfRange, "invalid layer pair in output set");
    s.output_mean += drift.at(l, l2);
  }
  s.output_mean /= static_cast<double>(output_pairs.size());
  for (std::size_t l = 0; l < drift.layers(); ++l) {
    for (std::size_t l2 = l + 1; l2 < drift.layers(); ++l2) s.global_mean += drift.at(l, l2);
  }
  s.global_mean /= static_cast<double>(drift.pair_count());
  return s;
}

SegmentedFit segmented_fit(std::span<const Point> series) {
  if (series.size() < 4) throw Error(Errc::DegenerateFit, "segmented fit needs at least four points");
  std::vector<Point> pts(series.begin(), series.end());
  std::stable_sort(pts.begin(), pts.end(), [](const Point& a, const Point& b) { return a.x < b.x; });

  std::optional<SegmentedFit> best;
  for (std::size_t split = 2; split + 2 <= pts.size(); ++split) {
    LineFit pre, post;
    try {
      pre = trend_fit(std::span(pts).first(split));
      post = trend_fit(std::span(pts).subspan(split));
    } catch (const Error&) {
      continue;
    }
    const double ssr = pre.residual + post.residual;
    if (best && !(ssr < best->residual)) continue;
    SegmentedFit f;
    f.pre_slope = pre.slope;
    f.pre_intercept = pre.intercept;
    f.post_slope = post.slope;
    f.post_intercept = post.intercept;
    f.split_x = pts[split - 1].x;
    f.residual = ssr;
    best = f;
  }
  if (!best) throw Error(Errc::DegenerateFit, "no split leaves two distinct x values per segment");

  SegmentedFit& f = *best;
  const double dslope = f.pre_slope - f.post_slope;
  const double scale = std::max({std::abs(f.pre_slope), std::abs(f.post_slope), 1e-300});
  if (std::abs(dslope) <= 1e-8 * scale) {
    f.indeterminate = true;
    f.breakpoint = std::numeric_limits<double>::quiet_NaN();
  } else {
    f.breakpoint = (f.post_intercept - f.pre_intercept) / dslope;
  }
  return f;
}

std::optional<double> transition_threshold(std::span<const Point> series, std::size_t plateau_window,
                                           double drop_delta) {
  if (plateau_window < 1) throw Error(Errc::InvalidConfig, "plateau window must be >= 1");
  if (!(drop_delta > 0.0)) throw Error(Errc::InvalidConfig, "drop delta must be > 0");
  if (series.size() < plateau_window) return std::nullopt;
  for (std::size_t i = 1; i < series.size(); ++i) {
    if (!(series[i - 1].x < series[i].x)) throw Error(Errc::InvalidConfig, "series must be sorted by x");
  }
  double plateau = 0.0;
  for (std::size_t i = 0; i < plateau_window; ++i) plateau += series[i].y;
  plateau /= static_cast<double>(plateau_window);
  const double level = plateau - drop_delta;

  // Walk back from the end while the trajectory stays below the level.
  std::optional<double> onset;
  for (std::size_t i = series.size(); i-- > 0;) {
    if (!(series[i].y < level)) break;
    onset = series[i].x;
  }
  return onset;
}

std::optional<double> transition_threshold(std::span<const Point> series, const ThresholdConfig& cfg) {
  if (!cfg.relative) return transition_threshold(series, cfg.plateau_window, cfg.drop_delta);
  if (series.size() < cfg.plateau_window) return std::nullopt;
  double plateau = 0.0;
  for (std::size_t i = 0; i < cfg.plateau_window; ++i) plateau += series[i].y;
  plateau /= static_cast<double>(cfg.plateau_window);
  const double delta = cfg.drop_delta * plateau;
  if (!(delta > 0.0)) return std::nullopt;
  return transition_threshold(series, cfg.plateau_window, delta);
}

}  // namespace mixt::metrics
