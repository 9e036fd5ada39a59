// SPDX-License-Identifier: Apache-2.0
//
// Output-distribution statistics and inter-layer geometry diagnostics for
// compression sweeps. Entropies use natural logs normalized by log 4.
#pragma once

#include <array>
#include <cstddef>
#include <optional>
#include <span>
#include <utility>
#include <vector>

#include <nlohmann/json_fwd.hpp>

namespace mixt::metrics {

inline constexpr std::size_t kNumOptions = 4;
// Largest PE fed to the -log10(1 - PE) transform.
inline constexpr double kPeClamp = 1.0 - 1e-12;

struct AnswerDistBatch {
  std::vector<std::array<double, kNumOptions>> p;
  std::vector<int> gold;
  std::vector<int> predicted;

  // Rows sum to 1 within 1e-9, entries in [0, 1], labels in range.
  void validate() const;
};

double output_entropy(const AnswerDistBatch& batch);
double prediction_entropy(const AnswerDistBatch& batch);
double transformed_pe(double pe);
double accuracy(const AnswerDistBatch& batch);

struct Point {
  double x = 0.0;
  double y = 0.0;
};

struct LineFit {
  double slope = 0.0;
  double intercept = 0.0;
  double residual = 0.0;  // sum of squared residuals
};

// Ordinary least squares; DegenerateFit when all x are equal.
LineFit trend_fit(std::span<const Point> points);

// Values over layer pairs (l, l2) with l2 > l; the diagonal and lower half are unused.
class PairMap {
 public:
  PairMap() = default;
  explicit PairMap(std::size_t layers) : layers_(layers), values_(layers * layers, 0.0) {}

  std::size_t layers() const noexcept { return layers_; }
  double& at(std::size_t l, std::size_t l2) { return values_[l * layers_ + l2]; }
  double at(std::size_t l, std::size_t l2) const { return values_[l * layers_ + l2]; }
  std::size_t pair_count() const noexcept { return layers_ * (layers_ - (layers_ ? 1 : 0)) / 2; }

  // Prompts skipped per pair because a hidden state was zero.
  std::vector<std::size_t> skipped;

 private:
  std::size_t layers_ = 0;
  std::vector<double> values_;
};

void to_json(nlohmann::json& j, const PairMap& m);
void from_json(const nlohmann::json& j, PairMap& m);

// hidden[prompt][layer] -> vector. Mean cosine per layer pair over prompts.
PairMap interlayer_similarity(const std::vector<std::vector<std::vector<double>>>& hidden);

// |current - reference| per pair.
PairMap geometry_drift(const PairMap& current, const PairMap& reference);

// Mean drift over end layers l2 > l for each start layer l = 0..L-2.
std::vector<double> drift_profile(const PairMap& drift);

using LayerPair = std::pair<std::size_t, std::size_t>;

// Pairs (l, l2), l2 > l, with l2 among the last `last_layers` layers.
std::vector<LayerPair> output_side_pairs(std::size_t layers, std::size_t last_layers = 4);

struct DriftSummary {
  double output_mean = 0.0;
  double global_mean = 0.0;
};

DriftSummary drift_summaries(const PairMap& drift, std::span<const LayerPair> output_pairs);

struct SegmentedFit {
  double pre_slope = 0.0;
  double pre_intercept = 0.0;
  double post_slope = 0.0;
  double post_intercept = 0.0;
  // x of the last point in the first segment.
  double split_x = 0.0;
  // Intersection of the two fitted lines; meaningless when indeterminate.
  double breakpoint = 0.0;
  bool indeterminate = false;
  double residual = 0.0;
};

// Two independent least-squares lines, searched exhaustively over every split
// that leaves at least two points per segment. Needs >= 4 points.
SegmentedFit segmented_fit(std::span<const Point> series);

struct ThresholdConfig {
  std::size_t plateau_window = 3;
  double drop_delta = 0.1;
  // drop_delta is a fraction of the plateau mean rather than an absolute value.
  bool relative = true;
};

// Smallest x whose accuracy, and every later accuracy, lies below plateau - delta.
// `series` must be sorted by x.
std::optional<double> transition_threshold(std::span<const Point> series, std::size_t plateau_window,
                                           double drop_delta);
std::optional<double> transition_threshold(std::span<const Point> series, const ThresholdConfig& cfg = {});

}  // namespace mixt::metrics
