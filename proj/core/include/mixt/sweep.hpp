// SPDX-License-Identifier: Apache-2.0
//
// Compression-depth sweep on the toy decoder: train one dense base model, then
// for every N_B replace, weight-match and recover with an identical budget,
// evaluate, and derive the output-distribution and geometry statistics.
#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "mixt/metrics.hpp"
#include "mixt/plan.hpp"
#include "mixt/toy_model.hpp"
#include "mixt/toy_task.hpp"
#include "mixt/toy_training.hpp"
#include "mixt/weight_matching.hpp"

namespace mixt {

struct AnalysisConfig {
  // Output-side pairs are those ending in the last `output_layers` layers.
  std::size_t output_layers = 4;
  metrics::ThresholdConfig threshold;
};

void to_json(nlohmann::json& j, const AnalysisConfig& c);
void from_json(const nlohmann::json& j, AnalysisConfig& c);

struct SweepConfig {
  toy::ToyModelConfig model;
  std::size_t num_keys = 2;
  std::size_t n_t = 2;
  Direction direction = Direction::BackToFront;
  // Empty means 0..num_blocks. Depth 0 is always included as the drift reference.
  std::vector<std::size_t> nb_list;
  std::size_t baseline_steps = 1500;
  toy::OptimizerConfig baseline_opt{.lr = 2e-3};
  std::size_t budget = 500;
  toy::OptimizerConfig recovery_opt{.lr = 3e-4};
  std::size_t train_size = 4096;
  std::size_t eval_size = 512;
  // Every random stream derives from this; the seeds inside model, optimizer
  // and match configs are overridden.
  std::uint64_t seed = 7;
  MatchConfig match;
  AnalysisConfig analysis;
  bool save_checkpoints = false;
  // Keep per-block hidden states in the written evaluation records.
  bool write_hidden = true;

  toy::TaskConfig task() const;
  std::vector<std::size_t> depths() const;
  void validate() const;
};

void to_json(nlohmann::json& j, const SweepConfig& c);
void from_json(const nlohmann::json& j, SweepConfig& c);

struct DepthEval {
  std::size_t n_b = 0;
  std::vector<toy::EvalRecord> records;
};

struct DepthMetrics {
  std::size_t n_b = 0;
  double accuracy = 0.0;
  double oe = 0.0;
  double pe = 0.0;
  double tpe = 0.0;
  metrics::PairMap similarity;
  metrics::PairMap drift;
  std::vector<double> drift_profile;
  metrics::DriftSummary summary;
};

struct SweepAnalysis {
  std::vector<DepthMetrics> depths;
  std::vector<metrics::LayerPair> output_pairs;
  std::optional<double> threshold;
  std::optional<metrics::SegmentedFit> segmented;
  std::optional<metrics::LineFit> trend_oe;
  std::optional<metrics::LineFit> trend_tpe;
};

// Pure function of the evaluation records. The N_B = 0 entry is the reference.
SweepAnalysis analyze(std::span<const DepthEval> evals, const AnalysisConfig& cfg);
nlohmann::json analysis_json(const SweepAnalysis& a, const AnalysisConfig& cfg);
// sweep_metrics.csv, drift_landscape.csv, drift_summaries.csv
void write_analysis_csvs(const std::filesystem::path& dir, const SweepAnalysis& a);

struct DepthRun {
  std::size_t n_b = 0;
  std::uint64_t param_count = 0;
  double mean_match_residual = 0.0;
  std::vector<double> loss_curve;
};

struct SweepResult {
  SweepConfig config;
  double baseline_accuracy = 0.0;
  std::vector<double> baseline_loss;
  std::vector<DepthRun> runs;
  std::vector<DepthEval> evals;
  SweepAnalysis analysis;
  // One recovered model per depth, kept only when config.save_checkpoints.
  std::vector<toy::Model> checkpoints;

  nlohmann::json report() const;
};

using ProgressFn = std::function<void(const std::string&)>;

SweepResult run_sweep(const SweepConfig& cfg, const ProgressFn& progress = {});

// Writes sweep_report.json, the analysis CSVs, per-depth loss curves and
// evaluation records. Contents depend only on the configuration.
void write_sweep(const std::filesystem::path& dir, const SweepResult& result);

std::string format_double(double v);
void write_json_file(const std::filesystem::path& path, const nlohmann::json& j);
nlohmann::json read_json_file(const std::filesystem::path& path);

}  // namespace mixt
