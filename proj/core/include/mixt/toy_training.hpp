// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "mixt/toy_model.hpp"
#include "mixt/toy_task.hpp"

namespace mixt::toy {

// Adam with a fixed step size; no schedule, no weight decay.
struct OptimizerConfig {
  double lr = 3e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::size_t batch_size = 32;
  std::uint64_t seed = 0;
  // Train only the parameters of compressed blocks.
  bool freeze_uncompressed = false;
};

void to_json(nlohmann::json& j, const OptimizerConfig& c);
void from_json(const nlohmann::json& j, OptimizerConfig& c);

struct RecoveryResult {
  Model model;
  std::vector<double> loss_curve;  // one entry per step, loss before the update
};

TokenBatch make_batch(std::span<const TaskItem> items, std::span<const std::size_t> indices);

// Mean last-position cross-entropy against the gold label tokens.
ad::Var task_loss(ad::Tape& t, Model& model, std::span<const TaskItem> items, std::span<const std::size_t> indices);

// Trains for exactly `budget_steps` steps. Throws NonFiniteLoss on divergence.
RecoveryResult recover(const Model& model, std::span<const TaskItem> dataset, std::size_t budget_steps,
                       const OptimizerConfig& opt);

struct EvalRecord {
  std::array<double, kNumLabels> p{};
  int predicted = 0;
  int gold = 0;
  // Residual stream after each block at the answer-decision position.
  std::vector<std::vector<double>> hidden;
};

void to_json(nlohmann::json& j, const EvalRecord& r);
void from_json(const nlohmann::json& j, EvalRecord& r);

struct EvalResult {
  double accuracy = 0.0;
  std::vector<EvalRecord> records;
};

// Final-position logits restricted to the four label tokens and renormalized.
// Ties go to the lowest label index.
EvalResult evaluate(const Model& model, std::span<const TaskItem> eval_set, std::size_t chunk = 256);

using LossFn = std::function<ad::Var(ad::Tape&)>;

struct GradProbe {
  const ad::Parameter* param = nullptr;
  std::size_t index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
  double error = 0.0;  // |analytic - numeric| / max(1, |numeric|)
};

struct GradCheckResult {
  double max_error = 0.0;
  std::vector<GradProbe> probes;
};

// Central-difference check of `params` under `loss_fn`. The first probes cover
// every tensor in `must_cover` once; the rest are drawn uniformly over all
// scalar entries of `params`.
GradCheckResult grad_check(std::span<ad::Parameter* const> params, const LossFn& loss_fn, std::size_t probe_count,
                           double epsilon, std::uint64_t seed,
                           std::span<ad::Parameter* const> must_cover = {});

// Model variant: covers every tensor-mixture branch of the model.
GradCheckResult grad_check(Model& model, const LossFn& loss_fn, std::size_t probe_count, double epsilon,
                           std::uint64_t seed);

}  // namespace mixt::toy
