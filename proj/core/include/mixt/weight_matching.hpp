// SPDX-License-Identifier: Apache-2.0
//
// Fit a MixtOperator to a dense weight matrix by alternating least squares in
// the Frobenius norm. Each inner step solves one branch exactly while the
// others are held fixed, so the residual never increases.
#pragma once

#include <cstdint>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "mixt/mixt_operator.hpp"
#include "mixt/tensor.hpp"

namespace mixt {

enum class InitScheme { ZerosExceptFirst, ScaledRandom };

struct MatchConfig {
  int max_sweeps = 100;
  double rel_tol = 1e-7;
  InitScheme init_scheme = InitScheme::ZerosExceptFirst;
  std::uint64_t seed = 0;
  // Order in which branches are visited within a sweep; empty = 0..n_t-1.
  std::vector<std::size_t> branch_order;

  void validate() const;
};

void to_json(nlohmann::json& j, const MatchConfig& c);
void from_json(const nlohmann::json& j, MatchConfig& c);

struct MatchResult {
  MixtOperator op;
  // Absolute padded Frobenius residual after initialization, then after each sweep.
  std::vector<double> residual_history;
  int sweeps = 0;
};

// W: out_dim_raw x in_dim_raw.
MatchResult match_weights(const Tensor& w, const MixtSpec& spec, const MatchConfig& cfg = {});

// argmin_M || R - scale * I_prefix (x) M (x) I_suffix ||_F for branch k, where
// R is the padded d^m x d^n target with the other branches already subtracted.
// Returned bond-shaped.
Tensor branch_update(const Tensor& residual, std::size_t k, const MixtSpec& spec);

struct ReconstructionError {
  double value = 0.0;
  // False when ||W||_F == 0 and `value` is the absolute norm.
  bool relative = true;
};
ReconstructionError reconstruction_error(const Tensor& w, const MixtOperator& op);

}  // namespace mixt
