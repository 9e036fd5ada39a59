// SPDX-License-Identifier: Apache-2.0
#include "mixt/weight_matching.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include <nlohmann/json.hpp>

#include "mixt/error.hpp"
#include "mixt/random.hpp"

namespace mixt {

void MatchConfig::validate() const {
  if (max_sweeps < 1) throw Error(Errc::InvalidConfig, "max_sweeps must be >= 1");
  if (!(rel_tol > 0.0)) throw Error(Errc::InvalidConfig, "rel_tol must be > 0");
}

void to_json(nlohmann::json& j, const MatchConfig& c) {
  j = nlohmann::json{{"max_sweeps", c.max_sweeps},
                     {"rel_tol", c.rel_tol},
                     {"init_scheme", c.init_scheme == InitScheme::ZerosExceptFirst ? "zeros-except-first"
                                                                                   : "scaled-random"},
                     {"seed", c.seed}};
  if (!c.branch_order.empty()) j["branch_order"] = c.branch_order;
}

void from_json(const nlohmann::json& j, MatchConfig& c) {
  c.max_sweeps = j.value("max_sweeps", 100);
  c.rel_tol = j.value("rel_tol", 1e-7);
  const auto scheme = j.value("init_scheme", std::string("zeros-except-first"));
  if (scheme == "zeros-except-first") {
    c.init_scheme = InitScheme::ZerosExceptFirst;
  } else if (scheme == "scaled-random") {
    c.init_scheme = InitScheme::ScaledRandom;
  } else {
    throw Error(Errc::ParseError, "unknown init_scheme '" + scheme + "'");
  }
  c.seed = j.value("seed", std::uint64_t{0});
  c.branch_order = j.value("branch_order", std::vector<std::size_t>{});
}

Tensor branch_update(const Tensor& residual, std::size_t k, const MixtSpec& spec) {
  spec.validate();
  if (k >= spec.n_t) throw Error(Errc::DimensionMismatch, "branch index out of range");
  if (residual.rank() != 2 || residual.dim(0) != spec.out_dim() || residual.dim(1) != spec.in_dim()) {
    throw Error(Errc::DimensionMismatch, "residual must be d^m x d^n");
  }
  const std::size_t a = spec.prefix(k);
  const std::size_t b = spec.suffix(k);
  const std::size_t u_len = spec.branch_out();
  const std::size_t v_len = spec.branch_in();

  // Block partial trace over the pass-through indices.
  Tensor m = Tensor::matrix(u_len, v_len);
  for (std::size_t p = 0; p < a; ++p) {
    for (std::size_t u = 0; u < u_len; ++u) {
      const std::size_t row0 = (p * u_len + u) * b;
      for (std::size_t v = 0; v < v_len; ++v) {
        const std::size_t col0 = (p * v_len + v) * b;
        double acc = 0.0;
        for (std::size_t q = 0; q < b; ++q) acc += residual(row0 + q, col0 + q);
        m(u, v) += acc;
      }
    }
  }
  const double norm = 1.0 / (spec.scale() * static_cast<double>(a * b));
  for (double& v : m.data()) v *= norm;
  return reshape(m, spec.branch_shape());
}

namespace {

Tensor others_residual(const Tensor& target, const MixtOperator& op, std::size_t skip) {
  const MixtSpec& spec = op.spec();
  Tensor r = target;
  for (double& v : r.data()) v = -v;
  for (std::size_t j = 0; j < spec.n_t; ++j) {
    if (j == skip) continue;
    add_kron_sandwich(r, reshape(op.branch(j), Shape{spec.branch_out(), spec.branch_in()}), spec.prefix(j),
                      spec.suffix(j), spec.scale());
  }
  for (double& v : r.data()) v = -v;
  return r;
}

double padded_residual(const Tensor& target, const MixtOperator& op) {
  const Tensor approx = expand_to_dense_padded(op);
  double s = 0.0;
  for (std::size_t i = 0; i < target.numel(); ++i) {
    const double diff = target[i] - approx[i];
    s += diff * diff;
  }
  return std::sqrt(s);
}

}  // namespace

MatchResult match_weights(const Tensor& w, const MixtSpec& spec, const MatchConfig& cfg) {
  spec.validate();
  cfg.validate();
  if (w.rank() != 2 || w.dim(0) != spec.out_dim_raw || w.dim(1) != spec.in_dim_raw) {
    throw Error(Errc::DimensionMismatch, "weight matrix must be " + std::to_string(spec.out_dim_raw) + " x " +
                                             std::to_string(spec.in_dim_raw));
  }
  require_finite(w, "weight matrix");

  std::vector<std::size_t> order = cfg.branch_order;
  if (order.empty()) {
    order.resize(spec.n_t);
    std::iota(order.begin(), order.end(), 0);
  } else {
    std::vector<std::size_t> sorted = order;
    std::sort(sorted.begin(), sorted.end());
    for (std::size_t i = 0; i < sorted.size(); ++i) {
      if (sorted.size() != spec.n_t || sorted[i] != i) {
        throw Error(Errc::InvalidConfig, "branch_order must be a permutation of the branch indices");
      }
    }
  }

  Tensor target = w;
  if (spec.out_dim() != spec.out_dim_raw) target = pad_axis(target, 0, spec.out_dim());
  if (spec.in_dim() != spec.in_dim_raw) target = pad_axis(target, 1, spec.in_dim());

  MatchResult result{MixtOperator(spec), {}, 0};
  if (cfg.init_scheme == InitScheme::ZerosExceptFirst) {
    result.op.set_branch(order.front(), branch_update(target, order.front(), spec));
  } else {
    Rng rng(cfg.seed);
    const double scale = frobenius_norm(target) / std::sqrt(static_cast<double>(target.numel()));
    for (std::size_t k = 0; k < spec.n_t; ++k) {
      for (double& v : result.op.branch_data(k)) v = scale * rng.normal();
    }
  }
  result.residual_history.push_back(padded_residual(target, result.op));

  const double r0 = std::max(result.residual_history.front(), 1e-30);
  for (int sweep = 0; sweep < cfg.max_sweeps; ++sweep) {
    const MixtOperator previous = result.op;
    for (std::size_t k : order) result.op.set_branch(k, branch_update(others_residual(target, result.op, k), k, spec));
    const double res = padded_residual(target, result.op);
    // Exact updates cannot raise the residual; a rise is rounding at the
    // fixed point, so keep the previous iterate and stop.
    if (res > result.residual_history.back()) {
      result.op = previous;
      break;
    }
    result.residual_history.push_back(res);
    result.sweeps = sweep + 1;
    const auto n = result.residual_history.size();
    if ((result.residual_history[n - 2] - result.residual_history[n - 1]) / r0 < cfg.rel_tol) break;
  }
  return result;
}

ReconstructionError reconstruction_error(const Tensor& w, const MixtOperator& op) {
  const MixtSpec& spec = op.spec();
  if (w.rank() != 2 || w.dim(0) != spec.out_dim_raw || w.dim(1) != spec.in_dim_raw) {
    throw Error(Errc::DimensionMismatch, "weight matrix does not match operator dims");
  }
  const Tensor approx = expand_to_dense(op);
  double diff = 0.0;
  for (std::size_t i = 0; i < w.numel(); ++i) {
    const double e = w[i] - approx[i];
    diff += e * e;
  }
  const double wn = frobenius_norm(w);
  if (wn == 0.0) return {std::sqrt(diff), false};
  return {std::sqrt(diff) / wn, true};
}

}  // namespace mixt
