// SPDX-License-Identifier: Apache-2.0
//
// Tensor-mixture replacement for a dense linear map.
//
// The input vector (zero-padded to d^n) is viewed as n bonds of dimension d.
// Branch k (0-based) applies a local tensor to the contiguous input-bond window
// [k, k + n - n_t] and writes output bonds [k, k + m - n_t]; the k leading and
// n_t - 1 - k trailing bonds pass through unchanged. Branch outputs are summed,
// scaled by 1/n_t, reshaped to d^m and truncated to the raw output width.
//
// As a matrix, the padded operator is
//   (1/n_t) * sum_k  I_{d^k} (x) M_k (x) I_{d^(n_t-1-k)}
// where M_k is branch k matricized to d^(m-n_t+1) x d^(n-n_t+1).
#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "mixt/tensor.hpp"

namespace mixt {

// Integer power with overflow check.
std::uint64_t ipow(std::uint64_t base, unsigned exp);
// Smallest e with base^e >= value (value >= 1).
unsigned ceil_log(std::uint64_t value, std::uint64_t base);

struct MixtSpec {
  std::size_t d = 2;
  std::size_t n = 1;
  std::size_t m = 1;
  std::size_t n_t = 1;
  std::size_t in_dim_raw = 2;
  std::size_t out_dim_raw = 2;
  // Multiply the branch sum by 1/n_t. Off only for ablation studies.
  bool average = true;

  // Minimal-padding spec for a raw in/out width.
  static MixtSpec for_dims(std::size_t in_dim_raw, std::size_t out_dim_raw, std::size_t n_t,
                           std::size_t d = 2);

  // Throws Errc::InvalidSpec when an invariant is violated.
  void validate() const;

  std::size_t in_dim() const { return static_cast<std::size_t>(ipow(d, static_cast<unsigned>(n))); }
  std::size_t out_dim() const { return static_cast<std::size_t>(ipow(d, static_cast<unsigned>(m))); }
  // Branch-local matricized dims.
  std::size_t branch_in() const { return static_cast<std::size_t>(ipow(d, static_cast<unsigned>(n - n_t + 1))); }
  std::size_t branch_out() const { return static_cast<std::size_t>(ipow(d, static_cast<unsigned>(m - n_t + 1))); }
  // Pass-through sizes around branch k.
  std::size_t prefix(std::size_t k) const { return static_cast<std::size_t>(ipow(d, static_cast<unsigned>(k))); }
  std::size_t suffix(std::size_t k) const {
    return static_cast<std::size_t>(ipow(d, static_cast<unsigned>(n_t - 1 - k)));
  }
  double scale() const { return average ? 1.0 / static_cast<double>(n_t) : 1.0; }
  // Tensor shape of one branch: m-n_t+1 output bonds then n-n_t+1 input bonds.
  Shape branch_shape() const;

  friend bool operator==(const MixtSpec&, const MixtSpec&) = default;
};

void to_json(nlohmann::json& j, const MixtSpec& s);
void from_json(const nlohmann::json& j, MixtSpec& s);

class MixtOperator {
 public:
  MixtOperator() = default;
  // Zero-initialized branches.
  explicit MixtOperator(MixtSpec spec);
  MixtOperator(MixtSpec spec, std::vector<Tensor> branches);

  const MixtSpec& spec() const noexcept { return spec_; }
  const std::vector<Tensor>& branches() const noexcept { return branches_; }
  const Tensor& branch(std::size_t k) const { return branches_.at(k); }
  // Replace branch k. Accepts either the bond-shaped tensor or its
  // branch_out x branch_in matricization; stored bond-shaped.
  void set_branch(std::size_t k, const Tensor& t);
  std::span<double> branch_data(std::size_t k) { return branches_.at(k).data(); }

  std::uint64_t param_count() const;

 private:
  MixtSpec spec_;
  std::vector<Tensor> branches_;
};

enum class FlopMode { Paper, Contraction };

std::uint64_t param_count(const MixtSpec& spec);
double remaining_ratio(const MixtSpec& spec);
// Multiply-add pairs per input vector.
std::uint64_t flop_count(const MixtSpec& spec, FlopMode mode);

// x: [batch, in_dim_raw] -> [batch, out_dim_raw].
Tensor forward(const MixtOperator& op, const Tensor& x);

struct MixtGradients {
  Tensor input;                  // [batch, in_dim_raw]
  std::vector<Tensor> branches;  // branch-shaped
};
// Gradients of sum(grad_out .* forward(op, x)) with respect to x and every branch.
MixtGradients backward(const MixtOperator& op, const Tensor& x, const Tensor& grad_out);

// out_dim_raw x in_dim_raw. Test and weight-matching oracle only; forward never
// materializes this matrix.
Tensor expand_to_dense(const MixtOperator& op);
// d^m x d^n (before slicing to raw dims).
Tensor expand_to_dense_padded(const MixtOperator& op);

// Adds scale * I_{prefix} (x) M (x) I_{suffix} into the padded dense matrix.
void add_kron_sandwich(Tensor& dense_padded, const Tensor& branch_matrix, std::size_t prefix,
                       std::size_t suffix, double scale);

// Manifest JSON + one tensor file per branch (branch_<k>.mixt) in `dir`.
void save_operator(const std::filesystem::path& dir, const MixtOperator& op,
                   const std::string& stem = "operator");
MixtOperator load_operator(const std::filesystem::path& manifest_path);

}  // namespace mixt
