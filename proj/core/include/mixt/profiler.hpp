// SPDX-License-Identifier: Apache-2.0
//
// Analytic parameter / FLOP / storage accounting for dense decoder models and
// their tensor-mixture-compressed counterparts. Every width is padded to the
// next power of d exactly as the operator pads it, and padded (stored)
// parameters are counted.
#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "mixt/mixt_operator.hpp"
#include "mixt/plan.hpp"

namespace mixt::profiler {

struct ArchConfig {
  std::string name = "custom";
  std::uint64_t num_layers = 0;
  std::uint64_t hidden = 0;
  std::uint64_t intermediate = 0;
  std::uint64_t vocab = 0;
  std::uint64_t heads = 0;
  std::uint64_t kv_heads = 0;
  bool tied_embeddings = false;
  std::uint64_t norm_params_per_layer = 0;
  // Learned absolute position table rows (0 for rotary/none).
  std::uint64_t max_position_embeddings = 0;

  void validate() const;
  std::uint64_t kv_dim() const { return hidden / heads * kv_heads; }
};

void to_json(nlohmann::json& j, const ArchConfig& a);
void from_json(const nlohmann::json& j, ArchConfig& a);

ArchConfig llama2_7b();

struct MapShape {
  std::string name;
  std::uint64_t in = 0;
  std::uint64_t out = 0;
};
// Q, K, V, O, Gate, Up, Down.
std::vector<MapShape> layer_maps(const ArchConfig& arch);

struct MapCensus {
  std::string name;
  std::uint64_t dense = 0;
  std::uint64_t mixt = 0;
  MixtSpec spec;
};

struct ParamCensus {
  std::uint64_t dense_total = 0;
  std::uint64_t compressed_total = 0;
  std::uint64_t embeddings = 0;  // token table(s) and output head
  std::uint64_t positions = 0;
  std::uint64_t norms_per_layer = 0;
  std::uint64_t final_norm = 0;
  std::uint64_t layer_dense = 0;       // one uncompressed layer
  std::uint64_t layer_compressed = 0;  // one replaced layer
  std::size_t replaced_layers = 0;
  std::vector<MapCensus> maps;

  double reduction_percent() const {
    return 100.0 * (1.0 - static_cast<double>(compressed_total) / static_cast<double>(dense_total));
  }
};

ParamCensus count_params(const ArchConfig& arch, const CompressionPlan& plan);

enum class Phase { Inference, Training };
std::string_view to_string(FlopMode m) noexcept;
FlopMode parse_flop_mode(std::string_view s);

struct FlopTotals {
  double dense = 0.0;
  double compressed = 0.0;
  double reduction_percent() const { return 100.0 * (1.0 - compressed / dense); }
};

// Linear maps: 2 FLOPs per multiply-add. Attention scores and values:
// 2 * seq^2 * hidden per layer, never compressed. Training = 3 x inference.
FlopTotals flops(const ArchConfig& arch, const CompressionPlan& plan, std::uint64_t seq_len, FlopMode mode,
                 Phase phase);
// Linear-map FLOPs of one layer per token.
double layer_linear_flops(const ArchConfig& arch, const CompressionPlan& plan, bool replaced, FlopMode mode);

enum class Precision { F32, BF16, Int8, Int4 };
std::string_view to_string(Precision p) noexcept;
Precision parse_precision(std::string_view s);
double bytes_per_param(Precision p);
double storage_bytes(std::uint64_t params, Precision p);

struct StorageRow {
  Precision precision;
  double dense_bytes = 0.0;
  double compressed_bytes = 0.0;
  double reduction_percent() const { return 100.0 * (1.0 - compressed_bytes / dense_bytes); }
};

struct ResourceReport {
  ArchConfig arch;
  CompressionPlan plan;
  std::uint64_t seq_len = 0;
  FlopMode flop_mode = FlopMode::Paper;
  ParamCensus params;
  FlopTotals inference;
  FlopTotals training;
  std::vector<StorageRow> storage;
};

ResourceReport profile(const ArchConfig& arch, const CompressionPlan& plan, std::uint64_t seq_len, FlopMode mode,
                       std::span<const Precision> precisions);

void to_json(nlohmann::json& j, const ResourceReport& r);
// Aligned text table in the style of a resource-profile table.
void render_table(std::ostream& os, const ResourceReport& r);

struct ScalingRow {
  std::uint64_t hidden = 0;
  std::size_t n_t = 0;
  std::uint64_t params_dense = 0;
  std::uint64_t params_mixt = 0;
};

// Square H x H maps: dense H^2 against the tensor-mixture count at padded width.
std::vector<ScalingRow> scaling_curve(std::span<const std::uint64_t> h_values, std::span<const std::size_t> n_t_values,
                                      std::size_t d = 2);
void write_scaling_csv(std::ostream& os, std::span<const ScalingRow> rows);

}  // namespace mixt::profiler
