// SPDX-License-Identifier: Apache-2.0
//
// Small pre-norm decoder: learned token and position embeddings, L blocks of
// causal multi-head attention (Q, K, V, O) and a gated feed-forward
// (Gate, Up, Down), RMS normalization, untied output head. Any block's seven
// linear maps can be swapped for tensor-mixture operators.
#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string_view>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "mixt/autodiff.hpp"
#include "mixt/mixt_operator.hpp"
#include "mixt/plan.hpp"
#include "mixt/weight_matching.hpp"

namespace mixt::toy {

struct ToyModelConfig {
  std::size_t num_blocks = 6;
  std::size_t hidden = 64;
  std::size_t num_heads = 4;
  std::size_t ffn_dim = 96;
  std::size_t vocab_size = 16;
  std::size_t max_seq_len = 8;
  std::size_t d = 2;
  std::uint64_t seed = 1;

  void validate() const;
};

void to_json(nlohmann::json& j, const ToyModelConfig& c);
void from_json(const nlohmann::json& j, ToyModelConfig& c);

enum class MapKind : std::size_t { Q, K, V, O, Gate, Up, Down };
inline constexpr std::size_t kMapsPerBlock = 7;
std::string_view to_string(MapKind k) noexcept;

// A dense matrix [out, in] or a tensor-mixture operator over the same widths.
class LinearMap {
 public:
  LinearMap() = default;
  LinearMap(std::string name, Tensor weight);

  bool is_mixt() const noexcept { return mixt_; }
  std::size_t in_dim() const noexcept { return in_; }
  std::size_t out_dim() const noexcept { return out_; }
  const MixtSpec& spec() const noexcept { return spec_; }

  // Dense: one [out, in] parameter. MixT: one parameter per branch.
  std::vector<ad::Parameter>& params() noexcept { return params_; }
  const std::vector<ad::Parameter>& params() const noexcept { return params_; }

  // Current map as a dense out x in matrix.
  Tensor dense_weight() const;
  MixtOperator as_operator() const;

  void set_operator(const MixtOperator& op);
  void set_dense(const Tensor& weight);

  ad::Var apply(ad::Tape& t, ad::Var x);
  std::uint64_t param_count() const;

 private:
  std::string name_;
  bool mixt_ = false;
  std::size_t in_ = 0;
  std::size_t out_ = 0;
  MixtSpec spec_;
  std::vector<ad::Parameter> params_;
};

struct Block {
  ad::Parameter attn_norm;
  ad::Parameter ffn_norm;
  std::array<LinearMap, kMapsPerBlock> maps;

  LinearMap& map(MapKind k) { return maps[static_cast<std::size_t>(k)]; }
  const LinearMap& map(MapKind k) const { return maps[static_cast<std::size_t>(k)]; }
  bool compressed() const;
};

// Token ids of `batch` sequences, each exactly `seq` long, concatenated.
struct TokenBatch {
  std::vector<int> ids;
  std::size_t batch = 0;
  std::size_t seq = 0;
};

struct ForwardOutput {
  ad::Var logits;               // [batch*seq, vocab] or [batch, vocab]
  std::vector<ad::Var> hidden;  // per block: residual stream at the last position, [batch, hidden]
};

class Model {
 public:
  Model() = default;
  explicit Model(const ToyModelConfig& cfg);

  const ToyModelConfig& config() const noexcept { return cfg_; }
  std::vector<Block>& blocks() noexcept { return blocks_; }
  const std::vector<Block>& blocks() const noexcept { return blocks_; }
  ad::Parameter& head() noexcept { return head_; }
  const ad::Parameter& head() const noexcept { return head_; }

  // all_positions = false restricts the head to each sequence's last position.
  ForwardOutput forward(ad::Tape& t, const TokenBatch& tokens, bool all_positions = false);

  std::vector<ad::Parameter*> parameters();
  std::vector<const ad::Parameter*> parameters() const;
  std::uint64_t param_count() const;

  // Concatenated raw bytes of every parameter value, in enumeration order.
  std::vector<unsigned char> serialize_values() const;

 private:
  ToyModelConfig cfg_;
  ad::Parameter tok_embed_;
  ad::Parameter pos_embed_;
  std::vector<Block> blocks_;
  ad::Parameter final_norm_;
  ad::Parameter head_;
};

Model build_model(const ToyModelConfig& cfg);

struct MapMatchReport {
  std::size_t block = 0;
  MapKind kind = MapKind::Q;
  double relative_residual = 0.0;
  int sweeps = 0;
};

struct ReplaceResult {
  Model model;
  std::vector<MapMatchReport> matches;
};

// Replaces every linear map of the planned blocks by a tensor-mixture
// operator fitted to the current dense weight. Already-replaced maps are kept.
ReplaceResult replace_blocks(const Model& model, const CompressionPlan& plan, const MatchConfig& match_cfg = {});

// Checkpoint directory: checkpoint.json (config, plan, step count, parameter
// table and per-map operator specs) plus one tensor file per parameter.
void save_checkpoint(const std::filesystem::path& dir, const Model& model, const CompressionPlan& plan,
                     std::size_t steps);
struct Checkpoint {
  Model model;
  CompressionPlan plan;
  std::size_t steps = 0;
};
Checkpoint load_checkpoint(const std::filesystem::path& dir);

// Same model with every tensor-mixture map turned back into its dense expansion.
Model densify(const Model& model);

}  // namespace mixt::toy
