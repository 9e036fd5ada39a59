// SPDX-License-Identifier: Apache-2.0
#include "mixt/profiler.hpp"

#include <cstdio>
#include <ostream>
#include <string>

#include <nlohmann/json.hpp>

#include "mixt/error.hpp"

namespace mixt::profiler {

void ArchConfig::validate() const {
  if (num_layers == 0 || hidden == 0 || intermediate == 0 || vocab == 0 || heads == 0 || kv_heads == 0) {
    throw Error(Errc::InvalidConfig, "architecture dimensions must be positive");
  }
  if (heads % kv_heads != 0) throw Error(Errc::InvalidConfig, "kv_heads must divide heads");
  if (hidden % heads != 0) throw Error(Errc::InvalidConfig, "heads must divide hidden");
}

void to_json(nlohmann::json& j, const ArchConfig& a) {
  j = nlohmann::json{{"name", a.name},
                     {"num_layers", a.num_layers},
                     {"hidden", a.hidden},
                     {"intermediate", a.intermediate},
                     {"vocab", a.vocab},
                     {"heads", a.heads},
                     {"kv_heads", a.kv_heads},
                     {"tied_embeddings", a.tied_embeddings},
                     {"norm_params_per_layer", a.norm_params_per_layer},
                     {"max_position_embeddings", a.max_position_embeddings}};
}

void from_json(const nlohmann::json& j, ArchConfig& a) {
  a.name = j.value("name", std::string("custom"));
  a.num_layers = j.at("num_layers").get<std::uint64_t>();
  a.hidden = j.at("hidden").get<std::uint64_t>();
  a.intermediate = j.at("intermediate").get<std::uint64_t>();
  a.vocab = j.at("vocab").get<std::uint64_t>();
  a.heads = j.at("heads").get<std::uint64_t>();
  a.kv_heads = j.value("kv_heads", a.heads);
  a.tied_embeddings = j.value("tied_embeddings", false);
  a.norm_params_per_layer = j.value("norm_params_per_layer", 2 * a.hidden);
  a.max_position_embeddings = j.value("max_position_embeddings", std::uint64_t{0});
}

ArchConfig llama2_7b() {
  ArchConfig a;
  a.name = "llama2-7b";
  a.num_layers = 32;
  a.hidden = 4096;
  a.intermediate = 11008;
  a.vocab = 32000;
  a.heads = 32;
  a.kv_heads = 32;
  a.tied_embeddings = false;
  a.norm_params_per_layer = 2 * 4096;
  return a;
}

std::vector<MapShape> layer_maps(const ArchConfig& arch) {
  const auto h = arch.hidden, kv = arch.kv_dim(), f = arch.intermediate;
  return {{"q", h, h}, {"k", h, kv}, {"v", h, kv}, {"o", h, h}, {"gate", h, f}, {"up", h, f}, {"down", f, h}};
}

ParamCensus count_params(const ArchConfig& arch, const CompressionPlan& plan) {
  arch.validate();
  ParamCensus c;
  c.replaced_layers = plan.replaced_blocks(static_cast<std::size_t>(arch.num_layers)).size();

  for (const auto& m : layer_maps(arch)) {
    MapCensus mc;
    mc.name = m.name;
    mc.dense = m.in * m.out;
    try {
      mc.spec = MixtSpec::for_dims(m.in, m.out, plan.n_t, plan.d);
    } catch (const Error& e) {
      throw Error(Errc::PlanInvalid, m.name + ": " + e.message());
    }
    mc.mixt = param_count(mc.spec);
    c.layer_dense += mc.dense;
    c.layer_compressed += mc.mixt;
    c.maps.push_back(mc);
  }
  c.norms_per_layer = arch.norm_params_per_layer;
  c.layer_dense += c.norms_per_layer;
  c.layer_compressed += c.norms_per_layer;
  c.embeddings = arch.vocab * arch.hidden * (arch.tied_embeddings ? 1 : 2);
  c.positions = arch.max_position_embeddings * arch.hidden;
  c.final_norm = arch.hidden;

  const std::uint64_t shared = c.embeddings + c.positions + c.final_norm;
  c.dense_total = shared + arch.num_layers * c.layer_dense;
  c.compressed_total = shared + (arch.num_layers - c.replaced_layers) * c.layer_dense +
                       c.replaced_layers * c.layer_compressed;
  return c;
}

std::string_view to_string(FlopMode m) noexcept { return m == FlopMode::Paper ? "paper" : "contraction"; }

FlopMode parse_flop_mode(std::string_view s) {
  if (s == "paper") return FlopMode::Paper;
  if (s == "contraction") return FlopMode::Contraction;
  throw Error(Errc::ParseError, "unknown flop mode '" + std::string(s) + "'");
}

double layer_linear_flops(const ArchConfig& arch, const CompressionPlan& plan, bool replaced, FlopMode mode) {
  double total = 0.0;
  for (const auto& m : layer_maps(arch)) {
    if (!replaced) {
      total += 2.0 * static_cast<double>(m.in * m.out);
    } else {
      const auto spec = MixtSpec::for_dims(m.in, m.out, plan.n_t, plan.d);
      total += 2.0 * static_cast<double>(flop_count(spec, mode));
    }
  }
  return total;
}

FlopTotals flops(const ArchConfig& arch, const CompressionPlan& plan, std::uint64_t seq_len, FlopMode mode,
                 Phase phase) {
  arch.validate();
  if (seq_len < 1) throw Error(Errc::InvalidConfig, "seq_len must be >= 1");
  const auto replaced = plan.replaced_blocks(static_cast<std::size_t>(arch.num_layers)).size();
  const double tokens = static_cast<double>(seq_len);
  const double layers = static_cast<double>(arch.num_layers);
  const double head = 2.0 * static_cast<double>(arch.vocab * arch.hidden);
  const double attention = 2.0 * tokens * tokens * static_cast<double>(arch.hidden);
  const double dense_layer = layer_linear_flops(arch, plan, false, mode);
  const double mixt_layer = layer_linear_flops(arch, plan, true, mode);

  FlopTotals t;
  t.dense = tokens * (layers * dense_layer + head) + layers * attention;
  t.compressed = tokens * ((layers - static_cast<double>(replaced)) * dense_layer +
                           static_cast<double>(replaced) * mixt_layer + head) +
                 layers * attention;
  if (phase == Phase::Training) {
    t.dense *= 3.0;
    t.compressed *= 3.0;
  }
  return t;
}

std::string_view to_string(Precision p) noexcept {
  switch (p) {
    case Precision::F32: return "f32";
    case Precision::BF16: return "bf16";
    case Precision::Int8: return "int8";
    case Precision::Int4: return "int4";
  }
  return "?";
}

Precision parse_precision(std::string_view s) {
  if (s == "f32") return Precision::F32;
  if (s == "bf16" || s == "bfloat16") return Precision::BF16;
  if (s == "int8") return Precision::Int8;
  if (s == "int4") return Precision::Int4;
  throw Error(Errc::ParseError, "unknown precision '" + std::string(s) + "'");
}

double bytes_per_param(Precision p) {
  switch (p) {
    case Precision::F32: return 4.0;
    case Precision::BF16: return 2.0;
    case Precision::Int8: return 1.0;
    case Precision::Int4: return 0.5;
  }
  return 0.0;
}

double storage_bytes(std::uint64_t params, Precision p) { return static_cast<double>(params) * bytes_per_param(p); }

ResourceReport profile(const ArchConfig& arch, const CompressionPlan& plan, std::uint64_t seq_len, FlopMode mode,
                       std::span<const Precision> precisions) {
  ResourceReport r;
  r.arch = arch;
  r.plan = plan;
  r.seq_len = seq_len;
  r.flop_mode = mode;
  r.params = count_params(arch, plan);
  r.inference = flops(arch, plan, seq_len, mode, Phase::Inference);
  r.training = flops(arch, plan, seq_len, mode, Phase::Training);
  for (Precision p : precisions) {
    r.storage.push_back({p, storage_bytes(r.params.dense_total, p), storage_bytes(r.params.compressed_total, p)});
  }
  return r;
}

void to_json(nlohmann::json& j, const ResourceReport& r) {
  nlohmann::json maps = nlohmann::json::array();
  for (const auto& m : r.params.maps) {
    maps.push_back({{"name", m.name}, {"dense", m.dense}, {"mixt", m.mixt}, {"spec", m.spec}});
  }
  nlohmann::json storage = nlohmann::json::array();
  for (const auto& s : r.storage) {
    storage.push_back({{"precision", to_string(s.precision)},
                       {"bytes_per_param", bytes_per_param(s.precision)},
                       {"dense_bytes", s.dense_bytes},
                       {"compressed_bytes", s.compressed_bytes},
                       {"dense_gb", s.dense_bytes / 1e9},
                       {"compressed_gb", s.compressed_bytes / 1e9},
                       {"dense_gib", s.dense_bytes / 1073741824.0},
                       {"compressed_gib", s.compressed_bytes / 1073741824.0},
                       {"reduction_percent", s.reduction_percent()}});
  }
  auto flop_json = [](const FlopTotals& t) {
    return nlohmann::json{{"dense", t.dense}, {"compressed", t.compressed}, {"reduction_percent", t.reduction_percent()}};
  };
  j = nlohmann::json{
      {"arch", r.arch},
      {"plan", r.plan},
      {"seq_len", r.seq_len},
      {"flop_mode", to_string(r.flop_mode)},
      {"training_convention", "training = 3 x inference"},
      {"parameters",
       {{"dense", r.params.dense_total},
        {"compressed", r.params.compressed_total},
        {"reduction_percent", r.params.reduction_percent()},
        {"replaced_layers", r.params.replaced_layers},
        {"embeddings", r.params.embeddings},
        {"positions", r.params.positions},
        {"final_norm", r.params.final_norm},
        {"norms_per_layer", r.params.norms_per_layer},
        {"layer_dense", r.params.layer_dense},
        {"layer_compressed", r.params.layer_compressed},
        {"maps", maps}}},
      {"inference_flops", flop_json(r.inference)},
      {"training_flops", flop_json(r.training)},
      {"storage", storage}};
}

void render_table(std::ostream& os, const ResourceReport& r) {
  char line[160];
  auto row = [&](const char* label, double dense, double comp, double red) {
    std::snprintf(line, sizeof line, "%-24s %14.2f %14.2f %9.1f%%\n", label, dense, comp, red);
    os << line;
  };
  std::snprintf(line, sizeof line, "%-24s %14s %14s %10s\n", "Metric", r.arch.name.c_str(), "MixT", "reduction");
  os << line;
  os << std::string(65, '-') << '\n';
  row("Parameters (B)", static_cast<double>(r.params.dense_total) / 1e9,
      static_cast<double>(r.params.compressed_total) / 1e9, r.params.reduction_percent());
  row("Inference (GFLOPs)", r.inference.dense / 1e9, r.inference.compressed / 1e9, r.inference.reduction_percent());
  row("Training (TFLOPs)", r.training.dense / 1e12, r.training.compressed / 1e12, r.training.reduction_percent());
  for (const auto& s : r.storage) {
    const std::string label = "Storage " + std::string(to_string(s.precision)) + " (GB)";
    row(label.c_str(), s.dense_bytes / 1e9, s.compressed_bytes / 1e9, s.reduction_percent());
  }
  os << std::string(65, '-') << '\n';
  std::snprintf(line, sizeof line, "plan: N_B=%zu N_T=%zu d=%zu %s; seq_len=%llu; flop mode %s\n", r.plan.n_b,
                r.plan.n_t, r.plan.d, std::string(to_string(r.plan.direction)).c_str(),
                static_cast<unsigned long long>(r.seq_len), std::string(to_string(r.flop_mode)).c_str());
  os << line;
}

std::vector<ScalingRow> scaling_curve(std::span<const std::uint64_t> h_values, std::span<const std::size_t> n_t_values,
                                      std::size_t d) {
  std::vector<ScalingRow> rows;
  for (auto h : h_values) {
    for (auto nt : n_t_values) {
      const auto spec = MixtSpec::for_dims(h, h, nt, d);
      rows.push_back({h, nt, h * h, param_count(spec)});
    }
  }
  return rows;
}

void write_scaling_csv(std::ostream& os, std::span<const ScalingRow> rows) {
  os << "H,N_T,params_dense,params_mixt\n";
  for (const auto& r : rows) os << r.hidden << ',' << r.n_t << ',' << r.params_dense << ',' << r.params_mixt << '\n';
}

}  // namespace mixt::profiler
