// SPDX-License-Identifier: Apache-2.0
#include "mixt/toy_model.hpp"

#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <string>

#include <nlohmann/json.hpp>

#include "mixt/error.hpp"
#include "mixt/random.hpp"

namespace mixt::toy {

void ToyModelConfig::validate() const {
  auto fail = [](const std::string& msg) { throw Error(Errc::InvalidConfig, msg); };
  if (num_blocks < 2) fail("num_blocks must be >= 2");
  if (hidden < 1 || num_heads < 1 || ffn_dim < 1 || vocab_size < 1 || max_seq_len < 1) {
    fail("all model dimensions must be >= 1");
  }
  if (hidden % num_heads != 0) fail("hidden must be divisible by num_heads");
  if (d < 2) fail("bond dimension d must be >= 2");
  if (ipow(d, ceil_log(hidden, d)) != hidden) fail("hidden must be a power of d");
}

void to_json(nlohmann::json& j, const ToyModelConfig& c) {
  j = nlohmann::json{{"num_blocks", c.num_blocks}, {"hidden", c.hidden},         {"num_heads", c.num_heads},
                     {"ffn_dim", c.ffn_dim},       {"vocab_size", c.vocab_size}, {"max_seq_len", c.max_seq_len},
                     {"d", c.d},                   {"seed", c.seed}};
}

void from_json(const nlohmann::json& j, ToyModelConfig& c) {
  c.num_blocks = j.value("num_blocks", c.num_blocks);
  c.hidden = j.value("hidden", c.hidden);
  c.num_heads = j.value("num_heads", c.num_heads);
  c.ffn_dim = j.value("ffn_dim", c.ffn_dim);
  c.vocab_size = j.value("vocab_size", c.vocab_size);
  c.max_seq_len = j.value("max_seq_len", c.max_seq_len);
  c.d = j.value("d", c.d);
  c.seed = j.value("seed", c.seed);
}

std::string_view to_string(MapKind k) noexcept {
  switch (k) {
    case MapKind::Q: return "q";
    case MapKind::K: return "k";
    case MapKind::V: return "v";
    case MapKind::O: return "o";
    case MapKind::Gate: return "gate";
    case MapKind::Up: return "up";
    case MapKind::Down: return "down";
  }
  return "?";
}

LinearMap::LinearMap(std::string name, Tensor weight) : name_(std::move(name)) { set_dense(weight); }

void LinearMap::set_dense(const Tensor& weight) {
  if (weight.rank() != 2) throw Error(Errc::DimensionMismatch, "dense weight must be a matrix");
  mixt_ = false;
  out_ = weight.dim(0);
  in_ = weight.dim(1);
  params_.clear();
  params_.push_back({name_, weight, {}});
}

void LinearMap::set_operator(const MixtOperator& op) {
  const MixtSpec& s = op.spec();
  if (!params_.empty() && (s.in_dim_raw != in_ || s.out_dim_raw != out_)) {
    throw Error(Errc::DimensionMismatch, "operator widths differ from the map it replaces");
  }
  mixt_ = true;
  in_ = s.in_dim_raw;
  out_ = s.out_dim_raw;
  spec_ = s;
  params_.clear();
  for (std::size_t k = 0; k < s.n_t; ++k) {
    params_.push_back({name_ + ".branch" + std::to_string(k), op.branch(k), {}});
  }
}

MixtOperator LinearMap::as_operator() const {
  if (!mixt_) throw Error(Errc::DimensionMismatch, "map " + name_ + " is dense");
  std::vector<Tensor> branches;
  for (const auto& p : params_) branches.push_back(p.value);
  return MixtOperator(spec_, std::move(branches));
}

Tensor LinearMap::dense_weight() const { return mixt_ ? expand_to_dense(as_operator()) : params_.front().value; }

ad::Var LinearMap::apply(ad::Tape& t, ad::Var x) {
  if (!mixt_) return ad::linear(t, x, t.param(params_.front()));
  std::vector<ad::Var> branches;
  branches.reserve(params_.size());
  for (auto& p : params_) branches.push_back(t.param(p));
  return ad::mixt_linear(t, x, branches, spec_);
}

std::uint64_t LinearMap::param_count() const {
  std::uint64_t n = 0;
  for (const auto& p : params_) n += p.value.numel();
  return n;
}

bool Block::compressed() const {
  for (const auto& m : maps) {
    if (m.is_mixt()) return true;
  }
  return false;
}

namespace {

Tensor random_matrix(Rng& rng, std::size_t rows, std::size_t cols, double stddev) {
  Tensor t = Tensor::matrix(rows, cols);
  for (double& v : t.data()) v = stddev * rng.normal();
  return t;
}

ad::Parameter ones(std::string name, std::size_t n) {
  return {std::move(name), Tensor(Shape{n}, std::vector<double>(n, 1.0)), {}};
}

}  // namespace

Model::Model(const ToyModelConfig& cfg) : cfg_(cfg) {
  cfg_.validate();
  Rng rng(cfg_.seed);
  const std::size_t h = cfg_.hidden, f = cfg_.ffn_dim;
  const double in_h = 1.0 / std::sqrt(static_cast<double>(h));
  const double in_f = 1.0 / std::sqrt(static_cast<double>(f));
  // Residual-branch outputs are shrunk with depth.
  const double resid = 1.0 / std::sqrt(2.0 * static_cast<double>(cfg_.num_blocks));

  tok_embed_ = {"tok_embed", random_matrix(rng, cfg_.vocab_size, h, 1.0), {}};
  pos_embed_ = {"pos_embed", random_matrix(rng, cfg_.max_seq_len, h, 1.0), {}};
  blocks_.resize(cfg_.num_blocks);
  for (std::size_t b = 0; b < cfg_.num_blocks; ++b) {
    Block& blk = blocks_[b];
    const std::string prefix = "block" + std::to_string(b) + ".";
    blk.attn_norm = ones(prefix + "attn_norm", h);
    blk.ffn_norm = ones(prefix + "ffn_norm", h);
    auto make = [&](MapKind k, std::size_t out, std::size_t in, double stddev) {
      blk.map(k) = LinearMap(prefix + std::string(to_string(k)), random_matrix(rng, out, in, stddev));
    };
    make(MapKind::Q, h, h, in_h);
    make(MapKind::K, h, h, in_h);
    make(MapKind::V, h, h, in_h);
    make(MapKind::O, h, h, in_h * resid);
    make(MapKind::Gate, f, h, in_h);
    make(MapKind::Up, f, h, in_h);
    make(MapKind::Down, h, f, in_f * resid);
  }
  final_norm_ = ones("final_norm", h);
  head_ = {"head", random_matrix(rng, cfg_.vocab_size, h, in_h), {}};
}

Model build_model(const ToyModelConfig& cfg) { return Model(cfg); }

ForwardOutput Model::forward(ad::Tape& t, const TokenBatch& tokens, bool all_positions) {
  if (tokens.seq == 0 || tokens.seq > cfg_.max_seq_len || tokens.ids.size() != tokens.batch * tokens.seq) {
    throw Error(Errc::DimensionMismatch, "token batch does not match [batch, seq] with seq <= max_seq_len");
  }
  std::vector<int> positions(tokens.ids.size());
  for (std::size_t i = 0; i < positions.size(); ++i) positions[i] = static_cast<int>(i % tokens.seq);
  std::vector<std::size_t> last_rows(tokens.batch);
  for (std::size_t b = 0; b < tokens.batch; ++b) last_rows[b] = b * tokens.seq + tokens.seq - 1;

  ad::Var x = ad::add(t, ad::embedding(t, t.param(tok_embed_), tokens.ids),
                      ad::embedding(t, t.param(pos_embed_), positions));
  ForwardOutput out;
  for (Block& blk : blocks_) {
    ad::Var h = ad::rms_norm(t, x, t.param(blk.attn_norm));
    ad::Var q = blk.map(MapKind::Q).apply(t, h);
    ad::Var k = blk.map(MapKind::K).apply(t, h);
    ad::Var v = blk.map(MapKind::V).apply(t, h);
    ad::Var a = ad::causal_attention(t, q, k, v, tokens.batch, tokens.seq, cfg_.num_heads);
    x = ad::add(t, x, blk.map(MapKind::O).apply(t, a));

    ad::Var h2 = ad::rms_norm(t, x, t.param(blk.ffn_norm));
    ad::Var gated = ad::swiglu(t, blk.map(MapKind::Gate).apply(t, h2), blk.map(MapKind::Up).apply(t, h2));
    x = ad::add(t, x, blk.map(MapKind::Down).apply(t, gated));
    out.hidden.push_back(ad::take_rows(t, x, last_rows));
  }
  ad::Var top = all_positions ? x : out.hidden.back();
  out.logits = ad::linear(t, ad::rms_norm(t, top, t.param(final_norm_)), t.param(head_));
  return out;
}

std::vector<ad::Parameter*> Model::parameters() {
  std::vector<ad::Parameter*> ps{&tok_embed_, &pos_embed_};
  for (Block& blk : blocks_) {
    ps.push_back(&blk.attn_norm);
    ps.push_back(&blk.ffn_norm);
    for (auto& m : blk.maps) {
      for (auto& p : m.params()) ps.push_back(&p);
    }
  }
  ps.push_back(&final_norm_);
  ps.push_back(&head_);
  return ps;
}

std::vector<const ad::Parameter*> Model::parameters() const {
  auto mut = const_cast<Model*>(this)->parameters();
  return {mut.begin(), mut.end()};
}

std::uint64_t Model::param_count() const {
  std::uint64_t n = 0;
  for (const auto* p : parameters()) n += p->value.numel();
  return n;
}

std::vector<unsigned char> Model::serialize_values() const {
  std::vector<unsigned char> bytes;
  for (const auto* p : parameters()) {
    const auto data = p->value.data();
    const auto* raw = reinterpret_cast<const unsigned char*>(data.data());
    bytes.insert(bytes.end(), raw, raw + data.size_bytes());
  }
  return bytes;
}

ReplaceResult replace_blocks(const Model& model, const CompressionPlan& plan, const MatchConfig& match_cfg) {
  const auto& cfg = model.config();
  if (plan.d != cfg.d) {
    throw Error(Errc::PlanInvalid, "plan bond dimension " + std::to_string(plan.d) + " differs from model d " +
                                       std::to_string(cfg.d));
  }
  const auto targets = plan.replaced_blocks(cfg.num_blocks);

  // Validate every map's spec before touching anything.
  std::array<MixtSpec, kMapsPerBlock> specs;
  for (std::size_t k = 0; k < kMapsPerBlock; ++k) {
    const LinearMap& m = model.blocks().front().maps[k];
    try {
      specs[k] = MixtSpec::for_dims(m.in_dim(), m.out_dim(), plan.n_t, plan.d);
    } catch (const Error& e) {
      throw Error(Errc::PlanInvalid, std::string(to_string(static_cast<MapKind>(k))) + ": " + e.message());
    }
  }

  ReplaceResult result{model, {}};
  for (std::size_t b : targets) {
    Block& blk = result.model.blocks()[b];
    for (std::size_t k = 0; k < kMapsPerBlock; ++k) {
      LinearMap& m = blk.maps[k];
      if (m.is_mixt()) continue;
      const Tensor w = m.dense_weight();
      MatchResult fit = match_weights(w, specs[k], match_cfg);
      const auto err = reconstruction_error(w, fit.op);
      m.set_operator(fit.op);
      result.matches.push_back({b, static_cast<MapKind>(k), err.value, fit.sweeps});
    }
  }
  return result;
}

void save_checkpoint(const std::filesystem::path& dir, const Model& model, const CompressionPlan& plan,
                     std::size_t steps) {
  std::filesystem::create_directories(dir);
  nlohmann::json j;
  j["format"] = "mixt-toy-checkpoint";
  j["version"] = 1;
  j["config"] = model.config();
  j["plan"] = plan;
  j["steps"] = steps;
  auto& maps = j["mixt_maps"] = nlohmann::json::array();
  for (std::size_t b = 0; b < model.blocks().size(); ++b) {
    for (std::size_t k = 0; k < kMapsPerBlock; ++k) {
      const LinearMap& m = model.blocks()[b].maps[k];
      if (m.is_mixt()) maps.push_back({{"block", b}, {"map", to_string(static_cast<MapKind>(k))}, {"spec", m.spec()}});
    }
  }
  auto& params = j["params"] = nlohmann::json::array();
  std::size_t i = 0;
  for (const auto* p : model.parameters()) {
    char file[32];
    std::snprintf(file, sizeof file, "param_%04zu.mixt", i++);
    save_tensor(dir / file, p->value);
    params.push_back({{"name", p->name}, {"file", file}});
  }
  std::ofstream os(dir / "checkpoint.json");
  if (!os) throw Error(Errc::FileNotFound, "cannot write checkpoint in " + dir.string());
  os << j.dump(2) << '\n';
}

Checkpoint load_checkpoint(const std::filesystem::path& dir) {
  std::ifstream is(dir / "checkpoint.json");
  if (!is) throw Error(Errc::FileNotFound, (dir / "checkpoint.json").string());
  try {
    const auto j = nlohmann::json::parse(is);
    Checkpoint ck{Model(j.at("config").get<ToyModelConfig>()), j.at("plan").get<CompressionPlan>(),
                  j.at("steps").get<std::size_t>()};
    for (const auto& entry : j.at("mixt_maps")) {
      const auto b = entry.at("block").get<std::size_t>();
      const auto name = entry.at("map").get<std::string>();
      if (b >= ck.model.blocks().size()) throw Error(Errc::ParseError, "checkpoint block index out of range");
      for (std::size_t k = 0; k < kMapsPerBlock; ++k) {
        if (to_string(static_cast<MapKind>(k)) == name) {
          ck.model.blocks()[b].maps[k].set_operator(MixtOperator(entry.at("spec").get<MixtSpec>()));
        }
      }
    }
    const auto params = ck.model.parameters();
    const auto& table = j.at("params");
    if (table.size() != params.size()) throw Error(Errc::ParseError, "checkpoint parameter count mismatch");
    for (std::size_t i = 0; i < params.size(); ++i) {
      if (table[i].at("name").get<std::string>() != params[i]->name) {
        throw Error(Errc::ParseError, "checkpoint parameter order mismatch at " + params[i]->name);
      }
      Tensor t = load_tensor(dir / table[i].at("file").get<std::string>());
      if (!(t.shape() == params[i]->value.shape())) {
        throw Error(Errc::ParseError, "checkpoint tensor shape mismatch for " + params[i]->name);
      }
      params[i]->value = std::move(t);
    }
    return ck;
  } catch (const nlohmann::json::exception& e) {
    throw Error(Errc::ParseError, dir.string() + ": " + e.what());
  }
}

Model densify(const Model& model) {
  Model out = model;
  for (Block& blk : out.blocks()) {
    for (auto& m : blk.maps) {
      if (m.is_mixt()) m.set_dense(m.dense_weight());
    }
  }
  return out;
}

}  // namespace mixt::toy
