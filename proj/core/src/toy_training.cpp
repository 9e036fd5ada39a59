// SPDX-License-Identifier: Apache-2.0
#include "mixt/toy_training.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#if defined(__GLIBC__)
#include <malloc.h>
#endif

#include <nlohmann/json.hpp>

#include "mixt/error.hpp"
#include "mixt/random.hpp"

namespace mixt::toy {

void to_json(nlohmann::json& j, const OptimizerConfig& c) {
  j = nlohmann::json{{"lr", c.lr},     {"beta1", c.beta1},           {"beta2", c.beta2},
                     {"eps", c.eps},   {"batch_size", c.batch_size}, {"seed", c.seed},
                     {"freeze_uncompressed", c.freeze_uncompressed}};
}

void from_json(const nlohmann::json& j, OptimizerConfig& c) {
  c.lr = j.value("lr", c.lr);
  c.beta1 = j.value("beta1", c.beta1);
  c.beta2 = j.value("beta2", c.beta2);
  c.eps = j.value("eps", c.eps);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.seed = j.value("seed", c.seed);
  c.freeze_uncompressed = j.value("freeze_uncompressed", c.freeze_uncompressed);
}

namespace {

// Per-step tape buffers are large and short-lived; keep them in the heap
// instead of mapping and unmapping pages every step.
void keep_buffers_resident() {
#if defined(__GLIBC__)
  static const bool once = [] {
    mallopt(M_MMAP_THRESHOLD, 256 << 20);
    mallopt(M_TRIM_THRESHOLD, 512 << 20);
    return true;
  }();
  (void)once;
#endif
}

}  // namespace

TokenBatch make_batch(std::span<const TaskItem> items, std::span<const std::size_t> indices) {
  TokenBatch tb;
  tb.batch = indices.size();
  tb.seq = items.empty() ? 0 : items[indices.front()].tokens.size();
  tb.ids.reserve(tb.batch * tb.seq);
  for (std::size_t i : indices) {
    const auto& tok = items[i].tokens;
    if (tok.size() != tb.seq) throw Error(Errc::DimensionMismatch, "items in one batch must share a length");
    tb.ids.insert(tb.ids.end(), tok.begin(), tok.end());
  }
  return tb;
}

ad::Var task_loss(ad::Tape& t, Model& model, std::span<const TaskItem> items, std::span<const std::size_t> indices) {
  const TokenBatch tb = make_batch(items, indices);
  const ForwardOutput out = model.forward(t, tb);
  std::vector<int> targets;
  targets.reserve(indices.size());
  for (std::size_t i : indices) targets.push_back(items[i].label);
  return ad::cross_entropy(t, out.logits, targets);
}

RecoveryResult recover(const Model& model, std::span<const TaskItem> dataset, std::size_t budget_steps,
                       const OptimizerConfig& opt) {
  if (budget_steps < 1) throw Error(Errc::InvalidConfig, "budget_steps must be >= 1");
  if (dataset.empty()) throw Error(Errc::InvalidConfig, "recovery dataset is empty");
  if (opt.batch_size < 1) throw Error(Errc::InvalidConfig, "batch_size must be >= 1");

  keep_buffers_resident();
  RecoveryResult result{model, {}};
  Model& m = result.model;

  std::vector<ad::Parameter*> trainable;
  if (opt.freeze_uncompressed) {
    for (Block& blk : m.blocks()) {
      if (!blk.compressed()) continue;
      trainable.push_back(&blk.attn_norm);
      trainable.push_back(&blk.ffn_norm);
      for (auto& map : blk.maps) {
        for (auto& p : map.params()) trainable.push_back(&p);
      }
    }
  } else {
    trainable = m.parameters();
  }

  std::vector<Tensor> moment1, moment2;
  for (auto* p : trainable) {
    moment1.emplace_back(p->value.shape());
    moment2.emplace_back(p->value.shape());
  }

  Rng rng(opt.seed);
  std::vector<std::size_t> idx(opt.batch_size);
  double bias1 = 1.0, bias2 = 1.0;
  result.loss_curve.reserve(budget_steps);
  for (std::size_t step = 0; step < budget_steps; ++step) {
    for (auto& i : idx) i = static_cast<std::size_t>(rng.below(dataset.size()));
    for (auto* p : m.parameters()) p->zero_grad();

    ad::Tape tape;
    const ad::Var loss = task_loss(tape, m, dataset, idx);
    const double lv = tape.value(loss)[0];
    if (!std::isfinite(lv)) {
      throw Error(Errc::NonFiniteLoss, "loss became " + std::to_string(lv) + " at recovery step " + std::to_string(step));
    }
    result.loss_curve.push_back(lv);
    tape.backward(loss);

    bias1 *= opt.beta1;
    bias2 *= opt.beta2;
    const double c1 = 1.0 / (1.0 - bias1);
    const double c2 = 1.0 / (1.0 - bias2);
    for (std::size_t pi = 0; pi < trainable.size(); ++pi) {
      ad::Parameter& p = *trainable[pi];
      double* w = p.value.ptr();
      const double* g = p.grad.ptr();
      double* m1 = moment1[pi].ptr();
      double* m2 = moment2[pi].ptr();
      for (std::size_t i = 0; i < p.value.numel(); ++i) {
        m1[i] = opt.beta1 * m1[i] + (1.0 - opt.beta1) * g[i];
        m2[i] = opt.beta2 * m2[i] + (1.0 - opt.beta2) * g[i] * g[i];
        w[i] -= opt.lr * (m1[i] * c1) / (std::sqrt(m2[i] * c2) + opt.eps);
      }
    }
  }
  return result;
}

void to_json(nlohmann::json& j, const EvalRecord& r) {
  j = nlohmann::json{{"p", r.p}, {"predicted", r.predicted}, {"gold", r.gold}};
  if (!r.hidden.empty()) j["hidden"] = r.hidden;
}

void from_json(const nlohmann::json& j, EvalRecord& r) {
  r.p = j.at("p").get<std::array<double, kNumLabels>>();
  r.predicted = j.at("predicted").get<int>();
  r.gold = j.at("gold").get<int>();
  r.hidden = j.value("hidden", std::vector<std::vector<double>>{});
}

EvalResult evaluate(const Model& model, std::span<const TaskItem> eval_set, std::size_t chunk) {
  if (eval_set.empty()) throw Error(Errc::InvalidConfig, "evaluation set is empty");
  keep_buffers_resident();
  // A non-recording tape only reads parameter values.
  Model& m = const_cast<Model&>(model);
  const std::size_t hidden = model.config().hidden;

  EvalResult result;
  result.records.reserve(eval_set.size());
  std::size_t correct = 0;
  for (std::size_t start = 0; start < eval_set.size(); start += chunk) {
    const std::size_t count = std::min(chunk, eval_set.size() - start);
    std::vector<std::size_t> idx(count);
    for (std::size_t i = 0; i < count; ++i) idx[i] = start + i;

    ad::Tape tape(false);
    const ForwardOutput out = m.forward(tape, make_batch(eval_set, idx));
    const Tensor& logits = tape.value(out.logits);
    for (std::size_t i = 0; i < count; ++i) {
      EvalRecord rec;
      double mx = logits(i, 0);
      for (int c = 1; c < kNumLabels; ++c) mx = std::max(mx, logits(i, static_cast<std::size_t>(c)));
      double z = 0.0;
      for (int c = 0; c < kNumLabels; ++c) {
        rec.p[c] = std::exp(logits(i, static_cast<std::size_t>(c)) - mx);
        z += rec.p[c];
      }
      for (double& v : rec.p) v /= z;
      rec.predicted = 0;
      for (int c = 1; c < kNumLabels; ++c) {
        if (logits(i, static_cast<std::size_t>(c)) > logits(i, static_cast<std::size_t>(rec.predicted))) rec.predicted = c;
      }
      rec.gold = eval_set[start + i].label;
      if (rec.predicted == rec.gold) ++correct;
      for (const ad::Var hv : out.hidden) {
        const Tensor& h = tape.value(hv);
        rec.hidden.emplace_back(h.ptr() + i * hidden, h.ptr() + (i + 1) * hidden);
      }
      result.records.push_back(std::move(rec));
    }
  }
  result.accuracy = static_cast<double>(correct) / static_cast<double>(eval_set.size());
  return result;
}

GradCheckResult grad_check(std::span<ad::Parameter* const> params, const LossFn& loss_fn, std::size_t probe_count,
                           double epsilon, std::uint64_t seed, std::span<ad::Parameter* const> must_cover) {
  if (!(epsilon > 0.0)) throw Error(Errc::InvalidConfig, "epsilon must be > 0");
  for (auto* p : params) p->zero_grad();
  {
    ad::Tape tape;
    const ad::Var loss = loss_fn(tape);
    tape.backward(loss);
  }

  std::size_t total = 0;
  for (auto* p : params) total += p->value.numel();
  if (total == 0) return {};

  Rng rng(seed);
  std::vector<std::pair<ad::Parameter*, std::size_t>> picks;
  for (auto* p : must_cover) picks.emplace_back(p, static_cast<std::size_t>(rng.below(p->value.numel())));
  while (picks.size() < probe_count) {
    std::size_t flat = static_cast<std::size_t>(rng.below(total));
    for (auto* p : params) {
      if (flat < p->value.numel()) {
        picks.emplace_back(p, flat);
        break;
      }
      flat -= p->value.numel();
    }
  }

  auto eval_loss = [&] {
    ad::Tape tape(false);
    return tape.value(loss_fn(tape))[0];
  };

  GradCheckResult result;
  for (auto [p, i] : picks) {
    GradProbe probe;
    probe.param = p;
    probe.index = i;
    probe.analytic = p->grad.numel() ? p->grad[i] : 0.0;
    const double orig = p->value[i];
    p->value[i] = orig + epsilon;
    const double up = eval_loss();
    p->value[i] = orig - epsilon;
    const double down = eval_loss();
    p->value[i] = orig;
    probe.numeric = (up - down) / (2.0 * epsilon);
    probe.error = std::abs(probe.analytic - probe.numeric) / std::max(1.0, std::abs(probe.numeric));
    result.max_error = std::max(result.max_error, probe.error);
    result.probes.push_back(probe);
  }
  return result;
}

GradCheckResult grad_check(Model& model, const LossFn& loss_fn, std::size_t probe_count, double epsilon,
                           std::uint64_t seed) {
  std::vector<ad::Parameter*> branches;
  for (Block& blk : model.blocks()) {
    for (auto& map : blk.maps) {
      if (!map.is_mixt()) continue;
      for (auto& p : map.params()) branches.push_back(&p);
    }
  }
  const auto params = model.parameters();
  return grad_check(params, loss_fn, probe_count, epsilon, seed, branches);
}

}  // namespace mixt::toy
