// SPDX-License-Identifier: Apache-2.0
#include "mixt/sweep.hpp"

#include <algorithm>
#include <charconv>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <set>

#include "mixt/error.hpp"

namespace mixt {

namespace {

// Independent stream seeds from one run seed.
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ull * (stream + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

enum Stream : std::uint64_t { kModel = 1, kTrainData, kEvalData, kBaselineOpt, kMatch, kRecoveryOpt };

std::string depth_tag(std::size_t n_b) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "nb_%02zu", n_b);
  return buf;
}

std::ofstream open_out(const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream os(path, std::ios::binary);
  if (!os) throw Error(Errc::FileNotFound, "cannot write " + path.string());
  return os;
}

void write_loss_csv(const std::filesystem::path& path, const std::vector<double>& curve) {
  auto os = open_out(path);
  os << "step,loss\n";
  for (std::size_t i = 0; i < curve.size(); ++i) os << i << ',' << format_double(curve[i]) << '\n';
}

nlohmann::json optional_json(const std::optional<double>& v) { return v ? nlohmann::json(*v) : nlohmann::json(); }

nlohmann::json line_json(const std::optional<metrics::LineFit>& f) {
  if (!f) return nullptr;
  return {{"slope", f->slope}, {"intercept", f->intercept}, {"residual", f->residual}};
}

}  // namespace

std::string format_double(double v) {
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

void write_json_file(const std::filesystem::path& path, const nlohmann::json& j) {
  auto os = open_out(path);
  os << j.dump(2) << '\n';
}

nlohmann::json read_json_file(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw Error(Errc::FileNotFound, path.string());
  try {
    return nlohmann::json::parse(is);
  } catch (const nlohmann::json::parse_error& e) {
    throw Error(Errc::ParseError, path.string() + ": " + e.what());
  }
}

void to_json(nlohmann::json& j, const AnalysisConfig& c) {
  j = nlohmann::json{{"output_layers", c.output_layers},
                     {"plateau_window", c.threshold.plateau_window},
                     {"drop_delta", c.threshold.drop_delta},
                     {"relative_delta", c.threshold.relative}};
}

void from_json(const nlohmann::json& j, AnalysisConfig& c) {
  c.output_layers = j.value("output_layers", c.output_layers);
  c.threshold.plateau_window = j.value("plateau_window", c.threshold.plateau_window);
  c.threshold.drop_delta = j.value("drop_delta", c.threshold.drop_delta);
  c.threshold.relative = j.value("relative_delta", c.threshold.relative);
}

toy::TaskConfig SweepConfig::task() const {
  return {.seq_len = model.max_seq_len, .vocab_size = model.vocab_size, .num_keys = num_keys};
}

std::vector<std::size_t> SweepConfig::depths() const {
  std::set<std::size_t> s(nb_list.begin(), nb_list.end());
  if (nb_list.empty()) {
    for (std::size_t n = 0; n <= model.num_blocks; ++n) s.insert(n);
  }
  s.insert(0);
  return {s.begin(), s.end()};
}

void SweepConfig::validate() const {
  model.validate();
  task().validate();
  auto fail = [](const std::string& msg) { throw Error(Errc::InvalidConfig, msg); };
  if (n_t < 1) fail("n_t must be >= 1");
  if (baseline_steps < 1) fail("baseline_steps must be >= 1");
  if (budget < 1) fail("budget must be >= 1");
  if (train_size < 1 || eval_size < 1) fail("train_size and eval_size must be >= 1");
  if (analysis.output_layers < 1) fail("output_layers must be >= 1");
  match.validate();
  for (std::size_t n : nb_list) {
    if (n > model.num_blocks) {
      throw Error(Errc::PlanInvalid, "N_B = " + std::to_string(n) + " exceeds " + std::to_string(model.num_blocks) +
                                         " blocks");
    }
  }
}

void to_json(nlohmann::json& j, const SweepConfig& c) {
  j = nlohmann::json{{"model", c.model},
                     {"num_keys", c.num_keys},
                     {"n_t", c.n_t},
                     {"direction", to_string(c.direction)},
                     {"nb_list", c.depths()},
                     {"baseline_steps", c.baseline_steps},
                     {"baseline_opt", c.baseline_opt},
                     {"budget", c.budget},
                     {"recovery_opt", c.recovery_opt},
                     {"train_size", c.train_size},
                     {"eval_size", c.eval_size},
                     {"seed", c.seed},
                     {"match", c.match},
                     {"analysis", c.analysis},
                     {"save_checkpoints", c.save_checkpoints},
                     {"write_hidden", c.write_hidden}};
}

void from_json(const nlohmann::json& j, SweepConfig& c) {
  if (j.contains("model")) c.model = j.at("model").get<toy::ToyModelConfig>();
  c.num_keys = j.value("num_keys", c.num_keys);
  c.n_t = j.value("n_t", c.n_t);
  if (j.contains("direction")) c.direction = parse_direction(j.at("direction").get<std::string>());
  c.nb_list = j.value("nb_list", c.nb_list);
  c.baseline_steps = j.value("baseline_steps", c.baseline_steps);
  if (j.contains("baseline_opt")) j.at("baseline_opt").get_to(c.baseline_opt);
  c.budget = j.value("budget", c.budget);
  if (j.contains("recovery_opt")) j.at("recovery_opt").get_to(c.recovery_opt);
  c.train_size = j.value("train_size", c.train_size);
  c.eval_size = j.value("eval_size", c.eval_size);
  c.seed = j.value("seed", c.seed);
  if (j.contains("match")) c.match = j.at("match").get<MatchConfig>();
  if (j.contains("analysis")) j.at("analysis").get_to(c.analysis);
  c.save_checkpoints = j.value("save_checkpoints", c.save_checkpoints);
  c.write_hidden = j.value("write_hidden", c.write_hidden);
}

SweepAnalysis analyze(std::span<const DepthEval> evals, const AnalysisConfig& cfg) {
  std::vector<const DepthEval*> sorted;
  for (const auto& e : evals) sorted.push_back(&e);
  std::sort(sorted.begin(), sorted.end(), [](auto* a, auto* b) { return a->n_b < b->n_b; });
  for (std::size_t i = 1; i < sorted.size(); ++i) {
    if (sorted[i]->n_b == sorted[i - 1]->n_b) throw Error(Errc::InvalidConfig, "duplicate depth in evaluations");
  }
  if (sorted.empty() || sorted.front()->n_b != 0) {
    throw Error(Errc::InvalidConfig, "evaluations must include the N_B = 0 reference");
  }

  bool geometry = true;
  for (const auto* e : sorted) {
    if (e->records.empty()) throw Error(Errc::InvalidConfig, "depth " + std::to_string(e->n_b) + " has no records");
    for (const auto& r : e->records) geometry = geometry && !r.hidden.empty();
  }

  SweepAnalysis a;
  metrics::PairMap reference;
  for (const auto* e : sorted) {
    DepthMetrics dm;
    dm.n_b = e->n_b;
    metrics::AnswerDistBatch batch;
    std::vector<std::vector<std::vector<double>>> hidden;
    for (const auto& r : e->records) {
      batch.p.push_back(r.p);
      batch.gold.push_back(r.gold);
      batch.predicted.push_back(r.predicted);
      if (geometry) hidden.push_back(r.hidden);
    }
    batch.validate();
    dm.accuracy = metrics::accuracy(batch);
    dm.oe = metrics::output_entropy(batch);
    dm.pe = metrics::prediction_entropy(batch);
    dm.tpe = metrics::transformed_pe(dm.pe);
    if (geometry) {
      dm.similarity = metrics::interlayer_similarity(hidden);
      if (dm.n_b == 0) reference = dm.similarity;
      dm.drift = metrics::geometry_drift(dm.similarity, reference);
      dm.drift_profile = metrics::drift_profile(dm.drift);
      if (a.output_pairs.empty()) {
        a.output_pairs = metrics::output_side_pairs(dm.similarity.layers(), cfg.output_layers);
      }
      dm.summary = metrics::drift_summaries(dm.drift, a.output_pairs);
    }
    a.depths.push_back(std::move(dm));
  }

  std::vector<metrics::Point> acc, drift, oe, tpe;
  for (const auto& dm : a.depths) {
    const double x = static_cast<double>(dm.n_b);
    acc.push_back({x, dm.accuracy});
    drift.push_back({x, dm.summary.global_mean});
    oe.push_back({dm.accuracy, dm.oe});
    tpe.push_back({dm.accuracy, dm.tpe});
  }
  a.threshold = metrics::transition_threshold(acc, cfg.threshold);

  // Fits that the data cannot support are reported as absent.
  auto guarded = [](auto fn) -> decltype(std::optional{fn()}) {
    try {
      return fn();
    } catch (const Error& e) {
      if (e.code() != Errc::DegenerateFit) throw;
      return std::nullopt;
    }
  };
  if (geometry && drift.size() >= 4) a.segmented = guarded([&] { return metrics::segmented_fit(drift); });
  a.trend_oe = guarded([&] { return metrics::trend_fit(oe); });
  a.trend_tpe = guarded([&] { return metrics::trend_fit(tpe); });
  return a;
}

nlohmann::json analysis_json(const SweepAnalysis& a, const AnalysisConfig& cfg) {
  nlohmann::json j;
  j["config"] = cfg;
  j["pe_clamp"] = metrics::kPeClamp;
  j["output_pairs"] = a.output_pairs;
  auto& depths = j["depths"] = nlohmann::json::array();
  for (const auto& dm : a.depths) {
    nlohmann::json d{{"n_b", dm.n_b}, {"accuracy", dm.accuracy}, {"OE", dm.oe}, {"PE", dm.pe}, {"tPE", dm.tpe}};
    if (dm.similarity.layers() > 0) {
      d["similarity"] = dm.similarity;
      d["drift"] = dm.drift;
      d["drift_profile"] = dm.drift_profile;
      d["output_mean"] = dm.summary.output_mean;
      d["global_mean"] = dm.summary.global_mean;
    }
    depths.push_back(std::move(d));
  }
  j["transition_threshold"] = optional_json(a.threshold);
  if (a.segmented) {
    const auto& s = *a.segmented;
    j["segmented_fit"] = {{"pre_slope", s.pre_slope},   {"pre_intercept", s.pre_intercept},
                          {"post_slope", s.post_slope}, {"post_intercept", s.post_intercept},
                          {"split_x", s.split_x},       {"breakpoint", s.indeterminate ? nlohmann::json() : nlohmann::json(s.breakpoint)},
                          {"indeterminate", s.indeterminate}, {"residual", s.residual}};
  } else {
    j["segmented_fit"] = nullptr;
  }
  j["trend_oe_vs_accuracy"] = line_json(a.trend_oe);
  j["trend_tpe_vs_accuracy"] = line_json(a.trend_tpe);
  return j;
}

void write_analysis_csvs(const std::filesystem::path& dir, const SweepAnalysis& a) {
  {
    auto os = open_out(dir / "sweep_metrics.csv");
    os << "N_B,acc,OE,PE,tPE\n";
    for (const auto& dm : a.depths) {
      os << dm.n_b << ',' << format_double(dm.accuracy) << ',' << format_double(dm.oe) << ',' << format_double(dm.pe)
         << ',' << format_double(dm.tpe) << '\n';
    }
  }
  {
    auto os = open_out(dir / "drift_landscape.csv");
    os << "N_B,l,dS_bar\n";
    for (const auto& dm : a.depths) {
      for (std::size_t l = 0; l < dm.drift_profile.size(); ++l) {
        os << dm.n_b << ',' << l << ',' << format_double(dm.drift_profile[l]) << '\n';
      }
    }
  }
  {
    auto os = open_out(dir / "drift_summaries.csv");
    os << "N_B,output_mean,global_mean\n";
    for (const auto& dm : a.depths) {
      if (dm.similarity.layers() == 0) continue;
      os << dm.n_b << ',' << format_double(dm.summary.output_mean) << ',' << format_double(dm.summary.global_mean)
         << '\n';
    }
  }
}

nlohmann::json SweepResult::report() const {
  nlohmann::json j;
  j["format"] = "mixt-sweep-report";
  j["version"] = 1;
  j["config"] = config;
  j["baseline"] = {{"accuracy", baseline_accuracy},
                   {"steps", baseline_loss.size()},
                   {"final_loss", baseline_loss.empty() ? nlohmann::json() : nlohmann::json(baseline_loss.back())}};
  auto& runs_j = j["runs"] = nlohmann::json::array();
  for (const auto& r : runs) {
    runs_j.push_back({{"n_b", r.n_b},
                      {"param_count", r.param_count},
                      {"mean_match_residual", r.mean_match_residual},
                      {"final_loss", r.loss_curve.empty() ? nlohmann::json() : nlohmann::json(r.loss_curve.back())}});
  }
  j["analysis"] = analysis_json(analysis, config.analysis);
  return j;
}

SweepResult run_sweep(const SweepConfig& cfg, const ProgressFn& progress) {
  cfg.validate();
  auto say = [&](const std::string& msg) {
    if (progress) progress(msg);
  };
  auto step = [](const std::string& ctx, auto fn) {
    try {
      return fn();
    } catch (const Error& e) {
      throw Error(e.code(), ctx + ": " + e.message());
    }
  };

  SweepResult result;
  result.config = cfg;
  const toy::TaskConfig task = cfg.task();
  const auto train = toy::make_task(derive_seed(cfg.seed, kTrainData), cfg.train_size, task);
  const auto eval = toy::make_task(derive_seed(cfg.seed, kEvalData), cfg.eval_size, task);

  toy::ToyModelConfig mcfg = cfg.model;
  mcfg.seed = derive_seed(cfg.seed, kModel);
  toy::OptimizerConfig base_opt = cfg.baseline_opt;
  base_opt.seed = derive_seed(cfg.seed, kBaselineOpt);
  base_opt.freeze_uncompressed = false;

  say("training baseline for " + std::to_string(cfg.baseline_steps) + " steps");
  auto base = step("baseline training",
                   [&] { return toy::recover(toy::Model(mcfg), train, cfg.baseline_steps, base_opt); });
  result.baseline_loss = std::move(base.loss_curve);
  result.baseline_accuracy = step("baseline evaluation", [&] { return toy::evaluate(base.model, eval).accuracy; });
  say("baseline accuracy " + format_double(result.baseline_accuracy));

  MatchConfig match = cfg.match;
  match.seed = derive_seed(cfg.seed, kMatch);
  toy::OptimizerConfig rec_opt = cfg.recovery_opt;
  // Every depth replays the same batch sequence.
  rec_opt.seed = derive_seed(cfg.seed, kRecoveryOpt);

  for (std::size_t n_b : cfg.depths()) {
    const std::string ctx = "N_B = " + std::to_string(n_b);
    const CompressionPlan plan{.n_b = n_b, .direction = cfg.direction, .n_t = cfg.n_t, .d = cfg.model.d};
    auto replaced = step(ctx + " replacement", [&] { return toy::replace_blocks(base.model, plan, match); });

    DepthRun run;
    run.n_b = n_b;
    run.param_count = replaced.model.param_count();
    if (!replaced.matches.empty()) {
      double s = 0.0;
      for (const auto& m : replaced.matches) s += m.relative_residual;
      run.mean_match_residual = s / static_cast<double>(replaced.matches.size());
    }
    auto rec = step(ctx + " recovery", [&] { return toy::recover(replaced.model, train, cfg.budget, rec_opt); });
    run.loss_curve = std::move(rec.loss_curve);
    auto ev = step(ctx + " evaluation", [&] { return toy::evaluate(rec.model, eval); });
    say(ctx + ": accuracy " + format_double(ev.accuracy) + ", final loss " + format_double(run.loss_curve.back()));

    result.evals.push_back({n_b, std::move(ev.records)});
    result.runs.push_back(std::move(run));
    if (cfg.save_checkpoints) result.checkpoints.push_back(std::move(rec.model));
  }
  result.analysis = step("analysis", [&] { return analyze(result.evals, cfg.analysis); });
  return result;
}

void write_sweep(const std::filesystem::path& dir, const SweepResult& result) {
  const SweepConfig& cfg = result.config;
  std::filesystem::create_directories(dir);
  write_json_file(dir / "sweep_report.json", result.report());
  write_json_file(dir / "analysis.json", analysis_json(result.analysis, cfg.analysis));
  write_analysis_csvs(dir, result.analysis);
  write_loss_csv(dir / "losses" / "baseline.csv", result.baseline_loss);
  for (const auto& r : result.runs) write_loss_csv(dir / "losses" / (depth_tag(r.n_b) + ".csv"), r.loss_curve);
  for (const auto& e : result.evals) {
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& rec : e.records) {
      toy::EvalRecord copy = rec;
      if (!cfg.write_hidden) copy.hidden.clear();
      arr.push_back(copy);
    }
    write_json_file(dir / "evals" / (depth_tag(e.n_b) + ".json"), {{"n_b", e.n_b}, {"records", arr}});
  }
  for (std::size_t i = 0; i < result.checkpoints.size() && i < result.runs.size(); ++i) {
    const std::size_t n_b = result.runs[i].n_b;
    const CompressionPlan plan{.n_b = n_b, .direction = cfg.direction, .n_t = cfg.n_t, .d = cfg.model.d};
    toy::save_checkpoint(dir / "checkpoints" / depth_tag(n_b), result.checkpoints[i], plan,
                         cfg.baseline_steps + cfg.budget);
  }
}

}  // namespace mixt
