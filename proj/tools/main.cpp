// SPDX-License-Identifier: Apache-2.0
//
// mixt: operator inspection, weight matching, gradient checks, compression
// sweeps, resource profiling and metric re-analysis. Every command writes
// manifest.json next to its outputs; passing that manifest back through
// --config reruns the command with the same resolved configuration.
#include <chrono>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "mixt/error.hpp"
#include "mixt/mixt_operator.hpp"
#include "mixt/profiler.hpp"
#include "mixt/sweep.hpp"
#include "mixt/tensor.hpp"
#include "mixt/toy_model.hpp"
#include "mixt/toy_training.hpp"
#include "mixt/weight_matching.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitValidation = 2;
constexpr int kExitNumerical = 3;

std::string utc_timestamp() {
  const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

// A plain config file, or a manifest written by an earlier run of `command`.
json load_config(const std::string& path, const std::string& command) {
  json j = mixt::read_json_file(path);
  if (j.is_object() && j.contains("resolved_config")) {
    if (j.value("command", std::string{}) != command) {
      throw mixt::Error(mixt::Errc::InvalidConfig,
                        "manifest " + path + " belongs to command '" + j.value("command", std::string{}) + "'");
    }
    return j.at("resolved_config");
  }
  return j;
}

void write_manifest(const fs::path& out, const std::string& command, const json& resolved) {
  mixt::write_json_file(out / "manifest.json", json{{"command", command},
                                                    {"version", MIXT_VERSION},
                                                    {"timestamp", utc_timestamp()},
                                                    {"resolved_config", resolved}});
}

// Wraps nlohmann type errors so they surface as parse errors.
template <class T>
T parse_as(const json& j, const std::string& what) {
  try {
    return j.get<T>();
  } catch (const json::exception& e) {
    throw mixt::Error(mixt::Errc::ParseError, what + ": " + e.what());
  }
}

struct CommonOpts {
  std::string config;
  std::string out;
};

void add_common(CLI::App* cmd, CommonOpts& o, const std::string& default_out) {
  o.out = default_out;
  cmd->add_option("--config", o.config, "JSON config file or a previous run's manifest.json");
  cmd->add_option("--out", o.out, "Output directory")->capture_default_str();
}

// ---------------------------------------------------------------- sweep

struct SweepOpts {
  CommonOpts common;
  std::uint64_t seed = 0;
  std::vector<std::size_t> nb_list;
  std::size_t nt = 0, d = 0, budget = 0, baseline_steps = 0;
  std::string direction;
  bool checkpoints = false;
  bool no_hidden = false;
  bool quiet = false;
};

int run_sweep_cmd(const SweepOpts& o, CLI::App* cmd) {
  mixt::SweepConfig cfg;
  if (!o.common.config.empty()) cfg = parse_as<mixt::SweepConfig>(load_config(o.common.config, "sweep"), o.common.config);
  if (cmd->count("--seed")) cfg.seed = o.seed;
  if (cmd->count("--nb-list")) cfg.nb_list = o.nb_list;
  if (cmd->count("--nt")) cfg.n_t = o.nt;
  if (cmd->count("--d")) cfg.model.d = o.d;
  if (cmd->count("--direction")) cfg.direction = mixt::parse_direction(o.direction);
  if (cmd->count("--budget")) cfg.budget = o.budget;
  if (cmd->count("--baseline-steps")) cfg.baseline_steps = o.baseline_steps;
  if (o.checkpoints) cfg.save_checkpoints = true;
  if (o.no_hidden) cfg.write_hidden = false;
  cfg.validate();

  const fs::path out = o.common.out;
  fs::create_directories(out);
  write_manifest(out, "sweep", cfg);
  const auto result = mixt::run_sweep(cfg, [&](const std::string& msg) {
    if (!o.quiet) std::cerr << "[sweep] " << msg << '\n';
  });
  mixt::write_sweep(out, result);

  std::printf("%-5s %-10s %-8s %-8s %-8s %-8s\n", "N_B", "params", "acc", "OE", "PE", "dS_out");
  for (std::size_t i = 0; i < result.analysis.depths.size(); ++i) {
    const auto& dm = result.analysis.depths[i];
    std::printf("%-5zu %-10llu %-8.4f %-8.4f %-8.4f %-8.4f\n", dm.n_b,
                static_cast<unsigned long long>(result.runs[i].param_count), dm.accuracy, dm.oe, dm.pe,
                dm.summary.output_mean);
  }
  if (result.analysis.threshold) std::printf("transition threshold: N_B = %g\n", *result.analysis.threshold);
  else std::printf("transition threshold: none\n");
  std::printf("wrote %s\n", (out / "sweep_report.json").c_str());
  return kExitOk;
}

// ---------------------------------------------------------------- profile

struct ProfileOpts {
  CommonOpts common;
  std::string arch_path, plan_path, flop_mode, direction;
  std::vector<std::string> precisions;
  std::size_t nb = 0, nt = 0, d = 0;
  std::uint64_t seq_len = 0;
};

int run_profile_cmd(const ProfileOpts& o, CLI::App* cmd) {
  json resolved{{"arch", mixt::profiler::llama2_7b()},
                {"plan", mixt::CompressionPlan{.n_b = 17}},
                {"seq_len", 54},
                {"flop_mode", "paper"},
                {"precisions", {"f32", "bf16", "int8", "int4"}}};
  if (!o.common.config.empty()) resolved.update(load_config(o.common.config, "profile"));
  if (!o.arch_path.empty()) resolved["arch"] = mixt::read_json_file(o.arch_path);
  if (!o.plan_path.empty()) resolved["plan"] = mixt::read_json_file(o.plan_path);

  auto arch = parse_as<mixt::profiler::ArchConfig>(resolved.at("arch"), "arch");
  auto plan = parse_as<mixt::CompressionPlan>(resolved.at("plan"), "plan");
  if (cmd->count("--nb")) plan.n_b = o.nb;
  if (cmd->count("--nt")) plan.n_t = o.nt;
  if (cmd->count("--d")) plan.d = o.d;
  if (cmd->count("--direction")) plan.direction = mixt::parse_direction(o.direction);
  auto seq_len = parse_as<std::uint64_t>(resolved.at("seq_len"), "seq_len");
  if (cmd->count("--seq-len")) seq_len = o.seq_len;
  auto mode = mixt::profiler::parse_flop_mode(parse_as<std::string>(resolved.at("flop_mode"), "flop_mode"));
  if (cmd->count("--flop-mode")) mode = mixt::profiler::parse_flop_mode(o.flop_mode);
  auto precision_names = parse_as<std::vector<std::string>>(resolved.at("precisions"), "precisions");
  if (cmd->count("--precision")) precision_names = o.precisions;
  std::vector<mixt::profiler::Precision> precisions;
  for (const auto& p : precision_names) precisions.push_back(mixt::profiler::parse_precision(p));
  arch.validate();
  if (seq_len < 1) throw mixt::Error(mixt::Errc::InvalidConfig, "seq_len must be >= 1");

  resolved = {{"arch", arch},
              {"plan", plan},
              {"seq_len", seq_len},
              {"flop_mode", mixt::profiler::to_string(mode)},
              {"precisions", precision_names}};
  const auto report = mixt::profiler::profile(arch, plan, seq_len, mode, precisions);

  const fs::path out = o.common.out;
  fs::create_directories(out);
  write_manifest(out, "profile", resolved);
  mixt::write_json_file(out / "profile.json", report);
  {
    std::ofstream os(out / "profile.txt");
    mixt::profiler::render_table(os, report);
  }
  mixt::profiler::render_table(std::cout, report);
  return kExitOk;
}

// ---------------------------------------------------------------- scaling

struct ScalingOpts {
  CommonOpts common;
  std::vector<std::uint64_t> h_values;
  std::vector<std::size_t> nt_values;
  std::size_t d = 0;
};

int run_scaling_cmd(const ScalingOpts& o, CLI::App* cmd) {
  json resolved{{"h_values", {256, 512, 1024, 2048, 4096, 8192, 16384}}, {"n_t_values", {2, 3, 4}}, {"d", 2}};
  if (!o.common.config.empty()) resolved.update(load_config(o.common.config, "scaling"));
  if (cmd->count("--widths")) resolved["h_values"] = o.h_values;
  if (cmd->count("--nt")) resolved["n_t_values"] = o.nt_values;
  if (cmd->count("--d")) resolved["d"] = o.d;
  const auto h = parse_as<std::vector<std::uint64_t>>(resolved.at("h_values"), "h_values");
  const auto nt = parse_as<std::vector<std::size_t>>(resolved.at("n_t_values"), "n_t_values");
  const auto rows = mixt::profiler::scaling_curve(h, nt, parse_as<std::size_t>(resolved.at("d"), "d"));

  const fs::path out = o.common.out;
  fs::create_directories(out);
  write_manifest(out, "scaling", resolved);
  std::ofstream os(out / "scaling.csv");
  mixt::profiler::write_scaling_csv(os, rows);
  mixt::profiler::write_scaling_csv(std::cout, rows);
  return kExitOk;
}

// ---------------------------------------------------------------- match

struct MatchOpts {
  CommonOpts common;
  std::string weight;
  std::uint64_t seed = 0;
  std::size_t nt = 0, d = 0;
};

int run_match_cmd(const MatchOpts& o, CLI::App* cmd) {
  json resolved{{"weight", ""}, {"n_t", 4}, {"d", 2}, {"match", mixt::MatchConfig{}}};
  if (!o.common.config.empty()) resolved.update(load_config(o.common.config, "match"));
  if (!o.weight.empty()) resolved["weight"] = fs::absolute(o.weight).string();
  if (cmd->count("--nt")) resolved["n_t"] = o.nt;
  if (cmd->count("--d")) resolved["d"] = o.d;
  auto mcfg = parse_as<mixt::MatchConfig>(resolved.at("match"), "match");
  if (cmd->count("--seed")) mcfg.seed = o.seed;
  mcfg.validate();
  resolved["match"] = mcfg;

  const auto weight_path = parse_as<std::string>(resolved.at("weight"), "weight");
  if (weight_path.empty()) throw mixt::Error(mixt::Errc::InvalidConfig, "no weight matrix given (--weight)");
  const mixt::Tensor w = mixt::load_tensor(weight_path);
  if (w.rank() != 2) throw mixt::Error(mixt::Errc::DimensionMismatch, "weight must be a rank-2 tensor [out, in]");
  const auto spec = mixt::MixtSpec::for_dims(w.dim(1), w.dim(0), parse_as<std::size_t>(resolved.at("n_t"), "n_t"),
                                             parse_as<std::size_t>(resolved.at("d"), "d"));
  const auto result = mixt::match_weights(w, spec, mcfg);
  const auto err = mixt::reconstruction_error(w, result.op);

  const fs::path out = o.common.out;
  fs::create_directories(out);
  write_manifest(out, "match", resolved);
  mixt::save_operator(out, result.op, "operator");
  mixt::write_json_file(out / "match_report.json", json{{"spec", spec},
                                                         {"param_count", mixt::param_count(spec)},
                                                         {"dense_params", w.numel()},
                                                         {"sweeps", result.sweeps},
                                                         {"residual_history", result.residual_history},
                                                         {"residual", err.value},
                                                         {"residual_is_relative", err.relative}});
  std::printf("matched %zux%zu -> %llu params in %d sweeps, %s residual %.3e\n", w.dim(0), w.dim(1),
              static_cast<unsigned long long>(mixt::param_count(spec)), result.sweeps,
              err.relative ? "relative" : "absolute", err.value);
  return kExitOk;
}

// ---------------------------------------------------------------- inspect

int run_inspect_cmd(const std::string& manifest) {
  const auto op = mixt::load_operator(manifest);
  const auto& s = op.spec();
  const json j{{"spec", s},
               {"param_count", op.param_count()},
               {"dense_params", s.in_dim_raw * s.out_dim_raw},
               {"remaining_ratio", mixt::remaining_ratio(s)},
               {"flops_paper", mixt::flop_count(s, mixt::FlopMode::Paper)},
               {"flops_contraction", mixt::flop_count(s, mixt::FlopMode::Contraction)}};
  std::cout << j.dump(2) << '\n';
  return kExitOk;
}

// ---------------------------------------------------------------- gradcheck

struct GradcheckOpts {
  CommonOpts common;
  std::uint64_t seed = 0;
  std::size_t nb = 0, nt = 0, d = 0;
};

int run_gradcheck_cmd(const GradcheckOpts& o, CLI::App* cmd) {
  mixt::toy::ToyModelConfig small{.num_blocks = 2, .hidden = 16, .num_heads = 2, .ffn_dim = 24,
                                  .vocab_size = 16, .max_seq_len = 8, .d = 2, .seed = 1};
  json resolved{{"model", small},   {"plan", mixt::CompressionPlan{.n_b = 1, .n_t = 2}},
                {"probes", 64},     {"epsilon", 1e-4},
                {"tolerance", 1e-4}, {"batch", 4},
                {"seed", 1}};
  if (!o.common.config.empty()) resolved.update(load_config(o.common.config, "gradcheck"));
  auto model_cfg = parse_as<mixt::toy::ToyModelConfig>(resolved.at("model"), "model");
  auto plan = parse_as<mixt::CompressionPlan>(resolved.at("plan"), "plan");
  if (cmd->count("--nb")) plan.n_b = o.nb;
  if (cmd->count("--nt")) plan.n_t = o.nt;
  if (cmd->count("--d")) model_cfg.d = plan.d = o.d;
  if (cmd->count("--seed")) resolved["seed"] = o.seed;
  resolved["model"] = model_cfg;
  resolved["plan"] = plan;
  const auto seed = parse_as<std::uint64_t>(resolved.at("seed"), "seed");
  const auto probes = parse_as<std::size_t>(resolved.at("probes"), "probes");
  const auto eps = parse_as<double>(resolved.at("epsilon"), "epsilon");
  const auto tol = parse_as<double>(resolved.at("tolerance"), "tolerance");
  const auto batch = parse_as<std::size_t>(resolved.at("batch"), "batch");

  model_cfg.seed = seed;
  auto model = mixt::toy::replace_blocks(mixt::toy::Model(model_cfg), plan).model;
  const auto items = mixt::toy::make_task(seed + 1, batch,
                                          {.seq_len = model_cfg.max_seq_len, .vocab_size = model_cfg.vocab_size});
  std::vector<std::size_t> idx(items.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  const auto res = mixt::toy::grad_check(
      model, [&](mixt::ad::Tape& t) { return mixt::toy::task_loss(t, model, items, idx); }, probes, eps, seed);

  json probes_j = json::array();
  for (const auto& p : res.probes) {
    probes_j.push_back({{"param", p.param->name},
                        {"index", p.index},
                        {"analytic", p.analytic},
                        {"numeric", p.numeric},
                        {"error", p.error}});
  }
  const fs::path out = o.common.out;
  fs::create_directories(out);
  write_manifest(out, "gradcheck", resolved);
  const bool ok = res.max_error <= tol;
  mixt::write_json_file(out / "gradcheck.json",
                        json{{"max_error", res.max_error}, {"tolerance", tol}, {"passed", ok}, {"probes", probes_j}});
  std::printf("%zu probes, max error %.3e (tolerance %.1e): %s\n", res.probes.size(), res.max_error, tol,
              ok ? "ok" : "FAILED");
  return ok ? kExitOk : kExitNumerical;
}

// ---------------------------------------------------------------- analyze

struct AnalyzeOpts {
  CommonOpts common;
  std::string run_dir;
};

int run_analyze_cmd(const AnalyzeOpts& o) {
  json resolved{{"run", ""}, {"analysis", mixt::AnalysisConfig{}}};
  if (!o.run_dir.empty()) {
    resolved["run"] = fs::absolute(o.run_dir).string();
    // Default to the analysis settings the sweep ran with.
    const fs::path report = fs::path(o.run_dir) / "sweep_report.json";
    if (fs::exists(report)) resolved["analysis"] = mixt::read_json_file(report).at("config").at("analysis");
  }
  if (!o.common.config.empty()) resolved.update(load_config(o.common.config, "analyze"));
  const auto cfg = parse_as<mixt::AnalysisConfig>(resolved.at("analysis"), "analysis");
  resolved["analysis"] = cfg;
  const fs::path run = parse_as<std::string>(resolved.at("run"), "run");
  if (run.empty()) throw mixt::Error(mixt::Errc::InvalidConfig, "no sweep directory given (--run)");
  const fs::path evals_dir = run / "evals";
  if (!fs::is_directory(evals_dir)) throw mixt::Error(mixt::Errc::FileNotFound, evals_dir.string());

  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(evals_dir)) {
    if (e.path().extension() == ".json") files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  std::vector<mixt::DepthEval> evals;
  for (const auto& f : files) {
    const json j = mixt::read_json_file(f);
    evals.push_back({parse_as<std::size_t>(j.at("n_b"), f.string()),
                     parse_as<std::vector<mixt::toy::EvalRecord>>(j.at("records"), f.string())});
  }
  const auto analysis = mixt::analyze(evals, cfg);

  const fs::path out = o.common.out;
  fs::create_directories(out);
  write_manifest(out, "analyze", resolved);
  mixt::write_json_file(out / "analysis.json", mixt::analysis_json(analysis, cfg));
  mixt::write_analysis_csvs(out, analysis);
  std::printf("analyzed %zu depths from %s\n", evals.size(), evals_dir.c_str());
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Tensor-mixture compression toolkit"};
  app.set_version_flag("--version", std::string(MIXT_VERSION));
  app.require_subcommand(1);

  SweepOpts sweep;
  auto* sweep_cmd = app.add_subcommand("sweep", "Compression-depth sweep on the toy decoder");
  add_common(sweep_cmd, sweep.common, "runs/sweep");
  sweep_cmd->add_option("--seed", sweep.seed, "Run seed");
  sweep_cmd->add_option("--nb-list", sweep.nb_list, "Depths to sweep (comma separated)")->delimiter(',');
  sweep_cmd->add_option("--nt", sweep.nt, "Tensor-mixture order N_T");
  sweep_cmd->add_option("--d", sweep.d, "Bond dimension");
  sweep_cmd->add_option("--direction", sweep.direction, "Replacement order")
      ->check(CLI::IsMember({"b2f", "f2b"}));
  sweep_cmd->add_option("--budget", sweep.budget, "Recovery steps per depth");
  sweep_cmd->add_option("--baseline-steps", sweep.baseline_steps, "Training steps for the dense base model");
  sweep_cmd->add_flag("--checkpoints", sweep.checkpoints, "Save one checkpoint per depth");
  sweep_cmd->add_flag("--no-hidden", sweep.no_hidden, "Omit hidden states from evaluation records");
  sweep_cmd->add_flag("--quiet", sweep.quiet, "No progress on stderr");

  ProfileOpts prof;
  auto* prof_cmd = app.add_subcommand("profile", "Parameter, FLOP and storage accounting");
  add_common(prof_cmd, prof.common, "runs/profile");
  prof_cmd->add_option("--arch", prof.arch_path, "Architecture config JSON (default: LLaMA2-7B shape)");
  prof_cmd->add_option("--plan", prof.plan_path, "Compression plan JSON");
  prof_cmd->add_option("--nb", prof.nb, "Replaced block count N_B");
  prof_cmd->add_option("--nt", prof.nt, "Tensor-mixture order N_T");
  prof_cmd->add_option("--d", prof.d, "Bond dimension");
  prof_cmd->add_option("--direction", prof.direction, "Replacement order")->check(CLI::IsMember({"b2f", "f2b"}));
  prof_cmd->add_option("--flop-mode", prof.flop_mode, "FLOP accounting")
      ->check(CLI::IsMember({"paper", "contraction"}));
  prof_cmd->add_option("--seq-len", prof.seq_len, "Tokens per sequence");
  prof_cmd->add_option("--precision", prof.precisions, "Storage precisions (f32, bf16, int8, int4)")
      ->delimiter(',');

  ScalingOpts scaling;
  auto* scaling_cmd = app.add_subcommand("scaling", "Dense vs tensor-mixture parameter scaling table");
  add_common(scaling_cmd, scaling.common, "runs/scaling");
  scaling_cmd->add_option("--widths", scaling.h_values, "Widths H")->delimiter(',');
  scaling_cmd->add_option("--nt", scaling.nt_values, "Orders N_T")->delimiter(',');
  scaling_cmd->add_option("--d", scaling.d, "Bond dimension");

  MatchOpts match;
  auto* match_cmd = app.add_subcommand("match", "Fit an operator to a stored dense matrix");
  add_common(match_cmd, match.common, "runs/match");
  match_cmd->add_option("--weight", match.weight, "Dense [out, in] matrix in the binary tensor format");
  match_cmd->add_option("--seed", match.seed, "Initialization seed");
  match_cmd->add_option("--nt", match.nt, "Tensor-mixture order N_T");
  match_cmd->add_option("--d", match.d, "Bond dimension");

  std::string inspect_manifest;
  auto* inspect_cmd = app.add_subcommand("inspect", "Summarize a stored operator");
  inspect_cmd->add_option("manifest", inspect_manifest, "Operator manifest JSON")->required();

  GradcheckOpts gc;
  auto* gc_cmd = app.add_subcommand("gradcheck", "Finite-difference check of a partly replaced toy model");
  add_common(gc_cmd, gc.common, "runs/gradcheck");
  gc_cmd->add_option("--seed", gc.seed, "Model and probe seed");
  gc_cmd->add_option("--nb", gc.nb, "Replaced block count N_B");
  gc_cmd->add_option("--nt", gc.nt, "Tensor-mixture order N_T");
  gc_cmd->add_option("--d", gc.d, "Bond dimension");

  AnalyzeOpts an;
  auto* an_cmd = app.add_subcommand("analyze", "Recompute sweep metrics from stored evaluation records");
  add_common(an_cmd, an.common, "runs/analyze");
  an_cmd->add_option("--run", an.run_dir, "Sweep output directory");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitValidation;
  }

  try {
    if (*sweep_cmd) return run_sweep_cmd(sweep, sweep_cmd);
    if (*prof_cmd) return run_profile_cmd(prof, prof_cmd);
    if (*scaling_cmd) return run_scaling_cmd(scaling, scaling_cmd);
    if (*match_cmd) return run_match_cmd(match, match_cmd);
    if (*inspect_cmd) return run_inspect_cmd(inspect_manifest);
    if (*gc_cmd) return run_gradcheck_cmd(gc, gc_cmd);
    if (*an_cmd) return run_analyze_cmd(an);
  } catch (const mixt::Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return mixt::is_validation_error(e.code()) ? kExitValidation : kExitNumerical;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitValidation;
  }
  return kExitOk;
}
