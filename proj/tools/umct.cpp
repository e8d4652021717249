// umct: dataset generation, training, evaluation and sweeps.
//
// Exit codes: 0 success, 2 usage or configuration error, 3 runtime failure.

#include <atomic>
#include <cstdlib>
#include <iostream>
#include <mutex>
#include <sstream>
#include <thread>

#include "CLI11.hpp"
#include "umct/checkpoint.hpp"
#include "umct/config.hpp"
#include "umct/data.hpp"
#include "umct/errors.hpp"
#include "umct/trainer.hpp"

namespace fs = std::filesystem;
using namespace umct;

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitRuntime = 3;

fs::path output_root() {
  if (const char* env = std::getenv("UMCT_OUTPUT_ROOT"); env && *env) return env;
  return "runs";
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string tok;
  while (std::getline(ss, tok, ','))
    if (!tok.empty()) out.push_back(tok);
  return out;
}

// ---- gen-data ------------------------------------------------------------

struct GenArgs {
  int cases = 80;
  int extent = 32;
  std::uint64_t seed = 1;
  std::string out;
  std::vector<std::string> params;
};

int run_gen(const GenArgs& a) {
  if (a.cases < 1) throw ConfigError("--cases must be >= 1");
  SyntheticParams p;
  // Object sizes follow the extent unless overridden with --param.
  const double k = a.extent / static_cast<double>(p.extent);
  p.radius_min *= k;
  p.radius_max *= k;
  p.distractor_radius_min *= k;
  p.distractor_radius_max *= k;
  p.extent = a.extent;
  std::string extra;
  for (const auto& kv : a.params) extra += kv + " ";
  if (!extra.empty()) p = SyntheticParams::decode(p.encode() + " " + extra);
  p.validate();
  const fs::path out = a.out.empty() ? output_root() / "data" : fs::path(a.out);
  const auto m = generate_synthetic(out, a.cases, p, a.seed);
  std::cout << m.path.string() << "\n";
  return 0;
}

// ---- train ---------------------------------------------------------------

struct TrainArgs {
  std::string config;
  std::string dataset;
  std::string out;
  std::string mode;
  std::string fusion;
  std::string kernel_mode;
  std::string stage1_from;
  std::optional<int> views;
  std::optional<double> lambda_cot;
  std::optional<std::uint64_t> seed;
  std::optional<int> stage1_iters;
  std::optional<int> stage2_iters;
  std::optional<double> labeled_fraction;
  bool verbose = false;
};

ExperimentConfig resolve(const TrainArgs& a) {
  ExperimentConfig c = a.config.empty() ? ExperimentConfig{} : read_experiment_config(a.config);
  TrainConfig& t = c.train;
  if (!a.dataset.empty()) c.dataset = a.dataset;
  if (!a.mode.empty()) t.mode = parse_train_mode(a.mode);
  if (!a.fusion.empty()) t.fusion = parse_fusion_mode(a.fusion);
  if (!a.kernel_mode.empty()) t.arch.set_kernel_mode(parse_kernel_mode(a.kernel_mode));
  if (a.views) {
    t.views = *a.views;
    t.view_set.clear();
    if (static_cast<int>(t.view_dropout.size()) > t.views) t.view_dropout.resize(static_cast<std::size_t>(t.views));
  }
  if (a.lambda_cot) t.lambda_cot = *a.lambda_cot;
  if (a.seed) t.seed = *a.seed;
  if (a.stage1_iters) t.stage1.iters = *a.stage1_iters;
  if (a.stage2_iters) t.stage2.iters = *a.stage2_iters;
  if (a.labeled_fraction) t.labeled_fraction = *a.labeled_fraction;
  if (!a.out.empty()) c.output_dir = a.out;
  if (c.output_dir.empty())
    c.output_dir = output_root() / ("run-" + to_string(t.mode) + "-v" + std::to_string(t.views) + "-s" +
                                    std::to_string(t.seed));
  if (c.dataset.empty()) throw ConfigError("no dataset manifest: pass --dataset or set 'dataset' in the config");
  t.validate();
  return c;
}

void print_summary(const RunResult& r, const fs::path& out) {
  std::cout << "run: " << out.string() << "\nmean single-view DSC: " << r.eval.mean_single << "\n";
  for (std::size_t v = 0; v < r.eval.mean_per_view.size(); ++v)
    std::cout << "  view " << v << ": " << r.eval.mean_per_view[v] << "\n";
  if (r.eval.mean_ensemble) std::cout << "ensemble DSC: " << *r.eval.mean_ensemble << "\n";
}

int run_train(const TrainArgs& a) {
  const ExperimentConfig c = resolve(a);
  const auto dataset = read_manifest(c.dataset);
  std::optional<fs::path> from;
  if (!a.stage1_from.empty()) from = a.stage1_from;
  const auto r = run_experiment(c, dataset, c.output_dir, from, a.verbose);
  print_summary(r, c.output_dir);
  return 0;
}

int run_reproduce(const std::string& manifest, const std::string& out, bool verbose) {
  const auto plan = plan_from_run_manifest(manifest);
  const fs::path dir = out.empty() ? fs::path(manifest).parent_path() / "reproduced" : fs::path(out);
  const auto r = run_experiment(plan.experiment, plan.dataset, dir, plan.stage1_from, verbose);
  print_summary(r, dir);
  return 0;
}

// ---- eval ----------------------------------------------------------------

struct EvalArgs {
  std::string checkpoints;
  std::string manifest;
  std::string split = "test";
  std::string report;
  std::string ensemble = "mean";
  std::vector<int> window;
  std::optional<double> overlap;
  bool oracle = false;
};

std::vector<ViewModel> load_views(const fs::path& dir) {
  fs::path d = dir;
  if (fs::exists(dir / "final")) d = dir / "final";
  std::vector<ViewModel> views;
  for (int v = 0; fs::exists(d / ("view" + std::to_string(v) + ".ckpt")); ++v)
    views.push_back(load_model(d / ("view" + std::to_string(v) + ".ckpt")));
  if (views.empty()) throw IoError("no view<i>.ckpt files under " + dir.string());
  return views;
}

int run_eval(const EvalArgs& a) {
  // A run manifest carries the split the run used.
  const auto m = fs::path(a.manifest).extension() == ".json" ? plan_from_run_manifest(a.manifest).dataset
                                                             : read_manifest(a.manifest);
  const auto cases = load_split(m, parse_split(a.split), true);
  std::optional<EnsembleMode> mode;
  if (a.ensemble != "none") mode = parse_ensemble_mode(a.ensemble);
  EvalResult r;
  if (a.oracle) {
    // Debug path: ground truth stands in for every view's prediction.
    r.mean_per_view.assign(1, 0.0);
    for (const auto& c : cases) {
      const double d = dsc(*c.label, *c.label, 1);
      r.rows.push_back({c.case_id, "single-0", 1, d});
      if (mode) r.rows.push_back({c.case_id, "ensemble-" + to_string(*mode), 1, d});
      r.mean_single += d;
    }
    if (!cases.empty()) r.mean_single /= static_cast<double>(cases.size());
    r.mean_per_view[0] = r.mean_single;
    if (mode) r.mean_ensemble = r.mean_single;
  } else {
    const auto views = load_views(a.checkpoints);
    WindowSpec spec;
    const fs::path run_manifest = fs::path(a.checkpoints) / "run_manifest.json";
    if (fs::exists(run_manifest)) {
      const auto rec = plan_from_run_manifest(run_manifest).experiment;
      spec.window = rec.eval.window.value_or(rec.train.patch);
      spec.overlap = rec.eval.overlap;
    }
    if (a.overlap) spec.overlap = *a.overlap;
    if (a.window.size() == 3) spec.window = {a.window[0], a.window[1], a.window[2]};
    else if (!a.window.empty()) throw ConfigError("--window takes 3 extents");
    r = evaluate(views, cases, spec, views.size() >= 2 ? mode : std::nullopt);
  }
  const std::string csv = eval_csv(r);
  if (a.report.empty()) std::cout << csv;
  else write_file_bytes(a.report, csv);
  std::cerr << "mean single-view DSC " << r.mean_single;
  if (r.mean_ensemble) std::cerr << ", ensemble " << *r.mean_ensemble;
  std::cerr << "\n";
  return 0;
}

// ---- sweep ---------------------------------------------------------------

struct SweepArgs {
  TrainArgs base;
  std::string axis;
  std::string values;
  int seeds = 3;
  int parallel = 1;
};

std::uint64_t sweep_seed(std::uint64_t base, const std::string& axis, const std::string& value, int replicate) {
  return base + (hash_string(axis + "=" + value + "#" + std::to_string(replicate)) >> 16);
}

int run_sweep(const SweepArgs& a) {
  if (a.axis != "labeled_fraction" && a.axis != "views" && a.axis != "lambda_cot")
    throw ConfigError("--axis must be labeled_fraction, views or lambda_cot, got '" + a.axis + "'");
  const auto values = split_list(a.values);
  if (values.empty()) throw ConfigError("--values is empty");
  if (a.seeds < 1 || a.parallel < 1) throw ConfigError("--seeds and --parallel must be >= 1");
  const ExperimentConfig base = resolve(a.base);
  const auto dataset = read_manifest(base.dataset);
  const fs::path root = base.output_dir / ("sweep-" + a.axis);

  struct Job {
    std::string value;
    int replicate;
    std::uint64_t seed;
    fs::path dir;
    std::string status = "pending";
    EvalResult eval;
  };
  std::vector<Job> jobs;
  for (const auto& v : values)
    for (int r = 0; r < a.seeds; ++r) {
      const std::uint64_t seed = sweep_seed(base.train.seed, a.axis, v, r);
      jobs.push_back({v, r, seed, root / (a.axis + "=" + v) / ("rep" + std::to_string(r)), "pending", {}});
    }

  std::atomic<std::size_t> next{0};
  std::mutex log_mutex;
  auto worker = [&]() {
    for (std::size_t i = next++; i < jobs.size(); i = next++) {
      Job& j = jobs[i];
      try {
        ExperimentConfig c = base;
        c.train.seed = j.seed;
        if (a.axis == "labeled_fraction") c.train.labeled_fraction = std::stod(j.value);
        if (a.axis == "lambda_cot") c.train.lambda_cot = std::stod(j.value);
        if (a.axis == "views") {
          c.train.views = std::stoi(j.value);
          c.train.view_set.clear();
          c.train.view_dropout.clear();
        }
        c.output_dir = j.dir;
        j.eval = run_experiment(c, dataset, j.dir, std::nullopt, false).eval;
        j.status = "ok";
      } catch (const std::exception& e) {
        j.status = std::string("failed: ") + e.what();
      }
      const std::lock_guard lock(log_mutex);
      std::cerr << a.axis << "=" << j.value << " rep " << j.replicate << ": " << j.status << "\n";
    }
  };
  std::vector<std::thread> pool;
  for (int t = 0; t < std::min<int>(a.parallel, static_cast<int>(jobs.size())); ++t) pool.emplace_back(worker);
  for (auto& t : pool) t.join();

  std::string csv = "axis,value,replicate,seed,status,metric,score\n";
  for (const auto& j : jobs) {
    const std::string key = a.axis + "," + j.value + "," + std::to_string(j.replicate) + "," + std::to_string(j.seed);
    if (j.status != "ok") {
      std::string why = j.status;
      for (auto& ch : why)
        if (ch == ',' || ch == '\n') ch = ' ';
      csv += key + "," + why + ",,\n";
      continue;
    }
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.9g", j.eval.mean_single);
    csv += key + ",ok,mean_single_dsc," + buf + "\n";
    if (j.eval.mean_ensemble) {
      std::snprintf(buf, sizeof(buf), "%.9g", *j.eval.mean_ensemble);
      csv += key + ",ok,ensemble_dsc," + buf + "\n";
    }
  }
  write_file_bytes(root / "sweep.csv", csv);
  std::cout << (root / "sweep.csv").string() << "\n";
  return 0;
}

void add_train_flags(CLI::App* cmd, TrainArgs& t) {
  cmd->add_option("--config", t.config, "Experiment config (JSON)");
  cmd->add_option("--dataset", t.dataset, "Dataset manifest (overrides the config)");
  cmd->add_option("--out", t.out, "Output directory");
  cmd->add_option("--mode", t.mode, "semi | full | supervised");
  cmd->add_option("--views", t.views, "Number of views (standard view set)");
  cmd->add_option("--fusion", t.fusion, "ulf | uniform");
  cmd->add_option("--lambda-cot", t.lambda_cot, "Co-training loss weight");
  cmd->add_option("--kernel-mode", t.kernel_mode, "asym | sym");
  cmd->add_option("--seed", t.seed, "Master seed");
  cmd->add_option("--stage1-iters", t.stage1_iters);
  cmd->add_option("--stage2-iters", t.stage2_iters);
  cmd->add_option("--labeled-fraction", t.labeled_fraction);
  cmd->add_flag("-v,--verbose", t.verbose, "Progress on stderr");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Uncertainty-aware multi-view co-training for 3-D segmentation"};
  app.require_subcommand(1);

  GenArgs gen;
  auto* gen_cmd = app.add_subcommand("gen-data", "Generate a synthetic dataset");
  gen_cmd->add_option("--cases", gen.cases, "Number of cases")->capture_default_str();
  gen_cmd->add_option("--extent", gen.extent, "Cube edge length in voxels")->capture_default_str();
  gen_cmd->add_option("--seed", gen.seed, "Generator seed")->capture_default_str();
  gen_cmd->add_option("--out", gen.out, "Output directory");
  gen_cmd->add_option("--param", gen.params, "Generator parameter override key=value");

  TrainArgs train;
  auto* train_cmd = app.add_subcommand("train", "Run stage 1, stage 2 and evaluation");
  add_train_flags(train_cmd, train);
  train_cmd->add_option("--stage1-from", train.stage1_from, "Reuse stage-1 checkpoints of an earlier run");

  std::string repro_manifest, repro_out;
  bool repro_verbose = false;
  auto* repro_cmd = app.add_subcommand("reproduce", "Rerun an experiment from its run manifest");
  repro_cmd->add_option("--manifest", repro_manifest, "run_manifest.json")->required();
  repro_cmd->add_option("--out", repro_out, "Output directory");
  repro_cmd->add_flag("-v,--verbose", repro_verbose);

  EvalArgs ev;
  auto* eval_cmd = app.add_subcommand("eval", "Evaluate checkpoints on a split");
  eval_cmd->add_option("--checkpoints", ev.checkpoints, "Run directory or directory of view<i>.ckpt");
  eval_cmd->add_option("--manifest", ev.manifest, "Dataset manifest with an assigned split, or a run_manifest.json")->required();
  eval_cmd->add_option("--split", ev.split, "labeled-train | unlabeled-train | test")->capture_default_str();
  eval_cmd->add_option("--report", ev.report, "CSV output (stdout when empty)");
  eval_cmd->add_option("--ensemble", ev.ensemble, "mean | majority | none")->capture_default_str();
  eval_cmd->add_option("--window", ev.window, "Sliding window extents (default: the run's, else 32 32 32)")->expected(3);
  eval_cmd->add_option("--overlap", ev.overlap, "Window overlap fraction (default: the run's, else 0.5)");
  eval_cmd->add_flag("--debug-oracle", ev.oracle, "Use ground truth as the prediction");

  SweepArgs sw;
  auto* sweep_cmd = app.add_subcommand("sweep", "Run an experiment grid and write a tidy CSV");
  add_train_flags(sweep_cmd, sw.base);
  sweep_cmd->add_option("--axis", sw.axis, "labeled_fraction | views | lambda_cot")->required();
  sweep_cmd->add_option("--values", sw.values, "Comma-separated values")->required();
  sweep_cmd->add_option("--seeds", sw.seeds, "Replicates per value")->capture_default_str();
  sweep_cmd->add_option("--parallel", sw.parallel, "Concurrent runs")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitConfig;
  }

  try {
    if (*gen_cmd) return run_gen(gen);
    if (*train_cmd) return run_train(train);
    if (*repro_cmd) return run_reproduce(repro_manifest, repro_out, repro_verbose);
    if (*eval_cmd) {
      if (!ev.oracle && ev.checkpoints.empty()) throw ConfigError("--checkpoints is required");
      return run_eval(ev);
    }
    if (*sweep_cmd) return run_sweep(sw);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const ParameterError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
  return 0;
}
