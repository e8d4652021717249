// Acceptance suite: one PASS/FAIL line per criterion.
//
//   umct_acceptance [criterion ...]     default: all of 1..9
//
// Work files go to $UMCT_ACCEPTANCE_DIR (default ./acceptance_work) and are
// kept for inspection; a summary is appended to summary.txt there.

#include <chrono>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <numeric>
#include <set>
#include <sstream>

#include "gradcheck.hpp"
#include "umct/batch.hpp"
#include "umct/checkpoint.hpp"
#include "umct/config.hpp"
#include "umct/data.hpp"
#include "umct/errors.hpp"
#include "umct/losses.hpp"
#include "umct/trainer.hpp"
#include "umct/uncertainty.hpp"

using namespace umct;
using namespace umct::testing;
namespace fs = std::filesystem;

namespace {

fs::path g_work;
std::ofstream g_summary;

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), f, v);
  return buf;
}

double cpu_seconds() { return static_cast<double>(std::clock()) / CLOCKS_PER_SEC; }

void report(int id, const std::string& name, const Outcome& o) {
  const std::string line =
      "criterion " + std::to_string(id) + " [" + name + "]: " + (o.pass ? "PASS" : "FAIL") + " (" + o.detail + ")";
  std::printf("%s\n", line.c_str());
  std::fflush(stdout);
  g_summary << line << "\n";
  g_summary.flush();
}

void progress(const std::string& s) {
  std::fprintf(stderr, "  .. %s\n", s.c_str());
  std::fflush(stderr);
}

// ---- 1: gradients ----------------------------------------------------------

Outcome criterion_gradients() {
  const auto t0 = std::chrono::steady_clock::now();
  using F = std::function<TensorD(const std::vector<TensorD>&)>;
  struct Case {
    std::string op;
    F f;
    std::vector<TensorD> inputs;
  };
  std::vector<Case> cases;
  std::uint64_t seed = 1;
  auto r = [&](const Shape& s) { return random_tensor(s, seed++); };

  const std::vector<std::tuple<Shape, Shape, ops::ConvGeometry>> convs = {
      {{1, 1, 4, 5, 6}, {2, 1, 3, 3, 3}, {{1, 1, 1}, {1, 1, 1}}},
      {{2, 3, 4, 4, 4}, {2, 3, 3, 3, 1}, {{1, 1, 1}, {1, 1, 0}}},
      {{1, 2, 6, 6, 6}, {3, 2, 3, 3, 3}, {{2, 2, 2}, {1, 1, 1}}},
      {{1, 2, 3, 4, 5}, {2, 2, 1, 1, 1}, {{1, 1, 1}, {0, 0, 0}}}};
  for (const auto& [xs, ks, g] : convs)
    cases.push_back({"conv3d", [g](const auto& in) { return ops::conv3d(in[0], in[1], in[2], g); },
                     {r(xs), r(ks), r({ks[0]})}});
  for (const auto& [xs, ks] : std::vector<std::pair<Shape, Shape>>{
           {{1, 2, 2, 2, 2}, {2, 3, 2, 2, 2}}, {{2, 1, 1, 2, 3}, {1, 2, 2, 2, 2}}, {{1, 3, 2, 1, 2}, {3, 1, 3, 3, 3}}}) {
    const int f = static_cast<int>(ks[2]);
    cases.push_back({"conv_transpose3d", [f](const auto& in) { return ops::conv_transpose3d(in[0], in[1], in[2], f); },
                     {r(xs), r(ks), r({ks[1]})}});
  }
  for (const auto& [s, f] : std::vector<std::pair<Shape, int>>{{{1, 1, 2, 2, 2}, 2}, {{2, 2, 1, 3, 2}, 2}, {{1, 1, 2, 1, 2}, 3}})
    cases.push_back({"resize_trilinear", [f](const auto& in) { return ops::resize_trilinear(in[0], f); }, {r(s)}});
  for (const Shape& s : std::vector<Shape>{{3}, {2, 3, 4}, {1, 2, 3, 2, 2}}) {
    cases.push_back({"relu", [](const auto& in) { return ops::relu(in[0]); }, {random_away_from_zero(s, seed++)}});
    cases.push_back({"add", [](const auto& in) { return ops::add(in[0], in[1]); }, {r(s), r(s)}});
    cases.push_back({"mul", [](const auto& in) { return ops::mul(in[0], in[1]); }, {r(s), r(s)}});
    cases.push_back({"mul_scalar", [](const auto& in) { return ops::mul_scalar(in[0], -1.7); }, {r(s)}});
    cases.push_back({"sum", [](const auto& in) { return ops::sum(in[0]); }, {r(s)}});
    cases.push_back({"dropout", [](const auto& in) {
                       RngStream g(7);
                       return ops::dropout(in[0], 0.3, ops::DropoutMode::Train, &g);
                     },
                     {r(s)}});
  }
  for (const Shape& s : std::vector<Shape>{{2, 3}, {1, 2, 2, 2, 2}, {2, 4, 1, 3, 2}})
    cases.push_back({"softmax_channels", [](const auto& in) { return ops::softmax_channels(in[0]); }, {r(s)}});
  for (const auto& [a, b] : std::vector<std::pair<Shape, Shape>>{
           {{1, 1, 2, 2, 2}, {1, 2, 2, 2, 2}}, {{2, 3, 1, 1, 2}, {2, 1, 1, 1, 2}}, {{2, 2, 3}, {2, 1, 3}}})
    cases.push_back({"concat_channels", [](const auto& in) { return ops::concat_channels(in[0], in[1]); }, {r(a), r(b)}});
  for (const auto& [p, fl] : std::vector<std::pair<std::array<int, 3>, std::array<bool, 3>>>{
           {{2, 0, 1}, {false, true, false}}, {{1, 2, 0}, {true, true, true}}, {{0, 2, 1}, {false, false, true}}})
    cases.push_back({"permute_flip_spatial", [p, fl](const auto& in) { return ops::permute_flip_spatial(in[0], p, fl); },
                     {r({2, 2, 2, 3, 4})}});
  for (const Shape& s : std::vector<Shape>{{1, 2, 4, 4, 4}, {2, 3, 2, 3, 2}, {3, 2, 1, 2, 5}}) {
    const auto target = ops::softmax_channels(random_tensor(s, seed++, -2, 2, false));
    cases.push_back({"dice_loss", [target](const auto& in) { return dice_loss(ops::softmax_channels(in[0]), target).loss; },
                     {r(s)}});
  }

  std::map<std::string, double> worst;
  for (auto& c : cases) worst[c.op] = std::max(worst[c.op], grad_check(c.f, c.inputs).rel_error);

  double e2e = 0;
  for (auto mode : {KernelMode::Asymmetric, KernelMode::Symmetric}) {
    auto d = ArchitectureDescriptor::with_kernel_mode(mode);
    d.base_channels = 2;
    d.set_depth(1);
    d.stem_kernel = mode == KernelMode::Symmetric ? std::array<int, 3>{3, 3, 3} : std::array<int, 3>{3, 3, 1};
    d.dropout_p = 0.2;
    auto m = build_model<double>(d, ViewTransform::from_id(13), 3);
    const Shape s{1, 2, 4, 4, 2};
    const auto target = ops::softmax_channels(random_tensor(s, 500, -2, 2, false));
    std::vector<TensorD> in;
    for (const auto& [name, p] : m.net.parameters()) in.push_back(p);
    in.push_back(random_tensor({1, 1, 4, 4, 2}, 501));
    const RngStream g(12);
    e2e = std::max(e2e, grad_check([&](const auto& x) {
                          return dice_loss(predict_through_view(m, x.back(), ForwardMode::Train, &g), target).loss;
                        },
                        in)
                            .rel_error);
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  double ops_worst = 0;
  std::string worst_op;
  for (const auto& [op, e] : worst)
    if (e >= ops_worst) {
      ops_worst = e;
      worst_op = op;
    }
  Outcome o;
  o.pass = ops_worst < 1e-5 && e2e < 1e-4 && secs < 60.0;
  o.detail = std::to_string(worst.size()) + " ops on " + std::to_string(cases.size()) + " cases, worst op rel err " +
             fmt("%.2e", ops_worst) + " (" + worst_op + "), end-to-end " + fmt("%.2e", e2e) + ", " +
             fmt("%.1f", secs) + " s";
  return o;
}

// ---- 2: transform group -----------------------------------------------------

Outcome criterion_group() {
  const auto t0 = std::chrono::steady_clock::now();
  const auto all = ViewTransform::all();
  Volume v({3, 4, 5});
  std::iota(v.data().begin(), v.data().end(), 0.0f);
  RngStream rng(1);
  LabelVolume p({3, 4, 5}), t({3, 4, 5});
  for (auto& x : p.data()) x = rng.uniform() < 0.4;
  for (auto& x : t.data()) x = rng.uniform() < 0.5;
  const double base = dsc(p, t, 1);
  std::set<int> ids;
  int round_trip = 0, closure = 0, inv = 0, equiv = 0;
  for (const auto& a : all) {
    ids.insert(a.id());
    round_trip += inverse(a).apply(a.apply(v)) == v && a.apply(inverse(a).apply(v)) == v;
    inv += inverse(inverse(a)) == a;
    equiv += dsc(a.apply(p), a.apply(t), 1) == base;
    for (const auto& b : all) {
      const auto c = compose(a, b);
      closure += c.id() >= 0 && c.id() < 48 && c.apply(v) == a.apply(b.apply(v));
    }
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  Outcome o;
  o.pass = all.size() == 48 && ids.size() == 48 && round_trip == 48 && inv == 48 && equiv == 48 &&
           closure == 48 * 48 && secs < 10.0;
  o.detail = std::to_string(ids.size()) + " distinct, round trip " + std::to_string(round_trip) + "/48, closure " +
             std::to_string(closure) + "/2304, inverse-of-inverse " + std::to_string(inv) + "/48, DSC equivariance " +
             std::to_string(equiv) + "/48, " + fmt("%.2f", secs) + " s";
  return o;
}

// ---- 3: uncertainty and fusion ---------------------------------------------

Outcome criterion_fusion_units() {
  using TD = Tensor<double>;
  std::vector<std::string> failed;
  auto expect = [&](bool ok, const std::string& what) {
    if (!ok) failed.push_back(what);
  };
  auto soft = [](const Shape& s, std::uint64_t seed) {
    const auto p = ops::softmax_channels(random_tensor(s, seed, -2, 2, false));
    return TD(s, std::vector<double>(p.data().begin(), p.data().end()));
  };
  const Shape s{2, 3, 2, 3, 2};

  const auto a = soft(s, 1);
  const auto zero = epistemic_uncertainty<double>({a, a.clone(), a.clone()});
  expect(zero.scalar[0] == 0.0 && zero.scalar[1] == 0.0 &&
             std::all_of(zero.voxelwise.data().begin(), zero.voxelwise.data().end(), [](double x) { return x == 0.0; }),
         "zero variance");
  const auto two = epistemic_uncertainty<double>({TD({1, 1, 1, 1, 1}, 0.0), TD({1, 1, 1, 1, 1}, 1.0)});
  expect(two.scalar[0] == 0.25, "{0,1} variance");

  bool norm = true, scale = true, loo = true;
  for (std::uint64_t trial = 0; trial < 20; ++trial) {
    RngStream rng(100 + trial);
    const int V = 3 + static_cast<int>(trial % 4);
    std::vector<TD> preds;
    std::vector<std::vector<double>> conf(static_cast<std::size_t>(V)), scaled;
    for (int i = 0; i < V; ++i) {
      preds.push_back(soft(s, 1000 * trial + i));
      conf[i] = {0.01 + rng.uniform() * 10, 0.01 + rng.uniform() * 10};
    }
    scaled = conf;
    const double k = 1e-3 + rng.uniform() * 1e3;
    for (auto& c : scaled)
      for (auto& x : c) x *= k;
    for (int tv = 0; tv < V; ++tv) {
      const auto pl = fuse_pseudo_label(tv, preds, conf, FusionMode::Ulf);
      for (const auto& w : pl.weights) {
        double tot = 0;
        for (const auto& fw : w) {
          tot += fw.weight;
          loo = loo && fw.view != tv && fw.weight > 0;
        }
        norm = norm && std::abs(tot - 1.0) <= 1e-6;
      }
      const auto ps = fuse_pseudo_label(tv, preds, scaled, FusionMode::Ulf);
      for (std::size_t i = 0; i < pl.soft_label.numel(); ++i)
        scale = scale && std::abs(ps.soft_label.data()[i] - pl.soft_label.data()[i]) <= 1e-12;
      auto altered = preds;
      altered[tv] = soft(s, 77 + trial);
      const auto pa = fuse_pseudo_label(tv, altered, conf, FusionMode::Ulf);
      loo = loo && std::equal(pa.soft_label.data().begin(), pa.soft_label.data().end(), pl.soft_label.data().begin());
    }
  }
  expect(norm, "weight normalization");
  expect(scale, "confidence-scale invariance");
  expect(loo, "leave-one-out exclusion");

  bool exact = true;
  for (double c : {1e-6, 1.0, 1e6}) {
    const auto p0 = soft(s, 5), p1 = soft(s, 6);
    const auto pl = fuse_pseudo_label<double>(0, {p0, p1}, {{c, c}, {3.0, 0.5}}, FusionMode::Ulf);
    exact = exact && std::equal(pl.soft_label.data().begin(), pl.soft_label.data().end(), p1.data().begin());
  }
  expect(exact, "two-view fusion");

  Outcome o;
  o.pass = failed.empty();
  if (o.pass) {
    o.detail = "zero variance, {0,1} -> 0.25, weights sum to 1, scale invariance, leave-one-out, two-view exactness";
  } else {
    o.detail = "failed:";
    for (const auto& f : failed) o.detail += " " + f + ";";
  }
  return o;
}

// ---- shared experiment plumbing --------------------------------------------

const DatasetManifest& default_dataset() {
  static DatasetManifest m = [] {
    const fs::path dir = g_work / "dataset";
    if (fs::exists(dir / "manifest.tsv")) {
      auto existing = read_manifest(dir / "manifest.tsv");
      if (existing.cases.size() == 80 && existing.seed == 1 && existing.generator == SyntheticParams{}.encode())
        return existing;
    }
    fs::remove_all(dir);
    return generate_synthetic(dir, 80, SyntheticParams{}, 1);
  }();
  return m;
}

ExperimentConfig base_experiment(std::uint64_t seed, int s1, int s2) {
  ExperimentConfig e;
  e.train.seed = seed;
  e.train.stage1.iters = s1;
  e.train.stage2.iters = s2;
  e.dataset = default_dataset().path;
  return e;
}

RunResult run(const ExperimentConfig& e, const fs::path& dir, const std::optional<fs::path>& stage1_from = {}) {
  fs::remove_all(dir);
  return run_experiment(e, default_dataset(), dir, stage1_from, false);
}

std::vector<ViewModel> stage1_views(const fs::path& run_dir, int views, int iters) {
  const RunPaths p{run_dir};
  std::vector<ViewModel> out;
  for (int v = 0; v < views; ++v) out.push_back(load_model(p.checkpoint("stage1", v, iters)));
  return out;
}

std::vector<LoadedCase> test_cases(const ExperimentConfig& e) {
  const auto m = split(default_dataset(), e.train.labeled_fraction, e.train.test_count, e.train.seed);
  return load_split(m, Split::Test, true);
}

std::string pts(double d) { return fmt("%+.2f", 100.0 * d); }

// ---- 4: lambda = 0 equivalence ----------------------------------------------

Outcome criterion_lambda_zero() {
  auto e = base_experiment(4, 20, 10);
  e.train.checkpoint_every = 5;
  e.train.lambda_cot = 0.0;
  e.train.mode = TrainMode::Semi;
  const fs::path semi = g_work / "c4_semi_lambda0", sup = g_work / "c4_supervised";
  run(e, semi);
  e.train.mode = TrainMode::SupervisedOnly;
  run(e, sup);
  int files = 0, same = 0;
  for (const auto& entry : fs::recursive_directory_iterator(semi)) {
    if (entry.path().extension() != ".ckpt") continue;
    ++files;
    const auto other = sup / fs::relative(entry.path(), semi);
    same += fs::exists(other) && read_file_bytes(entry.path()) == read_file_bytes(other);
  }
  Outcome o;
  o.pass = files > 0 && same == files;
  o.detail = std::to_string(same) + "/" + std::to_string(files) + " checkpoint files byte-identical (3 views, 20+10 iters)";
  return o;
}

// ---- 5: headline gain --------------------------------------------------------

constexpr int kHeadS1 = 400, kHeadS2 = 300;
const std::uint64_t kSeeds[3] = {1, 2, 3};

fs::path head_dir(std::uint64_t seed, const char* arm) {
  return g_work / ("c5_seed" + std::to_string(seed)) / arm;
}

struct HeadResult {
  double sup = 0, semi = 0;
};
std::map<std::uint64_t, HeadResult> g_head;

Outcome criterion_headline() {
  const double c0 = cpu_seconds();
  (void)default_dataset();
  std::string per;
  double gain_sum = 0;
  bool all_positive = true;
  for (auto seed : kSeeds) {
    auto e = base_experiment(seed, kHeadS1, kHeadS2);
    e.train.mode = TrainMode::SupervisedOnly;
    progress("criterion 5: seed " + std::to_string(seed) + " supervised-only");
    const auto sup = run(e, head_dir(seed, "supervised"));
    e.train.mode = TrainMode::Semi;
    progress("criterion 5: seed " + std::to_string(seed) + " co-training");
    const auto semi = run(e, head_dir(seed, "semi"), head_dir(seed, "supervised"));
    g_head[seed] = {sup.eval.mean_single, semi.eval.mean_single};
    const double gain = semi.eval.mean_single - sup.eval.mean_single;
    gain_sum += gain;
    all_positive = all_positive && gain > 0;
    per += " seed " + std::to_string(seed) + ": " + fmt("%.4f", sup.eval.mean_single) + " -> " +
           fmt("%.4f", semi.eval.mean_single) + " (" + pts(gain) + ");";
  }
  const double cpu_min = (cpu_seconds() - c0) / 60.0;
  const double mean_gain = gain_sum / 3.0;
  Outcome o;
  o.pass = mean_gain >= 0.02 && all_positive && cpu_min < 45.0;
  o.detail = "mean single-view DSC gain " + pts(mean_gain) + " points;" + per + " " + fmt("%.1f", cpu_min) +
             " CPU-min, " + std::to_string(kHeadS1) + "+" + std::to_string(kHeadS2) + " iters";
  return o;
}

// ---- 6: ULF ablation ---------------------------------------------------------

constexpr int kAblS1 = 300, kAblS2 = 150;
constexpr int kNoisyView = 2;

Outcome criterion_ulf() {
  double ulf_sum = 0, uni_sum = 0;
  std::string per;
  int wins = 0, comparisons = 0;
  for (auto seed : kSeeds) {
    auto e = base_experiment(seed, kAblS1, kAblS2);
    e.train.view_dropout = {-1, -1, 0.5};
    e.train.fusion = FusionMode::Ulf;
    const fs::path ulf_dir = g_work / ("c6_seed" + std::to_string(seed)) / "ulf";
    progress("criterion 6: seed " + std::to_string(seed) + " ULF");
    const auto ulf = run(e, ulf_dir);
    e.train.fusion = FusionMode::Uniform;
    progress("criterion 6: seed " + std::to_string(seed) + " uniform");
    const auto uni = run(e, g_work / ("c6_seed" + std::to_string(seed)) / "uniform", ulf_dir);
    ulf_sum += ulf.eval.mean_single;
    uni_sum += uni.eval.mean_single;
    per += " seed " + std::to_string(seed) + ": ULF " + fmt("%.4f", ulf.eval.mean_single) + " vs uniform " +
           fmt("%.4f", uni.eval.mean_single) + ";";

    // Seeded fusion trials on the stage-1 models (the state co-training
    // starts from), with unlabeled ground truth read for scoring only.
    const auto views = stage1_views(ulf_dir, 3, kAblS1);
    const auto m = split(default_dataset(), e.train.labeled_fraction, e.train.test_count, seed);
    const auto unl = load_split(m, Split::UnlabeledTrain, true);
    std::vector<const LoadedCase*> ptr;
    for (const auto& c : unl) ptr.push_back(&c);
    const int trials = seed == kSeeds[2] ? 6 : 7;  // 20 in total
    for (int t = 0; t < trials; ++t) {
      const RngStream rng = RngStream(seed).derive("fusion-trial", static_cast<std::uint64_t>(t));
      PatchSampler sampler(ptr, e.train.patch, 1.0, rng.derive("patches"));
      std::vector<Patch> patches{sampler.next(), sampler.next()};
      std::vector<const Volume*> imgs{&patches[0].image, &patches[1].image};
      const auto x = stack_volumes(imgs);
      std::vector<Tensor<float>> means;
      std::vector<std::vector<double>> conf;
      for (int v = 0; v < 3; ++v) {
        const auto mc = mc_sample_predictions(views[v], x, e.train.mc_samples, rng.derive("mc", v));
        means.push_back(mc.mean);
        conf.push_back(epistemic_uncertainty(mc.samples, v).confidence);
      }
      for (int target = 0; target < 3; ++target) {
        if (target == kNoisyView) continue;  // its sources are the two reliable views
        const auto a = fuse_pseudo_label(target, means, conf, FusionMode::Ulf);
        const auto b = fuse_pseudo_label(target, means, conf, FusionMode::Uniform);
        for (int n = 0; n < 2; ++n) {
          const double da = dsc(argmax(unstack(a.soft_label, n)), *patches[n].label, 1);
          const double db = dsc(argmax(unstack(b.soft_label, n)), *patches[n].label, 1);
          wins += da > db;
          ++comparisons;
        }
      }
    }
  }
  const double rate = static_cast<double>(wins) / comparisons;
  Outcome o;
  o.pass = ulf_sum > uni_sum && rate >= 0.9;
  o.detail = "mean test DSC ULF " + fmt("%.4f", ulf_sum / 3) + " vs uniform " + fmt("%.4f", uni_sum / 3) + ";" + per +
             " pseudo-label wins " + std::to_string(wins) + "/" + std::to_string(comparisons) + " (" +
             fmt("%.0f", 100 * rate) + "%) over 20 trials; view 2 dropout 0.5, " + std::to_string(kAblS1) + "+" +
             std::to_string(kAblS2) + " iters";
  return o;
}

// ---- 7: view count -----------------------------------------------------------

Outcome criterion_views() {
  double two_sum = 0, three_sum = 0;
  std::string per;
  for (auto seed : kSeeds) {
    auto e = base_experiment(seed, kHeadS1, kHeadS2);
    if (!g_head.count(seed)) {
      e.train.mode = TrainMode::SupervisedOnly;
      progress("criterion 7: seed " + std::to_string(seed) + " 3-view stage 1");
      run(e, head_dir(seed, "supervised"));
      e.train.mode = TrainMode::Semi;
      progress("criterion 7: seed " + std::to_string(seed) + " 3 views");
      g_head[seed].semi = run(e, head_dir(seed, "semi"), head_dir(seed, "supervised")).eval.mean_single;
    }
    // Views 0 and 1 of the 3-view set are the 2-view set, and stage 1
    // trains each view independently, so the 3-view stage-1 checkpoints
    // serve both.
    e.train.views = 2;
    progress("criterion 7: seed " + std::to_string(seed) + " 2 views");
    const auto two = run(e, g_work / ("c7_seed" + std::to_string(seed)) / "views2", head_dir(seed, "supervised"));
    two_sum += two.eval.mean_single;
    three_sum += g_head[seed].semi;
    per += " seed " + std::to_string(seed) + ": " + fmt("%.4f", two.eval.mean_single) + " / " +
           fmt("%.4f", g_head[seed].semi) + ";";
  }
  Outcome o;
  o.pass = three_sum >= two_sum;
  o.detail = "mean single-view DSC 2 views " + fmt("%.4f", two_sum / 3) + ", 3 views " + fmt("%.4f", three_sum / 3) +
             ";" + per + " 6-view run not performed (optional, CPU budget)";
  return o;
}

// ---- 8: fully supervised co-training -----------------------------------------

Outcome criterion_full_supervised() {
  double gain_sum = 0, matched_sum = 0;
  std::string per;
  for (auto seed : kSeeds) {
    auto e = base_experiment(seed, kAblS1, kAblS2);
    e.train.labeled_fraction = 1.0;
    e.train.mode = TrainMode::FullSupervisedCotrain;
    const fs::path dir = g_work / ("c8_seed" + std::to_string(seed));
    progress("criterion 8: seed " + std::to_string(seed) + " co-training on all labels");
    const auto full = run(e, dir / "full");
    const auto base = stage1_views(dir / "full", 3, kAblS1);
    const auto s1 = evaluate(base, test_cases(e), {e.train.patch, 0.5}, std::nullopt);
    e.train.mode = TrainMode::SupervisedOnly;
    progress("criterion 8: seed " + std::to_string(seed) + " iteration-matched supervised");
    const auto matched = run(e, dir / "supervised", dir / "full");
    const double gain = full.eval.mean_single - s1.mean_single;
    gain_sum += gain;
    matched_sum += full.eval.mean_single - matched.eval.mean_single;
    per += " seed " + std::to_string(seed) + ": stage 1 " + fmt("%.4f", s1.mean_single) + " -> " +
           fmt("%.4f", full.eval.mean_single) + " (" + pts(gain) + "), matched supervised " +
           fmt("%.4f", matched.eval.mean_single) + ";";
  }
  const double mean_gain = gain_sum / 3;
  Outcome o;
  o.pass = mean_gain >= 0.005;
  o.detail = "mean gain over stage-1-only " + pts(mean_gain) + " points; over iteration-matched supervised " +
             pts(matched_sum / 3) + " (reported);" + per + " 100% labeled, " + std::to_string(kAblS1) + "+" +
             std::to_string(kAblS2) + " iters";
  return o;
}

// ---- 9: reproducibility --------------------------------------------------------

Outcome criterion_reproducibility() {
  auto e = base_experiment(9, 30, 15);
  e.train.checkpoint_every = 10;
  const fs::path a = g_work / "c9_original", b = g_work / "c9_reproduced";
  run(e, a);
  const auto plan = plan_from_run_manifest(a / "run_manifest.json");
  fs::remove_all(b);
  run_experiment(plan.experiment, plan.dataset, b, plan.stage1_from, false);
  int files = 0, same = 0;
  std::string diff;
  for (const auto& entry : fs::recursive_directory_iterator(a)) {
    const auto ext = entry.path().extension();
    const auto name = entry.path().filename();
    if (ext != ".ckpt" && ext != ".csv") continue;
    if (name == "timing.csv") continue;  // wall clock
    ++files;
    const auto other = b / fs::relative(entry.path(), a);
    if (fs::exists(other) && read_file_bytes(entry.path()) == read_file_bytes(other)) ++same;
    else diff += " " + fs::relative(entry.path(), a).string();
  }
  Outcome o;
  o.pass = files > 0 && same == files;
  o.detail = std::to_string(same) + "/" + std::to_string(files) +
             " checkpoint and metric CSV files byte-identical after reproduction from run_manifest.json" +
             (diff.empty() ? "" : "; differing:" + diff);
  return o;
}

}  // namespace

int main(int argc, char** argv) {
  const char* env = std::getenv("UMCT_ACCEPTANCE_DIR");
  g_work = env && *env ? fs::path(env) : fs::path("acceptance_work");
  fs::create_directories(g_work);
  g_summary.open(g_work / "summary.txt", std::ios::app);

  std::set<int> wanted;
  for (int i = 1; i < argc; ++i) wanted.insert(std::atoi(argv[i]));
  if (wanted.empty()) wanted = {1, 2, 3, 4, 5, 6, 7, 8, 9};

  const std::vector<std::tuple<int, std::string, std::function<Outcome()>>> criteria = {
      {1, "gradient checks", criterion_gradients},
      {2, "cube symmetry group", criterion_group},
      {3, "uncertainty and fusion units", criterion_fusion_units},
      {4, "lambda 0 equals supervised-only", criterion_lambda_zero},
      {5, "co-training gain over supervised", criterion_headline},
      {6, "ULF vs uniform fusion", criterion_ulf},
      {7, "view count trend", criterion_views},
      {8, "fully supervised co-training", criterion_full_supervised},
      {9, "reproduction from manifest", criterion_reproducibility},
  };
  int failures = 0;
  for (const auto& [id, name, fn] : criteria) {
    if (!wanted.count(id)) continue;
    Outcome o;
    try {
      o = fn();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    report(id, name, o);
    failures += !o.pass;
  }
  std::printf("acceptance: %d of %zu criteria failed\n", failures, wanted.size());
  return failures == 0 ? 0 : 1;
}
