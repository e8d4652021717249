#include "umct/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <iostream>
#include <numeric>
#include <sstream>

#include "umct/batch.hpp"
#include "umct/config.hpp"
#include "umct/errors.hpp"
#include "umct/fpenv.hpp"
#include "umct/losses.hpp"
#include "umct/ops.hpp"

namespace umct {
namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

template <typename G>
G zero_extend(const G& v, const Extent3& min_extent) {
  const auto e = v.extent();
  Extent3 ne;
  for (int k = 0; k < 3; ++k) ne[k] = std::max(e[k], min_extent[k]);
  if (ne == e) return v;
  G out(Shape{ne[0], ne[1], ne[2]}, typename G::value_type{}, v.spacing());
  for (std::int64_t a = 0; a < e[0]; ++a)
    for (std::int64_t b = 0; b < e[1]; ++b)
      for (std::int64_t c = 0; c < e[2]; ++c) out.at(a, b, c) = v.at(a, b, c);
  return out;
}

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.9g", v);
  return buf;
}

}  // namespace

std::string to_string(TrainMode m) {
  switch (m) {
    case TrainMode::Semi:
      return "semi";
    case TrainMode::FullSupervisedCotrain:
      return "full";
    case TrainMode::SupervisedOnly:
      return "supervised";
  }
  return "semi";
}

TrainMode parse_train_mode(std::string_view s) {
  if (s == "semi") return TrainMode::Semi;
  if (s == "full" || s == "full_supervised_cotrain") return TrainMode::FullSupervisedCotrain;
  if (s == "supervised" || s == "supervised_only") return TrainMode::SupervisedOnly;
  throw ConfigError("mode must be semi, full or supervised, got '" + std::string(s) + "'");
}

ViewSet TrainConfig::resolved_views() const {
  if (!view_set.empty()) return view_set;
  if (views == 1) return {ViewTransform()};
  return standard_view_set(views);
}

ArchitectureDescriptor TrainConfig::view_descriptor(int view) const {
  ArchitectureDescriptor d = arch;
  if (view < static_cast<int>(view_dropout.size()) && view_dropout[view] >= 0.0) d.dropout_p = view_dropout[view];
  return d;
}

void TrainConfig::validate() const {
  arch.validate();
  const ViewSet vs = resolved_views();
  validate_view_set(vs);
  if (!view_set.empty() && static_cast<int>(view_set.size()) != views)
    throw ConfigError("views = " + std::to_string(views) + " but view_set lists " + std::to_string(view_set.size()));
  if (mode != TrainMode::SupervisedOnly && views < 2)
    throw ConfigError("mode " + to_string(mode) + " needs views >= 2 for pseudo-label fusion");
  if (static_cast<int>(view_dropout.size()) > views) throw ConfigError("view_dropout has more entries than views");
  for (double p : view_dropout)
    if (p >= 1.0) throw ConfigError("view_dropout entries must be < 1");
  if (stage1.iters < 1 || stage2.iters < 1) throw ConfigError("stage1.iters and stage2.iters must be >= 1");
  if (!(lambda_cot >= 0.0)) throw ConfigError("lambda_cot must be >= 0");
  if (lambda_ramp_iters < 0) throw ConfigError("lambda_ramp_iters must be >= 0");
  if (batch_labeled < 1 || batch_unlabeled < 1) throw ConfigError("batch sizes must be >= 1");
  const std::int64_t div = std::int64_t{1} << arch.depth;
  for (auto p : patch)
    if (p < div || p % div != 0)
      throw ConfigError("patch extents must be multiples of 2^depth = " + std::to_string(div));
  if (patch[0] != patch[1] || patch[1] != patch[2]) {
    for (const auto& t : vs)
      if (!(t.map_extent(patch) == patch)) throw ConfigError("non-cubic patches require views that keep the patch shape");
  }
  if (!(fg_ratio >= 0.0 && fg_ratio <= 1.0)) throw ConfigError("fg_ratio must lie in [0, 1]");
  if (mc_samples < 2) throw ConfigError("mc_samples must be >= 2");
  if (!(labeled_fraction > 0.0 && labeled_fraction <= 1.0)) throw ConfigError("labeled_fraction must lie in (0, 1]");
  if (test_count < 0) throw ConfigError("test_count must be >= 0");
  if (checkpoint_every < 0) throw ConfigError("checkpoint_every must be >= 0");
}

// ---- patch sampling ------------------------------------------------------

PatchSampler::PatchSampler(std::vector<const LoadedCase*> cases, Extent3 patch, double fg_ratio, RngStream rng,
                           bool use_labels)
    : patch_(patch), fg_ratio_(fg_ratio), rng_(std::move(rng)) {
  if (cases.empty()) throw ConfigError("patch sampler needs at least one case");
  bool any_fg = false;
  for (const LoadedCase* c : cases) {
    Source s{zero_extend(c->image, patch), std::nullopt, {}};
    if (use_labels && c->label) {
      s.label = zero_extend(*c->label, patch);
      const auto l = s.label->data();
      for (std::size_t i = 0; i < l.size(); ++i)
        if (l[i] != 0) s.foreground.push_back(static_cast<std::int64_t>(i));
      any_fg = any_fg || !s.foreground.empty();
    }
    sources_.push_back(std::move(s));
  }
  if (!use_labels || !sources_.front().label) fg_ratio_ = 0.0;
  if (fg_ratio_ > 0.0 && !any_fg) {
    fallback_ = true;
    std::cerr << "warning: no foreground voxels in any case; sampling patches uniformly\n";
  }
}

Patch PatchSampler::crop(std::size_t case_index, const Extent3& start) const {
  const Source& s = sources_[case_index];
  Patch p;
  p.case_index = case_index;
  p.image = Volume(Shape{patch_[0], patch_[1], patch_[2]}, 0.0f, s.image.spacing());
  if (s.label) p.label = LabelVolume(Shape{patch_[0], patch_[1], patch_[2]}, 0, s.image.spacing());
  for (std::int64_t a = 0; a < patch_[0]; ++a)
    for (std::int64_t b = 0; b < patch_[1]; ++b) {
      const auto src = s.image.index(start[0] + a, start[1] + b, start[2]);
      const auto dst = p.image.index(a, b, 0);
      std::copy_n(s.image.data().begin() + src, patch_[2], p.image.data().begin() + dst);
      if (s.label) std::copy_n(s.label->data().begin() + src, patch_[2], p.label->data().begin() + dst);
    }
  return p;
}

Patch PatchSampler::next() {
  const std::int64_t k = draws_++;
  const bool fg = !fallback_ && fg_ratio_ > 0.0 &&
                  std::floor(static_cast<double>(k + 1) * fg_ratio_) > std::floor(static_cast<double>(k) * fg_ratio_);
  if (fg) {
    std::vector<std::size_t> with_fg;
    for (std::size_t i = 0; i < sources_.size(); ++i)
      if (!sources_[i].foreground.empty()) with_fg.push_back(i);
    const std::size_t ci = with_fg[rng_.below(with_fg.size())];
    const Source& s = sources_[ci];
    const std::int64_t flat = s.foreground[rng_.below(s.foreground.size())];
    const auto e = s.image.extent();
    const std::int64_t centre[3] = {flat / (e[1] * e[2]), (flat / e[2]) % e[1], flat % e[2]};
    Extent3 start;
    for (int a = 0; a < 3; ++a) start[a] = std::clamp(centre[a] - patch_[a] / 2, std::int64_t{0}, e[a] - patch_[a]);
    Patch p = crop(ci, start);
    p.foreground_centred = true;
    return p;
  }
  const std::size_t ci = rng_.below(sources_.size());
  const auto e = sources_[ci].image.extent();
  Extent3 start;
  for (int a = 0; a < 3; ++a) start[a] = static_cast<std::int64_t>(rng_.below(static_cast<std::uint64_t>(e[a] - patch_[a] + 1)));
  return crop(ci, start);
}

Batch make_batch(PatchSampler& sampler, int size, int num_classes) {
  std::vector<Patch> patches;
  for (int i = 0; i < size; ++i) patches.push_back(sampler.next());
  std::vector<const Volume*> images;
  std::vector<const LabelVolume*> labels;
  for (const auto& p : patches) {
    images.push_back(&p.image);
    if (p.label) labels.push_back(&*p.label);
  }
  Batch b{stack_volumes(images), std::nullopt};
  if (labels.size() == patches.size()) b.labels = stack_one_hot(labels, num_classes);
  return b;
}

// ---- logging -------------------------------------------------------------

double IterationRecord::mean_sup() const {
  return l_sup.empty() ? 0.0 : std::accumulate(l_sup.begin(), l_sup.end(), 0.0) / static_cast<double>(l_sup.size());
}

double IterationRecord::mean_cot() const {
  return l_cot.empty() ? 0.0 : std::accumulate(l_cot.begin(), l_cot.end(), 0.0) / static_cast<double>(l_cot.size());
}

std::string iteration_csv_header(int views) {
  std::string h = "stage,iter,lr,lambda,l_sup,l_cot";
  for (int v = 0; v < views; ++v) h += ",l_sup_" + std::to_string(v);
  for (int v = 0; v < views; ++v) h += ",l_cot_" + std::to_string(v);
  for (int v = 0; v < views; ++v) h += ",l_total_" + std::to_string(v);
  for (int v = 0; v < views; ++v) h += ",confidence_" + std::to_string(v);
  return h + "\n";
}

std::string iteration_csv_row(const IterationRecord& r) {
  const std::size_t V = r.l_sup.size();
  std::string s = r.stage + "," + std::to_string(r.iter) + "," + fmt(r.lr) + "," + fmt(r.lambda) + "," +
                  fmt(r.mean_sup()) + "," + (r.l_cot.empty() ? "" : fmt(r.mean_cot()));
  for (std::size_t v = 0; v < V; ++v) s += "," + fmt(r.l_sup[v]);
  for (std::size_t v = 0; v < V; ++v) s += "," + (v < r.l_cot.size() ? fmt(r.l_cot[v]) : std::string());
  for (std::size_t v = 0; v < V; ++v) s += "," + fmt(r.l_total[v]);
  for (std::size_t v = 0; v < V; ++v) s += "," + (v < r.confidence.size() ? fmt(r.confidence[v]) : std::string());
  return s + "\n";
}

std::string fusion_csv_header() { return "iter,target_view,source_view,sample,uncertainty,confidence,weight\n"; }

std::string fusion_csv_rows(const FusionAudit& a) {
  std::string s;
  for (const auto& pl : a.labels)
    for (std::size_t n = 0; n < pl.weights.size(); ++n)
      for (const auto& w : pl.weights[n]) {
        const auto& rep = a.reports[static_cast<std::size_t>(w.view)];
        s += std::to_string(a.iter) + "," + std::to_string(pl.target_view) + "," + std::to_string(w.view) + "," +
             std::to_string(n) + "," + fmt(rep.scalar[n]) + "," + fmt(rep.confidence[n]) + "," + fmt(w.weight) + "\n";
      }
  return s;
}

// ---- training ------------------------------------------------------------

std::vector<ViewModel> make_view_models(const TrainConfig& config) {
  config.validate();
  const ViewSet vs = config.resolved_views();
  const RngStream root(config.seed);
  std::vector<ViewModel> out;
  for (int v = 0; v < config.views; ++v)
    out.push_back(build_model<float>(config.view_descriptor(v), vs[static_cast<std::size_t>(v)],
                                     root.derive("model", static_cast<std::uint64_t>(v)).seed()));
  return out;
}

namespace {

std::vector<const LoadedCase*> pointers(const std::vector<LoadedCase>& cases) {
  std::vector<const LoadedCase*> out;
  for (const auto& c : cases) out.push_back(&c);
  return out;
}

}  // namespace

void train_stage1(std::vector<ViewModel>& views, const std::vector<LoadedCase>& labeled, const TrainConfig& config,
                  const TrainHooks& hooks) {
  if (labeled.empty()) throw ConfigError("stage 1 needs at least one labeled case");
  const FlushDenormals ftz;
  const RngStream root = RngStream(config.seed).derive("stage1");
  PatchSampler sampler(pointers(labeled), config.patch, config.fg_ratio, root.derive("patches"));
  std::vector<Sgd<float>> opt;
  for (auto& v : views) opt.emplace_back(v.net.parameter_list(), config.stage1.sgd);
  const int C = config.arch.num_classes;
  const auto t0 = Clock::now();
  for (int it = 1; it <= config.stage1.iters; ++it) {
    const Batch batch = make_batch(sampler, config.batch_labeled, C);
    IterationRecord rec;
    rec.stage = "stage1";
    rec.iter = it;
    rec.lr = config.stage1.sgd.lr;
    for (std::size_t v = 0; v < views.size(); ++v) {
      const RngStream drop = root.derive("dropout", v, static_cast<std::uint64_t>(it));
      Tape<float> tape;
      Tape<float>::Scope scope(tape);
      const Tensor<float> pred = predict_through_view(views[v], batch.images, ForwardMode::Train, &drop);
      const auto loss = dice_loss(pred, *batch.labels);
      tape.backward(loss.loss);
      opt[v].step();
      opt[v].zero_grad();
      rec.l_sup.push_back(loss.loss.item());
      rec.l_total.push_back(loss.loss.item());
    }
    rec.wall_seconds = seconds_since(t0);
    if (hooks.on_iteration) hooks.on_iteration(rec);
    const bool last = it == config.stage1.iters;
    if (hooks.on_checkpoint && (last || (config.checkpoint_every > 0 && it % config.checkpoint_every == 0)))
      hooks.on_checkpoint("stage1", it, views);
  }
}

CotrainState make_cotrain_state(std::vector<ViewModel>& views, const TrainConfig& config) {
  CotrainState s{{}, RngStream(config.seed).derive("stage2")};
  for (auto& v : views) s.optimizers.emplace_back(v.net.parameter_list(), config.stage2.sgd);
  return s;
}

IterationRecord cotrain_step(std::vector<ViewModel>& views, const Batch& labeled, const std::optional<Batch>& unlabeled,
                             const TrainConfig& config, CotrainState& state, int iter, double lambda,
                             FusionAudit* audit) {
  if (!labeled.labels) throw ConfigError("co-training step needs a labeled batch");
  const std::size_t V = views.size();
  const auto it = static_cast<std::uint64_t>(iter);
  IterationRecord rec;
  rec.stage = "stage2";
  rec.iter = iter;
  rec.lr = config.stage2.sgd.lr;
  rec.lambda = lambda;

  // Pseudo-labels from the current models, before any view is updated.
  std::vector<PseudoLabel<float>> pseudo;
  if (unlabeled) {
    std::vector<Tensor<float>> means;
    std::vector<std::vector<double>> conf;
    std::vector<UncertaintyReport<float>> reports;
    for (std::size_t v = 0; v < V; ++v) {
      const auto mc = mc_sample_predictions(views[v], unlabeled->images, config.mc_samples, state.rng.derive("mc", v, it));
      reports.push_back(epistemic_uncertainty(mc.samples, static_cast<int>(v)));
      means.push_back(mc.mean);
      conf.push_back(reports.back().confidence);
      rec.confidence.push_back(std::accumulate(conf.back().begin(), conf.back().end(), 0.0) /
                               static_cast<double>(conf.back().size()));
    }
    for (std::size_t v = 0; v < V; ++v)
      pseudo.push_back(fuse_pseudo_label(static_cast<int>(v), means, conf, config.fusion));
    if (audit) {
      audit->iter = iter;
      audit->reports = std::move(reports);
      audit->labels = pseudo;
    }
  }

  for (std::size_t v = 0; v < V; ++v) {
    Tape<float> tape;
    Tape<float>::Scope scope(tape);
    const RngStream sup_rng = state.rng.derive("sup", v, it);
    const auto sup = dice_loss(predict_through_view(views[v], labeled.images, ForwardMode::Train, &sup_rng), *labeled.labels);
    Tensor<float> total = sup.loss;
    if (unlabeled) {
      const RngStream cot_rng = state.rng.derive("cot", v, it);
      const Tensor<float> pu = predict_through_view(views[v], unlabeled->images, ForwardMode::Train, &cot_rng);
      const auto cot = dice_loss(pu, pseudo[v].soft_label);
      total = ops::add(sup.loss, ops::mul_scalar(cot.loss, static_cast<float>(lambda)));
      rec.l_cot.push_back(cot.loss.item());
    }
    tape.backward(total);
    state.optimizers[v].step();
    state.optimizers[v].zero_grad();
    rec.l_sup.push_back(sup.loss.item());
    rec.l_total.push_back(total.item());
  }
  return rec;
}

void train_stage2(std::vector<ViewModel>& views, const std::vector<LoadedCase>& labeled,
                  const std::vector<LoadedCase>& unlabeled, const TrainConfig& config, const TrainHooks& hooks) {
  if (labeled.empty()) throw ConfigError("stage 2 needs at least one labeled case");
  const FlushDenormals ftz;
  CotrainState state = make_cotrain_state(views, config);
  PatchSampler lab_sampler(pointers(labeled), config.patch, config.fg_ratio, state.rng.derive("labeled_patches"));
  std::optional<PatchSampler> unl_sampler;
  if (config.mode == TrainMode::Semi && !unlabeled.empty()) {
    unl_sampler.emplace(pointers(unlabeled), config.patch, 0.0, state.rng.derive("unlabeled_patches"), false);
  } else if (config.mode != TrainMode::SupervisedOnly) {
    if (config.mode == TrainMode::Semi)
      std::cerr << "warning: no unlabeled cases; co-training on the labeled images instead\n";
    unl_sampler.emplace(pointers(labeled), config.patch, 0.0, state.rng.derive("unlabeled_patches"), false);
  }
  const int C = config.arch.num_classes;
  const auto t0 = Clock::now();
  for (int it = 1; it <= config.stage2.iters; ++it) {
    const Batch lb = make_batch(lab_sampler, config.batch_labeled, C);
    std::optional<Batch> ub;
    if (unl_sampler) ub = make_batch(*unl_sampler, config.batch_unlabeled, C);
    double lambda = config.lambda_cot;
    if (config.lambda_ramp_iters > 0) lambda *= std::min(1.0, static_cast<double>(it) / config.lambda_ramp_iters);
    FusionAudit audit;
    IterationRecord rec = cotrain_step(views, lb, ub, config, state, it, lambda, hooks.on_fusion ? &audit : nullptr);
    rec.wall_seconds = seconds_since(t0);
    if (hooks.on_iteration) hooks.on_iteration(rec);
    if (hooks.on_fusion && ub) hooks.on_fusion(audit);
    const bool last = it == config.stage2.iters;
    if (hooks.on_checkpoint && (last || (config.checkpoint_every > 0 && it % config.checkpoint_every == 0)))
      hooks.on_checkpoint("stage2", it, views);
  }
}

// ---- evaluation ----------------------------------------------------------

EvalResult evaluate(const std::vector<ViewModel>& views, const std::vector<LoadedCase>& cases, const WindowSpec& spec,
                    std::optional<EnsembleMode> ensemble_mode) {
  if (views.empty()) throw ConfigError("evaluation needs at least one view");
  const FlushDenormals ftz;
  EvalResult r;
  const int C = views.front().net.descriptor().num_classes;
  r.mean_per_view.assign(views.size(), 0.0);
  double ens_sum = 0.0;
  std::size_t single_n = 0, ens_n = 0;
  for (const auto& c : cases) {
    if (!c.label) throw ConfigError("evaluation case " + c.case_id + " has no label");
    std::vector<Volume> scores;
    for (std::size_t v = 0; v < views.size(); ++v) {
      scores.push_back(sliding_window_scores(views[v], c.image, spec));
      const LabelVolume pred = argmax(scores.back());
      for (int k = 1; k < C; ++k) {
        const double d = dsc(pred, *c.label, k);
        r.rows.push_back({c.case_id, "single-" + std::to_string(v), k, d});
        r.mean_single += d;
        r.mean_per_view[v] += d;
        ++single_n;
      }
    }
    if (ensemble_mode) {
      const LabelVolume pred = ensemble(scores, *ensemble_mode);
      for (int k = 1; k < C; ++k) {
        const double d = dsc(pred, *c.label, k);
        r.rows.push_back({c.case_id, "ensemble-" + to_string(*ensemble_mode), k, d});
        ens_sum += d;
        ++ens_n;
      }
    }
  }
  if (single_n > 0) r.mean_single /= static_cast<double>(single_n);
  for (auto& m : r.mean_per_view) m /= static_cast<double>(std::max<std::size_t>(1, single_n / views.size()));
  if (ensemble_mode && ens_n > 0) r.mean_ensemble = ens_sum / static_cast<double>(ens_n);
  return r;
}

std::string eval_csv(const EvalResult& r) {
  std::string s = "case_id,view,class,dsc\n";
  for (const auto& row : r.rows)
    s += row.case_id + "," + row.view + "," + std::to_string(row.class_id) + "," + fmt(row.dsc) + "\n";
  for (std::size_t v = 0; v < r.mean_per_view.size(); ++v)
    s += "summary,single-" + std::to_string(v) + ",all," + fmt(r.mean_per_view[v]) + "\n";
  s += "summary,mean-single,all," + fmt(r.mean_single) + "\n";
  if (r.mean_ensemble) {
    const std::string name = r.rows.empty() ? "ensemble" : r.rows.back().view;
    s += "summary," + name + ",all," + fmt(*r.mean_ensemble) + "\n";
  }
  return s;
}

// ---- runs ----------------------------------------------------------------

std::filesystem::path RunPaths::checkpoint(const std::string& stage, int view, int iter) const {
  char name[96];
  std::snprintf(name, sizeof(name), "%s_view%d_iter%06d.ckpt", stage.c_str(), view, iter);
  return root / "checkpoints" / name;
}

std::filesystem::path RunPaths::final_checkpoint(int view) const {
  return root / "final" / ("view" + std::to_string(view) + ".ckpt");
}

std::vector<ViewModel> load_final_views(const std::filesystem::path& run_dir, int views) {
  const RunPaths paths{run_dir};
  std::vector<ViewModel> out;
  for (int v = 0; v < views; ++v) out.push_back(load_model(paths.final_checkpoint(v)));
  return out;
}

RunResult run_experiment(const ExperimentConfig& experiment, const DatasetManifest& dataset,
                         const std::filesystem::path& out_dir,
                         const std::optional<std::filesystem::path>& stage1_from, bool verbose) {
  const TrainConfig& config = experiment.train;
  config.validate();
  const RunPaths paths{out_dir};
  std::filesystem::create_directories(out_dir);

  DatasetManifest m = dataset;
  const bool unassigned = std::all_of(m.cases.begin(), m.cases.end(), [](const CaseEntry& c) {
    return c.split == Split::Unassigned;
  });
  if (unassigned) m = split(m, config.labeled_fraction, config.test_count, config.seed);

  write_file_bytes(paths.manifest(), run_manifest_json(experiment, m, stage1_from).dump(2) + "\n");

  const auto labeled = load_split(m, Split::LabeledTrain, true);
  const auto unlabeled = load_split(m, Split::UnlabeledTrain, false);
  const auto test = load_split(m, Split::Test, true);

  std::string iter_log = iteration_csv_header(config.views);
  std::string fusion_log = fusion_csv_header();
  std::string timing_log = "stage,iter,wall_s\n";
  TrainHooks hooks;
  hooks.on_iteration = [&](const IterationRecord& r) {
    iter_log += iteration_csv_row(r);
    timing_log += r.stage + "," + std::to_string(r.iter) + "," + fmt(r.wall_seconds) + "\n";
    if (verbose && (r.iter % 50 == 0 || r.iter == 1))
      std::cerr << r.stage << " iter " << r.iter << " l_sup " << r.mean_sup() << " l_cot " << r.mean_cot() << " ("
                << r.wall_seconds << " s)\n";
  };
  hooks.on_fusion = [&](const FusionAudit& a) { fusion_log += fusion_csv_rows(a); };
  hooks.on_checkpoint = [&](const std::string& stage, int iter, const std::vector<ViewModel>& vs) {
    for (std::size_t v = 0; v < vs.size(); ++v) save_model(paths.checkpoint(stage, static_cast<int>(v), iter), vs[v]);
  };

  std::vector<ViewModel> views;
  if (stage1_from) {
    const RunPaths from{*stage1_from};
    for (int v = 0; v < config.views; ++v) views.push_back(load_model(from.checkpoint("stage1", v, config.stage1.iters)));
    const auto fresh = make_view_models(config);
    for (int v = 0; v < config.views; ++v)
      if (!(views[v].net.descriptor() == fresh[v].net.descriptor()) || !(views[v].view == fresh[v].view))
        throw ConfigError("stage-1 checkpoint for view " + std::to_string(v) + " does not match the configuration");
    hooks.on_checkpoint("stage1", config.stage1.iters, views);
  } else {
    views = make_view_models(config);
    train_stage1(views, labeled, config, hooks);
  }
  train_stage2(views, labeled, unlabeled, config, hooks);

  RunResult result;
  for (std::size_t v = 0; v < views.size(); ++v) {
    save_model(paths.final_checkpoint(static_cast<int>(v)), views[v]);
    result.checkpoint_digests.push_back(checkpoint_digest(to_checkpoint(views[v])));
  }
  write_file_bytes(paths.iterations_csv(), iter_log);
  write_file_bytes(paths.fusion_csv(), fusion_log);
  write_file_bytes(paths.timing_csv(), timing_log);

  WindowSpec window{experiment.eval.window.value_or(config.patch), experiment.eval.overlap};
  result.eval = evaluate(views, test, window, config.views >= 2 ? experiment.eval.ensemble : std::nullopt);
  write_file_bytes(paths.metrics_csv(), eval_csv(result.eval));
  result.views = std::move(views);
  return result;
}

}  // namespace umct
