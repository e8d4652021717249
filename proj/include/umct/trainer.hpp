#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "umct/data.hpp"
#include "umct/network.hpp"
#include "umct/optim.hpp"
#include "umct/uncertainty.hpp"
#include "umct/views.hpp"

namespace umct {

enum class TrainMode { Semi, FullSupervisedCotrain, SupervisedOnly };
std::string to_string(TrainMode m);
TrainMode parse_train_mode(std::string_view s);  // semi | full | supervised

struct StageConfig {
  SgdOptions sgd;
  int iters = 1;
};

struct TrainConfig {
  int views = 3;
  ViewSet view_set;  // empty: standard_view_set(views)
  ArchitectureDescriptor arch;
  // Per-view dropout rate; entries < 0 keep arch.dropout_p.
  std::vector<double> view_dropout;
  StageConfig stage1{{7e-3, 0.9, 4e-5}, 1000};
  StageConfig stage2{{1e-3, 0.9, 4e-5}, 500};
  double lambda_cot = 0.2;
  int lambda_ramp_iters = 0;  // linear ramp of lambda over stage 2; 0 = constant
  int batch_labeled = 2;
  int batch_unlabeled = 2;
  Extent3 patch{32, 32, 32};
  double fg_ratio = 0.5;  // fraction of labeled patches centred on foreground
  int mc_samples = 10;
  FusionMode fusion = FusionMode::Ulf;
  TrainMode mode = TrainMode::Semi;
  std::uint64_t seed = 0;
  double labeled_fraction = 0.1;
  int test_count = 20;
  int checkpoint_every = 0;  // 0: only at the end of each stage

  ViewSet resolved_views() const;
  ArchitectureDescriptor view_descriptor(int view) const;
  void validate() const;
};

// ---- patch sampling ------------------------------------------------------

struct Patch {
  Volume image;
  std::optional<LabelVolume> label;
  bool foreground_centred = false;
  std::size_t case_index = 0;
};

// Draw k is foreground-centred exactly when floor((k+1) r) > floor(k r), so
// r = 0.5 alternates background / foreground. Cases are chosen uniformly.
// Images without labels always yield uniform patches without labels.
// Volumes smaller than the patch are zero-extended.
class PatchSampler {
 public:
  PatchSampler(std::vector<const LoadedCase*> cases, Extent3 patch, double fg_ratio, RngStream rng,
               bool use_labels = true);

  Patch next();
  std::int64_t draws() const { return draws_; }
  bool fell_back_to_uniform() const { return fallback_; }

 private:
  struct Source {
    Volume image;
    std::optional<LabelVolume> label;
    std::vector<std::int64_t> foreground;  // flat indices
  };
  Patch crop(std::size_t case_index, const Extent3& start) const;

  std::vector<Source> sources_;
  Extent3 patch_;
  double fg_ratio_;
  RngStream rng_;
  std::int64_t draws_ = 0;
  bool fallback_ = false;
};

struct Batch {
  Tensor<float> images;               // [N,1,D,H,W]
  std::optional<Tensor<float>> labels;  // [N,C,D,H,W] one-hot
};

Batch make_batch(PatchSampler& sampler, int size, int num_classes);

// ---- training ------------------------------------------------------------

struct IterationRecord {
  std::string stage;
  int iter = 0;
  double lr = 0.0;
  double lambda = 0.0;
  std::vector<double> l_sup;      // per view
  std::vector<double> l_cot;      // per view, empty when not computed
  std::vector<double> l_total;    // per view, l_sup + lambda * l_cot
  std::vector<double> confidence; // per view, mean over the unlabeled batch
  double wall_seconds = 0.0;

  double mean_sup() const;
  double mean_cot() const;
};

std::string iteration_csv_header(int views);
std::string iteration_csv_row(const IterationRecord& r);

// Rows: iter, target_view, source_view, sample, uncertainty, confidence, weight.
struct FusionAudit {
  int iter = 0;
  std::vector<UncertaintyReport<float>> reports;  // per view
  std::vector<PseudoLabel<float>> labels;         // per target view
};
std::string fusion_csv_header();
std::string fusion_csv_rows(const FusionAudit& a);

// Callbacks for logging and checkpoints; all optional.
struct TrainHooks {
  std::function<void(const IterationRecord&)> on_iteration;
  std::function<void(const FusionAudit&)> on_fusion;
  std::function<void(const std::string& stage, int iter, const std::vector<ViewModel>&)> on_checkpoint;
};

std::vector<ViewModel> make_view_models(const TrainConfig& config);

// Per view i, independently: dice_loss(predict_through_view(f_i, X), Y) on
// the same labeled patch stream, one SGD step per iteration.
void train_stage1(std::vector<ViewModel>& views, const std::vector<LoadedCase>& labeled, const TrainConfig& config,
                  const TrainHooks& hooks = {});

// Runs stage 2 on already trained views. Semi: the unlabeled batch comes
// from `unlabeled` (from the labeled images when there are none);
// FullSupervisedCotrain: from the labeled cases (images only);
// SupervisedOnly: no co-training term.
void train_stage2(std::vector<ViewModel>& views, const std::vector<LoadedCase>& labeled,
                  const std::vector<LoadedCase>& unlabeled, const TrainConfig& config, const TrainHooks& hooks = {});

// State carried across stage-2 iterations.
struct CotrainState {
  std::vector<Sgd<float>> optimizers;
  RngStream rng;
};

CotrainState make_cotrain_state(std::vector<ViewModel>& views, const TrainConfig& config);

// One iteration of the co-training loop over all views:
//   MC-dropout means and confidences of every view on the unlabeled batch,
//   leave-one-out fused pseudo-labels (detached),
//   per view L = L_sup(labeled) + lambda * L_cot(unlabeled, pseudo-label),
//   one SGD step per view.
// With `unlabeled` empty only L_sup is used.
IterationRecord cotrain_step(std::vector<ViewModel>& views, const Batch& labeled, const std::optional<Batch>& unlabeled,
                             const TrainConfig& config, CotrainState& state, int iter, double lambda,
                             FusionAudit* audit = nullptr);

// ---- evaluation ----------------------------------------------------------

struct DscRow {
  std::string case_id;
  std::string view;  // "single-<i>", "ensemble-mean", "ensemble-majority"
  int class_id = 1;
  double dsc = 0.0;
};

struct EvalResult {
  std::vector<DscRow> rows;
  double mean_single = 0.0;  // mean over cases and views of foreground DSC
  std::vector<double> mean_per_view;
  std::optional<double> mean_ensemble;
};

EvalResult evaluate(const std::vector<ViewModel>& views, const std::vector<LoadedCase>& cases, const WindowSpec& spec,
                    std::optional<EnsembleMode> ensemble_mode);
std::string eval_csv(const EvalResult& r);

// ---- runs ----------------------------------------------------------------

struct EvalOptions {
  std::optional<Extent3> window;  // default: the training patch
  double overlap = 0.5;
  std::optional<EnsembleMode> ensemble = EnsembleMode::Mean;  // ignored for one view
};

// Everything a run needs besides the data itself.
struct ExperimentConfig {
  TrainConfig train;
  std::filesystem::path dataset;     // manifest.tsv
  std::filesystem::path output_dir;
  EvalOptions eval;
};

struct RunPaths {
  std::filesystem::path root;
  std::filesystem::path checkpoint(const std::string& stage, int view, int iter) const;
  std::filesystem::path final_checkpoint(int view) const;
  std::filesystem::path iterations_csv() const { return root / "iterations.csv"; }
  std::filesystem::path fusion_csv() const { return root / "fusion.csv"; }
  std::filesystem::path timing_csv() const { return root / "timing.csv"; }  // wall clock, not reproducible
  std::filesystem::path manifest() const { return root / "run_manifest.json"; }
  std::filesystem::path metrics_csv() const { return root / "metrics.csv"; }
};

struct RunResult {
  std::vector<ViewModel> views;
  EvalResult eval;
  std::vector<std::uint64_t> checkpoint_digests;  // final, per view
};

// Splits the dataset when no split is assigned, runs stage 1 (or loads the
// stage-1 checkpoints of the run in `stage1_from`), stage 2 per mode, and
// evaluation on the test split. Writes the run manifest, checkpoints, logs
// and metrics under out_dir.
RunResult run_experiment(const ExperimentConfig& experiment, const DatasetManifest& dataset,
                         const std::filesystem::path& out_dir,
                         const std::optional<std::filesystem::path>& stage1_from = std::nullopt,
                         bool verbose = false);

std::vector<ViewModel> load_final_views(const std::filesystem::path& run_dir, int views);

}  // namespace umct
