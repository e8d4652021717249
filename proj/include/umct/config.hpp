#pragma once

#include <filesystem>
#include <optional>
#include <string>

#include "json.hpp"
#include "umct/trainer.hpp"

namespace umct {

inline constexpr int kConfigSchemaVersion = 1;
inline constexpr const char* kCodeVersion = "umct 0.1.0";

// Experiment config files are JSON objects; every key is optional and
// missing keys keep the defaults. Unknown keys are rejected with their path.
//
//   schema_version, dataset, output_dir, views, view_set (list of ids or
//   "(p0 p1 p2;f0 f1 f2)" strings), view_dropout, arch {...}, stage1 {lr,
//   momentum, weight_decay, iters}, stage2 {...}, lambda_cot,
//   lambda_ramp_iters, batch_labeled, batch_unlabeled, patch, fg_ratio,
//   mc_samples, fusion, mode, seed, labeled_fraction, test_count,
//   checkpoint_every, eval {window, overlap, ensemble}
nlohmann::json to_json(const ExperimentConfig& c);
ExperimentConfig experiment_from_json(const nlohmann::json& j, ExperimentConfig base = {});
ExperimentConfig read_experiment_config(const std::filesystem::path& path);

// Resolved experiment config, dataset identity, the split actually used and
// format versions; enough to rerun the experiment exactly.
nlohmann::json run_manifest_json(const ExperimentConfig& c, const DatasetManifest& split_dataset,
                                 const std::optional<std::filesystem::path>& stage1_from);

struct ReproductionPlan {
  ExperimentConfig experiment;
  DatasetManifest dataset;  // with the recorded split applied
  std::optional<std::filesystem::path> stage1_from;
};

ReproductionPlan plan_from_run_manifest(const std::filesystem::path& run_manifest);

}  // namespace umct
