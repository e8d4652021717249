#include "umct/config.hpp"

#include <fstream>
#include <set>

#include "umct/checkpoint.hpp"
#include "umct/errors.hpp"

namespace umct {
namespace {

using nlohmann::json;

void check_keys(const json& j, const std::string& where, std::initializer_list<const char*> allowed) {
  if (!j.is_object()) throw ConfigError(where + ": expected an object");
  std::set<std::string> ok(allowed.begin(), allowed.end());
  for (const auto& [k, v] : j.items())
    if (!ok.count(k)) throw ConfigError("unknown config key '" + where + (where.empty() ? "" : ".") + k + "'");
}

template <typename T>
void read(const json& j, const char* key, T& out, const std::string& where) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw ConfigError("config key '" + where + (where.empty() ? "" : ".") + key + "': " + e.what());
  }
}

json kernel_json(const std::array<int, 3>& k) { return json::array({k[0], k[1], k[2]}); }

json stage_json(const StageConfig& s) {
  return {{"lr", s.sgd.lr}, {"momentum", s.sgd.momentum}, {"weight_decay", s.sgd.weight_decay}, {"iters", s.iters}};
}

void read_stage(const json& j, StageConfig& s, const std::string& where) {
  check_keys(j, where, {"lr", "momentum", "weight_decay", "iters"});
  read(j, "lr", s.sgd.lr, where);
  read(j, "momentum", s.sgd.momentum, where);
  read(j, "weight_decay", s.sgd.weight_decay, where);
  read(j, "iters", s.iters, where);
}

json arch_json(const ArchitectureDescriptor& a) {
  return {{"in_channels", a.in_channels},
          {"base_channels", a.base_channels},
          {"depth", a.depth},
          {"kernel_mode", to_string(a.kernel_mode)},
          {"stem_kernel", kernel_json(a.stem_kernel)},
          {"body_kernel", kernel_json(a.body_kernel)},
          {"upsampling", to_string(a.upsampling)},
          {"dropout_p", a.dropout_p},
          {"dropout_sites", a.dropout_sites},
          {"num_classes", a.num_classes}};
}

void read_arch(const json& j, ArchitectureDescriptor& a) {
  const std::string w = "arch";
  check_keys(j, w, {"in_channels", "base_channels", "depth", "kernel_mode", "stem_kernel", "body_kernel",
                    "upsampling", "dropout_p", "dropout_sites", "num_classes"});
  if (j.contains("kernel_mode")) a.set_kernel_mode(parse_kernel_mode(j.at("kernel_mode").get<std::string>()));
  if (j.contains("depth")) a.set_depth(j.at("depth").get<int>());
  read(j, "in_channels", a.in_channels, w);
  read(j, "base_channels", a.base_channels, w);
  read(j, "stem_kernel", a.stem_kernel, w);
  read(j, "body_kernel", a.body_kernel, w);
  if (j.contains("upsampling")) a.upsampling = parse_upsampling(j.at("upsampling").get<std::string>());
  read(j, "dropout_p", a.dropout_p, w);
  read(j, "dropout_sites", a.dropout_sites, w);
  read(j, "num_classes", a.num_classes, w);
}

}  // namespace

json to_json(const ExperimentConfig& c) {
  const TrainConfig& t = c.train;
  json views = json::array();
  for (const auto& v : t.resolved_views()) views.push_back(v.to_string());
  json eval = {{"overlap", c.eval.overlap},
               {"ensemble", c.eval.ensemble ? to_string(*c.eval.ensemble) : std::string("none")}};
  if (c.eval.window) eval["window"] = *c.eval.window;
  return {{"schema_version", kConfigSchemaVersion},
          {"dataset", c.dataset.string()},
          {"output_dir", c.output_dir.string()},
          {"views", t.views},
          {"view_set", views},
          {"view_dropout", t.view_dropout},
          {"arch", arch_json(t.arch)},
          {"stage1", stage_json(t.stage1)},
          {"stage2", stage_json(t.stage2)},
          {"lambda_cot", t.lambda_cot},
          {"lambda_ramp_iters", t.lambda_ramp_iters},
          {"batch_labeled", t.batch_labeled},
          {"batch_unlabeled", t.batch_unlabeled},
          {"patch", t.patch},
          {"fg_ratio", t.fg_ratio},
          {"mc_samples", t.mc_samples},
          {"fusion", to_string(t.fusion)},
          {"mode", to_string(t.mode)},
          {"seed", t.seed},
          {"labeled_fraction", t.labeled_fraction},
          {"test_count", t.test_count},
          {"checkpoint_every", t.checkpoint_every},
          {"eval", eval}};
}

ExperimentConfig experiment_from_json(const json& j, ExperimentConfig c) {
  check_keys(j, "", {"schema_version", "dataset", "output_dir", "views", "view_set", "view_dropout", "arch", "stage1",
                     "stage2", "lambda_cot", "lambda_ramp_iters", "batch_labeled", "batch_unlabeled", "patch",
                     "fg_ratio", "mc_samples", "fusion", "mode", "seed", "labeled_fraction", "test_count",
                     "checkpoint_every", "eval"});
  if (j.contains("schema_version") && j.at("schema_version").get<int>() != kConfigSchemaVersion)
    throw ConfigError("config schema_version " + j.at("schema_version").dump() + " is not supported (expected " +
                      std::to_string(kConfigSchemaVersion) + ")");
  TrainConfig& t = c.train;
  if (j.contains("dataset")) c.dataset = j.at("dataset").get<std::string>();
  if (j.contains("output_dir")) c.output_dir = j.at("output_dir").get<std::string>();
  read(j, "views", t.views, "");
  if (j.contains("view_set")) {
    t.view_set.clear();
    for (const auto& v : j.at("view_set"))
      t.view_set.push_back(v.is_number() ? ViewTransform::from_id(v.get<int>())
                                         : ViewTransform::parse(v.get<std::string>()));
    if (!j.contains("views")) t.views = static_cast<int>(t.view_set.size());
  }
  read(j, "view_dropout", t.view_dropout, "");
  if (j.contains("arch")) read_arch(j.at("arch"), t.arch);
  if (j.contains("stage1")) read_stage(j.at("stage1"), t.stage1, "stage1");
  if (j.contains("stage2")) read_stage(j.at("stage2"), t.stage2, "stage2");
  read(j, "lambda_cot", t.lambda_cot, "");
  read(j, "lambda_ramp_iters", t.lambda_ramp_iters, "");
  read(j, "batch_labeled", t.batch_labeled, "");
  read(j, "batch_unlabeled", t.batch_unlabeled, "");
  read(j, "patch", t.patch, "");
  read(j, "fg_ratio", t.fg_ratio, "");
  read(j, "mc_samples", t.mc_samples, "");
  if (j.contains("fusion")) t.fusion = parse_fusion_mode(j.at("fusion").get<std::string>());
  if (j.contains("mode")) t.mode = parse_train_mode(j.at("mode").get<std::string>());
  read(j, "seed", t.seed, "");
  read(j, "labeled_fraction", t.labeled_fraction, "");
  read(j, "test_count", t.test_count, "");
  read(j, "checkpoint_every", t.checkpoint_every, "");
  if (j.contains("eval")) {
    const json& e = j.at("eval");
    check_keys(e, "eval", {"window", "overlap", "ensemble"});
    if (e.contains("window")) c.eval.window = e.at("window").get<Extent3>();
    read(e, "overlap", c.eval.overlap, "eval");
    if (e.contains("ensemble")) {
      const auto s = e.at("ensemble").get<std::string>();
      c.eval.ensemble = s == "none" ? std::nullopt : std::optional(parse_ensemble_mode(s));
    }
  }
  return c;
}

ExperimentConfig read_experiment_config(const std::filesystem::path& path) {
  const std::string text = read_file_bytes(path);
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
  return experiment_from_json(j);
}

json run_manifest_json(const ExperimentConfig& c, const DatasetManifest& m,
                       const std::optional<std::filesystem::path>& stage1_from) {
  json splits = json::object();
  for (Split s : {Split::LabeledTrain, Split::UnlabeledTrain, Split::Test}) {
    json ids = json::array();
    for (const auto* e : m.select(s)) ids.push_back(e->case_id);
    splits[to_string(s)] = ids;
  }
  const std::string manifest_bytes = m.path.empty() ? std::string() : read_file_bytes(m.path);
  json out = {{"schema", "umct-run"},
              {"schema_version", kConfigSchemaVersion},
              {"code_version", kCodeVersion},
              {"checkpoint_format_version", kCheckpointVersion},
              {"volume_format_version", 1},
              {"experiment", to_json(c)},
              {"dataset",
               {{"manifest", std::filesystem::absolute(m.path).string()},
                {"manifest_fnv1a", hash_string(manifest_bytes)},
                {"seed", m.seed},
                {"generator", m.generator},
                {"splits", splits}}}};
  if (stage1_from) out["stage1_from"] = std::filesystem::absolute(*stage1_from).string();
  return out;
}

ReproductionPlan plan_from_run_manifest(const std::filesystem::path& path) {
  json j;
  try {
    j = json::parse(read_file_bytes(path));
  } catch (const json::parse_error& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
  if (j.value("schema", "") != "umct-run") throw ConfigError(path.string() + " is not a run manifest");
  ReproductionPlan plan;
  plan.experiment = experiment_from_json(j.at("experiment"));
  const auto& d = j.at("dataset");
  plan.dataset = read_manifest(d.at("manifest").get<std::string>());
  if (hash_string(read_file_bytes(plan.dataset.path)) != d.at("manifest_fnv1a").get<std::uint64_t>())
    throw ConfigError("dataset manifest " + plan.dataset.path.string() + " changed since the run");
  for (auto& c : plan.dataset.cases) c.split = Split::Unassigned;
  for (const auto& [name, ids] : d.at("splits").items()) {
    const Split s = parse_split(name);
    for (const auto& id : ids) {
      auto it = std::find_if(plan.dataset.cases.begin(), plan.dataset.cases.end(),
                             [&](const CaseEntry& c) { return c.case_id == id.get<std::string>(); });
      if (it == plan.dataset.cases.end()) throw ConfigError("recorded case " + id.dump() + " missing from the dataset");
      it->split = s;
    }
  }
  if (j.contains("stage1_from")) plan.stage1_from = j.at("stage1_from").get<std::string>();
  return plan;
}

}  // namespace umct
