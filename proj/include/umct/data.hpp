#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "umct/losses.hpp"
#include "umct/network.hpp"
#include "umct/volume.hpp"

namespace umct {

// ---- volume files --------------------------------------------------------
//
// Little-endian layout:
//   char[8]  "UMCTVOL1"
//   u32      version (1)
//   u32      dtype tag (0 f32, 1 f64, 2 u8, 3 i16)
//   u32      rank (3 or 4)
//   u64      extents[rank]
//   f64      spacing[3] (mm, spatial axes)
//   raster   prod(extents) values, last axis fastest

enum class DType : std::uint32_t { F32 = 0, F64 = 1, U8 = 2, I16 = 3 };

template <typename T>
void write_volume(const std::filesystem::path& path, const VoxelGrid<T>& v);
template <typename T>
VoxelGrid<T> read_volume(const std::filesystem::path& path);  // dtype must match T
DType volume_dtype(const std::filesystem::path& path);

// ---- synthetic cases -----------------------------------------------------

struct SyntheticParams {
  int extent = 32;
  double noise_std = 0.45;
  double organ_intensity = 1.0;
  double radius_min = 4.0;  // ellipsoid semi-axes, voxels
  double radius_max = 9.0;
  double organ_texture = 0.25;  // amplitude of a smooth pattern inside the organ
  int distractors_min = 3;
  int distractors_max = 6;
  double distractor_radius_min = 2.0;
  double distractor_radius_max = 4.5;
  double distractor_intensity = 1.0;
  double bias_amplitude = 0.35;  // smooth additive bias field

  std::string encode() const;  // single line of key=value pairs
  static SyntheticParams decode(std::string_view text);
  void validate() const;
};

struct SyntheticCase {
  Volume image;
  LabelVolume label;
};

// Background noise, one rotated ellipsoidal organ (label 1), distractor
// blobs of organ-like intensity, and a smooth bias field. Pure function of
// (params, seed).
SyntheticCase generate_case(const SyntheticParams& params, std::uint64_t seed);

// ---- datasets ------------------------------------------------------------

enum class Split { LabeledTrain, UnlabeledTrain, Test, Unassigned };
std::string to_string(Split s);
Split parse_split(std::string_view s);

struct CaseEntry {
  std::string case_id;
  std::string image;                 // relative to the manifest directory
  std::optional<std::string> label;  // relative to the manifest directory
  Split split = Split::Unassigned;
};

// Tab-separated text, one case per line: case_id, image, label or "-",
// split. Lines starting with '#' carry "key=value" metadata.
struct DatasetManifest {
  std::vector<CaseEntry> cases;
  std::uint64_t seed = 0;
  std::string generator;  // SyntheticParams::encode() when generated
  std::filesystem::path directory;
  std::filesystem::path path;  // the manifest file itself, when read or written

  std::vector<const CaseEntry*> select(Split s) const;
  void validate() const;
};

DatasetManifest read_manifest(const std::filesystem::path& path);
void write_manifest(const std::filesystem::path& path, const DatasetManifest& m);

// Writes n_cases synthetic cases plus manifest.tsv under out_dir; case i
// uses seed derived from (seed, i). Returns the manifest (all Unassigned).
DatasetManifest generate_synthetic(const std::filesystem::path& out_dir, int n_cases, const SyntheticParams& params,
                                   std::uint64_t seed);

// Deterministic shuffle by seed, then test_count test cases, and of the
// remaining training cases round(labeled_fraction * n) labeled (at least one).
DatasetManifest split(const DatasetManifest& m, double labeled_fraction, int test_count, std::uint64_t seed);

struct LoadedCase {
  std::string case_id;
  Volume image;  // normalized
  std::optional<LabelVolume> label;
};

// Loads and normalizes the cases of one split. Labels are read only when
// `with_labels` is set.
std::vector<LoadedCase> load_split(const DatasetManifest& m, Split s, bool with_labels);

// Zero mean, unit population variance. A constant volume maps to zeros and
// sets *constant (a warning is printed when `constant` is null).
Volume normalize(const Volume& v, bool* constant = nullptr);

// Trilinear resampling to a new voxel spacing (same physical extent, voxel
// centres aligned at the origin corner).
Volume resample(const Volume& v, const Spacing3& spacing);

// ---- inference -----------------------------------------------------------

struct WindowSpec {
  Extent3 window{32, 32, 32};
  double overlap = 0.5;  // fraction of the window shared by neighbours
};

// Tile start offsets along one axis covering [0, extent).
std::vector<std::int64_t> tile_starts(std::int64_t extent, std::int64_t window, double overlap);

// Eval-mode score map (C,D,H,W) of one view over the whole volume: tiles are
// run through predict_through_view and overlapping scores averaged. Volumes
// smaller than the window are zero-padded.
Volume sliding_window_scores(const ViewModel& model, const Volume& image, const WindowSpec& spec);

// Hard labels from one view, or from all views fused by `ensemble`.
LabelVolume sliding_window_infer(const ViewModel& model, const Volume& image, const WindowSpec& spec);
LabelVolume sliding_window_infer(const std::vector<ViewModel>& models, const Volume& image, const WindowSpec& spec,
                                 EnsembleMode mode);

}  // namespace umct
