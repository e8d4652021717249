#include "umct/data.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iostream>
#include <map>
#include <numeric>
#include <sstream>

#include "umct/batch.hpp"
#include "umct/checkpoint.hpp"
#include "umct/errors.hpp"
#include "umct/rng.hpp"

namespace umct {
namespace {

constexpr char kVolumeMagic[8] = {'U', 'M', 'C', 'T', 'V', 'O', 'L', '1'};
constexpr std::uint32_t kVolumeVersion = 1;

template <typename U>
void put_le(std::string& out, U v) {
  for (std::size_t i = 0; i < sizeof(U); ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

template <typename U>
U get_le(const std::string& in, std::size_t& pos) {
  if (pos + sizeof(U) > in.size()) throw IoError("volume file: truncated data");
  U v = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i)
    v |= static_cast<U>(static_cast<unsigned char>(in[pos + i])) << (8 * i);
  pos += sizeof(U);
  return v;
}

template <typename T>
struct DTypeOf;
template <>
struct DTypeOf<float> {
  static constexpr DType tag = DType::F32;
  using Bits = std::uint32_t;
};
template <>
struct DTypeOf<double> {
  static constexpr DType tag = DType::F64;
  using Bits = std::uint64_t;
};
template <>
struct DTypeOf<std::uint8_t> {
  static constexpr DType tag = DType::U8;
  using Bits = std::uint8_t;
};
template <>
struct DTypeOf<std::int16_t> {
  static constexpr DType tag = DType::I16;
  using Bits = std::uint16_t;
};

struct VolumeHeader {
  DType dtype;
  Shape shape;
  Spacing3 spacing;
  std::size_t payload;  // byte offset of the raster
};

VolumeHeader parse_header(const std::string& bytes) {
  if (bytes.size() < 8 || std::memcmp(bytes.data(), kVolumeMagic, 8) != 0) throw IoError("not a volume file (bad magic)");
  std::size_t pos = 8;
  const auto version = get_le<std::uint32_t>(bytes, pos);
  if (version != kVolumeVersion) throw IoError("unsupported volume file version " + std::to_string(version));
  VolumeHeader h;
  const auto tag = get_le<std::uint32_t>(bytes, pos);
  if (tag > 3) throw IoError("unknown volume dtype tag " + std::to_string(tag));
  h.dtype = static_cast<DType>(tag);
  const auto rank = get_le<std::uint32_t>(bytes, pos);
  if (rank != 3 && rank != 4) throw IoError("volume rank must be 3 or 4, got " + std::to_string(rank));
  for (std::uint32_t i = 0; i < rank; ++i) h.shape.push_back(static_cast<std::int64_t>(get_le<std::uint64_t>(bytes, pos)));
  for (auto& s : h.spacing) s = std::bit_cast<double>(get_le<std::uint64_t>(bytes, pos));
  h.payload = pos;
  return h;
}

std::map<std::string, std::string> parse_pairs(std::string_view text) {
  std::map<std::string, std::string> out;
  std::istringstream is{std::string(text)};
  std::string tok;
  while (is >> tok) {
    const auto eq = tok.find('=');
    if (eq == std::string::npos) throw ConfigError("expected key=value, got '" + tok + "'");
    out[tok.substr(0, eq)] = tok.substr(eq + 1);
  }
  return out;
}

std::string trim(std::string s) {
  while (!s.empty() && (s.back() == '\r' || s.back() == ' ')) s.pop_back();
  std::size_t i = 0;
  while (i < s.size() && s[i] == ' ') ++i;
  return s.substr(i);
}

}  // namespace

template <typename T>
void write_volume(const std::filesystem::path& path, const VoxelGrid<T>& v) {
  using Bits = typename DTypeOf<T>::Bits;
  std::string out(kVolumeMagic, 8);
  put_le<std::uint32_t>(out, kVolumeVersion);
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(DTypeOf<T>::tag));
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(v.rank()));
  for (auto e : v.shape()) put_le<std::uint64_t>(out, static_cast<std::uint64_t>(e));
  for (double s : v.spacing()) put_le<std::uint64_t>(out, std::bit_cast<std::uint64_t>(s));
  out.reserve(out.size() + v.size() * sizeof(T));
  for (T x : v.data()) put_le<Bits>(out, std::bit_cast<Bits>(x));
  write_file_bytes(path, out);
}

template <typename T>
VoxelGrid<T> read_volume(const std::filesystem::path& path) {
  using Bits = typename DTypeOf<T>::Bits;
  const std::string bytes = read_file_bytes(path);
  const VolumeHeader h = parse_header(bytes);
  if (h.dtype != DTypeOf<T>::tag)
    throw IoError(path.string() + ": dtype tag " + std::to_string(static_cast<int>(h.dtype)) + " does not match " +
                  std::to_string(static_cast<int>(DTypeOf<T>::tag)));
  const auto n = static_cast<std::size_t>(shape_numel(h.shape));
  if (bytes.size() - h.payload != n * sizeof(T))
    throw IoError(path.string() + ": payload length does not match extents " + shape_str(h.shape));
  std::vector<T> data(n);
  std::size_t pos = h.payload;
  for (auto& x : data) x = std::bit_cast<T>(get_le<Bits>(bytes, pos));
  return VoxelGrid<T>(h.shape, std::move(data), h.spacing);
}

DType volume_dtype(const std::filesystem::path& path) { return parse_header(read_file_bytes(path)).dtype; }

template void write_volume(const std::filesystem::path&, const VoxelGrid<float>&);
template void write_volume(const std::filesystem::path&, const VoxelGrid<double>&);
template void write_volume(const std::filesystem::path&, const VoxelGrid<std::uint8_t>&);
template void write_volume(const std::filesystem::path&, const VoxelGrid<std::int16_t>&);
template VoxelGrid<float> read_volume(const std::filesystem::path&);
template VoxelGrid<double> read_volume(const std::filesystem::path&);
template VoxelGrid<std::uint8_t> read_volume(const std::filesystem::path&);
template VoxelGrid<std::int16_t> read_volume(const std::filesystem::path&);

// ---- synthetic cases -----------------------------------------------------

std::string SyntheticParams::encode() const {
  std::ostringstream os;
  os.precision(17);
  os << "extent=" << extent << " noise_std=" << noise_std << " organ_intensity=" << organ_intensity
     << " radius_min=" << radius_min << " radius_max=" << radius_max << " organ_texture=" << organ_texture
     << " distractors_min=" << distractors_min << " distractors_max=" << distractors_max
     << " distractor_radius_min=" << distractor_radius_min << " distractor_radius_max=" << distractor_radius_max
     << " distractor_intensity=" << distractor_intensity << " bias_amplitude=" << bias_amplitude;
  return os.str();
}

SyntheticParams SyntheticParams::decode(std::string_view text) {
  SyntheticParams p;
  for (const auto& [k, v] : parse_pairs(text)) {
    const double x = std::stod(v);
    if (k == "extent") p.extent = static_cast<int>(x);
    else if (k == "noise_std") p.noise_std = x;
    else if (k == "organ_intensity") p.organ_intensity = x;
    else if (k == "radius_min") p.radius_min = x;
    else if (k == "radius_max") p.radius_max = x;
    else if (k == "organ_texture") p.organ_texture = x;
    else if (k == "distractors_min") p.distractors_min = static_cast<int>(x);
    else if (k == "distractors_max") p.distractors_max = static_cast<int>(x);
    else if (k == "distractor_radius_min") p.distractor_radius_min = x;
    else if (k == "distractor_radius_max") p.distractor_radius_max = x;
    else if (k == "distractor_intensity") p.distractor_intensity = x;
    else if (k == "bias_amplitude") p.bias_amplitude = x;
    else throw ConfigError("unknown synthetic parameter '" + k + "'");
  }
  p.validate();
  return p;
}

void SyntheticParams::validate() const {
  if (extent < 16) throw ParameterError("synthetic extent must be >= 16, got " + std::to_string(extent));
  if (!(radius_min >= 1.0) || radius_max < radius_min || 2.0 * radius_max + 4.0 > extent)
    throw ParameterError("organ radii must satisfy 1 <= min <= max and fit the extent");
  if (distractors_min < 0 || distractors_max < distractors_min) throw ParameterError("bad distractor count range");
  if (!(distractor_radius_min > 0.0) || distractor_radius_max < distractor_radius_min)
    throw ParameterError("bad distractor radius range");
  if (noise_std < 0.0) throw ParameterError("noise_std must be >= 0");
}

SyntheticCase generate_case(const SyntheticParams& p, std::uint64_t seed) {
  p.validate();
  const std::int64_t E = p.extent;
  RngStream rng(seed);
  RngStream shape_rng = rng.derive("organ");
  RngStream blob_rng = rng.derive("distractors");
  RngStream noise_rng = rng.derive("noise");
  RngStream bias_rng = rng.derive("bias");

  // Organ: rotated ellipsoid fully inside the grid.
  std::array<double, 3> radii;
  for (auto& r : radii) r = p.radius_min + (p.radius_max - p.radius_min) * shape_rng.uniform();
  const double rmax = *std::max_element(radii.begin(), radii.end());
  std::array<double, 3> centre;
  for (auto& c : centre) c = rmax + 1.0 + (static_cast<double>(E) - 2.0 * rmax - 3.0) * shape_rng.uniform();
  std::array<double, 4> q;
  double qn = 0.0;
  for (auto& v : q) {
    v = shape_rng.normal();
    qn += v * v;
  }
  for (auto& v : q) v /= std::sqrt(qn);
  const double w = q[0], x = q[1], y = q[2], z = q[3];
  const double R[3][3] = {{1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)},
                          {2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)},
                          {2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)}};
  auto organ_metric = [&](double a, double b, double c) {
    const double d[3] = {a - centre[0], b - centre[1], c - centre[2]};
    double s = 0.0;
    for (int k = 0; k < 3; ++k) {
      const double u = R[0][k] * d[0] + R[1][k] * d[1] + R[2][k] * d[2];
      s += (u / radii[k]) * (u / radii[k]);
    }
    return s;
  };
  const double tex_f[3] = {0.5 + 0.5 * shape_rng.uniform(), 0.5 + 0.5 * shape_rng.uniform(),
                           0.5 + 0.5 * shape_rng.uniform()};

  // Distractors: balls that keep clear of the organ.
  struct Blob {
    double c[3];
    double r;
  };
  std::vector<Blob> blobs;
  const int n_blobs = p.distractors_min + static_cast<int>(blob_rng.below(
                                              static_cast<std::uint64_t>(p.distractors_max - p.distractors_min + 1)));
  const double rmin_organ = *std::min_element(radii.begin(), radii.end());
  for (int i = 0; i < n_blobs; ++i) {
    Blob b{};
    b.r = p.distractor_radius_min + (p.distractor_radius_max - p.distractor_radius_min) * blob_rng.uniform();
    for (int attempt = 0; attempt < 100; ++attempt) {
      for (auto& c : b.c) c = b.r + (static_cast<double>(E) - 1.0 - 2.0 * b.r) * blob_rng.uniform();
      if (std::sqrt(organ_metric(b.c[0], b.c[1], b.c[2])) > 1.0 + (b.r + 1.5) / rmin_organ) {
        blobs.push_back(b);
        break;
      }
    }
  }

  // Smooth bias: a random linear ramp plus one low-frequency wave.
  double g[3], f[3], phase = 2.0 * M_PI * bias_rng.uniform();
  for (int k = 0; k < 3; ++k) {
    g[k] = bias_rng.normal();
    f[k] = (bias_rng.uniform() - 0.5) * 2.0 * M_PI / static_cast<double>(E);
  }
  const double gn = std::sqrt(g[0] * g[0] + g[1] * g[1] + g[2] * g[2]) + 1e-12;

  SyntheticCase out{Volume(Shape{E, E, E}), LabelVolume(Shape{E, E, E})};
  auto img = out.image.data();
  auto lab = out.label.data();
  std::int64_t i = 0;
  for (std::int64_t a = 0; a < E; ++a)
    for (std::int64_t b = 0; b < E; ++b)
      for (std::int64_t c = 0; c < E; ++c, ++i) {
        const double pa = static_cast<double>(a), pb = static_cast<double>(b), pc = static_cast<double>(c);
        double v = p.noise_std * noise_rng.normal();
        const double half = 0.5 * static_cast<double>(E - 1);
        v += p.bias_amplitude *
             (0.5 * (g[0] * (pa - half) + g[1] * (pb - half) + g[2] * (pc - half)) / (gn * half) +
              0.5 * std::sin(f[0] * pa + f[1] * pb + f[2] * pc + phase));
        if (organ_metric(pa, pb, pc) <= 1.0) {
          lab[i] = 1;
          v += p.organ_intensity +
               p.organ_texture * std::sin(tex_f[0] * pa) * std::sin(tex_f[1] * pb) * std::sin(tex_f[2] * pc);
        } else {
          for (const auto& bl : blobs) {
            const double d2 = (pa - bl.c[0]) * (pa - bl.c[0]) + (pb - bl.c[1]) * (pb - bl.c[1]) +
                              (pc - bl.c[2]) * (pc - bl.c[2]);
            if (d2 <= bl.r * bl.r) {
              v += p.distractor_intensity;
              break;
            }
          }
        }
        img[i] = static_cast<float>(v);
      }
  return out;
}

// ---- datasets ------------------------------------------------------------

std::string to_string(Split s) {
  switch (s) {
    case Split::LabeledTrain:
      return "labeled-train";
    case Split::UnlabeledTrain:
      return "unlabeled-train";
    case Split::Test:
      return "test";
    case Split::Unassigned:
      return "unassigned";
  }
  return "unassigned";
}

Split parse_split(std::string_view s) {
  if (s == "labeled-train") return Split::LabeledTrain;
  if (s == "unlabeled-train") return Split::UnlabeledTrain;
  if (s == "test") return Split::Test;
  if (s == "unassigned") return Split::Unassigned;
  throw ConfigError("unknown split '" + std::string(s) + "'");
}

std::vector<const CaseEntry*> DatasetManifest::select(Split s) const {
  std::vector<const CaseEntry*> out;
  for (const auto& c : cases)
    if (c.split == s) out.push_back(&c);
  return out;
}

void DatasetManifest::validate() const {
  std::vector<std::string> ids;
  for (const auto& c : cases) {
    ids.push_back(c.case_id);
    if ((c.split == Split::LabeledTrain || c.split == Split::Test) && !c.label)
      throw ConfigError("case " + c.case_id + " is " + to_string(c.split) + " but has no label file");
  }
  std::sort(ids.begin(), ids.end());
  if (std::adjacent_find(ids.begin(), ids.end()) != ids.end()) throw ConfigError("manifest has duplicate case ids");
}

DatasetManifest read_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open manifest " + path.string());
  DatasetManifest m;
  m.directory = path.parent_path();
  m.path = path;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    line = trim(line);
    if (line.empty()) continue;
    if (line[0] == '#') {
      const std::string body = trim(line.substr(1));
      const auto eq = body.find('=');
      if (eq == std::string::npos) continue;
      const std::string key = body.substr(0, eq), value = body.substr(eq + 1);
      if (key == "seed") m.seed = std::stoull(value);
      if (key == "generator") m.generator = value;
      continue;
    }
    std::vector<std::string> f;
    std::istringstream ls(line);
    std::string tok;
    while (std::getline(ls, tok, '\t')) f.push_back(trim(tok));
    if (f.size() != 4) throw IoError(path.string() + ":" + std::to_string(lineno) + ": expected 4 tab-separated fields");
    CaseEntry c{f[0], f[1], std::nullopt, parse_split(f[3])};
    if (f[2] != "-") c.label = f[2];
    m.cases.push_back(std::move(c));
  }
  m.validate();
  return m;
}

void write_manifest(const std::filesystem::path& path, const DatasetManifest& m) {
  m.validate();
  std::ostringstream os;
  os << "# umct dataset manifest\n# seed=" << m.seed << "\n";
  if (!m.generator.empty()) os << "# generator=" << m.generator << "\n";
  for (const auto& c : m.cases)
    os << c.case_id << '\t' << c.image << '\t' << c.label.value_or("-") << '\t' << to_string(c.split) << '\n';
  write_file_bytes(path, os.str());
}

DatasetManifest generate_synthetic(const std::filesystem::path& out_dir, int n_cases, const SyntheticParams& params,
                                   std::uint64_t seed) {
  if (n_cases < 1) throw ParameterError("generate_synthetic needs at least one case");
  params.validate();
  DatasetManifest m;
  m.seed = seed;
  m.generator = params.encode();
  m.directory = out_dir;
  const RngStream root(seed);
  for (int i = 0; i < n_cases; ++i) {
    char id[32];
    std::snprintf(id, sizeof(id), "case_%03d", i);
    const auto c = generate_case(params, root.derive("case", static_cast<std::uint64_t>(i)).seed());
    const std::string img = std::string("images/") + id + ".vol";
    const std::string lab = std::string("labels/") + id + ".vol";
    write_volume(out_dir / img, c.image);
    write_volume(out_dir / lab, c.label);
    m.cases.push_back({id, img, lab, Split::Unassigned});
  }
  m.path = out_dir / "manifest.tsv";
  write_manifest(m.path, m);
  return m;
}

DatasetManifest split(const DatasetManifest& m, double labeled_fraction, int test_count, std::uint64_t seed) {
  const int n = static_cast<int>(m.cases.size());
  if (!(labeled_fraction > 0.0 && labeled_fraction <= 1.0))
    throw ConfigError("labeled_fraction must lie in (0, 1], got " + std::to_string(labeled_fraction));
  if (test_count < 0 || test_count >= n)
    throw ConfigError("test_count " + std::to_string(test_count) + " leaves no training cases out of " +
                      std::to_string(n));
  for (const auto& c : m.cases)
    if (!c.label) throw ConfigError("case " + c.case_id + " has no label file and cannot be split");
  std::vector<int> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  RngStream rng = RngStream(seed).derive("split");
  for (int i = n - 1; i > 0; --i) std::swap(order[i], order[rng.below(static_cast<std::uint64_t>(i + 1))]);
  const int n_train = n - test_count;
  const int n_labeled = std::clamp(static_cast<int>(std::lround(labeled_fraction * n_train)), 1, n_train);
  DatasetManifest out = m;
  for (int k = 0; k < n; ++k) {
    auto& c = out.cases[static_cast<std::size_t>(order[k])];
    c.split = k < test_count ? Split::Test : (k < test_count + n_labeled ? Split::LabeledTrain : Split::UnlabeledTrain);
  }
  return out;
}

std::vector<LoadedCase> load_split(const DatasetManifest& m, Split s, bool with_labels) {
  std::vector<LoadedCase> out;
  for (const CaseEntry* c : m.select(s)) {
    LoadedCase lc{c->case_id, normalize(read_volume<float>(m.directory / c->image)), std::nullopt};
    if (with_labels) {
      if (!c->label) throw ConfigError("case " + c->case_id + " has no label file");
      lc.label = read_volume<std::uint8_t>(m.directory / *c->label);
      if (lc.label->extent() != lc.image.extent()) throw ShapeError("case " + c->case_id + ": label/image extents differ");
    }
    out.push_back(std::move(lc));
  }
  return out;
}

Volume normalize(const Volume& v, bool* constant) {
  const auto x = v.data();
  double mean = 0.0;
  for (float a : x) mean += a;
  mean /= static_cast<double>(x.size());
  double var = 0.0;
  for (float a : x) var += (a - mean) * (a - mean);
  var /= static_cast<double>(x.size());
  Volume out(v.shape(), 0.0f, v.spacing());
  const bool flat = !(var > 0.0);
  if (constant) *constant = flat;
  if (flat) {
    if (!constant) std::cerr << "warning: normalize: constant volume mapped to zeros\n";
    return out;
  }
  const double inv = 1.0 / std::sqrt(var);
  auto y = out.data();
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = static_cast<float>((x[i] - mean) * inv);
  return out;
}

Volume resample(const Volume& v, const Spacing3& spacing) {
  const auto e = v.extent();
  const auto& sp = v.spacing();
  Extent3 ne;
  double scale[3];
  for (int k = 0; k < 3; ++k) {
    if (!(spacing[k] > 0.0)) throw ParameterError("resample: spacing must be positive");
    ne[k] = std::max<std::int64_t>(1, std::llround(static_cast<double>(e[k]) * sp[k] / spacing[k]));
    scale[k] = spacing[k] / sp[k];
  }
  const std::int64_t C = v.channels();
  Shape shape = v.rank() == 4 ? Shape{C, ne[0], ne[1], ne[2]} : Shape{ne[0], ne[1], ne[2]};
  Volume out(shape, 0.0f, spacing);
  auto y = out.data();
  const auto x = v.data();
  const std::int64_t S = v.spatial_size();
  auto axis = [&](int k, std::int64_t i, std::int64_t& i0, std::int64_t& i1, double& t) {
    const double pos = std::clamp(static_cast<double>(i) * scale[k], 0.0, static_cast<double>(e[k] - 1));
    i0 = static_cast<std::int64_t>(std::floor(pos));
    i1 = std::min(i0 + 1, e[k] - 1);
    t = pos - static_cast<double>(i0);
  };
  std::int64_t o = 0;
  for (std::int64_t c = 0; c < C; ++c)
    for (std::int64_t a = 0; a < ne[0]; ++a)
      for (std::int64_t b = 0; b < ne[1]; ++b)
        for (std::int64_t d = 0; d < ne[2]; ++d, ++o) {
          std::int64_t a0, a1, b0, b1, d0, d1;
          double ta, tb, td;
          axis(0, a, a0, a1, ta);
          axis(1, b, b0, b1, tb);
          axis(2, d, d0, d1, td);
          auto at = [&](std::int64_t i, std::int64_t j, std::int64_t k) {
            return static_cast<double>(x[c * S + (i * e[1] + j) * e[2] + k]);
          };
          const double v00 = at(a0, b0, d0) * (1 - td) + at(a0, b0, d1) * td;
          const double v01 = at(a0, b1, d0) * (1 - td) + at(a0, b1, d1) * td;
          const double v10 = at(a1, b0, d0) * (1 - td) + at(a1, b0, d1) * td;
          const double v11 = at(a1, b1, d0) * (1 - td) + at(a1, b1, d1) * td;
          y[o] = static_cast<float>((v00 * (1 - tb) + v01 * tb) * (1 - ta) + (v10 * (1 - tb) + v11 * tb) * ta);
        }
  return out;
}

// ---- inference -----------------------------------------------------------

std::vector<std::int64_t> tile_starts(std::int64_t extent, std::int64_t window, double overlap) {
  if (window < 1) throw ParameterError("window extent must be positive");
  if (!(overlap >= 0.0 && overlap < 1.0)) throw ParameterError("overlap must lie in [0, 1)");
  if (window >= extent) return {0};
  const std::int64_t step = std::max<std::int64_t>(1, static_cast<std::int64_t>(std::floor(window * (1.0 - overlap))));
  std::vector<std::int64_t> out;
  for (std::int64_t s = 0; s + window < extent; s += step) out.push_back(s);
  out.push_back(extent - window);
  return out;
}

Volume sliding_window_scores(const ViewModel& model, const Volume& image, const WindowSpec& spec) {
  if (image.rank() != 3) throw ShapeError("sliding window expects a (D,H,W) image, got " + shape_str(image.shape()));
  const auto e = image.extent();
  const auto& w = spec.window;
  Extent3 pe;
  for (int k = 0; k < 3; ++k) pe[k] = std::max(e[k], w[k]);
  const std::int64_t C = model.net.descriptor().num_classes;
  const std::int64_t PS = pe[0] * pe[1] * pe[2];
  std::vector<double> acc(static_cast<std::size_t>(C * PS), 0.0);
  std::vector<int> count(static_cast<std::size_t>(PS), 0);
  auto padded_at = [&](std::int64_t a, std::int64_t b, std::int64_t c) -> float {
    return a < e[0] && b < e[1] && c < e[2] ? image.at(a, b, c) : 0.0f;
  };
  const auto sa = tile_starts(pe[0], w[0], spec.overlap);
  const auto sb = tile_starts(pe[1], w[1], spec.overlap);
  const auto sc = tile_starts(pe[2], w[2], spec.overlap);
  const std::int64_t WS = w[0] * w[1] * w[2];
  for (auto a0 : sa)
    for (auto b0 : sb)
      for (auto c0 : sc) {
        Tensor<float> tile(Shape{1, 1, w[0], w[1], w[2]});
        auto t = tile.mutable_data();
        std::int64_t i = 0;
        for (std::int64_t a = 0; a < w[0]; ++a)
          for (std::int64_t b = 0; b < w[1]; ++b)
            for (std::int64_t c = 0; c < w[2]; ++c) t[i++] = padded_at(a0 + a, b0 + b, c0 + c);
        const Tensor<float> y = predict_through_view(model, tile, ForwardMode::Eval, nullptr);
        const auto s = y.data();
        i = 0;
        for (std::int64_t a = 0; a < w[0]; ++a)
          for (std::int64_t b = 0; b < w[1]; ++b)
            for (std::int64_t c = 0; c < w[2]; ++c, ++i) {
              const std::int64_t p = ((a0 + a) * pe[1] + b0 + b) * pe[2] + c0 + c;
              ++count[p];
              for (std::int64_t k = 0; k < C; ++k) acc[k * PS + p] += s[k * WS + i];
            }
      }
  Volume out(Shape{C, e[0], e[1], e[2]}, 0.0f, image.spacing());
  for (std::int64_t k = 0; k < C; ++k)
    for (std::int64_t a = 0; a < e[0]; ++a)
      for (std::int64_t b = 0; b < e[1]; ++b)
        for (std::int64_t c = 0; c < e[2]; ++c) {
          const std::int64_t p = (a * pe[1] + b) * pe[2] + c;
          out.at(k, a, b, c) = static_cast<float>(acc[k * PS + p] / count[p]);
        }
  return out;
}

LabelVolume sliding_window_infer(const ViewModel& model, const Volume& image, const WindowSpec& spec) {
  return argmax(sliding_window_scores(model, image, spec));
}

LabelVolume sliding_window_infer(const std::vector<ViewModel>& models, const Volume& image, const WindowSpec& spec,
                                 EnsembleMode mode) {
  std::vector<Volume> scores;
  for (const auto& m : models) scores.push_back(sliding_window_scores(m, image, spec));
  return ensemble(scores, mode);
}

}  // namespace umct
