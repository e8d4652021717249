#include "umct/network.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <map>
#include <sstream>

#include "umct/errors.hpp"
#include "umct/ops.hpp"

namespace umct {

std::string to_string(KernelMode m) { return m == KernelMode::Asymmetric ? "asymmetric" : "symmetric"; }
std::string to_string(Upsampling u) { return u == Upsampling::TransposeConv ? "transpose" : "trilinear"; }

KernelMode parse_kernel_mode(std::string_view s) {
  if (s == "asymmetric" || s == "asym") return KernelMode::Asymmetric;
  if (s == "symmetric" || s == "sym") return KernelMode::Symmetric;
  throw ConfigError("kernel_mode must be asym|sym, got '" + std::string(s) + "'");
}

Upsampling parse_upsampling(std::string_view s) {
  if (s == "transpose") return Upsampling::TransposeConv;
  if (s == "trilinear") return Upsampling::Trilinear;
  throw ConfigError("upsampling must be transpose|trilinear, got '" + std::string(s) + "'");
}

namespace {

std::string kernel_str(const std::array<int, 3>& k) {
  return std::to_string(k[0]) + "x" + std::to_string(k[1]) + "x" + std::to_string(k[2]);
}

std::array<int, 3> parse_kernel(const std::string& s) {
  std::array<int, 3> k{};
  std::string t = s;
  std::replace(t.begin(), t.end(), 'x', ' ');
  std::istringstream is(t);
  for (auto& v : k)
    if (!(is >> v)) throw ConfigError("kernel extents must look like 3x3x1, got '" + s + "'");
  return k;
}

std::string format_double(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

double parse_double(const std::string& s, const std::string& key) {
  double v = 0;
  auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc{} || res.ptr != s.data() + s.size())
    throw ConfigError("field '" + key + "' expects a number, got '" + s + "'");
  return v;
}

int parse_int(const std::string& s, const std::string& key) {
  int v = 0;
  auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc{} || res.ptr != s.data() + s.size())
    throw ConfigError("field '" + key + "' expects an integer, got '" + s + "'");
  return v;
}

std::map<std::string, std::string> parse_lines(std::string_view text) {
  std::map<std::string, std::string> kv;
  std::istringstream is{std::string(text)};
  std::string line;
  while (std::getline(is, line)) {
    const auto eq = line.find('=');
    if (eq == std::string::npos) continue;
    kv[line.substr(0, eq)] = line.substr(eq + 1);
  }
  return kv;
}


}  // namespace

ArchitectureDescriptor ArchitectureDescriptor::with_kernel_mode(KernelMode mode) {
  ArchitectureDescriptor d;
  d.set_kernel_mode(mode);
  return d;
}

void ArchitectureDescriptor::set_kernel_mode(KernelMode mode) {
  kernel_mode = mode;
  if (mode == KernelMode::Asymmetric) {
    stem_kernel = {7, 7, 3};
    body_kernel = {3, 3, 1};
  } else {
    stem_kernel = {5, 5, 5};
    body_kernel = {3, 3, 3};
  }
}

void ArchitectureDescriptor::set_depth(int d) {
  depth = d;
  dropout_sites.clear();
  for (int s = 0; s < d; ++s) dropout_sites.push_back(s);
}

void ArchitectureDescriptor::validate() const {
  if (depth < 1) throw ConfigError("depth must be >= 1");
  if (num_classes < 2) throw ConfigError("num_classes must be >= 2");
  if (in_channels < 1) throw ConfigError("in_channels must be >= 1");
  if (base_channels < 1) throw ConfigError("base_channels must be >= 1");
  if (!(dropout_p >= 0.0 && dropout_p < 1.0)) throw ConfigError("dropout_p must lie in [0, 1)");
  for (int k : stem_kernel)
    if (k < 1 || k % 2 == 0) throw ConfigError("stem_kernel extents must be odd and positive");
  for (int k : body_kernel)
    if (k < 1 || k % 2 == 0) throw ConfigError("body_kernel extents must be odd and positive");
  for (int s : dropout_sites)
    if (s < 0 || s >= depth) throw ConfigError("dropout_sites entries must lie in [0, depth)");
}

std::string ArchitectureDescriptor::encode() const {
  std::ostringstream os;
  os << "in_channels=" << in_channels << '\n'
     << "base_channels=" << base_channels << '\n'
     << "depth=" << depth << '\n'
     << "kernel_mode=" << to_string(kernel_mode) << '\n'
     << "stem_kernel=" << kernel_str(stem_kernel) << '\n'
     << "body_kernel=" << kernel_str(body_kernel) << '\n'
     << "upsampling=" << to_string(upsampling) << '\n'
     << "dropout_p=" << format_double(dropout_p) << '\n'
     << "dropout_sites=";
  for (std::size_t i = 0; i < dropout_sites.size(); ++i) os << (i ? "," : "") << dropout_sites[i];
  os << '\n' << "num_classes=" << num_classes << '\n';
  return os.str();
}

ArchitectureDescriptor ArchitectureDescriptor::decode(std::string_view text) {
  const auto kv = parse_lines(text);
  auto get = [&](const char* key) -> const std::string& {
    auto it = kv.find(key);
    if (it == kv.end()) throw ConfigError(std::string("architecture descriptor lacks '") + key + "'");
    return it->second;
  };
  ArchitectureDescriptor d;
  d.in_channels = parse_int(get("in_channels"), "in_channels");
  d.base_channels = parse_int(get("base_channels"), "base_channels");
  d.depth = parse_int(get("depth"), "depth");
  d.kernel_mode = parse_kernel_mode(get("kernel_mode"));
  d.stem_kernel = parse_kernel(get("stem_kernel"));
  d.body_kernel = parse_kernel(get("body_kernel"));
  d.upsampling = parse_upsampling(get("upsampling"));
  d.dropout_p = parse_double(get("dropout_p"), "dropout_p");
  d.dropout_sites.clear();
  std::istringstream sites(get("dropout_sites"));
  std::string item;
  while (std::getline(sites, item, ','))
    if (!item.empty()) d.dropout_sites.push_back(parse_int(item, "dropout_sites"));
  d.num_classes = parse_int(get("num_classes"), "num_classes");
  d.validate();
  return d;
}

template <typename T>
SegNet<T>::SegNet(ArchitectureDescriptor descriptor) : descriptor_(std::move(descriptor)) {
  descriptor_.validate();
  const auto& d = descriptor_;
  const auto& sk = d.stem_kernel;
  const auto& bk = d.body_kernel;
  const std::int64_t c0 = channels(0);
  add_param("stem.weight", {c0, d.in_channels, sk[0], sk[1], sk[2]});
  add_param("stem.bias", {c0});
  auto block = [&](const std::string& p, std::int64_t c) {
    add_param(p + ".conv1.weight", {c, c, bk[0], bk[1], bk[2]});
    add_param(p + ".conv1.bias", {c});
    add_param(p + ".conv2.weight", {c, c, bk[0], bk[1], bk[2]});
    add_param(p + ".conv2.bias", {c});
  };
  for (int s = 0; s < d.depth; ++s) {
    const std::string id = std::to_string(s);
    block("enc" + id, channels(s));
    add_param("down" + id + ".weight", {channels(s + 1), channels(s), bk[0], bk[1], bk[2]});
    add_param("down" + id + ".bias", {channels(s + 1)});
  }
  block("mid", channels(d.depth));
  for (int s = d.depth - 1; s >= 0; --s) {
    const std::string id = std::to_string(s);
    std::int64_t up_channels = channels(s + 1);
    if (d.upsampling == Upsampling::TransposeConv) {
      add_param("up" + id + ".weight", {channels(s + 1), channels(s), 2, 2, 2});
      add_param("up" + id + ".bias", {channels(s)});
      up_channels = channels(s);
    }
    add_param("dec" + id + ".weight", {channels(s), up_channels + channels(s), bk[0], bk[1], bk[2]});
    add_param("dec" + id + ".bias", {channels(s)});
  }
  add_param("head.weight", {d.num_classes, c0, 1, 1, 1});
  add_param("head.bias", {d.num_classes});
}

template <typename T>
void SegNet<T>::add_param(const std::string& name, Shape shape) {
  params_.emplace_back(name, Tensor<T>(std::move(shape), T{0}, true));
}

template <typename T>
void SegNet<T>::init_random(const RngStream& rng) {
  for (auto& [name, p] : params_) {
    auto data = p.mutable_data();
    if (p.ndim() == 1) {
      std::fill(data.begin(), data.end(), T{0});
      continue;
    }
    const auto& s = p.shape();
    const bool transpose = name.rfind("up", 0) == 0;
    const std::int64_t fan_in = transpose ? s[0] : s[1] * s[2] * s[3] * s[4];
    const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
    RngStream stream = rng.derive(name);
    for (auto& v : data) v = static_cast<T>((2.0 * stream.uniform() - 1.0) * bound);
  }
}

template <typename T>
std::vector<Tensor<T>> SegNet<T>::parameter_list() const {
  std::vector<Tensor<T>> out;
  for (const auto& [name, p] : params_) out.push_back(p);
  return out;
}

template <typename T>
std::size_t SegNet<T>::parameter_count() const {
  std::size_t n = 0;
  for (const auto& [name, p] : params_) n += p.numel();
  return n;
}

template <typename T>
Tensor<T>& SegNet<T>::param(const std::string& name) {
  for (auto& [n, p] : params_)
    if (n == name) return p;
  throw ConfigError("no parameter named '" + name + "'");
}

template <typename T>
const Tensor<T>& SegNet<T>::param(const std::string& name) const {
  for (const auto& [n, p] : params_)
    if (n == name) return p;
  throw ConfigError("no parameter named '" + name + "'");
}

template <typename T>
void SegNet<T>::check_input(const Shape& x) const {
  if (x.size() != 5) throw ShapeError("network input must be [N,C,D,H,W], got " + shape_str(x));
  if (x[1] != descriptor_.in_channels)
    throw ShapeError("network input has " + std::to_string(x[1]) + " channels, expected " +
                     std::to_string(descriptor_.in_channels));
  const std::int64_t div = std::int64_t{1} << descriptor_.depth;
  for (int a = 2; a < 5; ++a)
    if (x[a] % div != 0 || x[a] == 0)
      throw ShapeError("network input spatial extents " + shape_str(x) + " must be positive multiples of 2^depth = " +
                       std::to_string(div));
}

template <typename T>
Tensor<T> SegNet<T>::conv(const std::string& prefix, const Tensor<T>& x, const std::array<int, 3>& k,
                          int stride) const {
  ops::ConvGeometry g;
  g.stride = {stride, stride, stride};
  g.padding = {k[0] / 2, k[1] / 2, k[2] / 2};
  return ops::conv3d(x, param(prefix + ".weight"), param(prefix + ".bias"), g);
}

template <typename T>
Tensor<T> SegNet<T>::residual(const std::string& prefix, const Tensor<T>& x) const {
  const auto& bk = descriptor_.body_kernel;
  Tensor<T> h = ops::relu(conv(prefix + ".conv1", x, bk, 1));
  h = conv(prefix + ".conv2", h, bk, 1);
  return ops::relu(ops::add(x, h));
}

template <typename T>
typename SegNet<T>::Features SegNet<T>::encode(const Tensor<T>& x) const {
  check_input(x.shape());
  const auto& d = descriptor_;
  Features f;
  Tensor<T> h = ops::relu(conv("stem", x, d.stem_kernel, 1));
  for (int s = 0; s < d.depth; ++s) {
    const std::string id = std::to_string(s);
    Tensor<T> e = residual("enc" + id, h);
    f.skips.push_back(e);
    h = ops::relu(conv("down" + id, e, d.body_kernel, 2));
  }
  f.bottom = residual("mid", h);
  return f;
}

template <typename T>
Tensor<T> SegNet<T>::decode(const Features& features, ForwardMode mode, const RngStream* rng) const {
  const auto& d = descriptor_;
  const bool stochastic = mode != ForwardMode::Eval && d.dropout_p > 0.0 && !d.dropout_sites.empty();
  if (stochastic && rng == nullptr) throw ParameterError("stochastic forward pass needs a generator");
  const ops::DropoutMode dm = mode == ForwardMode::Train   ? ops::DropoutMode::Train
                              : mode == ForwardMode::Eval ? ops::DropoutMode::Eval
                                                          : ops::DropoutMode::Sample;
  Tensor<T> h = features.bottom;
  for (int s = d.depth - 1; s >= 0; --s) {
    const std::string id = std::to_string(s);
    Tensor<T> u = d.upsampling == Upsampling::TransposeConv
                      ? ops::relu(ops::conv_transpose3d(h, param("up" + id + ".weight"), param("up" + id + ".bias"), 2))
                      : ops::resize_trilinear(h, 2);
    h = ops::relu(conv("dec" + id, ops::concat_channels(u, features.skips[s]), d.body_kernel, 1));
    if (stochastic && std::find(d.dropout_sites.begin(), d.dropout_sites.end(), s) != d.dropout_sites.end()) {
      RngStream site = rng->derive("dropout", static_cast<std::uint64_t>(s));
      h = ops::dropout(h, d.dropout_p, dm, &site);
    }
  }
  Tensor<T> logits = conv("head", h, {1, 1, 1}, 1);
  return ops::softmax_channels(logits);
}

template <typename T>
Tensor<T> SegNet<T>::forward(const Tensor<T>& x, ForwardMode mode, const RngStream* rng) const {
  return decode(encode(x), mode, rng);
}

template <typename T>
BasicViewModel<T> build_model(const ArchitectureDescriptor& descriptor, const ViewTransform& view,
                              std::uint64_t seed, const InitSpec& init) {
  BasicViewModel<T> model{SegNet<T>(descriptor), view, seed};
  model.net.init_random(RngStream(seed).derive("init"));
  if (init.from_file) load_parameters(model.net, read_checkpoint(*init.from_file));
  return model;
}

template <typename T>
Tensor<T> forward(const BasicViewModel<T>& model, const Tensor<T>& x, ForwardMode mode, const RngStream* rng) {
  return model.net.forward(x, mode, rng);
}

template <typename T>
Tensor<T> predict_through_view(const BasicViewModel<T>& model, const Tensor<T>& x, ForwardMode mode,
                               const RngStream* rng) {
  const Tensor<T> y = model.net.forward(model.view.apply(x), mode, rng);
  return inverse(model.view).apply(y);
}

RngStream mc_pass_stream(const RngStream& rng, int pass) {
  return rng.derive("mc", static_cast<std::uint64_t>(pass));
}

template <typename T>
std::vector<Tensor<T>> sample_through_view(const BasicViewModel<T>& model, const Tensor<T>& x, int samples,
                                           const RngStream& rng) {
  const auto features = model.net.encode(model.view.apply(x));
  const ViewTransform back = inverse(model.view);
  std::vector<Tensor<T>> out;
  out.reserve(static_cast<std::size_t>(samples));
  for (int k = 0; k < samples; ++k) {
    const RngStream pass = mc_pass_stream(rng, k);
    out.push_back(back.apply(model.net.decode(features, ForwardMode::McSample, &pass)));
  }
  return out;
}

template <typename T>
Checkpoint to_checkpoint(const BasicViewModel<T>& model) {
  Checkpoint ckpt;
  ckpt.header = model.net.descriptor().encode() + "view=" + model.view.to_string() + "\nseed=" +
                std::to_string(model.seed) + "\n";
  for (const auto& [name, p] : model.net.parameters()) {
    NamedArray e{name, p.shape(), {}};
    e.values.reserve(p.numel());
    for (T v : p.data()) e.values.push_back(static_cast<float>(v));
    ckpt.entries.push_back(std::move(e));
  }
  return ckpt;
}

template <typename T>
void load_parameters(SegNet<T>& net, const Checkpoint& ckpt) {
  std::vector<std::string> bad;
  std::vector<std::pair<const NamedArray*, Tensor<T>*>> matched;
  for (const auto& e : ckpt.entries) {
    const auto& params = net.parameters();
    const bool known = std::any_of(params.begin(), params.end(), [&](const auto& kv) { return kv.first == e.name; });
    if (!known) {
      bad.push_back(e.name + " (no such parameter)");
      continue;
    }
    Tensor<T>* slot = &net.param(e.name);
    Shape want = slot->shape();
    Shape have = e.shape;
    const bool unsqueeze = have.size() == 4 && want.size() == 5 && want[4] == 1;
    if (unsqueeze) have.push_back(1);
    if (have != want) {
      bad.push_back(e.name + " (file " + shape_str(e.shape) + ", model " + shape_str(want) + ")");
      continue;
    }
    matched.emplace_back(&e, slot);
  }
  if (!bad.empty()) {
    std::string msg = "checkpoint does not match the model:";
    for (const auto& b : bad) msg += "\n  " + b;
    throw ShapeError(msg);
  }
  for (auto [e, slot] : matched) {
    auto dst = slot->mutable_data();
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = static_cast<T>(e->values[i]);
  }
}

template <typename T>
BasicViewModel<T> model_from_checkpoint(const Checkpoint& ckpt) {
  const auto descriptor = ArchitectureDescriptor::decode(ckpt.header);
  const auto kv = parse_lines(ckpt.header);
  ViewTransform view;
  std::uint64_t seed = 0;
  if (auto it = kv.find("view"); it != kv.end()) view = ViewTransform::parse(it->second);
  if (auto it = kv.find("seed"); it != kv.end()) seed = std::stoull(it->second);
  BasicViewModel<T> model{SegNet<T>(descriptor), view, seed};
  for (const auto& [name, p] : model.net.parameters())
    if (ckpt.find(name) == nullptr) throw ShapeError("checkpoint lacks parameter '" + name + "'");
  load_parameters(model.net, ckpt);
  return model;
}

void save_model(const std::filesystem::path& path, const ViewModel& model) {
  write_checkpoint(path, to_checkpoint(model));
}

ViewModel load_model(const std::filesystem::path& path) { return model_from_checkpoint<float>(read_checkpoint(path)); }

template class SegNet<float>;
template class SegNet<double>;

#define UMCT_INSTANTIATE_MODEL(T)                                                                          \
  template BasicViewModel<T> build_model<T>(const ArchitectureDescriptor&, const ViewTransform&, std::uint64_t, \
                                            const InitSpec&);                                              \
  template Tensor<T> forward<T>(const BasicViewModel<T>&, const Tensor<T>&, ForwardMode, const RngStream*);     \
  template Tensor<T> predict_through_view<T>(const BasicViewModel<T>&, const Tensor<T>&, ForwardMode,           \
                                             const RngStream*);                                             \
  template std::vector<Tensor<T>> sample_through_view<T>(const BasicViewModel<T>&, const Tensor<T>&, int,       \
                                                         const RngStream&);                                 \
  template Checkpoint to_checkpoint<T>(const BasicViewModel<T>&);                                              \
  template BasicViewModel<T> model_from_checkpoint<T>(const Checkpoint&);                                      \
  template void load_parameters<T>(SegNet<T>&, const Checkpoint&);

UMCT_INSTANTIATE_MODEL(float)
UMCT_INSTANTIATE_MODEL(double)

}  // namespace umct
