#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "umct/checkpoint.hpp"
#include "umct/rng.hpp"
#include "umct/tensor.hpp"
#include "umct/views.hpp"

namespace umct {

enum class KernelMode { Asymmetric, Symmetric };
enum class Upsampling { TransposeConv, Trilinear };
enum class ForwardMode { Train, Eval, McSample };

std::string to_string(KernelMode m);
std::string to_string(Upsampling u);
KernelMode parse_kernel_mode(std::string_view s);
Upsampling parse_upsampling(std::string_view s);

// Shape of the per-view encoder-decoder. Parameter names and shapes are a
// pure function of this descriptor.
struct ArchitectureDescriptor {
  int in_channels = 1;
  int base_channels = 8;
  int depth = 3;
  KernelMode kernel_mode = KernelMode::Asymmetric;
  std::array<int, 3> stem_kernel{7, 7, 3};
  std::array<int, 3> body_kernel{3, 3, 1};
  Upsampling upsampling = Upsampling::TransposeConv;
  double dropout_p = 0.1;
  // Decoder stages (0 = full resolution) followed by a dropout layer.
  std::vector<int> dropout_sites{0, 1, 2};
  int num_classes = 2;

  // Default descriptor for a kernel mode: 7x7x3 stem with 3x3x1 body kernels
  // (asymmetric) or 5x5x5 stem with 3x3x3 body kernels (symmetric).
  static ArchitectureDescriptor with_kernel_mode(KernelMode mode);
  void set_kernel_mode(KernelMode mode);
  void set_depth(int d);  // also resets dropout_sites to every decoder stage

  void validate() const;
  std::string encode() const;  // "key=value" lines
  static ArchitectureDescriptor decode(std::string_view text);

  friend bool operator==(const ArchitectureDescriptor&, const ArchitectureDescriptor&) = default;
};

// Encoder-decoder: stem conv, per-stage residual blocks with stride-2
// downsampling, a bottleneck block, then per stage an upsampling step,
// concatenation with the encoder skip, one conv, and optional dropout.
// Output is softmax-normalised over classes.
template <typename T>
class SegNet {
 public:
  explicit SegNet(ArchitectureDescriptor descriptor);

  // Fan-in scaled uniform weights (bound sqrt(6 / fan_in)), zero biases.
  void init_random(const RngStream& rng);

  const ArchitectureDescriptor& descriptor() const { return descriptor_; }
  const std::vector<std::pair<std::string, Tensor<T>>>& parameters() const { return params_; }
  std::vector<Tensor<T>> parameter_list() const;
  std::size_t parameter_count() const;
  Tensor<T>& param(const std::string& name);
  const Tensor<T>& param(const std::string& name) const;

  struct Features {
    std::vector<Tensor<T>> skips;
    Tensor<T> bottom;
  };

  // The encoder holds no stochastic layers; MC sampling reuses its output.
  Features encode(const Tensor<T>& x) const;
  Tensor<T> decode(const Features& features, ForwardMode mode, const RngStream* rng) const;
  Tensor<T> forward(const Tensor<T>& x, ForwardMode mode, const RngStream* rng) const;

  // Throws ShapeError unless x is [N, in_channels, D, H, W] with every
  // spatial extent divisible by 2^depth.
  void check_input(const Shape& x) const;

 private:
  Tensor<T> conv(const std::string& prefix, const Tensor<T>& x, const std::array<int, 3>& k, int stride) const;
  Tensor<T> residual(const std::string& prefix, const Tensor<T>& x) const;
  int channels(int stage) const { return descriptor_.base_channels << stage; }
  void add_param(const std::string& name, Shape shape);

  ArchitectureDescriptor descriptor_;
  std::vector<std::pair<std::string, Tensor<T>>> params_;
};

// One network bound to one view transform.
template <typename T>
struct BasicViewModel {
  SegNet<T> net;
  ViewTransform view;
  std::uint64_t seed = 0;
};

using ViewModel = BasicViewModel<float>;

struct InitSpec {
  // Random init from the model seed when empty; otherwise random init
  // followed by loading every entry of this checkpoint.
  std::optional<std::filesystem::path> from_file;
};

template <typename T>
BasicViewModel<T> build_model(const ArchitectureDescriptor& descriptor, const ViewTransform& view,
                              std::uint64_t seed, const InitSpec& init = {});

template <typename T>
Tensor<T> forward(const BasicViewModel<T>& model, const Tensor<T>& x, ForwardMode mode, const RngStream* rng);

// inverse(view) o net o view: the score map comes back in the input frame.
template <typename T>
Tensor<T> predict_through_view(const BasicViewModel<T>& model, const Tensor<T>& x, ForwardMode mode,
                               const RngStream* rng);

// K MC-dropout passes through the view; pass k uses rng.derive("mc", k) and
// equals predict_through_view(model, x, McSample, &that stream).
template <typename T>
std::vector<Tensor<T>> sample_through_view(const BasicViewModel<T>& model, const Tensor<T>& x, int samples,
                                           const RngStream& rng);

RngStream mc_pass_stream(const RngStream& rng, int pass);

// Self-describing checkpoint: descriptor, view and seed in the header.
template <typename T>
Checkpoint to_checkpoint(const BasicViewModel<T>& model);
template <typename T>
BasicViewModel<T> model_from_checkpoint(const Checkpoint& ckpt);

// Copies every entry into the matching parameter slot. 4-D (Cout,Cin,kh,kw)
// entries fill (Cout,Cin,kh,kw,1) slots. Throws ShapeError listing every
// entry whose name or shape has no slot.
template <typename T>
void load_parameters(SegNet<T>& net, const Checkpoint& ckpt);

void save_model(const std::filesystem::path& path, const ViewModel& model);
ViewModel load_model(const std::filesystem::path& path);

extern template class SegNet<float>;
extern template class SegNet<double>;

}  // namespace umct
