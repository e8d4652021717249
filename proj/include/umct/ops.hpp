#pragma once

#include <array>

#include "umct/rng.hpp"
#include "umct/tensor.hpp"

// Differentiable operations. Each op records its backward rule on the active
// Tape<T> when any input requires a gradient; without an active tape ops are
// plain forward computations.
namespace umct::ops {

struct ConvGeometry {
  std::array<int, 3> stride{1, 1, 1};
  std::array<int, 3> padding{0, 0, 0};
};

// Cross-correlation. input [N,Cin,D,H,W], kernel [Cout,Cin,kd,kh,kw],
// bias [Cout] or undefined.
template <typename T>
Tensor<T> conv3d(const Tensor<T>& input, const Tensor<T>& kernel, const Tensor<T>& bias,
                 const ConvGeometry& geometry = {});

// Learned upsampling with kernel extent == stride == factor (no overlap).
// input [N,Cin,D,H,W], kernel [Cin,Cout,f,f,f], bias [Cout] or undefined.
template <typename T>
Tensor<T> conv_transpose3d(const Tensor<T>& input, const Tensor<T>& kernel, const Tensor<T>& bias,
                           int factor);

// Trilinear upsampling by an integer factor, half-voxel-centred sampling with
// edge clamping. input [N,C,D,H,W].
template <typename T>
Tensor<T> resize_trilinear(const Tensor<T>& input, int factor);

template <typename T>
Tensor<T> relu(const Tensor<T>& input);

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b);

template <typename T>
Tensor<T> mul_scalar(const Tensor<T>& input, T factor);

// Sum of all elements, shape [].
template <typename T>
Tensor<T> sum(const Tensor<T>& input);

// Softmax over axis 1 of an [N,C,...] tensor.
template <typename T>
Tensor<T> softmax_channels(const Tensor<T>& input);

// Concatenates [N,C1,...] and [N,C2,...] along axis 1.
template <typename T>
Tensor<T> concat_channels(const Tensor<T>& a, const Tensor<T>& b);

enum class DropoutMode {
  Train,   // stochastic, inverted scaling
  Eval,    // identity
  Sample,  // stochastic at inference time (MC dropout); same rule as Train
};

// Inverted dropout. Stochastic modes require a generator.
template <typename T>
Tensor<T> dropout(const Tensor<T>& input, double p_drop, DropoutMode mode, RngStream* rng);

// Pure index remap of the three trailing (spatial) axes of an [N,C,D,H,W]
// tensor: output axis k reads input axis perm[k], reversed when flips[k].
template <typename T>
Tensor<T> permute_flip_spatial(const Tensor<T>& input, const std::array<int, 3>& perm,
                               const std::array<bool, 3>& flips);

}  // namespace umct::ops
