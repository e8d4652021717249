#pragma once

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "umct/network.hpp"
#include "umct/tensor.hpp"

namespace umct {

template <typename T>
struct McPrediction {
  std::vector<Tensor<T>> samples;  // K score maps in the canonical frame
  Tensor<T> mean;
};

// K MC-dropout passes through predict_through_view, pass k drawing from
// mc_pass_stream(rng, k). Throws ParameterError for K < 2.
template <typename T>
McPrediction<T> mc_sample_predictions(const BasicViewModel<T>& model, const Tensor<T>& x, int K,
                                      const RngStream& rng);

// Mean of equally shaped tensors, accumulated in double in sample order.
template <typename T>
Tensor<T> mean_of(const std::vector<Tensor<T>>& samples);

// Per sample n of an [N,C,D,H,W] batch: the voxelwise population variance
// of the K samples, summed over classes, and its volume sum.
template <typename T>
struct UncertaintyReport {
  int view_index = 0;
  Tensor<T> voxelwise;              // [N,D,H,W]
  std::vector<double> scalar;       // per sample, >= 0
  std::vector<double> confidence;   // per sample, confidence(scalar)
};

template <typename T>
UncertaintyReport<T> epistemic_uncertainty(const std::vector<Tensor<T>>& samples, int view_index = 0);

inline constexpr double kConfidenceEps = 1e-6;

// Reciprocal map 1 / (u + 1e-6). Throws ParameterError for negative or
// non-finite u.
double confidence(double u);

enum class FusionMode { Ulf, Uniform };
std::string to_string(FusionMode m);
FusionMode parse_fusion_mode(std::string_view s);

struct FusionWeight {
  int view = 0;
  double weight = 0.0;
};

template <typename T>
struct PseudoLabel {
  int target_view = 0;
  Tensor<T> soft_label;                          // [N,C,D,H,W], no tape linkage
  std::vector<std::vector<FusionWeight>> weights;  // per sample, source views only
};

// Leave-one-out fusion for `target_view`: per sample n, the average of the
// other views' predictions weighted by confidences[view][n] (Ulf) or equally
// (Uniform). Throws ConfigError with fewer than 2 views.
template <typename T>
PseudoLabel<T> fuse_pseudo_label(int target_view, const std::vector<Tensor<T>>& predictions,
                                 const std::vector<std::vector<double>>& confidences, FusionMode mode);

}  // namespace umct
