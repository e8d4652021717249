#pragma once

#include <string>
#include <string_view>
#include <vector>

#include "umct/tensor.hpp"
#include "umct/volume.hpp"

namespace umct {

template <typename T>
struct LossValue {
  Tensor<T> loss;                // scalar, on the tape when pred requires grad
  std::vector<double> per_class;  // foreground classes 1..C-1, batch-averaged
};

// Soft Dice loss on [N,C,D,H,W] score maps. Per sample and foreground class
// c: 1 - (2 sum(p_c t_c) + eps) / (sum p_c + sum t_c + eps). The result
// averages over samples and foreground classes. Both inputs must sum to 1
// over the class axis; the target is treated as a constant.
template <typename T>
LossValue<T> dice_loss(const Tensor<T>& pred, const Tensor<T>& target, double eps = 1e-5);

// 2|P & T| / (|P| + |T|) for one class id; 1 when both are empty.
double dsc(const LabelVolume& pred, const LabelVolume& target, int class_id);

// Per-voxel argmax over the class axis of a (C,D,H,W) score map; ties go to
// the lower class.
LabelVolume argmax(const Volume& scores);

// (C,D,H,W) float map with a 1 in the channel of each label.
Volume one_hot(const LabelVolume& labels, int num_classes);

enum class EnsembleMode { Mean, Majority };
std::string to_string(EnsembleMode m);
EnsembleMode parse_ensemble_mode(std::string_view s);

// Fuses per-view score maps already mapped back to the canonical frame.
// Mean averages scores then takes the argmax; Majority votes per-view argmax
// labels, ties going to the lower class.
LabelVolume ensemble(const std::vector<Volume>& predictions, EnsembleMode mode);

}  // namespace umct
