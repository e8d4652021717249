#pragma once

#include <vector>

#include "umct/tensor.hpp"
#include "umct/volume.hpp"

namespace umct {

// Stacks equally shaped grids into [N,C,D,H,W]; a (D,H,W) grid counts as C=1.
Tensor<float> stack_volumes(const std::vector<const Volume*>& volumes);

// Stacks one-hot encodings of label grids into [N,num_classes,D,H,W].
Tensor<float> stack_one_hot(const std::vector<const LabelVolume*>& labels, int num_classes);

// Sample n of an [N,C,D,H,W] tensor as a (C,D,H,W) grid.
Volume unstack(const Tensor<float>& batch, std::int64_t n);

}  // namespace umct
