#pragma once

#include <span>
#include <vector>

#include "umct/tensor.hpp"

namespace umct {

struct SgdOptions {
  double lr = 7e-3;
  double momentum = 0.9;
  double weight_decay = 4e-5;
};

// One update of SGD with momentum and L2 weight decay:
//   v <- momentum * v + grad + weight_decay * param
//   param <- param - lr * v
template <typename T>
void sgd_step(std::span<T> param, std::span<const T> grad, std::span<T> velocity, const SgdOptions& opt);

// Owns momentum buffers for a fixed parameter list. Parameters without a
// gradient buffer are treated as having zero gradient.
template <typename T>
class Sgd {
 public:
  Sgd(std::vector<Tensor<T>> params, SgdOptions options);

  void step();
  void zero_grad();
  const SgdOptions& options() const { return options_; }

 private:
  std::vector<Tensor<T>> params_;
  std::vector<std::vector<T>> velocity_;
  SgdOptions options_;
};

extern template class Sgd<float>;
extern template class Sgd<double>;

}  // namespace umct
