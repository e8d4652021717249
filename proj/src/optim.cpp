#include "umct/optim.hpp"

#include "umct/errors.hpp"

namespace umct {

template <typename T>
void sgd_step(std::span<T> param, std::span<const T> grad, std::span<T> velocity, const SgdOptions& opt) {
  if (param.size() != velocity.size() || (!grad.empty() && grad.size() != param.size()))
    throw ShapeError("sgd_step: parameter, gradient and velocity buffers are not aligned");
  const T lr = static_cast<T>(opt.lr), mom = static_cast<T>(opt.momentum), wd = static_cast<T>(opt.weight_decay);
  for (std::size_t i = 0; i < param.size(); ++i) {
    const T g = grad.empty() ? T{0} : grad[i];
    velocity[i] = mom * velocity[i] + g + wd * param[i];
    param[i] -= lr * velocity[i];
  }
}

template <typename T>
Sgd<T>::Sgd(std::vector<Tensor<T>> params, SgdOptions options)
    : params_(std::move(params)), options_(options) {
  velocity_.reserve(params_.size());
  for (const auto& p : params_) velocity_.emplace_back(p.numel(), T{0});
}

template <typename T>
void Sgd<T>::step() {
  for (std::size_t i = 0; i < params_.size(); ++i) {
    auto& p = params_[i];
    sgd_step<T>(p.mutable_data(), p.grad(), velocity_[i], options_);
  }
}

template <typename T>
void Sgd<T>::zero_grad() {
  for (auto& p : params_) p.zero_grad();
}

template void sgd_step<float>(std::span<float>, std::span<const float>, std::span<float>, const SgdOptions&);
template void sgd_step<double>(std::span<double>, std::span<const double>, std::span<double>, const SgdOptions&);
template class Sgd<float>;
template class Sgd<double>;

}  // namespace umct
