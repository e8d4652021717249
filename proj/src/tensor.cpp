#include "umct/tensor.hpp"

#include <cmath>
#include <sstream>

#include "umct/errors.hpp"

namespace umct {

std::int64_t shape_numel(const Shape& shape) {
  std::int64_t n = 1;
  for (auto e : shape) {
    if (e < 0) throw ShapeError("negative extent in shape " + shape_str(shape));
    n *= e;
  }
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

template <typename T>
Tensor<T>::Tensor(Shape shape, T fill, bool requires_grad) : impl_(std::make_shared<TensorImpl<T>>()) {
  const auto n = shape_numel(shape);
  impl_->shape = std::move(shape);
  impl_->data.assign(static_cast<std::size_t>(n), fill);
  impl_->requires_grad = requires_grad;
}

template <typename T>
Tensor<T>::Tensor(Shape shape, std::vector<T> data, bool requires_grad)
    : impl_(std::make_shared<TensorImpl<T>>()) {
  if (shape_numel(shape) != static_cast<std::int64_t>(data.size()))
    throw ShapeError("tensor data length " + std::to_string(data.size()) + " does not match shape " +
                     shape_str(shape));
  impl_->shape = std::move(shape);
  impl_->data = std::move(data);
  impl_->requires_grad = requires_grad;
}

template <typename T>
T Tensor<T>::item() const {
  if (numel() != 1) throw ShapeError("item() on tensor of shape " + shape_str(shape()));
  return impl_->data[0];
}

template <typename T>
std::span<T> Tensor<T>::mutable_grad() {
  return grad_buffer(*impl_);
}

template <typename T>
void Tensor<T>::zero_grad() {
  std::fill(impl_->grad.begin(), impl_->grad.end(), T{0});
}

template <typename T>
Tensor<T> Tensor<T>::detach() const {
  return Tensor<T>(impl_->shape, impl_->data, false);
}

namespace {
template <typename T>
Tape<T>*& current_tape() {
  thread_local Tape<T>* tape = nullptr;
  return tape;
}
}  // namespace

template <typename T>
Tape<T>::Scope::Scope(Tape& tape) : previous_(current_tape<T>()) {
  current_tape<T>() = &tape;
}

template <typename T>
Tape<T>::Scope::~Scope() {
  current_tape<T>() = previous_;
}

template <typename T>
Tape<T>* Tape<T>::active() {
  return current_tape<T>();
}

template <typename T>
void Tape<T>::record(std::string op, std::vector<std::shared_ptr<TensorImpl<T>>> inputs,
                     std::shared_ptr<TensorImpl<T>> output, std::function<void()> backward) {
  output->requires_grad = true;
  records_.push_back(Record{std::move(op), std::move(inputs), std::move(output), std::move(backward)});
}

template <typename T>
std::size_t Tape<T>::backward(const Tensor<T>& root) {
  if (!root.defined() || root.numel() != 1)
    throw ShapeError("backward() needs a scalar root");
  auto& g = grad_buffer(*root.impl());
  g[0] += T{1};
  std::size_t visited = 0;
  for (auto it = records_.rbegin(); it != records_.rend(); ++it) {
    if (it->output->grad.empty()) continue;  // not upstream of root
    it->backward();
    ++visited;
  }
  return visited;
}

template <typename T>
void check_finite(std::span<const T> values, const char* op) {
  for (T v : values) {
    if (!std::isfinite(v)) throw NumericError(std::string("non-finite value produced by ") + op);
  }
}

template class Tensor<float>;
template class Tensor<double>;
template class Tape<float>;
template class Tape<double>;
template void check_finite<float>(std::span<const float>, const char*);
template void check_finite<double>(std::span<const double>, const char*);

}  // namespace umct
