#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace umct {

using Shape = std::vector<std::int64_t>;

std::int64_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

template <typename T>
struct TensorImpl {
  Shape shape;
  std::vector<T> data;
  std::vector<T> grad;  // empty until a gradient is accumulated
  bool requires_grad = false;
};

// Dense row-major array with an optional gradient buffer. Network data uses
// N x C x D x H x W. Copies share storage; use clone() for a deep copy.
template <typename T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;
  explicit Tensor(Shape shape, T fill = T{0}, bool requires_grad = false);
  Tensor(Shape shape, std::vector<T> data, bool requires_grad = false);

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const { return impl_->shape; }
  std::int64_t dim(std::size_t axis) const { return impl_->shape.at(axis); }
  std::size_t ndim() const { return impl_->shape.size(); }
  std::size_t numel() const { return impl_->data.size(); }

  std::span<const T> data() const { return impl_->data; }
  // Writable access is for leaves (parameters, inputs) only.
  std::span<T> mutable_data() { return impl_->data; }
  T item() const;

  bool requires_grad() const { return impl_ && impl_->requires_grad; }
  void set_requires_grad(bool on) { impl_->requires_grad = on; }
  bool has_grad() const { return !impl_->grad.empty(); }
  std::span<const T> grad() const { return impl_->grad; }
  std::span<T> mutable_grad();  // allocates a zero buffer when absent
  void zero_grad();

  // Deep copy of data, no gradient, no tape linkage.
  Tensor detach() const;
  Tensor clone() const { return detach(); }

  const std::shared_ptr<TensorImpl<T>>& impl() const { return impl_; }
  bool shares_storage(const Tensor& other) const { return impl_ == other.impl_; }

 private:
  std::shared_ptr<TensorImpl<T>> impl_;
};

// Ordered record of differentiable operations. Ops append to the tape that
// is active on the calling thread whenever one of their inputs requires a
// gradient; recording order is a topological order, so backward() walks the
// records once in reverse.
template <typename T>
class Tape {
 public:
  struct Record {
    std::string op;
    std::vector<std::shared_ptr<TensorImpl<T>>> inputs;
    std::shared_ptr<TensorImpl<T>> output;
    std::function<void()> backward;
  };

  // Makes a tape active on this thread for the lifetime of the scope.
  class Scope {
   public:
    explicit Scope(Tape& tape);
    ~Scope();
    Scope(const Scope&) = delete;
    Scope& operator=(const Scope&) = delete;

   private:
    Tape* previous_;
  };

  static Tape* active();

  void record(std::string op, std::vector<std::shared_ptr<TensorImpl<T>>> inputs,
              std::shared_ptr<TensorImpl<T>> output, std::function<void()> backward);

  // Seeds d(root)/d(root) = 1 and runs every reachable backward rule once.
  // Returns the number of rules executed.
  std::size_t backward(const Tensor<T>& root);

  std::size_t size() const { return records_.size(); }
  const std::vector<Record>& records() const { return records_; }
  void clear() { records_.clear(); }

 private:
  std::vector<Record> records_;
};

// Ensures the gradient buffer exists (zero-filled) and returns it.
template <typename T>
std::vector<T>& grad_buffer(TensorImpl<T>& impl) {
  if (impl.grad.empty()) impl.grad.assign(impl.data.size(), T{0});
  return impl.grad;
}

// True when an op with these inputs must be recorded on the active tape.
template <typename T>
bool needs_record(std::initializer_list<const Tensor<T>*> inputs) {
  if (Tape<T>::active() == nullptr) return false;
  for (const auto* t : inputs)
    if (t && t->defined() && t->requires_grad()) return true;
  return false;
}

// Throws NumericError naming `op` when any value is not finite.
template <typename T>
void check_finite(std::span<const T> values, const char* op);

extern template class Tensor<float>;
extern template class Tensor<double>;
extern template class Tape<float>;
extern template class Tape<double>;

}  // namespace umct
