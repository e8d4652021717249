#include "umct/batch.hpp"

#include <algorithm>

#include "umct/errors.hpp"

namespace umct {

Tensor<float> stack_volumes(const std::vector<const Volume*>& volumes) {
  if (volumes.empty()) throw ShapeError("stack_volumes: empty batch");
  const Volume& first = *volumes.front();
  const auto e = first.extent();
  const std::int64_t C = first.channels();
  Tensor<float> out(Shape{static_cast<std::int64_t>(volumes.size()), C, e[0], e[1], e[2]});
  auto dst = out.mutable_data();
  std::size_t o = 0;
  for (const Volume* v : volumes) {
    if (v->shape() != first.shape())
      throw ShapeError("stack_volumes: " + shape_str(v->shape()) + " vs " + shape_str(first.shape()));
    std::copy(v->data().begin(), v->data().end(), dst.begin() + static_cast<std::ptrdiff_t>(o));
    o += v->size();
  }
  return out;
}

Tensor<float> stack_one_hot(const std::vector<const LabelVolume*>& labels, int num_classes) {
  if (labels.empty()) throw ShapeError("stack_one_hot: empty batch");
  const auto e = labels.front()->extent();
  const std::int64_t S = e[0] * e[1] * e[2];
  Tensor<float> out(Shape{static_cast<std::int64_t>(labels.size()), num_classes, e[0], e[1], e[2]});
  auto dst = out.mutable_data();
  for (std::size_t n = 0; n < labels.size(); ++n) {
    if (labels[n]->extent() != e) throw ShapeError("stack_one_hot: label extents differ");
    const auto l = labels[n]->data();
    float* base = dst.data() + static_cast<std::int64_t>(n) * num_classes * S;
    for (std::int64_t i = 0; i < S; ++i) {
      if (l[i] >= num_classes)
        throw ParameterError("label " + std::to_string(l[i]) + " exceeds class count " + std::to_string(num_classes));
      base[l[i] * S + i] = 1.0f;
    }
  }
  return out;
}

Volume unstack(const Tensor<float>& batch, std::int64_t n) {
  if (batch.ndim() != 5) throw ShapeError("unstack: expected [N,C,D,H,W], got " + shape_str(batch.shape()));
  const auto& s = batch.shape();
  const std::int64_t len = s[1] * s[2] * s[3] * s[4];
  const auto src = batch.data().subspan(static_cast<std::size_t>(n * len), static_cast<std::size_t>(len));
  return Volume(Shape{s[1], s[2], s[3], s[4]}, std::vector<float>(src.begin(), src.end()));
}

}  // namespace umct
