#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <vector>

#include "umct/errors.hpp"
#include "umct/tensor.hpp"

namespace umct {

using Extent3 = std::array<std::int64_t, 3>;
using Spacing3 = std::array<double, 3>;

// Dense 3-D grid (D,H,W) or 4-D grid (C,D,H,W), last axis fastest, with voxel
// spacing in millimetres for the three spatial axes.
template <typename T>
class VoxelGrid {
 public:
  using value_type = T;

  VoxelGrid() = default;
  explicit VoxelGrid(Shape shape, T fill = T{}, Spacing3 spacing = {1.0, 1.0, 1.0})
      : shape_(std::move(shape)), spacing_(spacing) {
    check_rank();
    data_.assign(static_cast<std::size_t>(shape_numel(shape_)), fill);
  }
  VoxelGrid(Shape shape, std::vector<T> data, Spacing3 spacing = {1.0, 1.0, 1.0})
      : shape_(std::move(shape)), data_(std::move(data)), spacing_(spacing) {
    check_rank();
    if (shape_numel(shape_) != static_cast<std::int64_t>(data_.size()))
      throw ShapeError("voxel grid data length does not match shape " + shape_str(shape_));
  }

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::int64_t channels() const { return rank() == 4 ? shape_[0] : 1; }
  Extent3 extent() const {
    const std::size_t o = rank() == 4 ? 1 : 0;
    return {shape_[o], shape_[o + 1], shape_[o + 2]};
  }
  std::int64_t spatial_size() const {
    const auto e = extent();
    return e[0] * e[1] * e[2];
  }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  std::span<const T> data() const { return data_; }
  std::span<T> data() { return data_; }
  std::vector<T>& storage() { return data_; }

  const Spacing3& spacing() const { return spacing_; }
  void set_spacing(Spacing3 s) { spacing_ = s; }

  std::int64_t index(std::int64_t d, std::int64_t h, std::int64_t w) const {
    const auto e = extent();
    return (d * e[1] + h) * e[2] + w;
  }
  T& at(std::int64_t d, std::int64_t h, std::int64_t w) { return data_[index(d, h, w)]; }
  T at(std::int64_t d, std::int64_t h, std::int64_t w) const { return data_[index(d, h, w)]; }
  T& at(std::int64_t c, std::int64_t d, std::int64_t h, std::int64_t w) {
    return data_[c * spatial_size() + index(d, h, w)];
  }
  T at(std::int64_t c, std::int64_t d, std::int64_t h, std::int64_t w) const {
    return data_[c * spatial_size() + index(d, h, w)];
  }

  friend bool operator==(const VoxelGrid& a, const VoxelGrid& b) {
    return a.shape_ == b.shape_ && a.data_ == b.data_ && a.spacing_ == b.spacing_;
  }

 private:
  void check_rank() const {
    if (shape_.size() != 3 && shape_.size() != 4)
      throw ShapeError("voxel grid must have 3 or 4 axes, got " + shape_str(shape_));
  }

  Shape shape_;
  std::vector<T> data_;
  Spacing3 spacing_{1.0, 1.0, 1.0};
};

using Volume = VoxelGrid<float>;
using LabelVolume = VoxelGrid<std::uint8_t>;

}  // namespace umct
