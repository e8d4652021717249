#pragma once

#include <array>
#include <string>
#include <string_view>
#include <vector>

#include "umct/ops.hpp"
#include "umct/volume.hpp"

namespace umct {

// An element of the 48-element symmetry group of the cube acting on a voxel
// grid: output axis k reads input axis permutation()[k], reversed when
// flips()[k]. No resampling happens, so labels survive exactly.
class ViewTransform {
 public:
  ViewTransform() = default;
  ViewTransform(std::array<int, 3> permutation, std::array<bool, 3> flips);

  // Canonical short form: id = 8 * (lexicographic rank of the permutation)
  // + flips[0] + 2 * flips[1] + 4 * flips[2]. Identity is 0.
  static ViewTransform from_id(int id);
  static std::vector<ViewTransform> all();
  // Accepts either an id ("13") or "(p0 p1 p2;f0 f1 f2)".
  static ViewTransform parse(std::string_view text);

  int id() const;
  const std::array<int, 3>& permutation() const { return perm_; }
  const std::array<bool, 3>& flips() const { return flips_; }
  bool is_identity() const { return id() == 0; }
  std::string to_string() const;

  Extent3 map_extent(const Extent3& in) const;

  template <typename T>
  VoxelGrid<T> apply(const VoxelGrid<T>& v) const;

  // Differentiable remap of an [N,C,D,H,W] tensor.
  template <typename T>
  Tensor<T> apply(const Tensor<T>& x) const {
    if (is_identity()) return x;
    return ops::permute_flip_spatial(x, perm_, flips_);
  }

  friend bool operator==(const ViewTransform& a, const ViewTransform& b) {
    return a.perm_ == b.perm_ && a.flips_ == b.flips_;
  }

 private:
  std::array<int, 3> perm_{0, 1, 2};
  std::array<bool, 3> flips_{false, false, false};
};

ViewTransform inverse(const ViewTransform& t);
// outer after inner: apply(compose(b, a), v) == apply(b, apply(a, v)).
ViewTransform compose(const ViewTransform& outer, const ViewTransform& inner);

template <typename T>
VoxelGrid<T> apply(const ViewTransform& t, const VoxelGrid<T>& v) {
  return t.apply(v);
}

using ViewSet = std::vector<ViewTransform>;

// n = 2: identity and the cyclic permutation (H,W,D).
// n = 3: the three cyclic permutations, so each input axis takes the slice
//        (last) position once.
// n = 6: the three cyclic permutations, then the same three with the slice
//        axis reversed.
ViewSet standard_view_set(int n);

// Throws ConfigError on an empty set, duplicates, or a non-identity view 0.
void validate_view_set(const ViewSet& views);

std::string view_set_to_string(const ViewSet& views);
ViewSet parse_view_set(std::string_view text);

}  // namespace umct
