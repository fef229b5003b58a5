#pragma once

#include <array>
#include <cstddef>
#include <vector>

#include "volfreq/tensor.hpp"

namespace volfreq {

/// Orthonormal 1-D DCT-II basis of length n, row-major (row k = frequency k).
std::vector<double> dct_basis(std::size_t n);

/// Precomputed orthonormal bases for the three trailing axes of a block.
/// Immutable after construction and safe to share between threads.
class DctPlan {
 public:
  explicit DctPlan(std::array<std::size_t, 3> block);

  const std::array<std::size_t, 3>& block() const { return block_; }

  template <typename T>
  const std::vector<T>& basis(std::size_t axis) const;

 private:
  std::array<std::size_t, 3> block_;
  std::array<std::vector<double>, 3> basis_d_;
  std::array<std::vector<float>, 3> basis_f_;
};

enum class DctDirection { kForward, kInverse };

/// Applies the 1-D transform along axis `axis` of the trailing three axes
/// (0, 1 or 2) of `x`, in place.
template <typename T>
void dct_axis(Tensor<T>& x, const DctPlan& plan, std::size_t axis, DctDirection dir);

/// 3-D orthonormal DCT-II over the trailing three axes; leading axes are batch.
template <typename T>
Tensor<T> dct3(const Tensor<T>& x, const DctPlan& plan);
template <typename T>
Tensor<T> idct3(const Tensor<T>& c, const DctPlan& plan);

/// 2-D DCT over the first two of the trailing three axes, independently for
/// every index of the last (depth) axis.
template <typename T>
Tensor<T> dct2_slices(const Tensor<T>& x, const DctPlan& plan);
template <typename T>
Tensor<T> idct2_slices(const Tensor<T>& c, const DctPlan& plan);

}  // namespace volfreq
