#include "volfreq/dct.hpp"

#include <Eigen/Core>
#include <cmath>
#include <numbers>

namespace volfreq {

std::vector<double> dct_basis(std::size_t n) {
  std::vector<double> b(n * n);
  const double a0 = std::sqrt(1.0 / static_cast<double>(n));
  const double ak = std::sqrt(2.0 / static_cast<double>(n));
  for (std::size_t k = 0; k < n; ++k) {
    for (std::size_t i = 0; i < n; ++i) {
      b[k * n + i] = (k == 0 ? a0 : ak) *
                     std::cos(std::numbers::pi * static_cast<double>((2 * i + 1) * k) / (2.0 * static_cast<double>(n)));
    }
  }
  return b;
}

DctPlan::DctPlan(std::array<std::size_t, 3> block) : block_(block) {
  for (std::size_t a = 0; a < 3; ++a) {
    if (block_[a] == 0) throw ShapeError("DCT block extent must be positive");
    basis_d_[a] = dct_basis(block_[a]);
    basis_f_[a].assign(basis_d_[a].begin(), basis_d_[a].end());
  }
}

template <>
const std::vector<double>& DctPlan::basis<double>(std::size_t axis) const {
  return basis_d_[axis];
}
template <>
const std::vector<float>& DctPlan::basis<float>(std::size_t axis) const {
  return basis_f_[axis];
}

namespace {

template <typename T>
void check_block(const Tensor<T>& x, const DctPlan& plan) {
  const auto r = x.rank();
  const auto& b = plan.block();
  if (r < 3 || x.shape[r - 3] != b[0] || x.shape[r - 2] != b[1] || x.shape[r - 1] != b[2]) {
    throw ShapeError("DCT plan block (" + std::to_string(b[0]) + ", " + std::to_string(b[1]) + ", " +
                     std::to_string(b[2]) + ") does not match tensor " + shape_string(x.shape));
  }
}

}  // namespace

template <typename T>
void dct_axis(Tensor<T>& x, const DctPlan& plan, std::size_t axis, DctDirection dir) {
  using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  check_block(x, plan);
  const auto& blk = plan.block();
  const std::size_t n = blk[axis];
  std::size_t inner = 1;
  for (std::size_t a = axis + 1; a < 3; ++a) inner *= blk[a];
  const std::size_t outer = x.size() / (n * inner);
  Eigen::Map<const RowMat> basis(plan.basis<T>(axis).data(), n, n);

  if (inner == 1) {
    // Contiguous axis: rows of length n, Y = X * B^T (forward) or X * B (inverse).
    Eigen::Map<RowMat> m(x.data.data(), outer, n);
    RowMat y = dir == DctDirection::kForward ? RowMat(m * basis.transpose()) : RowMat(m * basis);
    m = y;
    return;
  }
  RowMat y(n, inner);
  for (std::size_t o = 0; o < outer; ++o) {
    Eigen::Map<RowMat> m(x.data.data() + o * n * inner, n, inner);
    if (dir == DctDirection::kForward) {
      y.noalias() = basis * m;
    } else {
      y.noalias() = basis.transpose() * m;
    }
    m = y;
  }
}

template <typename T>
Tensor<T> dct3(const Tensor<T>& x, const DctPlan& plan) {
  Tensor<T> out = x;
  for (std::size_t a = 0; a < 3; ++a) dct_axis(out, plan, a, DctDirection::kForward);
  return out;
}

template <typename T>
Tensor<T> idct3(const Tensor<T>& c, const DctPlan& plan) {
  Tensor<T> out = c;
  for (std::size_t a = 0; a < 3; ++a) dct_axis(out, plan, a, DctDirection::kInverse);
  return out;
}

template <typename T>
Tensor<T> dct2_slices(const Tensor<T>& x, const DctPlan& plan) {
  Tensor<T> out = x;
  dct_axis(out, plan, 0, DctDirection::kForward);
  dct_axis(out, plan, 1, DctDirection::kForward);
  return out;
}

template <typename T>
Tensor<T> idct2_slices(const Tensor<T>& c, const DctPlan& plan) {
  Tensor<T> out = c;
  dct_axis(out, plan, 0, DctDirection::kInverse);
  dct_axis(out, plan, 1, DctDirection::kInverse);
  return out;
}

#define VOLFREQ_INSTANTIATE_DCT(T)                                                  \
  template void dct_axis<T>(Tensor<T>&, const DctPlan&, std::size_t, DctDirection); \
  template Tensor<T> dct3<T>(const Tensor<T>&, const DctPlan&);                     \
  template Tensor<T> idct3<T>(const Tensor<T>&, const DctPlan&);                    \
  template Tensor<T> dct2_slices<T>(const Tensor<T>&, const DctPlan&);              \
  template Tensor<T> idct2_slices<T>(const Tensor<T>&, const DctPlan&);

VOLFREQ_INSTANTIATE_DCT(float)
VOLFREQ_INSTANTIATE_DCT(double)

}  // namespace volfreq
