#include "volfreq/volume.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace volfreq {

Volume::Volume(Extent extent, std::vector<double> data, IntensityRange range)
    : extent_(extent), range_(range), data_(std::move(data)) {
  if (extent_.h == 0 || extent_.w == 0 || extent_.d == 0) {
    throw ShapeError("volume extent must be at least 1 along every axis");
  }
  if (data_.size() != extent_.voxels()) {
    throw ShapeError("volume payload has " + std::to_string(data_.size()) + " voxels, extent needs " +
                     std::to_string(extent_.voxels()));
  }
  if (!(range_.lo < range_.hi)) throw std::invalid_argument("intensity range requires lo < hi");
  for (double v : data_) {
    if (!std::isfinite(v)) throw std::invalid_argument("volume contains a non-finite voxel");
  }
}

Volume Volume::filled(Extent extent, double value, IntensityRange range) {
  return Volume(extent, std::vector<double>(extent.voxels(), value), range);
}

LabelField::LabelField(Extent extent, int num_class, std::vector<std::uint8_t> classes)
    : extent_(extent), num_class_(num_class), classes_(std::move(classes)) {
  if (num_class_ < 2 || num_class_ > 255) throw std::invalid_argument("num_class must be in [2, 255]");
  if (classes_.size() != extent_.voxels()) throw ShapeError("label payload does not match extent");
  for (auto c : classes_) {
    if (c >= num_class_) throw std::invalid_argument("label " + std::to_string(c) + " out of range");
  }
}

std::size_t LabelField::count(int cls) const {
  return static_cast<std::size_t>(std::count(classes_.begin(), classes_.end(), static_cast<std::uint8_t>(cls)));
}

std::array<std::size_t, 3> PatchGrid::origin(std::size_t index) const {
  const std::size_t k = index % counts[2];
  const std::size_t j = (index / counts[2]) % counts[1];
  const std::size_t i = index / (counts[1] * counts[2]);
  return {i * patch, j * patch, k * patch};
}

PatchGrid make_grid(const Extent& extent, std::array<std::size_t, 3> patch_shape) {
  if (patch_shape[0] != patch_shape[1] || patch_shape[1] != patch_shape[2]) {
    throw ShapeError("patch shape must be cubic");
  }
  const std::size_t p = patch_shape[0];
  if (p < 2) throw ShapeError("patch edge must be at least 2");
  if (p > extent.h || p > extent.w || p > extent.d) {
    throw ShapeError("patch edge " + std::to_string(p) + " exceeds volume extent");
  }
  PatchGrid g;
  g.original = extent;
  g.patch = p;
  g.counts = {(extent.h + p - 1) / p, (extent.w + p - 1) / p, (extent.d + p - 1) / p};
  g.padded = {g.counts[0] * p, g.counts[1] * p, g.counts[2] * p};
  return g;
}

namespace {

// Visits every stack element with the source voxel index it replicates.
template <typename F>
void for_each_patch_voxel(const PatchGrid& g, F&& f) {
  const std::size_t p = g.patch;
  const auto& e = g.original;
  std::size_t s = 0;
  for (std::size_t n = 0; n < g.count(); ++n) {
    const auto o = g.origin(n);
    for (std::size_t a = 0; a < p; ++a) {
      const std::size_t i = o[0] + a;
      const std::size_t si = std::min(i, e.h - 1);
      for (std::size_t b = 0; b < p; ++b) {
        const std::size_t j = o[1] + b;
        const std::size_t sj = std::min(j, e.w - 1);
        const bool inside_ij = i < e.h && j < e.w;
        for (std::size_t c = 0; c < p; ++c, ++s) {
          const std::size_t k = o[2] + c;
          const std::size_t sk = std::min(k, e.d - 1);
          f(s, e.index(si, sj, sk), inside_ij && k < e.d);
        }
      }
    }
  }
}

}  // namespace

template <typename T>
Tensor<T> split_patches(std::span<const T> volume, const PatchGrid& grid) {
  if (volume.size() != grid.original.voxels()) throw ShapeError("split: volume does not match grid");
  Tensor<T> out(grid.stack_shape());
  for_each_patch_voxel(grid, [&](std::size_t s, std::size_t v, bool) { out.data[s] = volume[v]; });
  return out;
}

template <typename T>
Tensor<T> split_patches_adjoint(std::span<const T> stack, const PatchGrid& grid) {
  if (stack.size() != numel(grid.stack_shape())) throw ShapeError("split adjoint: stack does not match grid");
  Tensor<T> out(grid.original.shape());
  for_each_patch_voxel(grid, [&](std::size_t s, std::size_t v, bool) { out.data[v] += stack[s]; });
  return out;
}

template <typename T>
Tensor<T> merge_patches(std::span<const T> stack, const PatchGrid& grid) {
  if (stack.size() != numel(grid.stack_shape())) {
    throw ShapeError("merge: expected " + std::to_string(grid.count()) + " patches of edge " +
                     std::to_string(grid.patch));
  }
  Tensor<T> out(grid.original.shape());
  for_each_patch_voxel(grid, [&](std::size_t s, std::size_t v, bool inside) {
    if (inside) out.data[v] = stack[s];
  });
  return out;
}

template <typename T>
Tensor<T> merge_patches_adjoint(std::span<const T> volume, const PatchGrid& grid) {
  if (volume.size() != grid.original.voxels()) throw ShapeError("merge adjoint: volume does not match grid");
  Tensor<T> out(grid.stack_shape());
  for_each_patch_voxel(grid, [&](std::size_t s, std::size_t v, bool inside) {
    if (inside) out.data[s] = volume[v];
  });
  return out;
}

template Tensor<float> split_patches(std::span<const float>, const PatchGrid&);
template Tensor<double> split_patches(std::span<const double>, const PatchGrid&);
template Tensor<float> split_patches_adjoint(std::span<const float>, const PatchGrid&);
template Tensor<double> split_patches_adjoint(std::span<const double>, const PatchGrid&);
template Tensor<float> merge_patches(std::span<const float>, const PatchGrid&);
template Tensor<double> merge_patches(std::span<const double>, const PatchGrid&);
template Tensor<float> merge_patches_adjoint(std::span<const float>, const PatchGrid&);
template Tensor<double> merge_patches_adjoint(std::span<const double>, const PatchGrid&);

Patches split(const Volume& v, std::array<std::size_t, 3> patch_shape) {
  auto grid = make_grid(v.extent(), patch_shape);
  return {split_patches<double>(v.data(), grid), grid};
}

Volume merge(const Tensor<double>& stack, const PatchGrid& grid, IntensityRange range) {
  if (stack.shape != grid.stack_shape()) {
    throw ShapeError("merge: stack shape " + shape_string(stack.shape) + " does not match grid " +
                     shape_string(grid.stack_shape()));
  }
  auto out = merge_patches<double>(stack.data, grid);
  return Volume(grid.original, std::move(out.data), range);
}

Volume clamp(const Volume& v, double lo, double hi) {
  if (!(lo < hi)) throw std::invalid_argument("clamp requires lo < hi");
  std::vector<double> out(v.data().begin(), v.data().end());
  for (auto& x : out) x = std::clamp(x, lo, hi);
  return Volume(v.extent(), std::move(out), v.range());
}

}  // namespace volfreq
