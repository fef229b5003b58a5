#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "volfreq/tensor.hpp"

namespace volfreq {

/// Spatial extent in (H, W, D) axis order. D is the fastest-varying axis.
struct Extent {
  std::size_t h = 0, w = 0, d = 0;

  std::size_t voxels() const { return h * w * d; }
  Shape shape() const { return {h, w, d}; }
  std::size_t index(std::size_t i, std::size_t j, std::size_t k) const { return (i * w + j) * d + k; }
  friend bool operator==(const Extent&, const Extent&) = default;
};

struct IntensityRange {
  double lo = 0.0;
  double hi = 1.0;
  friend bool operator==(const IntensityRange&, const IntensityRange&) = default;
};

/// Single-channel scalar volume. Immutable once built; every voxel is finite.
class Volume {
 public:
  Volume() = default;
  Volume(Extent extent, std::vector<double> data, IntensityRange range = {});

  static Volume filled(Extent extent, double value, IntensityRange range = {});

  const Extent& extent() const { return extent_; }
  const IntensityRange& range() const { return range_; }
  std::span<const double> data() const { return data_; }
  double at(std::size_t i, std::size_t j, std::size_t k) const { return data_[extent_.index(i, j, k)]; }

  template <typename T>
  Tensor<T> tensor() const {
    return Tensor<T>(extent_.shape(), std::vector<T>(data_.begin(), data_.end()));
  }

  friend bool operator==(const Volume&, const Volume&) = default;

 private:
  Extent extent_;
  IntensityRange range_;
  std::vector<double> data_;
};

/// Per-voxel class labels in [0, num_class).
class LabelField {
 public:
  LabelField() = default;
  LabelField(Extent extent, int num_class, std::vector<std::uint8_t> classes);

  const Extent& extent() const { return extent_; }
  int num_class() const { return num_class_; }
  std::span<const std::uint8_t> classes() const { return classes_; }
  std::uint8_t at(std::size_t i, std::size_t j, std::size_t k) const {
    return classes_[extent_.index(i, j, k)];
  }
  std::size_t count(int cls) const;

  /// {0,1} view laid out (NumClass, H, W, D).
  template <typename T>
  Tensor<T> one_hot() const {
    const std::size_t n = extent_.voxels();
    Tensor<T> out({static_cast<std::size_t>(num_class_), extent_.h, extent_.w, extent_.d});
    for (std::size_t v = 0; v < n; ++v) out.data[classes_[v] * n + v] = T{1};
    return out;
  }

  friend bool operator==(const LabelField&, const LabelField&) = default;

 private:
  Extent extent_;
  int num_class_ = 0;
  std::vector<std::uint8_t> classes_;
};

/// Non-overlapping tiling of a volume by cubic patches. Extents that are not
/// a multiple of the patch edge are padded at the far end by edge replication.
struct PatchGrid {
  Extent original;
  Extent padded;
  std::size_t patch = 0;
  std::array<std::size_t, 3> counts{};

  std::size_t count() const { return counts[0] * counts[1] * counts[2]; }
  std::array<std::size_t, 3> origin(std::size_t index) const;
  std::array<std::size_t, 3> padding() const {
    return {padded.h - original.h, padded.w - original.w, padded.d - original.d};
  }
  Shape stack_shape() const { return {count(), patch, patch, patch}; }
};

PatchGrid make_grid(const Extent& extent, std::array<std::size_t, 3> patch_shape);

/// Gathers the patches of `volume` (extent grid.original) into a (n, p, p, p) stack.
template <typename T>
Tensor<T> split_patches(std::span<const T> volume, const PatchGrid& grid);

/// Adjoint of split_patches: accumulates a stack back onto the original extent,
/// summing contributions of replicated padding voxels into their source voxel.
template <typename T>
Tensor<T> split_patches_adjoint(std::span<const T> stack, const PatchGrid& grid);

/// Stitches a (n, p, p, p) stack and crops the padding away.
template <typename T>
Tensor<T> merge_patches(std::span<const T> stack, const PatchGrid& grid);

/// Adjoint of merge_patches: scatters a volume into a stack, zero in padding.
template <typename T>
Tensor<T> merge_patches_adjoint(std::span<const T> volume, const PatchGrid& grid);

struct Patches {
  Tensor<double> stack;
  PatchGrid grid;
};

Patches split(const Volume& v, std::array<std::size_t, 3> patch_shape);
Volume merge(const Tensor<double>& stack, const PatchGrid& grid, IntensityRange range = {});
Volume clamp(const Volume& v, double lo, double hi);

}  // namespace volfreq
