#pragma once

#include <optional>
#include <vector>

#include "volfreq/volume.hpp"

namespace volfreq {

/// Hard Dice per class; a class absent from both fields scores 1.
std::vector<double> dice_per_class(const LabelField& pred, const LabelField& truth);

struct Hd95Result {
  /// Empty optional marks a class present in exactly one of the two fields.
  std::vector<std::optional<double>> per_class;
  double mean = 0.0;          // over defined classes only
  std::size_t undefined = 0;  // classes excluded from the mean
};

/// Symmetric 95th-percentile surface distance per class, in voxel units.
/// A voxel is on the surface of a class when any 6-neighbour (or the volume
/// border) is outside the class. The directed 95th percentiles (linear
/// interpolation) are computed both ways and the larger is reported.
Hd95Result hd95(const LabelField& pred, const LabelField& truth);

/// Surface voxels of class `cls` as flat indices, ascending.
std::vector<std::size_t> surface_voxels(const LabelField& f, int cls);

/// Exact Euclidean distance from every voxel to the nearest marked voxel.
/// Returns +inf everywhere when nothing is marked.
std::vector<double> distance_to_marked(const Extent& e, const std::vector<std::size_t>& marked);

/// numpy-style linear-interpolated percentile, q in [0, 100].
double percentile(std::vector<double> values, double q);

struct MetricsReport {
  double mean_dsc = 0.0;
  std::vector<double> per_class_dsc;
  double mean_hd95 = 0.0;
  std::vector<std::optional<double>> per_class_hd95;
  std::size_t hd95_undefined = 0;
  std::optional<double> mean_ssim_vs_clean;
};

MetricsReport evaluate_segmentation(const LabelField& pred, const LabelField& truth);

}  // namespace volfreq
