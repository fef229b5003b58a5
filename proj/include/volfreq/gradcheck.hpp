#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace volfreq {

struct GradcheckOptions {
  int instances = 20;
  /// Central-difference step.
  double step = 1e-4;
  /// Step for checks through ReLU networks, where a 1e-4 probe regularly
  /// crosses a kink of some hidden unit and measures a different linear piece.
  double network_step = 1e-6;
  double primitive_tolerance = 1e-4;
  double composite_tolerance = 1e-3;
  /// Coordinates probed per input and instance (all when the input is smaller).
  std::size_t max_coords = 16;
  std::uint64_t seed = 0;
};

struct GradcheckResult {
  std::string name;
  bool composite = false;
  int instances = 0;
  /// Worst relative error over all instances.
  double max_rel_error = 0.0;
  double tolerance = 0.0;

  bool passed() const { return max_rel_error <= tolerance; }
};

/// max|a - b| / max(max|a|, max|b|), zero when both vanish.
double relative_error(std::span<const double> analytic, std::span<const double> numeric);

/// Checks every differentiable op and the composite losses against central
/// differences in double precision on random small instances.
std::vector<GradcheckResult> run_gradcheck(const GradcheckOptions& opts = {});

}  // namespace volfreq
