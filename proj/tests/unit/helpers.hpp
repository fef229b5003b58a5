#pragma once

#include <cstdint>
#include <vector>

#include "volfreq/rng.hpp"
#include "volfreq/synth.hpp"
#include "volfreq/volume.hpp"

namespace testing {

inline std::vector<double> random_values(std::size_t n, std::uint64_t seed, double lo = 0.0, double hi = 1.0) {
  volfreq::Rng rng(seed);
  std::vector<double> v(n);
  for (auto& x : v) x = rng.uniform(lo, hi);
  return v;
}

inline volfreq::Volume random_volume(volfreq::Extent e, std::uint64_t seed) {
  return volfreq::Volume(e, random_values(e.voxels(), seed));
}

inline volfreq::LabelField random_labels(volfreq::Extent e, int num_class, std::uint64_t seed) {
  volfreq::Rng rng(seed);
  std::vector<std::uint8_t> c(e.voxels());
  for (auto& x : c) x = static_cast<std::uint8_t>(rng.below(static_cast<std::uint64_t>(num_class)));
  return volfreq::LabelField(e, num_class, std::move(c));
}

// Small phantom dataset that trains in seconds.
inline volfreq::SynthSpec tiny_spec(std::size_t edge = 16) {
  volfreq::SynthSpec s;
  s.extent = {edge, edge, edge};
  s.num_class = 3;
  s.train_count = 2;
  s.test_count = 1;
  s.radius_min = 3;
  s.radius_max = 5;
  s.min_class_voxels = 8;
  return s;
}

}  // namespace testing
