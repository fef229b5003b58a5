#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "volfreq/volume.hpp"

namespace volfreq {

/// Parameters of the multi-class blob phantom generator.
struct SynthSpec {
  Extent extent{64, 64, 64};
  int num_class = 4;
  std::size_t train_count = 40;
  std::size_t test_count = 10;
  std::uint64_t seed = 7;
  double background = 0.2;
  /// Mean intensity of classes 1..num_class-1; empty spaces them evenly
  /// between `background` and 0.8.
  std::vector<double> class_intensity;
  double noise_sigma = 0.05;
  /// Amplitude of a per-class oriented sinusoidal texture.
  double texture_amplitude = 0.0;
  /// Texture frequency in cycles per voxel.
  double texture_frequency = 0.25;
  double radius_min = 12.0;
  double radius_max = 22.0;
  /// Place every shape at the volume centre (used for analytic checks).
  bool centered = false;
  std::size_t min_class_voxels = 64;
  int max_retries = 50;

  double intensity(int cls) const;
  void validate() const;
};

struct Sample {
  std::string name;
  Volume x;
  LabelField y;
};

struct Dataset {
  std::vector<Sample> train;
  std::vector<Sample> test;
};

class SynthError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// One phantom. Deterministic in `seed`.
Sample generate_sample(const SynthSpec& spec, std::uint64_t seed, std::string name);

/// Train and test samples draw from separate seed streams.
Dataset generate(const SynthSpec& spec);

// --- volume files -----------------------------------------------------------

/// Malformed or truncated file; `offset` is the byte position of the problem.
class FormatError : public std::runtime_error {
 public:
  FormatError(const std::string& what, std::size_t offset)
      : std::runtime_error(what + " (at byte offset " + std::to_string(offset) + ")"), offset_(offset) {}
  std::size_t offset() const { return offset_; }

 private:
  std::size_t offset_;
};

struct VolumeFile {
  Volume volume;
  std::optional<LabelField> labels;
};

inline constexpr const char* kVolumeMagic = "VOLFREQ-VOL";
inline constexpr int kVolumeVersion = 1;

/// Header manifest (magic, version, extent, axis order, range, dtype, labels)
/// followed by the f64 voxel payload and an optional u8 label payload.
std::string encode_volume(const VolumeFile& f);
VolumeFile decode_volume(const std::string& bytes);

void save_volume(const std::filesystem::path& path, const VolumeFile& f);
VolumeFile load_volume(const std::filesystem::path& path);

std::uint32_t crc32_of(const std::string& bytes);

struct ManifestEntry {
  std::string split;
  std::string file;
  std::uint32_t crc = 0;
};

/// Writes `train/` and `test/` sample files plus `manifest.tsv`.
std::vector<ManifestEntry> save_dataset(const std::filesystem::path& dir, const Dataset& ds);
/// Reads a dataset directory, verifying every checksum in the manifest.
Dataset load_dataset(const std::filesystem::path& dir);

}  // namespace volfreq
