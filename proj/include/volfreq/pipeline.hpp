#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "volfreq/config.hpp"

namespace volfreq {

enum ExitCode : int {
  kExitOk = 0,
  kExitFailure = 1,
  kExitConfig = 2,
  kExitNumerical = 3,
  kExitThreshold = 4,
};

inline const std::vector<std::string> kCommands = {"gen-data", "train", "attack", "eval", "compare", "gradcheck"};

struct RunRequest {
  std::string command;
  Config config;
  std::filesystem::path out;
  /// Command-line overrides of run.seed, run.workers and run.precision.
  std::optional<std::uint64_t> seed;
  std::optional<int> workers;
  std::optional<int> precision;
};

/// Runs one command. Artifacts are staged next to `out` and moved into place
/// when the command finishes; a failed run leaves its partial artifacts and a
/// FAILED marker in `out`. Progress goes to `log`.
int run(const RunRequest& req, std::ostream& log);

/// One row of per_sample.csv.
struct SampleRow {
  std::string model;
  std::string attack;  // "clean" for unattacked inputs
  std::string split;
  std::string sample;
  double dsc = 0.0;
  double hd95 = 0.0;
  std::size_t hd95_undefined = 0;
  double ssim = 1.0;
  std::vector<double> dsc_per_class;
};

/// Header and rows in the documented fixed column order.
std::string per_sample_csv(const std::vector<SampleRow>& rows);

}  // namespace volfreq
