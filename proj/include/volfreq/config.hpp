#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "volfreq/attacks.hpp"
#include "volfreq/synth.hpp"
#include "volfreq/training.hpp"

namespace volfreq {

/// Invalid configuration; the message names the offending key.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Flat `section.key -> value` map read from INI-style text:
///
///   # comment
///   [attack]
///   q_max = 20
///
/// Keys before the first section header live in section `run`.
class Config {
 public:
  static Config parse(std::string_view text, const std::string& source = "<string>");
  static Config load(const std::filesystem::path& path);

  /// Applies `VOLFREQ_<SECTION>_<KEY>` overrides. The section name ends at
  /// the first underscore, so VOLFREQ_ATTACK_Q_MAX sets attack.q_max.
  void apply_env(const std::function<std::vector<std::pair<std::string, std::string>>()>& environ_fn);
  void apply_process_env();

  void set(const std::string& key, std::string value);
  bool has(const std::string& key) const;
  std::optional<std::string> find(const std::string& key) const;

  std::string get_string(const std::string& key, const std::string& fallback) const;
  double get_double(const std::string& key, double fallback) const;
  std::int64_t get_int(const std::string& key, std::int64_t fallback) const;
  std::uint64_t get_u64(const std::string& key, std::uint64_t fallback) const;
  bool get_bool(const std::string& key, bool fallback) const;
  std::vector<std::string> get_list(const std::string& key, const std::vector<std::string>& fallback) const;

  const std::map<std::string, std::string>& entries() const { return entries_; }

 private:
  std::map<std::string, std::string> entries_;
};

/// Typed views. Every reader validates and reports the failing key.
/// `base_seed` seeds any stream whose own seed key is absent.
SynthSpec synth_spec_from(const Config& c, std::uint64_t base_seed);
/// Reads `[attack]`, then lets `[attack.<kind>]` override per attack kind.
/// Budgets (epsilon, voxel step_size) are given in 0-255 intensity units.
AttackConfig attack_config_from(const Config& c, AttackKind kind, std::uint64_t base_seed);
TrainConfig train_config_from(const Config& c, std::uint64_t base_seed);

}  // namespace volfreq
