#include "volfreq/config.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

extern char** environ;

namespace volfreq {

namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

std::string lower(std::string s) {
  std::transform(s.begin(), s.end(), s.begin(), [](unsigned char ch) { return std::tolower(ch); });
  return s;
}

[[noreturn]] void bad_value(const std::string& key, const std::string& value, const std::string& expected) {
  throw ConfigError(key + ": expected " + expected + ", got '" + value + "'");
}

}  // namespace

Config Config::parse(std::string_view text, const std::string& source) {
  Config c;
  std::string section = "run";
  std::size_t line_no = 0;
  std::istringstream in{std::string(text)};
  std::string raw;
  while (std::getline(in, raw)) {
    ++line_no;
    const auto hash = raw.find_first_of("#;");
    const auto line = trim(std::string_view(raw).substr(0, hash));
    if (line.empty()) continue;
    const auto where = source + ":" + std::to_string(line_no);
    if (line.front() == '[') {
      if (line.back() != ']' || line.size() < 3) throw ConfigError(where + ": malformed section header '" + line + "'");
      section = lower(trim(std::string_view(line).substr(1, line.size() - 2)));
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError(where + ": expected 'key = value', got '" + line + "'");
    const auto key = lower(trim(std::string_view(line).substr(0, eq)));
    if (key.empty()) throw ConfigError(where + ": empty key");
    c.entries_[section + "." + key] = trim(std::string_view(line).substr(eq + 1));
  }
  return c;
}

Config Config::load(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw ConfigError("cannot read config file " + path.string());
  std::ostringstream ss;
  ss << f.rdbuf();
  return parse(ss.str(), path.string());
}

void Config::apply_env(const std::function<std::vector<std::pair<std::string, std::string>>()>& environ_fn) {
  static constexpr std::string_view kPrefix = "VOLFREQ_";
  for (const auto& [name, value] : environ_fn()) {
    if (name.rfind(kPrefix, 0) != 0) continue;
    const auto rest = lower(name.substr(kPrefix.size()));
    const auto us = rest.find('_');
    if (us == std::string::npos || us == 0 || us + 1 == rest.size()) continue;
    entries_[rest.substr(0, us) + "." + rest.substr(us + 1)] = value;
  }
}

void Config::apply_process_env() {
  apply_env([] {
    std::vector<std::pair<std::string, std::string>> out;
    for (char** e = environ; e && *e; ++e) {
      std::string_view kv(*e);
      const auto eq = kv.find('=');
      if (eq == std::string_view::npos) continue;
      out.emplace_back(std::string(kv.substr(0, eq)), std::string(kv.substr(eq + 1)));
    }
    return out;
  });
}

void Config::set(const std::string& key, std::string value) { entries_[lower(key)] = std::move(value); }

bool Config::has(const std::string& key) const { return entries_.count(key) > 0; }

std::optional<std::string> Config::find(const std::string& key) const {
  const auto it = entries_.find(key);
  if (it == entries_.end()) return std::nullopt;
  return it->second;
}

std::string Config::get_string(const std::string& key, const std::string& fallback) const {
  return find(key).value_or(fallback);
}

double Config::get_double(const std::string& key, double fallback) const {
  const auto v = find(key);
  if (!v) return fallback;
  double out = 0;
  const auto* end = v->data() + v->size();
  const auto r = std::from_chars(v->data(), end, out);
  if (r.ec != std::errc() || r.ptr != end || !std::isfinite(out)) bad_value(key, *v, "a finite number");
  return out;
}

std::int64_t Config::get_int(const std::string& key, std::int64_t fallback) const {
  const auto v = find(key);
  if (!v) return fallback;
  std::int64_t out = 0;
  const auto* end = v->data() + v->size();
  const auto r = std::from_chars(v->data(), end, out);
  if (r.ec != std::errc() || r.ptr != end) bad_value(key, *v, "an integer");
  return out;
}

std::uint64_t Config::get_u64(const std::string& key, std::uint64_t fallback) const {
  const auto v = find(key);
  if (!v) return fallback;
  std::uint64_t out = 0;
  const auto* end = v->data() + v->size();
  const auto r = std::from_chars(v->data(), end, out);
  if (r.ec != std::errc() || r.ptr != end) bad_value(key, *v, "a non-negative integer");
  return out;
}

bool Config::get_bool(const std::string& key, bool fallback) const {
  const auto v = find(key);
  if (!v) return fallback;
  const auto s = lower(*v);
  if (s == "1" || s == "true" || s == "yes" || s == "on") return true;
  if (s == "0" || s == "false" || s == "no" || s == "off") return false;
  bad_value(key, *v, "a boolean");
}

std::vector<std::string> Config::get_list(const std::string& key, const std::vector<std::string>& fallback) const {
  const auto v = find(key);
  if (!v) return fallback;
  std::vector<std::string> out;
  std::stringstream ss(*v);
  std::string item;
  while (std::getline(ss, item, ',')) {
    auto t = trim(item);
    if (!t.empty()) out.push_back(std::move(t));
  }
  return out;
}

namespace {

std::size_t positive(const Config& c, const std::string& key, std::int64_t fallback) {
  const auto v = c.get_int(key, fallback);
  if (v < 1) throw ConfigError(key + ": must be >= 1, got " + std::to_string(v));
  return static_cast<std::size_t>(v);
}

// Lets the library's own validation speak, prefixed with the section.
template <typename F>
void checked(const std::string& section, F&& validate) {
  try {
    validate();
  } catch (const ConfigError&) {
    throw;
  } catch (const std::exception& e) {
    throw ConfigError(section + ": " + e.what());
  }
}

std::size_t non_negative(const Config& c, const std::string& key, std::size_t fallback) {
  const auto v = c.get_int(key, static_cast<std::int64_t>(fallback));
  if (v < 0) throw ConfigError(key + ": must be >= 0, got " + std::to_string(v));
  return static_cast<std::size_t>(v);
}

}  // namespace

SynthSpec synth_spec_from(const Config& c, std::uint64_t base_seed) {
  SynthSpec s;
  if (c.has("data.extent")) {
    const auto parts = c.get_list("data.extent", {});
    if (parts.size() != 3) throw ConfigError("data.extent: expected three comma-separated sizes (h, w, d)");
    std::array<std::size_t, 3> e{};
    for (std::size_t i = 0; i < 3; ++i) {
      Config one;
      one.set("data.extent", parts[i]);
      e[i] = positive(one, "data.extent", 1);
    }
    s.extent = Extent{e[0], e[1], e[2]};
  }
  s.num_class = static_cast<int>(c.get_int("data.num_class", s.num_class));
  s.train_count = non_negative(c, "data.train_count", s.train_count);
  s.test_count = non_negative(c, "data.test_count", s.test_count);
  s.seed = c.get_u64("data.seed", c.has("run.seed") ? base_seed : s.seed);
  s.background = c.get_double("data.background", s.background);
  for (const auto& item : c.get_list("data.class_intensity", {})) {
    Config one;
    one.set("data.class_intensity", item);
    s.class_intensity.push_back(one.get_double("data.class_intensity", 0));
  }
  s.noise_sigma = c.get_double("data.noise_sigma", s.noise_sigma);
  s.texture_amplitude = c.get_double("data.texture_amplitude", s.texture_amplitude);
  s.texture_frequency = c.get_double("data.texture_frequency", s.texture_frequency);
  s.radius_min = c.get_double("data.radius_min", s.radius_min);
  s.radius_max = c.get_double("data.radius_max", s.radius_max);
  s.min_class_voxels = non_negative(c, "data.min_class_voxels", s.min_class_voxels);
  s.max_retries = static_cast<int>(c.get_int("data.max_retries", s.max_retries));
  checked("data", [&] { s.validate(); });
  return s;
}

AttackConfig attack_config_from(const Config& c, AttackKind kind, std::uint64_t base_seed) {
  AttackConfig a;
  a.kind = kind;
  const std::string specific = "attack." + to_string(kind) + ".";
  // The first key present wins: [attack.<kind>] before [attack].
  auto key = [&](const std::string& k) { return c.has(specific + k) ? specific + k : "attack." + k; };
  const bool freq = kind == AttackKind::kVafa || kind == AttackKind::kVafa2d;

  a.steps = static_cast<int>(c.get_int(key("steps"), a.steps));
  if (a.steps < 0) throw ConfigError(key("steps") + ": must be >= 0");
  a.q_max = c.get_double(key("q_max"), a.q_max);
  a.q_lo = c.get_double(key("q_lo"), a.q_lo);
  a.patch = positive(c, key("patch_size"), static_cast<std::int64_t>(a.patch));
  a.epsilon = c.get_double(key("epsilon"), a.epsilon * 255.0) / 255.0;
  const double step = c.get_double(key("step_size"), 0.0);
  a.step_size = freq ? step : step / 255.0;
  a.seed = c.get_u64(key("seed"), base_seed);
  a.coeff_scale = c.get_double(key("coeff_scale"), a.coeff_scale);
  a.ssim_weight = c.get_double(key("ssim_weight"), a.ssim_weight);
  checked(key("rounding"), [&] { a.rounding = parse_rounding(c.get_string(key("rounding"), to_string(a.rounding))); });
  a.snap_integer = c.get_bool(key("snap_integer"), a.snap_integer);
  a.per_patch_tables = c.get_bool(key("per_patch_tables"), a.per_patch_tables);
  checked("attack", [&] { a.validate(); });
  return a;
}

TrainConfig train_config_from(const Config& c, std::uint64_t base_seed) {
  TrainConfig t;
  checked("train.mode", [&] { t.mode = parse_train_mode(c.get_string("train.mode", "standard")); });
  t.epochs = static_cast<int>(non_negative(c, "train.epochs", static_cast<std::size_t>(t.epochs)));
  t.batch_size = positive(c, "train.batch_size", static_cast<std::int64_t>(t.batch_size));
  checked("train.optimizer", [&] { t.optimizer = parse_optimizer(c.get_string("train.optimizer", "adam")); });
  t.learning_rate = c.get_double("train.learning_rate", t.learning_rate);
  t.beta2 = c.get_double("train.beta2", t.beta2);
  t.adam_epsilon = c.get_double("train.adam_epsilon", t.adam_epsilon);
  t.momentum = c.get_double("train.momentum", t.momentum);
  t.lambda_fr = c.get_double("train.lambda_fr", t.lambda_fr);
  t.seed = c.get_u64("train.seed", base_seed);
  const auto adversary = t.mode == TrainMode::kAdvVoxel ? AttackKind::kPgd : AttackKind::kVafa;
  t.attack = attack_config_from(c, adversary, t.seed);
  checked("train", [&] { t.validate(); });
  return t;
}

}  // namespace volfreq
