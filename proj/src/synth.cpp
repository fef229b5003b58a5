#include "volfreq/synth.hpp"

#include <zlib.h>

#include <algorithm>
#include <array>
#include <cstdio>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <numbers>
#include <sstream>

#include "volfreq/rng.hpp"

namespace volfreq {

double SynthSpec::intensity(int cls) const {
  if (cls == 0) return background;
  if (!class_intensity.empty()) return class_intensity.at(static_cast<std::size_t>(cls - 1));
  return background + (0.8 - background) * cls / (num_class - 1);
}

void SynthSpec::validate() const {
  if (num_class < 2 || num_class > 255) throw std::invalid_argument("num_class must be in [2, 255]");
  if (extent.voxels() == 0) throw std::invalid_argument("extent must be non-empty");
  if (!class_intensity.empty() && class_intensity.size() != static_cast<std::size_t>(num_class - 1)) {
    throw std::invalid_argument("class_intensity needs num_class - 1 entries");
  }
  if (noise_sigma < 0 || texture_amplitude < 0) throw std::invalid_argument("noise and texture must be >= 0");
  if (!(radius_min > 0) || radius_max < radius_min) throw std::invalid_argument("need 0 < radius_min <= radius_max");
  const double smallest = static_cast<double>(std::min({extent.h, extent.w, extent.d}));
  if (2 * radius_max + 1 > smallest) throw std::invalid_argument("shapes of radius_max do not fit the extent");
  for (int c = 0; c < num_class; ++c) {
    for (int k = c + 1; k < num_class; ++k) {
      if (std::abs(intensity(c) - intensity(k)) < 2 * noise_sigma) {
        throw std::invalid_argument("class intensities " + std::to_string(c) + " and " + std::to_string(k) +
                                    " are closer than twice the noise sigma");
      }
    }
  }
}

namespace {

struct Shape3 {
  bool ellipsoid = true;
  double c[3]{};
  double r[3]{};

  bool contains(double i, double j, double k) const {
    const double a = (i - c[0]) / r[0], b = (j - c[1]) / r[1], z = (k - c[2]) / r[2];
    if (ellipsoid) return a * a + b * b + z * z <= 1.0;
    return std::abs(a) <= 1.0 && std::abs(b) <= 1.0 && std::abs(z) <= 1.0;
  }
};

}  // namespace

Sample generate_sample(const SynthSpec& spec, std::uint64_t seed, std::string name) {
  spec.validate();
  const auto& e = spec.extent;
  const std::size_t dims[3] = {e.h, e.w, e.d};
  Rng rng(seed);
  std::vector<std::uint8_t> labels(e.voxels());
  bool ok = false;
  for (int attempt = 0; attempt < spec.max_retries && !ok; ++attempt) {
    std::fill(labels.begin(), labels.end(), std::uint8_t{0});
    for (int cls = 1; cls < spec.num_class; ++cls) {
      Shape3 s;
      s.ellipsoid = cls % 2 == 1;
      for (int a = 0; a < 3; ++a) {
        s.r[a] = rng.uniform(spec.radius_min, spec.radius_max);
        const double n = static_cast<double>(dims[a]);
        s.c[a] = spec.centered ? (n - 1) / 2.0 : rng.uniform(s.r[a], n - 1 - s.r[a]);
      }
      if (spec.centered) s.r[1] = s.r[2] = s.r[0];
      for (std::size_t i = 0; i < e.h; ++i)
        for (std::size_t j = 0; j < e.w; ++j)
          for (std::size_t k = 0; k < e.d; ++k)
            if (s.contains(static_cast<double>(i), static_cast<double>(j), static_cast<double>(k)))
              labels[e.index(i, j, k)] = static_cast<std::uint8_t>(cls);
    }
    ok = true;
    for (int cls = 0; cls < spec.num_class; ++cls) {
      if (static_cast<std::size_t>(std::count(labels.begin(), labels.end(), cls)) < spec.min_class_voxels) ok = false;
    }
  }
  if (!ok) {
    throw SynthError("could not place all " + std::to_string(spec.num_class) + " classes with at least " +
                     std::to_string(spec.min_class_voxels) + " voxels each after " +
                     std::to_string(spec.max_retries) + " attempts");
  }

  // Each class gets its own texture orientation and a per-sample phase.
  std::vector<std::array<double, 4>> texture(static_cast<std::size_t>(spec.num_class));
  for (auto& t : texture) {
    double dir[3], norm = 0;
    for (auto& v : dir) {
      v = rng.normal();
      norm += v * v;
    }
    norm = std::sqrt(norm);
    t = {dir[0] / norm, dir[1] / norm, dir[2] / norm, rng.uniform(0, 2 * std::numbers::pi)};
  }
  const double w = 2 * std::numbers::pi * spec.texture_frequency;
  std::vector<double> data(e.voxels());
  for (std::size_t i = 0; i < e.h; ++i)
    for (std::size_t j = 0; j < e.w; ++j)
      for (std::size_t k = 0; k < e.d; ++k) {
        const std::size_t v = e.index(i, j, k);
        const int cls = labels[v];
        const auto& t = texture[static_cast<std::size_t>(cls)];
        const double tex = spec.texture_amplitude *
                           std::sin(w * (t[0] * static_cast<double>(i) + t[1] * static_cast<double>(j) +
                                         t[2] * static_cast<double>(k)) + t[3]);
        data[v] = std::clamp(spec.intensity(cls) + tex + spec.noise_sigma * rng.normal(), 0.0, 1.0);
      }
  return {std::move(name), Volume(e, std::move(data)), LabelField(e, spec.num_class, std::move(labels))};
}

Dataset generate(const SynthSpec& spec) {
  Dataset ds;
  char buf[32];
  for (std::size_t i = 0; i < spec.train_count; ++i) {
    std::snprintf(buf, sizeof buf, "sample_%03zu", i);
    ds.train.push_back(generate_sample(spec, derive_seed(spec.seed, "train", i), buf));
  }
  for (std::size_t i = 0; i < spec.test_count; ++i) {
    std::snprintf(buf, sizeof buf, "sample_%03zu", i);
    ds.test.push_back(generate_sample(spec, derive_seed(spec.seed, "test", i), buf));
  }
  return ds;
}

// --- volume files -----------------------------------------------------------

std::string encode_volume(const VolumeFile& f) {
  const auto& v = f.volume;
  const auto& e = v.extent();
  std::ostringstream head;
  head << std::setprecision(17);
  head << kVolumeMagic << ' ' << kVolumeVersion << '\n'
       << "extent " << e.h << ' ' << e.w << ' ' << e.d << '\n'
       << "axis_order HWD\n"
       << "range " << v.range().lo << ' ' << v.range().hi << '\n'
       << "dtype f64\n"
       << "labels " << (f.labels ? f.labels->num_class() : 0) << '\n'
       << "end\n";
  std::string out = head.str();
  const auto payload = v.data();
  out.append(reinterpret_cast<const char*>(payload.data()), payload.size() * sizeof(double));
  if (f.labels) {
    if (f.labels->extent() != e) throw ShapeError("labels and volume differ in extent");
    const auto cls = f.labels->classes();
    out.append(reinterpret_cast<const char*>(cls.data()), cls.size());
  }
  return out;
}

VolumeFile decode_volume(const std::string& bytes) {
  std::size_t pos = 0;
  auto next_line = [&]() -> std::string {
    const auto nl = bytes.find('\n', pos);
    if (nl == std::string::npos) throw FormatError("unterminated header line", pos);
    std::string line = bytes.substr(pos, nl - pos);
    pos = nl + 1;
    return line;
  };
  {
    const std::string magic = std::string(kVolumeMagic) + ' ';
    if (bytes.compare(0, magic.size(), magic) != 0) throw FormatError("bad magic, not a volume file", 0);
    std::istringstream ls(next_line().substr(magic.size()));
    int version = 0;
    if (!(ls >> version) || version != kVolumeVersion) {
      throw FormatError("unsupported volume file version", magic.size());
    }
  }
  Extent e;
  IntensityRange range;
  std::string dtype = "f64", axes = "HWD";
  int num_class = 0;
  bool have_extent = false;
  while (true) {
    const std::size_t at = pos;
    const auto line = next_line();
    if (line == "end") break;
    std::istringstream ls(line);
    std::string key;
    ls >> key;
    bool good = true;
    if (key == "extent") {
      good = static_cast<bool>(ls >> e.h >> e.w >> e.d);
      have_extent = good;
    } else if (key == "axis_order") {
      ls >> axes;
    } else if (key == "range") {
      good = static_cast<bool>(ls >> range.lo >> range.hi);
    } else if (key == "dtype") {
      ls >> dtype;
    } else if (key == "labels") {
      good = static_cast<bool>(ls >> num_class);
    } else {
      throw FormatError("unknown header key '" + key + "'", at);
    }
    if (!good) throw FormatError("malformed header field '" + key + "'", at);
  }
  if (!have_extent) throw FormatError("header has no extent", pos);
  if (axes != "HWD") throw FormatError("unsupported axis order '" + axes + "'", pos);
  std::size_t width = 0;
  if (dtype == "f64") width = 8;
  else if (dtype == "f32") width = 4;
  else throw FormatError("unsupported dtype '" + dtype + "'", pos);

  const std::size_t n = e.voxels();
  const std::size_t need = n * width + (num_class > 0 ? n : 0);
  if (bytes.size() - pos < need) {
    throw FormatError("payload truncated: expected " + std::to_string(need) + " bytes, found " +
                          std::to_string(bytes.size() - pos),
                      pos);
  }
  std::vector<double> data(n);
  if (width == 8) {
    std::memcpy(data.data(), bytes.data() + pos, n * 8);
  } else {
    std::vector<float> f(n);
    std::memcpy(f.data(), bytes.data() + pos, n * 4);
    data.assign(f.begin(), f.end());
  }
  pos += n * width;
  VolumeFile out{Volume(e, std::move(data), range), std::nullopt};
  if (num_class > 0) {
    std::vector<std::uint8_t> cls(bytes.begin() + static_cast<std::ptrdiff_t>(pos),
                                  bytes.begin() + static_cast<std::ptrdiff_t>(pos + n));
    out.labels = LabelField(e, num_class, std::move(cls));
    pos += n;
  }
  if (pos != bytes.size()) throw FormatError("trailing bytes after payload", pos);
  return out;
}

namespace {

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const std::filesystem::path& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw std::runtime_error("failed writing " + path.string());
}

}  // namespace

void save_volume(const std::filesystem::path& path, const VolumeFile& f) { write_file(path, encode_volume(f)); }

VolumeFile load_volume(const std::filesystem::path& path) {
  try {
    return decode_volume(read_file(path));
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what(), e.offset());
  }
}

std::uint32_t crc32_of(const std::string& bytes) {
  uLong crc = crc32(0L, Z_NULL, 0);
  crc = crc32(crc, reinterpret_cast<const Bytef*>(bytes.data()), static_cast<uInt>(bytes.size()));
  return static_cast<std::uint32_t>(crc);
}

std::vector<ManifestEntry> save_dataset(const std::filesystem::path& dir, const Dataset& ds) {
  namespace fs = std::filesystem;
  std::vector<ManifestEntry> entries;
  for (const auto* split : {"train", "test"}) {
    fs::create_directories(dir / split);
    const auto& samples = std::string(split) == "train" ? ds.train : ds.test;
    for (const auto& s : samples) {
      const auto bytes = encode_volume({s.x, s.y});
      const std::string file = std::string(split) + "/" + s.name + ".vol";
      write_file(dir / file, bytes);
      entries.push_back({split, file, crc32_of(bytes)});
    }
  }
  std::ostringstream m;
  m << "split\tfile\tcrc32\n";
  for (const auto& en : entries) {
    m << en.split << '\t' << en.file << '\t' << std::hex << std::setw(8) << std::setfill('0') << en.crc << std::dec
      << '\n';
  }
  write_file(dir / "manifest.tsv", m.str());
  return entries;
}

Dataset load_dataset(const std::filesystem::path& dir) {
  std::istringstream m(read_file(dir / "manifest.tsv"));
  std::string line;
  std::getline(m, line);
  if (line != "split\tfile\tcrc32") throw FormatError(dir.string() + "/manifest.tsv: unexpected header", 0);
  Dataset ds;
  while (std::getline(m, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string split, file, crc_hex;
    std::getline(ls, split, '\t');
    std::getline(ls, file, '\t');
    std::getline(ls, crc_hex, '\t');
    const auto bytes = read_file(dir / file);
    if (crc32_of(bytes) != static_cast<std::uint32_t>(std::stoul(crc_hex, nullptr, 16))) {
      throw std::runtime_error("checksum mismatch for " + file);
    }
    auto vf = decode_volume(bytes);
    if (!vf.labels) throw std::runtime_error(file + " has no label payload");
    Sample s{std::filesystem::path(file).stem().string(), std::move(vf.volume), std::move(*vf.labels)};
    (split == "train" ? ds.train : ds.test).push_back(std::move(s));
  }
  return ds;
}

}  // namespace volfreq
