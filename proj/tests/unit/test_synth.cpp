#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>

#include "helpers.hpp"
#include "volfreq/synth.hpp"

using namespace volfreq;
namespace fs = std::filesystem;

namespace {

fs::path fresh_dir(const std::string& name) {
  auto dir = fs::temp_directory_path() / "volfreq_synth_tests" / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

}  // namespace

TEST_CASE("generation is deterministic and covers every class") {
  const auto spec = testing::tiny_spec();
  const auto a = generate(spec), b = generate(spec);
  REQUIRE(a.train.size() == 2);
  REQUIRE(a.test.size() == 1);
  for (std::size_t i = 0; i < a.train.size(); ++i) {
    CHECK(a.train[i].x == b.train[i].x);
    CHECK(a.train[i].y == b.train[i].y);
    for (int c = 0; c < spec.num_class; ++c) CHECK(a.train[i].y.count(c) >= spec.min_class_voxels);
  }
  // Train and test draw from different streams.
  CHECK_FALSE(a.train[0].x == a.test[0].x);
}

TEST_CASE("voxel intensities stay within their class band") {
  auto spec = testing::tiny_spec(20);
  spec.noise_sigma = 0.02;
  const auto s = generate_sample(spec, 11, "s");
  for (std::size_t v = 0; v < s.x.data().size(); ++v) {
    const double x = s.x.data()[v];
    CHECK(x >= 0.0);
    CHECK(x <= 1.0);
    // Gaussian tails beyond 6 sigma are vanishingly rare at this size.
    CHECK(std::abs(x - spec.intensity(s.y.classes()[v])) < 6 * spec.noise_sigma);
  }
}

TEST_CASE("a centred sphere matches its analytic volume") {
  SynthSpec spec;
  spec.extent = {40, 40, 40};
  spec.num_class = 2;
  spec.centered = true;
  spec.radius_min = spec.radius_max = 12;
  const auto s = generate_sample(spec, 1, "sphere");
  const double want = 4.0 / 3.0 * std::numbers::pi * 12 * 12 * 12;
  const double got = static_cast<double>(s.y.count(1));
  // Lattice points inside a sphere deviate from its volume by far less than one surface layer.
  CHECK(std::abs(got - want) < 4 * std::numbers::pi * 12 * 12 * 0.05);
  // Exact lattice count of the same ball.
  std::size_t lattice = 0;
  const double c = 19.5;
  for (int i = 0; i < 40; ++i)
    for (int j = 0; j < 40; ++j)
      for (int k = 0; k < 40; ++k) lattice += (i - c) * (i - c) + (j - c) * (j - c) + (k - c) * (k - c) <= 144.0;
  CHECK(s.y.count(1) == lattice);
}

TEST_CASE("spec validation") {
  auto s = testing::tiny_spec();
  s.radius_max = 20;
  CHECK_THROWS(s.validate());
  s = testing::tiny_spec();
  s.class_intensity = {0.5};
  CHECK_THROWS(s.validate());
  s = testing::tiny_spec();
  s.noise_sigma = 0.2;
  CHECK_THROWS(s.validate());
}

TEST_CASE("infeasible packing is reported") {
  auto s = testing::tiny_spec();
  s.min_class_voxels = 4000;
  s.max_retries = 3;
  CHECK_THROWS_AS(generate_sample(s, 1, "x"), SynthError);
}

TEST_CASE("volume files round trip bit-exactly") {
  const auto v = testing::random_volume({5, 6, 7}, 3);
  const auto l = testing::random_labels({5, 6, 7}, 4, 4);
  const auto back = decode_volume(encode_volume({v, l}));
  CHECK(back.volume == v);
  REQUIRE(back.labels.has_value());
  CHECK(*back.labels == l);
  const auto plain = decode_volume(encode_volume({v, std::nullopt}));
  CHECK_FALSE(plain.labels.has_value());

  const auto path = fresh_dir("file") / "v.vol";
  save_volume(path, {v, l});
  CHECK(load_volume(path).volume == v);
}

TEST_CASE("malformed volume files are rejected with an offset") {
  const auto bytes = encode_volume({testing::random_volume({4, 4, 4}, 1), std::nullopt});
  try {
    decode_volume(bytes.substr(0, bytes.size() - 5));
    FAIL("truncated payload accepted");
  } catch (const FormatError& e) {
    CHECK(std::string(e.what()).find("expected 512 bytes, found 507") != std::string::npos);
    CHECK(e.offset() == bytes.size() - 512);
  }
  std::string bad = bytes;
  bad[0] = 'X';
  try {
    decode_volume(bad);
    FAIL("bad magic accepted");
  } catch (const FormatError& e) {
    CHECK(e.offset() == 0);
  }
  std::string v2 = bytes;
  v2.replace(v2.find(" 1\n"), 3, " 2\n");
  CHECK_THROWS_AS(decode_volume(v2), FormatError);
  CHECK_THROWS_AS(decode_volume(bytes + "x"), FormatError);
}

TEST_CASE("dataset directories verify their checksums") {
  const auto dir = fresh_dir("ds");
  const auto ds = generate(testing::tiny_spec());
  const auto entries = save_dataset(dir, ds);
  CHECK(entries.size() == 3);
  const auto back = load_dataset(dir);
  REQUIRE(back.train.size() == 2);
  CHECK(back.train[1].x == ds.train[1].x);
  CHECK(back.test[0].y == ds.test[0].y);
  CHECK(back.train[0].name == ds.train[0].name);

  // Same seed, same manifest.
  const auto dir2 = fresh_dir("ds2");
  const auto entries2 = save_dataset(dir2, generate(testing::tiny_spec()));
  for (std::size_t i = 0; i < entries.size(); ++i) CHECK(entries[i].crc == entries2[i].crc);

  {
    std::fstream f(dir / entries[0].file, std::ios::in | std::ios::out | std::ios::binary);
    f.seekp(-1, std::ios::end);
    f.put('\x7f');
  }
  CHECK_THROWS(load_dataset(dir));
}
