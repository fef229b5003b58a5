#include <doctest.h>

#include <cmath>

#include "helpers.hpp"
#include "volfreq/losses.hpp"
#include "volfreq/ops.hpp"

using namespace volfreq;

namespace {

Tensor<double> logits_for(const LabelField& f, double margin) {
  auto t = f.one_hot<double>();
  for (auto& v : t.data) v *= margin;
  return t;
}

}  // namespace

TEST_CASE("dice loss lies in [0, 1]") {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const Extent e{5, 4, 6};
    ad::Tape<double> tape;
    auto logits = tape.leaf(Tensor<double>({3, 5, 4, 6}, testing::random_values(3 * e.voxels(), seed, -5, 5)));
    auto target = tape.constant(testing::random_labels(e, 3, seed + 50).one_hot<double>());
    const auto l = dice_loss(logits, target);
    CHECK(l.value() >= 0.0);
    CHECK(l.value() <= 1.0);
    CHECK(l.per_class.size() == 3);
  }
}

TEST_CASE("dice loss vanishes for confident correct logits") {
  const auto f = testing::random_labels({6, 6, 6}, 4, 3);
  ad::Tape<double> tape;
  const auto l = dice_loss(tape.leaf(logits_for(f, 50.0)), tape.constant(f.one_hot<double>()));
  CHECK(l.value() < 1e-9);
}

TEST_CASE("dice loss uses the smoothed per-class formula") {
  // Two voxels, two classes, uniform logits: p = 0.5 everywhere.
  ad::Tape<double> tape;
  auto logits = tape.leaf(Tensor<double>({2, 1, 1, 2}, 0.0));
  auto target = tape.constant(Tensor<double>({2, 1, 1, 2}, {1, 0, 0, 1}));
  const auto l = dice_loss(logits, target);
  const double s = kDiceSmooth;
  const double per = (2 * 0.5 + s) / (1.0 + 1.0 + s);
  CHECK(l.per_class[0] == doctest::Approx(per).epsilon(1e-14));
  CHECK(l.value() == doctest::Approx(1 - per).epsilon(1e-14));
}

TEST_CASE("ssim of a stack with itself is exactly one") {
  for (std::size_t p : {4u, 8u, 10u}) {
    ad::Tape<double> tape;
    auto x = tape.leaf(Tensor<double>({2, p, p, p}, testing::random_values(2 * p * p * p, p)));
    CHECK(ssim_index(x, x).value().data.size() > 0);
    const auto l = ssim_loss(x, x);
    CHECK(l.value() == 0.0);
    CHECK(l.window_shrunk == (p < 7));
    for (double v : l.per_class) CHECK(v == 1.0);
  }
}

TEST_CASE("ssim loss stays within [0, 2]") {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    ad::Tape<double> tape;
    auto x = tape.leaf(Tensor<double>({1, 8, 8, 8}, testing::random_values(512, seed)));
    auto y = tape.leaf(Tensor<double>({1, 8, 8, 8}, testing::random_values(512, seed + 99)));
    const double v = ssim_loss(x, y).value();
    CHECK(v >= 0.0);
    CHECK(v <= 2.0);
  }
}

TEST_CASE("ssim matches a direct windowed computation") {
  const std::size_t p = 8, w = 7;
  const auto xv = testing::random_values(p * p * p, 1);
  const auto yv = testing::random_values(p * p * p, 2);
  ad::Tape<double> tape;
  const double got = 1.0 - ssim_loss(tape.leaf(Tensor<double>({1, p, p, p}, xv)),
                                     tape.leaf(Tensor<double>({1, p, p, p}, yv)))
                               .value();
  const SsimConstants k;
  double total = 0;
  int windows = 0;
  for (std::size_t a = 0; a + w <= p; ++a)
    for (std::size_t b = 0; b + w <= p; ++b)
      for (std::size_t c = 0; c + w <= p; ++c) {
        double mx = 0, my = 0, sxx = 0, syy = 0, sxy = 0;
        const double n = w * w * w;
        for (std::size_t i = a; i < a + w; ++i)
          for (std::size_t j = b; j < b + w; ++j)
            for (std::size_t l = c; l < c + w; ++l) {
              const double xi = xv[(i * p + j) * p + l], yi = yv[(i * p + j) * p + l];
              mx += xi / n;
              my += yi / n;
              sxx += xi * xi / n;
              syy += yi * yi / n;
              sxy += xi * yi / n;
            }
        const double vx = sxx - mx * mx, vy = syy - my * my, cxy = sxy - mx * my;
        total += (2 * mx * my + k.c1) * (2 * cxy + k.c2) / ((mx * mx + my * my + k.c1) * (vx + vy + k.c2));
        ++windows;
      }
  CHECK(got == doctest::Approx(total / windows).epsilon(1e-12));
}

TEST_CASE("frequency consistency loss") {
  const DctPlan plan({6, 5, 4});
  ad::Tape<double> tape;
  auto a = tape.leaf(Tensor<double>({2, 6, 5, 4}, testing::random_values(240, 1, -1, 1)));
  auto b = tape.leaf(Tensor<double>({2, 6, 5, 4}, testing::random_values(240, 2, -1, 1)));
  CHECK(freq_consistency_loss(a, a, plan).value() == 0.0);
  // Sum of absolute DCT-coefficient differences, computed without the tape.
  Tensor<double> diff({2, 6, 5, 4});
  for (std::size_t i = 0; i < 240; ++i) diff.data[i] = a.value().data[i] - b.value().data[i];
  double want = 0;
  for (double v : dct3(diff, plan).data) want += std::abs(v);
  CHECK(freq_consistency_loss(a, b, plan).value() == doctest::Approx(want).epsilon(1e-12));
}

TEST_CASE("mean patch ssim of a volume with itself") {
  const auto v = testing::random_volume({16, 16, 16}, 4);
  CHECK(mean_patch_ssim(v, v, 8) == 1.0);
  const auto w = testing::random_volume({16, 16, 16}, 5);
  CHECK(mean_patch_ssim(v, w, 8) < 0.5);
}

TEST_CASE("losses reject mismatched shapes") {
  ad::Tape<double> tape;
  auto a = tape.leaf(Tensor<double>({2, 3, 3, 3}));
  auto b = tape.leaf(Tensor<double>({2, 3, 3, 4}));
  CHECK_THROWS_AS(dice_loss(a, b), ShapeError);
  CHECK_THROWS_AS(ssim_loss(a, b), ShapeError);
}
