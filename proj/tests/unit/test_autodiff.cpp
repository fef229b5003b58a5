#include <doctest.h>

#include <cmath>

#include "helpers.hpp"
#include "volfreq/gradcheck.hpp"
#include "volfreq/ops.hpp"

using namespace volfreq;

TEST_CASE("gradient of a small expression") {
  ad::Tape<double> tape;
  auto x = tape.leaf(Tensor<double>({3}, {1.0, -2.0, 3.0}));
  auto y = tape.leaf(Tensor<double>({3}, {0.5, 0.25, 2.0}));
  // L = sum(x * y + x / y)
  auto loss = ad::sum(x * y + x / y);
  tape.backward(loss);
  const auto gx = tape.grad(x), gy = tape.grad(y);
  for (std::size_t i = 0; i < 3; ++i) {
    const double xv = x.value().data[i], yv = y.value().data[i];
    CHECK(gx.data[i] == doctest::Approx(yv + 1 / yv));
    CHECK(gy.data[i] == doctest::Approx(xv - xv / (yv * yv)));
  }
}

TEST_CASE("gradients accumulate over shared uses") {
  ad::Tape<double> tape;
  auto x = tape.leaf(Tensor<double>({1}, {3.0}));
  tape.backward(ad::sum(x * x + x));
  CHECK(tape.grad(x).data[0] == doctest::Approx(7.0));
}

TEST_CASE("constants carry no gradient and record no backward rule") {
  ad::Tape<double> tape;
  auto c = tape.constant(Tensor<double>({2}, 1.0));
  auto d = ad::mul_scalar(c, 2.0);
  CHECK_FALSE(tape.requires_grad(d));
  auto x = tape.leaf(Tensor<double>({2}, 1.0));
  tape.backward(ad::sum(x * d));
  CHECK(tape.grad(c).data == std::vector<double>{0, 0});
  CHECK(tape.grad(x).data == std::vector<double>{2, 2});
}

TEST_CASE("backward needs a scalar on the same tape") {
  ad::Tape<double> tape, other;
  auto x = tape.leaf(Tensor<double>({2}, 1.0));
  CHECK_THROWS_AS(tape.backward(x), ShapeError);
  auto y = other.leaf(Tensor<double>({2}, 1.0));
  CHECK_THROWS_AS(ad::add(x, y), std::logic_error);
  CHECK_THROWS_AS(tape.backward(ad::sum(y)), std::logic_error);
}

TEST_CASE("soft rounding forward rounds half away from zero") {
  ad::Tape<double> tape;
  auto u = tape.leaf(Tensor<double>({6}, {0.5, -0.5, 1.49, -2.5, 2.5000001, 0.0}));
  for (auto rule : {ad::RoundingGradient::kStraightThrough, ad::RoundingGradient::kSinusoidal}) {
    const auto r = ad::soft_round(u, rule).value().data;
    CHECK(r == std::vector<double>{1, -1, 1, -3, 3, 0});
  }
}

TEST_CASE("soft rounding backward uses the surrogate derivative") {
  ad::Tape<double> tape;
  auto u = tape.leaf(Tensor<double>({3}, {0.25, 0.5, 1.0}));
  tape.backward(ad::sum(ad::soft_round(u, ad::RoundingGradient::kStraightThrough)));
  CHECK(tape.grad(u).data == std::vector<double>{1, 1, 1});
  ad::Tape<double> t2;
  auto v = t2.leaf(Tensor<double>({3}, {0.25, 0.5, 1.0}));
  t2.backward(ad::sum(ad::soft_round(v, ad::RoundingGradient::kSinusoidal)));
  const auto g = t2.grad(v).data;
  CHECK(g[0] == doctest::Approx(1.0));
  CHECK(g[1] == doctest::Approx(2.0));
  CHECK(g[2] == doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("clamp passes gradient only inside the interval") {
  ad::Tape<double> tape;
  auto x = tape.leaf(Tensor<double>({3}, {-0.5, 0.5, 1.5}));
  auto y = ad::clamp(x, 0.0, 1.0);
  CHECK(y.value().data == std::vector<double>{0, 0.5, 1});
  tape.backward(ad::sum(y));
  CHECK(tape.grad(x).data == std::vector<double>{0, 1, 0});
}

TEST_CASE("softmax sums to one over the class axis") {
  ad::Tape<double> tape;
  auto x = tape.leaf(Tensor<double>({3, 2, 2, 2}, testing::random_values(24, 1, -30, 30)));
  const auto p = ad::softmax_classes(x).value();
  for (std::size_t v = 0; v < 8; ++v) {
    double s = 0;
    for (std::size_t c = 0; c < 3; ++c) s += p.data[c * 8 + v];
    CHECK(s == doctest::Approx(1.0).epsilon(1e-14));
  }
}

TEST_CASE("conv3d with a centred delta kernel is the identity") {
  ad::Tape<double> tape;
  const auto xv = testing::random_values(5 * 4 * 3, 2);
  auto x = tape.leaf(Tensor<double>({1, 5, 4, 3}, xv));
  Tensor<double> w({1, 1, 3, 3, 3});
  w.data[13] = 1.0;
  auto y = ad::conv3d(x, tape.leaf(w), tape.leaf(Tensor<double>({1}, {0.25})));
  for (std::size_t i = 0; i < xv.size(); ++i) CHECK(y.value().data[i] == doctest::Approx(xv[i] + 0.25));
}

TEST_CASE("conv3d replicates the border") {
  ad::Tape<double> tape;
  auto x = tape.leaf(Tensor<double>({1, 3, 3, 3}, 2.0));
  auto y = ad::conv3d(x, tape.leaf(Tensor<double>({1, 1, 3, 3, 3}, 1.0)), tape.leaf(Tensor<double>({1})));
  // A constant field stays constant under replicate padding, border voxels included.
  for (double v : y.value().data) CHECK(v == doctest::Approx(54.0));
}

TEST_CASE("box mean over valid windows") {
  ad::Tape<double> tape;
  const auto xv = testing::random_values(4 * 4 * 4, 3);
  auto y = ad::box_mean_valid(tape.leaf(Tensor<double>({1, 4, 4, 4}, xv)), 3);
  CHECK(y.shape() == Shape{1, 2, 2, 2});
  double s = 0;
  for (std::size_t i = 1; i < 4; ++i)
    for (std::size_t j = 1; j < 4; ++j)
      for (std::size_t k = 1; k < 4; ++k) s += xv[(i * 4 + j) * 4 + k];
  CHECK(y.value().data[7] == doctest::Approx(s / 27));
}

TEST_CASE("relative error metric") {
  const std::vector<double> a{1.0, 2.0}, b{1.0, 2.002};
  CHECK(relative_error(a, b) == doctest::Approx(0.002 / 2.002));
  const std::vector<double> z{0.0, 0.0};
  CHECK(relative_error(z, z) == 0.0);
}

TEST_CASE("finite-difference suite passes on a few instances") {
  GradcheckOptions o;
  o.instances = 3;
  o.seed = 11;
  const auto results = run_gradcheck(o);
  CHECK(results.size() > 20);
  bool saw_composite = false;
  for (const auto& r : results) {
    INFO(r.name << " rel err " << r.max_rel_error);
    CHECK(r.passed());
    CHECK(r.tolerance == (r.composite ? 1e-3 : 1e-4));
    saw_composite = saw_composite || r.composite;
  }
  CHECK(saw_composite);
}
