#include <doctest.h>

#include <cmath>

#include "helpers.hpp"
#include "volfreq/attacks.hpp"

using namespace volfreq;

namespace {

Tensor<double> stack_of(std::size_t n, std::size_t p, std::uint64_t seed, double scale = 255.0) {
  auto v = testing::random_values(n * p * p * p, seed);
  for (auto& x : v) x *= scale;
  return Tensor<double>({n, p, p, p}, v);
}

}  // namespace

TEST_CASE("quantised coefficients are exact multiples of the table") {
  const std::size_t p = 8;
  const DctPlan plan({p, p, p});
  const auto s = stack_of(2, p, 1);
  auto q = Tensor<double>({p, p, p}, testing::random_values(p * p * p, 2, 1, 20));
  for (auto& v : q.data) v = std::round(v);
  const auto c = fpm_quantized_coefficients(s, q, plan);
  for (std::size_t i = 0; i < c.size(); ++i) {
    const double k = c.data[i] / q.data[i % q.size()];
    CHECK(k == std::round(k));
  }
}

TEST_CASE("unit table leaves integer coefficients unchanged") {
  const std::size_t p = 4;
  const DctPlan plan({p, p, p});
  // Build a stack whose DCT coefficients are integers.
  auto coeffs = Tensor<double>({1, p, p, p}, testing::random_values(p * p * p, 3, -50, 50));
  for (auto& v : coeffs.data) v = std::round(v);
  const auto x = idct3(coeffs, plan);
  const auto y = fpm_forward(x, Tensor<double>({p, p, p}, 1.0), plan);
  for (std::size_t i = 0; i < x.size(); ++i) CHECK(std::abs(y.data[i] - x.data[i]) < 1e-9);
}

TEST_CASE("huge quantisation steps flatten a patch to a constant") {
  const std::size_t p = 8;
  const DctPlan plan({p, p, p});
  // Keep every coefficient below half a step except the DC term, which is
  // quantised finely so the mean survives.
  auto s = stack_of(1, p, 4);
  Tensor<double> q({p, p, p}, 1e6);
  const auto c = dct3(s, plan);
  q.data[0] = c.data[0];
  const auto y = fpm_forward(s, q, plan);
  for (double v : y.data) CHECK(v == doctest::Approx(y.data[0]).epsilon(1e-12));
  q.data[0] = 1e6;
  for (double v : fpm_forward(s, q, plan).data) CHECK(std::abs(v) < 1e-9);
}

TEST_CASE("per-patch tables quantise each patch with its own table") {
  const std::size_t p = 4;
  const DctPlan plan({p, p, p});
  const auto s = stack_of(2, p, 5);
  Tensor<double> q({2, p, p, p}, 1.0);
  for (std::size_t i = p * p * p; i < q.size(); ++i) q.data[i] = 7.0;
  const auto c = fpm_quantized_coefficients(s, q, plan);
  for (std::size_t i = p * p * p; i < c.size(); ++i) CHECK(std::fmod(std::abs(c.data[i]), 7.0) < 1e-9);
}

TEST_CASE("table shape and sign are validated") {
  const DctPlan plan({4, 4, 4});
  const auto s = stack_of(1, 4, 6);
  CHECK_THROWS_AS(fpm_forward(s, Tensor<double>({4, 4}), plan), ShapeError);
  CHECK_THROWS(fpm_forward(s, Tensor<double>({4, 4, 4}, 0.0), plan));
}

TEST_CASE("table projection keeps entries inside bounds") {
  auto t = QuantTable::ones({2, 2, 2}, 1.0, 20.0);
  for (double v : t.q.data) CHECK(v == 1.0);
  t.q.data = {-3, 0.5, 1, 10, 20, 21, 1e9, 5};
  t.project();
  for (double v : t.q.data) {
    CHECK(v >= 1.0);
    CHECK(v <= 20.0);
  }
}

TEST_CASE("soft FPM matches the hard forward pass") {
  const std::size_t p = 4;
  const DctPlan plan({p, p, p});
  const auto s = stack_of(2, p, 7);
  auto qv = Tensor<double>({p, p, p}, testing::random_values(p * p * p, 8, 1, 20));
  ad::Tape<double> tape;
  auto y = fpm_soft(tape.constant(dct3(s, plan)), tape.leaf(qv), plan, false, ad::RoundingGradient::kStraightThrough);
  const auto hard = fpm_forward(s, qv, plan);
  for (std::size_t i = 0; i < hard.size(); ++i) CHECK(y.value().data[i] == doctest::Approx(hard.data[i]).epsilon(1e-12));
}
