#include <doctest.h>

#include <cmath>
#include <numbers>

#include "helpers.hpp"
#include "oracles.hpp"
#include "volfreq/dct.hpp"

using namespace volfreq;
using oracles::naive_dct3;

namespace {

double max_abs_diff(const std::vector<double>& a, const std::vector<double>& b) {
  double m = 0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

}  // namespace

TEST_CASE("dct3 matches the brute-force definition") {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const auto x = testing::random_values(64, seed, -1, 1);
    const DctPlan plan({4, 4, 4});
    const auto c = dct3(Tensor<double>({4, 4, 4}, x), plan);
    CHECK(max_abs_diff(c.data, naive_dct3(x, 4, 4, 4)) < 1e-12);
  }
  // Non-cubic blocks exercise each axis basis separately.
  const auto x = testing::random_values(3 * 5 * 2, 42, -1, 1);
  const DctPlan plan({3, 5, 2});
  CHECK(max_abs_diff(dct3(Tensor<double>({3, 5, 2}, x), plan).data, naive_dct3(x, 3, 5, 2)) < 1e-12);
}

TEST_CASE("basis is orthonormal") {
  for (std::size_t n : {1u, 2u, 5u, 32u}) {
    const auto b = dct_basis(n);
    for (std::size_t r = 0; r < n; ++r)
      for (std::size_t s = 0; s < n; ++s) {
        double dot = 0;
        for (std::size_t k = 0; k < n; ++k) dot += b[r * n + k] * b[s * n + k];
        CHECK(dot == doctest::Approx(r == s ? 1.0 : 0.0).epsilon(1e-12));
      }
  }
}

TEST_CASE("idct3 inverts dct3 and preserves energy on 32^3") {
  const auto x = testing::random_values(32 * 32 * 32, 3);
  const DctPlan plan({32, 32, 32});
  const Tensor<double> t({32, 32, 32}, x);
  const auto c = dct3(t, plan);
  CHECK(max_abs_diff(idct3(c, plan).data, x) < 1e-9);
  double ex = 0, ec = 0;
  for (double v : x) ex += v * v;
  for (double v : c.data) ec += v * v;
  CHECK(std::abs(ec - ex) / ex < 1e-9);
}

TEST_CASE("batched transform treats leading axes independently") {
  const auto x = testing::random_values(3 * 64, 5);
  const DctPlan plan({4, 4, 4});
  const auto c = dct3(Tensor<double>({3, 4, 4, 4}, x), plan);
  for (std::size_t n = 0; n < 3; ++n) {
    std::vector<double> block(x.begin() + n * 64, x.begin() + (n + 1) * 64);
    std::vector<double> got(c.data.begin() + n * 64, c.data.begin() + (n + 1) * 64);
    CHECK(max_abs_diff(got, naive_dct3(block, 4, 4, 4)) < 1e-12);
  }
}

TEST_CASE("constant block has only a DC coefficient") {
  const DctPlan plan({8, 8, 8});
  const auto c = dct3(Tensor<double>({8, 8, 8}, 0.5), plan);
  CHECK(c.data[0] == doctest::Approx(0.5 * std::sqrt(512.0)));
  for (std::size_t i = 1; i < c.size(); ++i) CHECK(std::abs(c.data[i]) < 1e-12);
}

TEST_CASE("slice transform acts on each depth index separately") {
  const std::size_t p = 4;
  const auto x = testing::random_values(p * p * p, 6);
  const DctPlan plan({p, p, p});
  const auto c = dct2_slices(Tensor<double>({p, p, p}, x), plan);
  for (std::size_t k = 0; k < p; ++k) {
    std::vector<double> slice(p * p);
    for (std::size_t i = 0; i < p; ++i)
      for (std::size_t j = 0; j < p; ++j) slice[i * p + j] = x[(i * p + j) * p + k];
    const auto ref = naive_dct3(slice, p, p, 1);
    for (std::size_t i = 0; i < p * p; ++i) CHECK(c.data[i * p + k] == doctest::Approx(ref[i]).epsilon(1e-12));
  }
  CHECK(max_abs_diff(idct2_slices(c, plan).data, x) < 1e-12);
}

TEST_CASE("float precision stays close to double") {
  const auto x = testing::random_values(8 * 8 * 8, 8);
  const DctPlan plan({8, 8, 8});
  const auto cd = dct3(Tensor<double>({8, 8, 8}, x), plan);
  const auto cf = dct3(Tensor<double>({8, 8, 8}, x).cast<float>(), plan);
  for (std::size_t i = 0; i < cd.size(); ++i) CHECK(std::abs(cd.data[i] - cf.data[i]) < 1e-5);
}

TEST_CASE("transform rejects blocks of the wrong shape") {
  const DctPlan plan({4, 4, 4});
  CHECK_THROWS_AS(dct3(Tensor<double>({4, 4, 5}), plan), ShapeError);
}
