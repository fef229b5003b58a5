#pragma once

#include <cstddef>

#include "volfreq/autodiff.hpp"
#include "volfreq/dct.hpp"
#include "volfreq/volume.hpp"

// Differentiable operation set. Every op computes its value eagerly and
// registers an exact backward rule, except soft_round whose derivative is a
// surrogate by construction.
namespace volfreq::ad {

// Elementwise, equal shapes.
template <typename T> Var<T> add(Var<T> a, Var<T> b);
template <typename T> Var<T> sub(Var<T> a, Var<T> b);
template <typename T> Var<T> mul(Var<T> a, Var<T> b);
template <typename T> Var<T> div(Var<T> a, Var<T> b);
template <typename T> Var<T> add_scalar(Var<T> a, T s);
template <typename T> Var<T> mul_scalar(Var<T> a, T s);

/// `b` has the trailing shape of `a` and is broadcast over a's leading axes.
template <typename T> Var<T> mul_leading(Var<T> a, Var<T> b);
template <typename T> Var<T> div_leading(Var<T> a, Var<T> b);
/// Repeats `a` along a new trailing axis of length k.
template <typename T> Var<T> expand_trailing(Var<T> a, std::size_t k);

template <typename T> Var<T> sum(Var<T> a);
template <typename T> Var<T> mean(Var<T> a);
/// Sums all axes but the first: (C, ...) -> (C).
template <typename T> Var<T> sum_inner(Var<T> a);
template <typename T> Var<T> reshape(Var<T> a, Shape shape);

template <typename T> Var<T> abs(Var<T> a);
template <typename T> Var<T> relu(Var<T> a);
template <typename T> Var<T> log(Var<T> a);
/// Softmax over axis 0 (the class axis of a (C, ...) field).
template <typename T> Var<T> softmax_classes(Var<T> a);

/// (m, k) x (k, n).
template <typename T> Var<T> matmul(Var<T> a, Var<T> b);

/// x: (Cin, H, W, D); w: (Cout, Cin, k, k, k) with odd k; b: (Cout).
/// Stride 1, replicate padding, output (Cout, H, W, D).
template <typename T> Var<T> conv3d(Var<T> x, Var<T> w, Var<T> b);

// Linear transforms over the trailing three axes. `plan` must outlive the tape.
template <typename T> Var<T> dct3(Var<T> x, const DctPlan& plan);
template <typename T> Var<T> idct3(Var<T> c, const DctPlan& plan);
template <typename T> Var<T> dct2_slices(Var<T> x, const DctPlan& plan);
template <typename T> Var<T> idct2_slices(Var<T> c, const DctPlan& plan);

enum class RoundingGradient {
  kStraightThrough,  // d/du = 1
  kSinusoidal,       // d/du = 1 - cos(2 pi u)
  kCubic,            // derivative of round(u) + (u - round(u))^3, i.e. 3 (u - round(u))^2
  kZero,             // d/du = 0, the exact derivative between rounding jumps
};

/// Forward: round half away from zero. Backward: surrogate derivative.
template <typename T> Var<T> soft_round(Var<T> u, RoundingGradient rule = RoundingGradient::kStraightThrough);

/// Gradient passes where lo <= x <= hi and is zero outside.
template <typename T> Var<T> clamp(Var<T> x, T lo, T hi);

/// Mean over every fully contained k^3 window of each (a, b, c) block of a
/// (n, a, b, c) stack; output (n, a-k+1, b-k+1, c-k+1).
template <typename T> Var<T> box_mean_valid(Var<T> x, std::size_t k);

/// Volume (H, W, D) -> patch stack (n, p, p, p) with replicate padding.
template <typename T> Var<T> split_patches(Var<T> volume, const PatchGrid& grid);
/// Patch stack -> volume on the original extent.
template <typename T> Var<T> merge_patches(Var<T> stack, const PatchGrid& grid);

template <typename T> Var<T> operator+(Var<T> a, Var<T> b) { return add(a, b); }
template <typename T> Var<T> operator-(Var<T> a, Var<T> b) { return sub(a, b); }
template <typename T> Var<T> operator*(Var<T> a, Var<T> b) { return mul(a, b); }
template <typename T> Var<T> operator/(Var<T> a, Var<T> b) { return div(a, b); }
template <typename T> Var<T> operator-(Var<T> a) { return mul_scalar(a, T{-1}); }
template <typename T> Var<T> operator+(Var<T> a, T s) { return add_scalar(a, s); }
template <typename T> Var<T> operator+(T s, Var<T> a) { return add_scalar(a, s); }
template <typename T> Var<T> operator-(Var<T> a, T s) { return add_scalar(a, -s); }
template <typename T> Var<T> operator-(T s, Var<T> a) { return add_scalar(mul_scalar(a, T{-1}), s); }
template <typename T> Var<T> operator*(Var<T> a, T s) { return mul_scalar(a, s); }
template <typename T> Var<T> operator*(T s, Var<T> a) { return mul_scalar(a, s); }

}  // namespace volfreq::ad
