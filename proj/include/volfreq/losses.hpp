#pragma once

#include <vector>

#include "volfreq/autodiff.hpp"
#include "volfreq/dct.hpp"
#include "volfreq/volume.hpp"

namespace volfreq {

/// Differentiable scalar plus a per-component breakdown for reporting.
template <typename T>
struct LossValue {
  ad::Var<T> node;
  std::vector<double> per_class;
  bool window_shrunk = false;

  double value() const { return static_cast<double>(node.value().data[0]); }
};

inline constexpr double kDiceSmooth = 1e-5;

/// 1 - mean_c (2 sum(p g) + s) / (sum p + sum g + s) with softmax
/// probabilities p of `logits` (C, H, W, D) and one-hot `target`.
/// per_class holds the soft Dice score of every class.
template <typename T>
LossValue<T> dice_loss(ad::Var<T> logits, ad::Var<T> target, double smooth = kDiceSmooth);

struct SsimConstants {
  double c1 = 0.01 * 0.01;
  double c2 = 0.03 * 0.03;
  std::size_t window = 7;
};

/// Mean 3-D SSIM map over every valid window of every block of two
/// (n, p, p, p) stacks. The window shrinks to p when p < window.
template <typename T>
ad::Var<T> ssim_index(ad::Var<T> x, ad::Var<T> y, const SsimConstants& k = {}, bool* shrunk = nullptr);

/// 1 - mean over patches of SSIM(x_i, y_i); stacks as for ssim_index.
/// per_class holds the SSIM of each patch.
template <typename T>
LossValue<T> ssim_loss(ad::Var<T> x, ad::Var<T> y, const SsimConstants& k = {});

/// Volume form: both (H, W, D) volumes are tiled by `grid` first.
template <typename T>
LossValue<T> ssim_loss(ad::Var<T> x, ad::Var<T> y, const PatchGrid& grid, const SsimConstants& k = {});

/// || dct3(a) - dct3(b) ||_1 with the DCT taken over the full spatial
/// extent of each class channel of (C, H, W, D) logits. `plan` must cover
/// (H, W, D) and outlive the tape.
template <typename T>
LossValue<T> freq_consistency_loss(ad::Var<T> a, ad::Var<T> b, const DctPlan& plan);

/// Mean SSIM between two volumes over the patch tiling (no gradients).
double mean_patch_ssim(const Volume& x, const Volume& y, std::size_t patch, const SsimConstants& k = {});

}  // namespace volfreq
