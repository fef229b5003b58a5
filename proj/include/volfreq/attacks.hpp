#pragma once

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "volfreq/dct.hpp"
#include "volfreq/model.hpp"
#include "volfreq/ops.hpp"
#include "volfreq/volume.hpp"

namespace volfreq {

/// Raised when an optimisation produces a non-finite value.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class AttackKind { kVafa, kVafa2d, kPgd, kFgsm, kBim, kGaussianNoise };

std::string to_string(AttackKind k);
AttackKind parse_attack_kind(const std::string& s);

std::string to_string(ad::RoundingGradient r);
/// "ste", "sinusoidal" or "cubic".
ad::RoundingGradient parse_rounding(const std::string& s);

struct AttackConfig {
  AttackKind kind = AttackKind::kVafa;
  int steps = 20;
  double q_max = 20.0;
  double q_lo = 1.0;
  std::size_t patch = 32;
  /// l-infinity budget in canonical [0, 1] units (4/255 style budgets are
  /// converted when the config is parsed).
  double epsilon = 8.0 / 255.0;
  /// Zero selects the default: q_max/steps*2.5 for frequency attacks,
  /// epsilon/steps*2.5 for iterative voxel attacks.
  double step_size = 0.0;
  std::uint64_t seed = 0;
  /// Quantisation operates on DCT coefficients of intensities scaled to
  /// [0, coeff_scale]; 255 matches 8-bit quantisation tables.
  double coeff_scale = 255.0;
  double ssim_weight = 1.0;
  ad::RoundingGradient rounding = ad::RoundingGradient::kStraightThrough;
  bool snap_integer = false;
  bool per_patch_tables = false;

  double resolved_step() const;
  void validate() const;
};

/// Learnable quantisation table for one transform block.
struct QuantTable {
  Tensor<double> q;
  double lo = 1.0;
  double hi = 20.0;

  static QuantTable ones(Shape shape, double lo, double hi);
  void project();
};

struct AttackResult {
  Volume adversarial;
  /// Objective before each update and once more for the returned sample.
  std::vector<double> objective_trace;
  std::vector<double> dice_trace;
  double ssim = 1.0;
  std::optional<QuantTable> table;
};

/// x' = idct3(round(dct3(x) / q) * q) on a (n, p, p, p) stack, hard mode.
/// `q` has shape (p, p, p) (shared) or (n, p, p, p). Coefficients are not rescaled.
template <typename T>
Tensor<T> fpm_forward(const Tensor<T>& stack, const Tensor<T>& q, const DctPlan& plan);

/// The quantised coefficient block round(dct3(x) / q) * q.
template <typename T>
Tensor<T> fpm_quantized_coefficients(const Tensor<T>& stack, const Tensor<T>& q, const DctPlan& plan);

/// Differentiable FPM for tape use: `coeffs` are fixed DCT coefficients of
/// the clean stack, `q` is the table leaf. Returns the voxel-domain stack.
/// A non-null `residual` replaces rounding by u + residual, the first-order
/// model of straight-through rounding used to verify gradients.
template <typename T>
ad::Var<T> fpm_soft(ad::Var<T> coeffs, ad::Var<T> q, const DctPlan& plan, bool slices2d,
                    ad::RoundingGradient rounding, const Tensor<T>* residual = nullptr);

template <typename T>
struct AttackObjective {
  double objective = 0.0;
  double dice = 0.0;
  double ssim_loss = 0.0;
  Tensor<T> grad_q;
};

/// Dice loss minus weighted SSIM loss of the frequency attack at table q,
/// with its gradient w.r.t. q. Model parameters stay frozen.
/// With `linearize_at`, rounding is frozen to its value at that table and
/// the objective becomes smooth in q (finite-difference checks only).
template <typename T>
AttackObjective<T> frequency_attack_objective(const Volume& x, const LabelField& y, const SegModel<T>& model,
                                              const AttackConfig& cfg, const Tensor<T>& q, bool with_grad = true,
                                              const Tensor<T>* linearize_at = nullptr);

template <typename T>
AttackResult vafa(const Volume& x, const LabelField& y, const SegModel<T>& model, const AttackConfig& cfg);
template <typename T>
AttackResult vafa2d(const Volume& x, const LabelField& y, const SegModel<T>& model, const AttackConfig& cfg);
template <typename T>
AttackResult pgd(const Volume& x, const LabelField& y, const SegModel<T>& model, const AttackConfig& cfg);
template <typename T>
AttackResult fgsm(const Volume& x, const LabelField& y, const SegModel<T>& model, const AttackConfig& cfg);
template <typename T>
AttackResult bim(const Volume& x, const LabelField& y, const SegModel<T>& model, const AttackConfig& cfg);
template <typename T>
AttackResult gaussian_noise(const Volume& x, const LabelField& y, const SegModel<T>& model, const AttackConfig& cfg);

/// Dispatches on cfg.kind.
template <typename T>
AttackResult run_attack(const Volume& x, const LabelField& y, const SegModel<T>& model, const AttackConfig& cfg);

/// Dice loss of the model on x and its gradient w.r.t. the voxels.
template <typename T>
std::pair<double, Tensor<T>> dice_input_gradient(const Volume& x, const LabelField& y, const SegModel<T>& model);

}  // namespace volfreq
