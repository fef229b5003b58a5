#pragma once

#include <cstdint>
#include <functional>
#include <type_traits>
#include <string>
#include <vector>

#include "volfreq/attacks.hpp"
#include "volfreq/model.hpp"
#include "volfreq/synth.hpp"

namespace volfreq {

enum class TrainMode { kStandard, kAdvVoxel, kVaft, kVaftFr };

std::string to_string(TrainMode m);
TrainMode parse_train_mode(const std::string& s);

enum class Optimizer { kAdam, kMomentumSgd };

std::string to_string(Optimizer o);
Optimizer parse_optimizer(const std::string& s);

struct TrainConfig {
  TrainMode mode = TrainMode::kStandard;
  int epochs = 25;
  std::size_t batch_size = 4;
  /// Adam by default: momentum SGD on soft Dice tends to collapse the small
  /// ReLU network to all-background predictions before it separates classes.
  Optimizer optimizer = Optimizer::kAdam;
  double learning_rate = 0.002;
  /// SGD momentum, or Adam's first-moment decay.
  double momentum = 0.9;
  /// Adam's second-moment decay.
  double beta2 = 0.999;
  double adam_epsilon = 1e-8;
  /// Weight of the frequency consistency term; must be positive for vaft-fr.
  double lambda_fr = 1.0;
  /// Adversary used for adv-voxel (pgd) and vaft modes (vafa).
  AttackConfig attack;
  std::uint64_t seed = 1;

  void validate() const;
};

struct EpochLog {
  int epoch = 0;
  double clean_loss = 0.0;  // mean Dice loss on clean samples
  double adv_loss = 0.0;    // mean Dice loss on adversarial samples
  double fr_loss = 0.0;     // mean weighted frequency consistency term
  double total_loss = 0.0;  // clean + adv + fr
};

struct TrainReport {
  std::vector<EpochLog> epochs;
  double seconds = 0.0;
};

/// Called after every epoch with the model as it stands.
template <typename T>
using EpochCallback = std::function<void(const EpochLog&, const SegModel<T>&)>;

/// Trains `model` in place. On a non-finite loss the model is restored to
/// the state before the offending batch and NumericalError is thrown.
template <typename T>
TrainReport train(SegModel<T>& model, const std::vector<Sample>& data, const TrainConfig& cfg,
                  const std::type_identity_t<EpochCallback<T>>& on_epoch = {});

template <typename T>
TrainReport train_standard(SegModel<T>& model, const std::vector<Sample>& data, TrainConfig cfg,
                           const std::type_identity_t<EpochCallback<T>>& on_epoch = {});
template <typename T>
TrainReport train_vaft(SegModel<T>& model, const std::vector<Sample>& data, TrainConfig cfg,
                       const std::type_identity_t<EpochCallback<T>>& on_epoch = {});
template <typename T>
TrainReport train_adv_voxel(SegModel<T>& model, const std::vector<Sample>& data, TrainConfig cfg,
                            const std::type_identity_t<EpochCallback<T>>& on_epoch = {});

/// Loss terms of one sample under the configured mode.
struct StepLoss {
  double clean = 0.0;
  double adv = 0.0;
  double fr = 0.0;
  double total = 0.0;
};

/// Builds the training objective for one (clean, adversarial) pair and
/// accumulates its parameter gradient into `grads` (scaled by `weight`).
/// Passing `adversarial == nullptr` gives the clean Dice loss only.
template <typename T>
StepLoss training_loss(const SegModel<T>& model, const Sample& s, const Volume* adversarial, double lambda_fr,
                       std::vector<Tensor<T>>* grads, double weight = 1.0);

}  // namespace volfreq
