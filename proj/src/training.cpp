#include "volfreq/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>

#include "volfreq/losses.hpp"
#include "volfreq/rng.hpp"

namespace volfreq {

std::string to_string(TrainMode m) {
  switch (m) {
    case TrainMode::kStandard: return "standard";
    case TrainMode::kAdvVoxel: return "adv-voxel";
    case TrainMode::kVaft: return "vaft";
    case TrainMode::kVaftFr: return "vaft-fr";
  }
  return "?";
}

TrainMode parse_train_mode(const std::string& s) {
  for (auto m : {TrainMode::kStandard, TrainMode::kAdvVoxel, TrainMode::kVaft, TrainMode::kVaftFr}) {
    if (to_string(m) == s) return m;
  }
  throw std::invalid_argument("unknown training mode '" + s + "' (expected standard, adv-voxel, vaft or vaft-fr)");
}

std::string to_string(Optimizer o) { return o == Optimizer::kAdam ? "adam" : "sgd"; }

Optimizer parse_optimizer(const std::string& s) {
  if (s == "adam") return Optimizer::kAdam;
  if (s == "sgd") return Optimizer::kMomentumSgd;
  throw std::invalid_argument("unknown optimizer '" + s + "' (expected adam or sgd)");
}

void TrainConfig::validate() const {
  if (epochs < 0) throw std::invalid_argument("epochs must be >= 0");
  if (batch_size == 0) throw std::invalid_argument("batch_size must be >= 1");
  if (!(learning_rate > 0)) throw std::invalid_argument("learning_rate must be positive");
  if (momentum < 0 || momentum >= 1) throw std::invalid_argument("momentum must be in [0, 1)");
  if (beta2 < 0 || beta2 >= 1) throw std::invalid_argument("beta2 must be in [0, 1)");
  if (!(adam_epsilon > 0)) throw std::invalid_argument("adam_epsilon must be positive");
  if (lambda_fr < 0) throw std::invalid_argument("lambda_fr must be >= 0");
  if (mode == TrainMode::kVaftFr && !(lambda_fr > 0)) throw std::invalid_argument("vaft-fr needs lambda_fr > 0");
  if (mode != TrainMode::kStandard) attack.validate();
}

template <typename T>
StepLoss training_loss(const SegModel<T>& model, const Sample& s, const Volume* adversarial, double lambda_fr,
                       std::vector<Tensor<T>>* grads, double weight) {
  const auto& e = s.x.extent();
  ad::Tape<T> tape;
  auto params = model.bind(tape, grads != nullptr);
  auto target = tape.constant(s.y.one_hot<T>());
  auto input = [&](const Volume& v) { return tape.constant(Tensor<T>({1, e.h, e.w, e.d}, v.tensor<T>().data)); };

  auto clean_logits = model.forward(input(s.x), params);
  auto clean = dice_loss(clean_logits, target);
  StepLoss out;
  out.clean = clean.value();
  auto total = clean.node;
  std::optional<DctPlan> plan;
  if (adversarial) {
    auto adv_logits = model.forward(input(*adversarial), params);
    auto adv = dice_loss(adv_logits, target);
    out.adv = adv.value();
    total = total + adv.node;
    if (lambda_fr > 0) {
      plan.emplace(std::array<std::size_t, 3>{e.h, e.w, e.d});
      auto fr = freq_consistency_loss(clean_logits, adv_logits, *plan) ;
      auto weighted = fr.node * static_cast<T>(lambda_fr);
      out.fr = static_cast<double>(weighted.value().data[0]);
      total = total + weighted;
    }
  }
  out.total = static_cast<double>(total.value().data[0]);
  if (grads && std::isfinite(out.total)) {
    tape.backward(total);
    if (grads->empty()) {
      for (const auto& p : model.params()) grads->emplace_back(p.value.shape);
    }
    for (std::size_t i = 0; i < params.size(); ++i) {
      const auto g = tape.grad(params[i]);
      auto& dst = (*grads)[i].data;
      for (std::size_t k = 0; k < dst.size(); ++k) dst[k] += static_cast<T>(weight) * g.data[k];
    }
  }
  return out;
}

template <typename T>
TrainReport train(SegModel<T>& model, const std::vector<Sample>& data, const TrainConfig& cfg,
                  const std::type_identity_t<EpochCallback<T>>& on_epoch) {
  cfg.validate();
  if (data.empty()) throw std::invalid_argument("training set is empty");
  const auto start = std::chrono::steady_clock::now();
  TrainReport report;
  std::vector<Tensor<T>> first, second;
  for (const auto& p : model.params()) {
    first.emplace_back(p.value.shape);
    second.emplace_back(p.value.shape);
  }
  std::uint64_t step = 0;
  std::vector<std::size_t> order(data.size());

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng rng(derive_seed(cfg.seed, "epoch", static_cast<std::uint64_t>(epoch)));
    std::shuffle(order.begin(), order.end(), rng.engine());
    EpochLog log{epoch + 1, 0, 0, 0, 0};

    for (std::size_t b0 = 0; b0 < order.size(); b0 += cfg.batch_size) {
      const std::size_t b1 = std::min(order.size(), b0 + cfg.batch_size);
      const double w = 1.0 / static_cast<double>(b1 - b0);
      const auto snapshot = model;
      std::vector<Tensor<T>> grads;
      for (std::size_t b = b0; b < b1; ++b) {
        const auto& s = data[order[b]];
        std::optional<Volume> adv;
        double lambda = 0.0;
        if (cfg.mode != TrainMode::kStandard) {
          // The adversary sees the current parameters but never updates them.
          auto acfg = cfg.attack;
          acfg.kind = cfg.mode == TrainMode::kAdvVoxel ? AttackKind::kPgd : AttackKind::kVafa;
          acfg.seed = derive_seed(cfg.seed, "train-attack", static_cast<std::uint64_t>(epoch) * data.size() + order[b]);
          adv = run_attack(s.x, s.y, model, acfg).adversarial;
          if (cfg.mode == TrainMode::kVaftFr) lambda = cfg.lambda_fr;
        }
        const auto l = training_loss(model, s, adv ? &*adv : nullptr, lambda, &grads, w);
        if (!std::isfinite(l.total)) {
          model = snapshot;
          throw NumericalError("non-finite training loss in epoch " + std::to_string(epoch + 1) + " on sample " +
                               s.name);
        }
        log.clean_loss += l.clean;
        log.adv_loss += l.adv;
        log.fr_loss += l.fr;
      }
      ++step;
      const double lr = cfg.learning_rate;
      const double beta1 = cfg.momentum, beta2 = cfg.beta2;
      // Bias corrections of the running moments.
      const double c1 = 1 - std::pow(beta1, static_cast<double>(step));
      const double c2 = 1 - std::pow(beta2, static_cast<double>(step));
      for (std::size_t i = 0; i < grads.size(); ++i) {
        auto& p = model.params()[i].value.data;
        auto& m = first[i].data;
        auto& v = second[i].data;
        for (std::size_t k = 0; k < p.size(); ++k) {
          const double g = grads[i].data[k];
          if (cfg.optimizer == Optimizer::kMomentumSgd) {
            m[k] = static_cast<T>(beta1 * m[k] + g);
            p[k] -= static_cast<T>(lr * m[k]);
          } else {
            m[k] = static_cast<T>(beta1 * m[k] + (1 - beta1) * g);
            v[k] = static_cast<T>(beta2 * v[k] + (1 - beta2) * g * g);
            p[k] -= static_cast<T>(lr * (m[k] / c1) / (std::sqrt(v[k] / c2) + cfg.adam_epsilon));
          }
        }
      }
    }
    const auto n = static_cast<double>(data.size());
    log.clean_loss /= n;
    log.adv_loss /= n;
    log.fr_loss /= n;
    log.total_loss = log.clean_loss + log.adv_loss + log.fr_loss;
    report.epochs.push_back(log);
    if (on_epoch) on_epoch(log, model);
  }
  report.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return report;
}

template <typename T>
TrainReport train_standard(SegModel<T>& model, const std::vector<Sample>& data, TrainConfig cfg,
                           const std::type_identity_t<EpochCallback<T>>& on_epoch) {
  cfg.mode = TrainMode::kStandard;
  return train(model, data, cfg, on_epoch);
}

template <typename T>
TrainReport train_vaft(SegModel<T>& model, const std::vector<Sample>& data, TrainConfig cfg,
                       const std::type_identity_t<EpochCallback<T>>& on_epoch) {
  cfg.mode = cfg.lambda_fr > 0 ? TrainMode::kVaftFr : TrainMode::kVaft;
  return train(model, data, cfg, on_epoch);
}

template <typename T>
TrainReport train_adv_voxel(SegModel<T>& model, const std::vector<Sample>& data, TrainConfig cfg,
                            const std::type_identity_t<EpochCallback<T>>& on_epoch) {
  cfg.mode = TrainMode::kAdvVoxel;
  return train(model, data, cfg, on_epoch);
}

#define VOLFREQ_INSTANTIATE_TRAINING(T)                                                                           \
  template StepLoss training_loss(const SegModel<T>&, const Sample&, const Volume*, double,                      \
                                  std::vector<Tensor<T>>*, double);                                              \
  template TrainReport train(SegModel<T>&, const std::vector<Sample>&, const TrainConfig&, const EpochCallback<T>&); \
  template TrainReport train_standard(SegModel<T>&, const std::vector<Sample>&, TrainConfig, const EpochCallback<T>&); \
  template TrainReport train_vaft(SegModel<T>&, const std::vector<Sample>&, TrainConfig, const EpochCallback<T>&);    \
  template TrainReport train_adv_voxel(SegModel<T>&, const std::vector<Sample>&, TrainConfig, const EpochCallback<T>&);

VOLFREQ_INSTANTIATE_TRAINING(float)
VOLFREQ_INSTANTIATE_TRAINING(double)

}  // namespace volfreq
