#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include "volfreq/autodiff.hpp"
#include "volfreq/volume.hpp"

namespace volfreq {

template <typename T>
struct Param {
  std::string name;
  Tensor<T> value;
};

/// Three-layer 3-D CNN: conv(1->hidden) relu conv(hidden->hidden) relu
/// conv(hidden->num_class), 3^3 kernels, stride 1, replicate padding.
/// Receptive field is 7^3.
template <typename T>
class SegModel {
 public:
  static constexpr std::size_t kKernel = 3;

  SegModel() = default;
  SegModel(int num_class, std::size_t hidden, std::uint64_t seed, std::vector<Param<T>> params);

  /// Fan-in scaled uniform (Kaiming) weights, reproducible from `seed`.
  static SegModel init(int num_class, std::uint64_t seed, std::size_t hidden = 8);
  /// All parameters zero.
  static SegModel zeros(int num_class, std::size_t hidden = 8);

  int num_class() const { return num_class_; }
  std::size_t hidden() const { return hidden_; }
  std::uint64_t seed() const { return seed_; }
  const std::vector<Param<T>>& params() const { return params_; }
  std::vector<Param<T>>& params() { return params_; }

  /// Places the parameters on `tape`; frozen parameters carry no gradient.
  std::vector<ad::Var<T>> bind(ad::Tape<T>& tape, bool trainable) const;

  /// x: (1, H, W, D) -> logits (num_class, H, W, D).
  ad::Var<T> forward(ad::Var<T> x, const std::vector<ad::Var<T>>& bound) const;

  template <typename U>
  SegModel<U> cast() const;

  friend bool operator==(const SegModel& a, const SegModel& b) {
    if (a.num_class_ != b.num_class_ || a.hidden_ != b.hidden_ || a.params_.size() != b.params_.size()) return false;
    for (std::size_t i = 0; i < a.params_.size(); ++i) {
      if (a.params_[i].name != b.params_[i].name || a.params_[i].value.shape != b.params_[i].value.shape ||
          a.params_[i].value.data != b.params_[i].value.data) {
        return false;
      }
    }
    return true;
  }

 private:
  int num_class_ = 0;
  std::size_t hidden_ = 0;
  std::uint64_t seed_ = 0;
  std::vector<Param<T>> params_;
};

/// Logits (num_class, H, W, D) for a volume, evaluated without gradients.
template <typename T>
Tensor<T> predict_logits(const SegModel<T>& model, const Volume& x);

/// Per-voxel argmax over the class axis; ties go to the lowest class index.
template <typename T>
LabelField argmax_labels(const Tensor<T>& logits);

template <typename T>
LabelField predict_labels(const SegModel<T>& model, const Volume& x);

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Text manifest followed by little-endian parameter blobs in manifest order.
template <typename T>
void save_checkpoint(const SegModel<T>& model, const std::filesystem::path& path);

/// Loads a checkpoint of either stored precision, converting to T.
template <typename T>
SegModel<T> load_checkpoint(const std::filesystem::path& path);

}  // namespace volfreq
