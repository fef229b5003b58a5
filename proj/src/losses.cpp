#include "volfreq/losses.hpp"

#include <algorithm>

#include "volfreq/ops.hpp"

namespace volfreq {

template <typename T>
LossValue<T> dice_loss(ad::Var<T> logits, ad::Var<T> target, double smooth) {
  if (logits.shape() != target.shape()) {
    throw ShapeError("dice_loss: logits " + shape_string(logits.shape()) + " vs target " + shape_string(target.shape()));
  }
  const auto s = static_cast<T>(smooth);
  auto p = ad::softmax_classes(logits);
  auto inter = ad::sum_inner(p * target);
  auto denom = ad::sum_inner(p) + ad::sum_inner(target);
  auto score = (T{2} * inter + s) / (denom + s);
  LossValue<T> out{T{1} - ad::mean(score), {}};
  for (T v : score.value().data) out.per_class.push_back(static_cast<double>(v));
  return out;
}

template <typename T>
ad::Var<T> ssim_index(ad::Var<T> x, ad::Var<T> y, const SsimConstants& k, bool* shrunk) {
  if (x.shape() != y.shape() || x.shape().size() != 4) {
    throw ShapeError("ssim: stacks " + shape_string(x.shape()) + " and " + shape_string(y.shape()));
  }
  const std::size_t p = std::min({x.shape()[1], x.shape()[2], x.shape()[3]});
  const std::size_t win = std::min(k.window, p);
  if (shrunk) *shrunk = win < k.window;
  const auto c1 = static_cast<T>(k.c1);
  const auto c2 = static_cast<T>(k.c2);
  auto mx = ad::box_mean_valid(x, win);
  auto my = ad::box_mean_valid(y, win);
  auto vx = ad::box_mean_valid(x * x, win) - mx * mx;
  auto vy = ad::box_mean_valid(y * y, win) - my * my;
  auto cxy = ad::box_mean_valid(x * y, win) - mx * my;
  auto num = (T{2} * (mx * my) + c1) * (T{2} * cxy + c2);
  auto den = ((mx * mx + my * my) + c1) * ((vx + vy) + c2);
  return num / den;
}

template <typename T>
LossValue<T> ssim_loss(ad::Var<T> x, ad::Var<T> y, const SsimConstants& k) {
  bool shrunk = false;
  auto map = ssim_index(x, y, k, &shrunk);
  // Patches share one window count, so the global mean equals the mean of per-patch means.
  LossValue<T> out{T{1} - ad::mean(map), {}, shrunk};
  const auto& m = map.value();
  const std::size_t n = m.shape[0];
  const std::size_t per = m.size() / n;
  for (std::size_t i = 0; i < n; ++i) {
    double s = 0;
    for (std::size_t j = 0; j < per; ++j) s += static_cast<double>(m.data[i * per + j]);
    out.per_class.push_back(s / static_cast<double>(per));
  }
  return out;
}

template <typename T>
LossValue<T> ssim_loss(ad::Var<T> x, ad::Var<T> y, const PatchGrid& grid, const SsimConstants& k) {
  return ssim_loss(ad::split_patches(x, grid), ad::split_patches(y, grid), k);
}

template <typename T>
LossValue<T> freq_consistency_loss(ad::Var<T> a, ad::Var<T> b, const DctPlan& plan) {
  if (a.shape() != b.shape()) throw ShapeError("freq_consistency_loss: logits shapes differ");
  return {ad::sum(ad::abs(ad::dct3(a, plan) - ad::dct3(b, plan))), {}};
}

double mean_patch_ssim(const Volume& x, const Volume& y, std::size_t patch, const SsimConstants& k) {
  if (x.extent() != y.extent()) throw ShapeError("mean_patch_ssim: extents differ");
  const auto grid = make_grid(x.extent(), {patch, patch, patch});
  ad::Tape<double> tape;
  auto xs = tape.constant(split_patches<double>(x.data(), grid));
  auto ys = tape.constant(split_patches<double>(y.data(), grid));
  return 1.0 - ssim_loss(xs, ys, k).value();
}

#define VOLFREQ_INSTANTIATE_LOSSES(T)                                                                      \
  template LossValue<T> dice_loss(ad::Var<T>, ad::Var<T>, double);                                         \
  template ad::Var<T> ssim_index(ad::Var<T>, ad::Var<T>, const SsimConstants&, bool*);                     \
  template LossValue<T> ssim_loss(ad::Var<T>, ad::Var<T>, const SsimConstants&);                           \
  template LossValue<T> ssim_loss(ad::Var<T>, ad::Var<T>, const PatchGrid&, const SsimConstants&);         \
  template LossValue<T> freq_consistency_loss(ad::Var<T>, ad::Var<T>, const DctPlan&);

VOLFREQ_INSTANTIATE_LOSSES(float)
VOLFREQ_INSTANTIATE_LOSSES(double)

}  // namespace volfreq
