#include "volfreq/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <optional>

#include "volfreq/attacks.hpp"
#include "volfreq/losses.hpp"
#include "volfreq/model.hpp"
#include "volfreq/ops.hpp"
#include "volfreq/rng.hpp"
#include "volfreq/training.hpp"

namespace volfreq {

double relative_error(std::span<const double> analytic, std::span<const double> numeric) {
  if (analytic.size() != numeric.size()) throw ShapeError("relative_error: length mismatch");
  double diff = 0, scale = 0;
  for (std::size_t i = 0; i < analytic.size(); ++i) {
    diff = std::max(diff, std::abs(analytic[i] - numeric[i]));
    scale = std::max({scale, std::abs(analytic[i]), std::abs(numeric[i])});
  }
  return scale == 0 ? 0.0 : diff / scale;
}

namespace {

using Var = ad::Var<double>;
using Tape = ad::Tape<double>;
using Tens = Tensor<double>;
using Builder = std::function<Var(Tape&, const std::vector<Var>&)>;

struct Prober {
  const GradcheckOptions& opts;
  Rng& rng;
  double h;

  std::vector<std::size_t> coords(std::size_t n) {
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    if (n <= opts.max_coords) return idx;
    std::shuffle(idx.begin(), idx.end(), rng.engine());
    idx.resize(opts.max_coords);
    return idx;
  }

  // Central differences of `eval` around `at`, compared to `analytic`.
  void compare(const Tens& at, const Tens& analytic, const std::function<double(const Tens&)>& eval,
               std::vector<double>& a, std::vector<double>& n) {
    for (auto i : coords(at.size())) {
      Tens plus = at, minus = at;
      plus.data[i] += h;
      minus.data[i] -= h;
      a.push_back(analytic.data[i]);
      n.push_back((eval(plus) - eval(minus)) / (2 * h));
    }
  }

  // Random linear functional of the op output, so every output entry matters.
  double op_instance(const Builder& f, const std::vector<Tens>& inputs, const std::vector<bool>& diff) {
    Tens weights;
    auto scalar = [&](Tape& tape, const std::vector<Var>& in) {
      auto out = f(tape, in);
      if (weights.data.empty()) {
        weights = Tens(out.shape());
        for (auto& w : weights.data) w = rng.uniform(-1, 1);
      }
      return ad::sum(out * tape.constant(weights));
    };
    Tape tape;
    std::vector<Var> vars;
    for (std::size_t k = 0; k < inputs.size(); ++k) vars.push_back(tape.leaf(inputs[k], diff[k]));
    auto loss = scalar(tape, vars);
    tape.backward(loss);

    std::vector<double> a, n;
    for (std::size_t k = 0; k < inputs.size(); ++k) {
      if (!diff[k]) continue;
      auto eval = [&](const Tens& moved) {
        Tape t;
        std::vector<Var> v;
        for (std::size_t j = 0; j < inputs.size(); ++j) v.push_back(t.leaf(j == k ? moved : inputs[j], false));
        return scalar(t, v).value().data[0];
      };
      compare(inputs[k], tape.grad(vars[k]), eval, a, n);
    }
    return relative_error(a, n);
  }
};

Tens uniform(Rng& rng, Shape s, double lo, double hi) {
  Tens t(std::move(s));
  for (auto& v : t.data) v = rng.uniform(lo, hi);
  return t;
}

// Magnitudes in [lo, hi] with random sign: keeps kinks and poles at bay.
Tens signed_away(Rng& rng, Shape s, double lo, double hi) {
  Tens t = uniform(rng, std::move(s), lo, hi);
  for (auto& v : t.data) v = rng.uniform() < 0.5 ? -v : v;
  return t;
}

LabelField random_labels(Rng& rng, const Extent& e, int num_class) {
  std::vector<std::uint8_t> c(e.voxels());
  for (auto& v : c) v = static_cast<std::uint8_t>(rng.below(static_cast<std::uint64_t>(num_class)));
  return LabelField(e, num_class, std::move(c));
}

struct Case {
  std::string name;
  bool composite;
  std::function<double(Prober&)> instance;
  bool network = false;
};

std::vector<Case> primitive_cases() {
  auto op = [](std::string name, std::function<std::vector<Tens>(Rng&)> gen, Builder f,
               std::vector<bool> diff = {}) {
    return Case{std::move(name), false, [gen, f, diff](Prober& p) {
                  auto in = gen(p.rng);
                  auto d = diff.empty() ? std::vector<bool>(in.size(), true) : diff;
                  return p.op_instance(f, in, d);
                }};
  };
  const Shape s{2, 3, 4};
  std::vector<Case> c;
  c.push_back(op("add", [s](Rng& r) { return std::vector{uniform(r, s, -1, 1), uniform(r, s, -1, 1)}; },
                 [](Tape&, const std::vector<Var>& v) { return ad::add(v[0], v[1]); }));
  c.push_back(op("sub", [s](Rng& r) { return std::vector{uniform(r, s, -1, 1), uniform(r, s, -1, 1)}; },
                 [](Tape&, const std::vector<Var>& v) { return ad::sub(v[0], v[1]); }));
  c.push_back(op("mul", [s](Rng& r) { return std::vector{uniform(r, s, -1, 1), uniform(r, s, -1, 1)}; },
                 [](Tape&, const std::vector<Var>& v) { return ad::mul(v[0], v[1]); }));
  c.push_back(op("div", [s](Rng& r) { return std::vector{uniform(r, s, -1, 1), signed_away(r, s, 0.5, 2)}; },
                 [](Tape&, const std::vector<Var>& v) { return ad::div(v[0], v[1]); }));
  c.push_back(op("add_scalar", [s](Rng& r) { return std::vector{uniform(r, s, -1, 1)}; },
                 [](Tape&, const std::vector<Var>& v) { return ad::add_scalar(v[0], 0.7); }));
  c.push_back(op("mul_scalar", [s](Rng& r) { return std::vector{uniform(r, s, -1, 1)}; },
                 [](Tape&, const std::vector<Var>& v) { return ad::mul_scalar(v[0], -1.3); }));
  c.push_back(op("mul_leading", [](Rng& r) { return std::vector{uniform(r, {3, 2, 4}, -1, 1), uniform(r, {2, 4}, -1, 1)}; },
                 [](Tape&, const std::vector<Var>& v) { return ad::mul_leading(v[0], v[1]); }));
  c.push_back(op("div_leading",
                 [](Rng& r) { return std::vector{uniform(r, {3, 2, 4}, -1, 1), signed_away(r, {2, 4}, 0.5, 2)}; },
                 [](Tape&, const std::vector<Var>& v) { return ad::div_leading(v[0], v[1]); }));
  c.push_back(op("expand_trailing", [](Rng& r) { return std::vector{uniform(r, {3, 4}, -1, 1)}; },
                 [](Tape&, const std::vector<Var>& v) { return ad::expand_trailing(v[0], 5); }));
  c.push_back(op("sum", [s](Rng& r) { return std::vector{uniform(r, s, -1, 1)}; },
                 [](Tape&, const std::vector<Var>& v) { return ad::sum(v[0]); }));
  c.push_back(op("mean", [s](Rng& r) { return std::vector{uniform(r, s, -1, 1)}; },
                 [](Tape&, const std::vector<Var>& v) { return ad::mean(v[0]); }));
  c.push_back(op("sum_inner", [s](Rng& r) { return std::vector{uniform(r, s, -1, 1)}; },
                 [](Tape&, const std::vector<Var>& v) { return ad::sum_inner(v[0]); }));
  c.push_back(op("reshape", [s](Rng& r) { return std::vector{uniform(r, s, -1, 1)}; },
                 [](Tape&, const std::vector<Var>& v) { return ad::reshape(v[0], Shape{4, 6}); }));
  c.push_back(op("abs", [s](Rng& r) { return std::vector{signed_away(r, s, 0.1, 1)}; },
                 [](Tape&, const std::vector<Var>& v) { return ad::abs(v[0]); }));
  c.push_back(op("relu", [s](Rng& r) { return std::vector{signed_away(r, s, 0.1, 1)}; },
                 [](Tape&, const std::vector<Var>& v) { return ad::relu(v[0]); }));
  c.push_back(op("log", [s](Rng& r) { return std::vector{uniform(r, s, 0.5, 2)}; },
                 [](Tape&, const std::vector<Var>& v) { return ad::log(v[0]); }));
  c.push_back(op("softmax_classes", [](Rng& r) { return std::vector{uniform(r, {4, 3, 2, 2}, -2, 2)}; },
                 [](Tape&, const std::vector<Var>& v) { return ad::softmax_classes(v[0]); }));
  c.push_back(op("matmul", [](Rng& r) { return std::vector{uniform(r, {3, 4}, -1, 1), uniform(r, {4, 5}, -1, 1)}; },
                 [](Tape&, const std::vector<Var>& v) { return ad::matmul(v[0], v[1]); }));
  c.push_back(op("conv3d",
                 [](Rng& r) {
                   return std::vector{uniform(r, {2, 4, 5, 6}, -1, 1), uniform(r, {3, 2, 3, 3, 3}, -0.5, 0.5),
                                      uniform(r, {3}, -0.5, 0.5)};
                 },
                 [](Tape&, const std::vector<Var>& v) { return ad::conv3d(v[0], v[1], v[2]); }));

  static const DctPlan cube({4, 4, 4});
  static const DctPlan box({3, 4, 5});
  c.push_back(op("dct3", [](Rng& r) { return std::vector{uniform(r, {2, 3, 4, 5}, -1, 1)}; },
                 [](Tape&, const std::vector<Var>& v) { return ad::dct3(v[0], box); }));
  c.push_back(op("idct3", [](Rng& r) { return std::vector{uniform(r, {2, 3, 4, 5}, -1, 1)}; },
                 [](Tape&, const std::vector<Var>& v) { return ad::idct3(v[0], box); }));
  c.push_back(op("dct2_slices", [](Rng& r) { return std::vector{uniform(r, {2, 4, 4, 4}, -1, 1)}; },
                 [](Tape&, const std::vector<Var>& v) { return ad::dct2_slices(v[0], cube); }));
  c.push_back(op("idct2_slices", [](Rng& r) { return std::vector{uniform(r, {2, 4, 4, 4}, -1, 1)}; },
                 [](Tape&, const std::vector<Var>& v) { return ad::idct2_slices(v[0], cube); }));

  // Rounding has a zero derivative almost everywhere, so each surrogate rule
  // is checked against the smooth function whose derivative it is, offset to
  // agree with rounding at the probe point.
  c.push_back(Case{"soft_round(ste)", false, [](Prober& p) {
                     const auto u0 = uniform(p.rng, {2, 3, 4}, -3, 3);
                     Tens w = uniform(p.rng, u0.shape, -1, 1);
                     Tape tape;
                     auto u = tape.leaf(u0);
                     tape.backward(ad::sum(ad::soft_round(u) * tape.constant(w)));
                     auto eval = [&](const Tens& v) {
                       double s = 0;
                       for (std::size_t i = 0; i < v.size(); ++i) {
                         s += w.data[i] * (v.data[i] + std::round(u0.data[i]) - u0.data[i]);
                       }
                       return s;
                     };
                     std::vector<double> a, n;
                     p.compare(u0, tape.grad(u), eval, a, n);
                     return relative_error(a, n);
                   }});
  c.push_back(Case{"soft_round(sinusoidal)", false, [](Prober& p) {
                     const auto u0 = uniform(p.rng, {2, 3, 4}, -3, 3);
                     Tens w = uniform(p.rng, u0.shape, -1, 1);
                     Tape tape;
                     auto u = tape.leaf(u0);
                     tape.backward(ad::sum(ad::soft_round(u, ad::RoundingGradient::kSinusoidal) * tape.constant(w)));
                     auto smooth = [](double v) { return v - std::sin(2 * M_PI * v) / (2 * M_PI); };
                     auto eval = [&](const Tens& v) {
                       double s = 0;
                       for (std::size_t i = 0; i < v.size(); ++i) s += w.data[i] * smooth(v.data[i]);
                       return s;
                     };
                     std::vector<double> a, n;
                     p.compare(u0, tape.grad(u), eval, a, n);
                     return relative_error(a, n);
                   }});

  c.push_back(Case{"soft_round(cubic)", false, [](Prober& p) {
                     auto u0 = uniform(p.rng, {2, 3, 4}, -3, 3);
                     // Keep probes clear of the jumps at half-integers.
                     for (auto& v : u0.data) v = std::round(v) + 0.9 * (v - std::round(v));
                     Tens w = uniform(p.rng, u0.shape, -1, 1);
                     Tape tape;
                     auto u = tape.leaf(u0);
                     tape.backward(ad::sum(ad::soft_round(u, ad::RoundingGradient::kCubic) * tape.constant(w)));
                     // Piecewise smooth away from half-integers, where the sampled points never land.
                     auto smooth = [](double v) { const double e = v - std::round(v); return std::round(v) + e * e * e; };
                     auto eval = [&](const Tens& v) {
                       double s = 0;
                       for (std::size_t i = 0; i < v.size(); ++i) s += w.data[i] * smooth(v.data[i]);
                       return s;
                     };
                     std::vector<double> a, n;
                     p.compare(u0, tape.grad(u), eval, a, n);
                     return relative_error(a, n);
                   }});

  c.push_back(Case{"soft_round(zero)", false, [](Prober& p) {
                     auto u0 = uniform(p.rng, {2, 3, 4}, -3, 3);
                     for (auto& v : u0.data) v = std::round(v) + 0.9 * (v - std::round(v));
                     Tens w = uniform(p.rng, u0.shape, -1, 1);
                     Tape tape;
                     auto u = tape.leaf(u0);
                     tape.backward(ad::sum(ad::soft_round(u, ad::RoundingGradient::kZero) * tape.constant(w)));
                     // The hard rounding itself is the reference: flat between jumps.
                     auto eval = [&](const Tens& v) {
                       double s = 0;
                       for (std::size_t i = 0; i < v.size(); ++i) s += w.data[i] * std::round(v.data[i]);
                       return s;
                     };
                     std::vector<double> a, n;
                     p.compare(u0, tape.grad(u), eval, a, n);
                     return relative_error(a, n);
                   }});

  c.push_back(op("clamp",
                 [s](Rng& r) {
                   auto t = uniform(r, s, -0.5, 1.5);
                   for (auto& v : t.data) {
                     if (std::abs(v) < 0.05 || std::abs(v - 1) < 0.05) v += 0.2;
                   }
                   return std::vector{t};
                 },
                 [](Tape&, const std::vector<Var>& v) { return ad::clamp(v[0], 0.0, 1.0); }));
  c.push_back(op("box_mean_valid", [](Rng& r) { return std::vector{uniform(r, {2, 5, 6, 7}, -1, 1)}; },
                 [](Tape&, const std::vector<Var>& v) { return ad::box_mean_valid(v[0], 3); }));
  static const PatchGrid grid = make_grid(Extent{5, 6, 7}, {4, 4, 4});
  c.push_back(op("split_patches", [](Rng& r) { return std::vector{uniform(r, {5, 6, 7}, -1, 1)}; },
                 [](Tape&, const std::vector<Var>& v) { return ad::split_patches(v[0], grid); }));
  c.push_back(op("merge_patches", [](Rng& r) { return std::vector{uniform(r, grid.stack_shape(), -1, 1)}; },
                 [](Tape&, const std::vector<Var>& v) { return ad::merge_patches(v[0], grid); }));
  return c;
}

struct SmallProblem {
  Extent extent{8, 8, 8};
  int num_class = 3;
  SegModel<double> model;
  Volume x;
  LabelField y;

  SmallProblem(Rng& rng, Extent e, int classes) : extent(e), num_class(classes) {
    model = SegModel<double>::init(num_class, rng.engine()(), 4);
    std::vector<double> v(extent.voxels());
    for (auto& t : v) t = rng.uniform(0.2, 0.8);
    x = Volume(extent, std::move(v));
    y = random_labels(rng, extent, num_class);
  }

  std::vector<Tens> params() const {
    std::vector<Tens> out;
    for (const auto& p : model.params()) out.push_back(p.value);
    return out;
  }
};

Tens volume_input(const Volume& v) {
  const auto& e = v.extent();
  return Tens({1, e.h, e.w, e.d}, std::vector<double>(v.data().begin(), v.data().end()));
}

std::vector<Case> composite_cases() {
  std::vector<Case> c;
  c.push_back(Case{"dice_loss", true, [](Prober& p) {
                     auto logits = uniform(p.rng, {3, 4, 3, 5}, -2, 2);
                     auto target = random_labels(p.rng, Extent{4, 3, 5}, 3).one_hot<double>();
                     return p.op_instance([](Tape&, const std::vector<Var>& v) { return dice_loss(v[0], v[1]).node; },
                                          {logits, target}, {true, false});
                   }});
  c.push_back(Case{"ssim_loss", true, [](Prober& p) {
                     return p.op_instance([](Tape&, const std::vector<Var>& v) { return ssim_loss(v[0], v[1]).node; },
                                          {uniform(p.rng, {2, 7, 7, 7}, 0, 1), uniform(p.rng, {2, 7, 7, 7}, 0, 1)},
                                          {true, true});
                   }});
  c.push_back(Case{"ssim_loss(shrunk window)", true, [](Prober& p) {
                     return p.op_instance([](Tape&, const std::vector<Var>& v) { return ssim_loss(v[0], v[1]).node; },
                                          {uniform(p.rng, {3, 4, 4, 4}, 0, 1), uniform(p.rng, {3, 4, 4, 4}, 0, 1)},
                                          {true, true});
                   }});
  c.push_back(Case{"freq_consistency_loss", true, [](Prober& p) {
                     static const DctPlan plan({4, 3, 5});
                     return p.op_instance(
                         [](Tape&, const std::vector<Var>& v) { return freq_consistency_loss(v[0], v[1], plan).node; },
                         {uniform(p.rng, {2, 4, 3, 5}, -1, 1), uniform(p.rng, {2, 4, 3, 5}, -1, 1)}, {true, true});
                   }});
  c.push_back(Case{"conv-relu-softmax-dice", true, [](Prober& p) {
                     auto target = random_labels(p.rng, Extent{4, 5, 3}, 3).one_hot<double>();
                     return p.op_instance(
                         [](Tape&, const std::vector<Var>& v) {
                           auto h = ad::relu(ad::conv3d(v[0], v[1], v[2]));
                           return dice_loss(h, v[3]).node;
                         },
                         {uniform(p.rng, {2, 4, 5, 3}, -1, 1), uniform(p.rng, {3, 2, 3, 3, 3}, -0.5, 0.5),
                          uniform(p.rng, {3}, -0.5, 0.5), target},
                         {true, true, true, false});
                   },
                   true});
  c.push_back(Case{"model dice w.r.t. input and parameters", true, [](Prober& p) {
                     SmallProblem prob(p.rng, Extent{6, 5, 7}, 3);
                     std::vector<Tens> in{volume_input(prob.x)};
                     for (auto& t : prob.params()) in.push_back(t);
                     in.push_back(prob.y.one_hot<double>());
                     std::vector<bool> diff(in.size(), true);
                     diff.back() = false;
                     const auto& model = prob.model;
                     return p.op_instance(
                         [&model](Tape&, const std::vector<Var>& v) {
                           std::vector<Var> params(v.begin() + 1, v.end() - 1);
                           return dice_loss(model.forward(v[0], params), v.back()).node;
                         },
                         in, diff);
                   },
                   true});

  // Attack objective w.r.t. the quantisation table, 3-D and slice-wise.
  for (const bool two_d : {false, true}) {
    c.push_back(Case{two_d ? "frequency objective w.r.t. 2-D table" : "frequency objective w.r.t. table", true,
                     [two_d](Prober& p) {
                       SmallProblem prob(p.rng, Extent{8, 8, 8}, 3);
                       AttackConfig cfg;
                       cfg.kind = two_d ? AttackKind::kVafa2d : AttackKind::kVafa;
                       cfg.patch = 4;
                       const Shape ts = two_d ? Shape{4, 4} : Shape{4, 4, 4};
                       const auto q0 = uniform(p.rng, ts, 1.5, 19.5);
                       auto analytic = frequency_attack_objective(prob.x, prob.y, prob.model, cfg, q0).grad_q;
                       auto eval = [&](const Tens& q) {
                         return frequency_attack_objective(prob.x, prob.y, prob.model, cfg, q, false, &q0).objective;
                       };
                       std::vector<double> a, n;
                       p.compare(q0, analytic, eval, a, n);
                       return relative_error(a, n);
                     }});
  }

  // Training objective w.r.t. parameters through the library path.
  c.push_back(Case{"training loss w.r.t. parameters", true, [](Prober& p) {
                     SmallProblem prob(p.rng, Extent{6, 6, 6}, 3);
                     std::vector<double> noisy(prob.x.data().begin(), prob.x.data().end());
                     for (auto& v : noisy) v = std::clamp(v + p.rng.uniform(-0.03, 0.03), 0.0, 1.0);
                     const Volume adv(prob.extent, std::move(noisy));
                     const Sample s{"probe", prob.x, prob.y};
                     std::vector<Tens> grads;
                     training_loss(prob.model, s, &adv, 0.5, &grads, 1.0);
                     std::vector<double> a, n;
                     for (std::size_t k = 0; k < grads.size(); ++k) {
                       auto eval = [&](const Tens& moved) {
                         auto m = prob.model;
                         m.params()[k].value = moved;
                         return training_loss<double>(m, s, &adv, 0.5, nullptr, 1.0).total;
                       };
                       p.compare(prob.model.params()[k].value, grads[k], eval, a, n);
                     }
                     return relative_error(a, n);
                   },
                   true});
  c.push_back(Case{"training loss w.r.t. adversarial input", true, [](Prober& p) {
                     SmallProblem prob(p.rng, Extent{6, 6, 6}, 3);
                     const auto& e = prob.extent;
                     static const DctPlan plan({6, 6, 6});
                     const auto& model = prob.model;
                     std::vector<Tens> in{volume_input(prob.x), uniform(p.rng, {1, e.h, e.w, e.d}, 0.1, 0.9),
                                          prob.y.one_hot<double>()};
                     return p.op_instance(
                         [&model](Tape& tape, const std::vector<Var>& v) {
                           auto params = model.bind(tape, false);
                           auto clean = model.forward(v[0], params);
                           auto adv = model.forward(v[1], params);
                           auto fr = freq_consistency_loss(clean, adv, plan).node * 0.5;
                           return dice_loss(clean, v[2]).node + dice_loss(adv, v[2]).node + fr;
                         },
                         in, {false, true, false});
                   },
                   true});
  return c;
}

}  // namespace

std::vector<GradcheckResult> run_gradcheck(const GradcheckOptions& opts) {
  std::vector<GradcheckResult> out;
  auto cases = primitive_cases();
  for (auto& c : composite_cases()) cases.push_back(std::move(c));
  for (std::size_t k = 0; k < cases.size(); ++k) {
    const auto& c = cases[k];
    GradcheckResult r{c.name, c.composite, opts.instances, 0.0,
                      c.composite ? opts.composite_tolerance : opts.primitive_tolerance};
    for (int i = 0; i < opts.instances; ++i) {
      Rng rng(derive_seed(opts.seed, c.name, static_cast<std::uint64_t>(i)));
      Prober p{opts, rng, c.network ? opts.network_step : opts.step};
      r.max_rel_error = std::max(r.max_rel_error, c.instance(p));
    }
    out.push_back(r);
  }
  return out;
}

}  // namespace volfreq
