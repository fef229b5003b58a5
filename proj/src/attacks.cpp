#include "volfreq/attacks.hpp"

#include <algorithm>
#include <cmath>

#include "volfreq/losses.hpp"
#include "volfreq/metrics.hpp"
#include "volfreq/rng.hpp"

namespace volfreq {

std::string to_string(AttackKind k) {
  switch (k) {
    case AttackKind::kVafa: return "vafa";
    case AttackKind::kVafa2d: return "vafa2d";
    case AttackKind::kPgd: return "pgd";
    case AttackKind::kFgsm: return "fgsm";
    case AttackKind::kBim: return "bim";
    case AttackKind::kGaussianNoise: return "gn";
  }
  return "?";
}

AttackKind parse_attack_kind(const std::string& s) {
  for (auto k : {AttackKind::kVafa, AttackKind::kVafa2d, AttackKind::kPgd, AttackKind::kFgsm, AttackKind::kBim,
                 AttackKind::kGaussianNoise}) {
    if (to_string(k) == s) return k;
  }
  throw std::invalid_argument("unknown attack kind '" + s + "' (expected vafa, vafa2d, pgd, fgsm, bim or gn)");
}

std::string to_string(ad::RoundingGradient r) {
  switch (r) {
    case ad::RoundingGradient::kStraightThrough: return "ste";
    case ad::RoundingGradient::kSinusoidal: return "sinusoidal";
    case ad::RoundingGradient::kCubic: return "cubic";
    case ad::RoundingGradient::kZero: return "zero";
  }
  return "?";
}

ad::RoundingGradient parse_rounding(const std::string& s) {
  for (auto r : {ad::RoundingGradient::kStraightThrough, ad::RoundingGradient::kSinusoidal, ad::RoundingGradient::kCubic,
                 ad::RoundingGradient::kZero}) {
    if (to_string(r) == s) return r;
  }
  throw std::invalid_argument("unknown rounding rule '" + s + "' (expected ste, sinusoidal, cubic or zero)");
}

double AttackConfig::resolved_step() const {
  if (step_size > 0) return step_size;
  const bool freq = kind == AttackKind::kVafa || kind == AttackKind::kVafa2d;
  return (freq ? q_max : epsilon) / static_cast<double>(std::max(steps, 1)) * 2.5;
}

void AttackConfig::validate() const {
  const bool freq = kind == AttackKind::kVafa || kind == AttackKind::kVafa2d;
  if (steps < 0 || (steps == 0 && kind != AttackKind::kGaussianNoise && kind != AttackKind::kFgsm && !freq)) {
    throw std::invalid_argument("attack steps must be >= 1");
  }
  if (epsilon < 0) throw std::invalid_argument("epsilon must be >= 0");
  if (!(q_lo > 0)) throw std::invalid_argument("q_lo must be positive");
  if (q_max < q_lo) throw std::invalid_argument("q_max must be >= q_lo");
  if (patch < 2) throw std::invalid_argument("patch_size must be >= 2");
  if (!(coeff_scale > 0)) throw std::invalid_argument("coeff_scale must be positive");
}

QuantTable QuantTable::ones(Shape shape, double lo, double hi) {
  QuantTable t{Tensor<double>(std::move(shape), 1.0), lo, hi};
  t.project();
  return t;
}

void QuantTable::project() {
  for (auto& v : q.data) v = std::clamp(v, lo, hi);
}

namespace {

template <typename T>
void check_table(const Tensor<T>& stack, const Tensor<T>& q) {
  if (stack.rank() != 4) throw ShapeError("FPM expects a (n, p, p, p) stack");
  const Shape block(stack.shape.begin() + 1, stack.shape.end());
  if (q.shape != block && q.shape != stack.shape) {
    throw ShapeError("quantisation table " + shape_string(q.shape) + " does not fit stack " + shape_string(stack.shape));
  }
  for (T v : q.data) {
    if (!(v > 0)) throw std::invalid_argument("quantisation table entries must be positive");
  }
}

Shape table_shape(const AttackConfig& cfg, std::size_t n_patches) {
  const std::size_t p = cfg.patch;
  Shape s = cfg.kind == AttackKind::kVafa2d ? Shape{p, p} : Shape{p, p, p};
  if (cfg.per_patch_tables) s.insert(s.begin(), n_patches);
  return s;
}

// Brings a 2-D table up to the 3-D block it quantises.
template <typename T>
Tensor<T> expand_table(const Tensor<T>& q, std::size_t depth) {
  Shape s = q.shape;
  s.push_back(depth);
  Tensor<T> out(s);
  for (std::size_t i = 0; i < q.size(); ++i) std::fill_n(out.data.begin() + static_cast<std::ptrdiff_t>(i * depth), depth, q.data[i]);
  return out;
}

template <typename T>
Tensor<T> quantize(const Tensor<T>& coeffs, const Tensor<T>& q) {
  Tensor<T> out(coeffs.shape);
  const std::size_t m = q.size();
  for (std::size_t i = 0; i < out.size(); ++i) {
    const T qi = q.data[i % m];
    out.data[i] = std::round(coeffs.data[i] / qi) * qi;
  }
  return out;
}

template <typename T>
void require_finite(double v, const char* what) {
  if (!std::isfinite(v)) throw NumericalError(std::string(what) + " became non-finite");
}

template <typename T>
Tensor<T> to_tensor(const Volume& v) {
  return v.tensor<T>();
}

template <typename T>
Volume to_volume(const Tensor<T>& t, const Extent& e) {
  return Volume(e, std::vector<double>(t.data.begin(), t.data.end()));
}

template <typename T>
ad::Var<T> as_input(ad::Var<T> volume) {
  const auto s = volume.shape();
  return ad::reshape(volume, Shape{1, s[0], s[1], s[2]});
}

// Clamped adversarial stack produced by the frequency attack at table q (no tape).
template <typename T>
Tensor<T> frequency_stack(const Tensor<T>& stack, const Tensor<T>& q, const DctPlan& plan, const AttackConfig& cfg) {
  const T scale = static_cast<T>(cfg.coeff_scale);
  Tensor<T> scaled = stack;
  for (auto& v : scaled.data) v *= scale;
  Tensor<T> out;
  if (cfg.kind == AttackKind::kVafa2d) {
    auto qe = expand_table(q, cfg.patch);
    out = idct2_slices(quantize(dct2_slices(scaled, plan), qe), plan);
  } else {
    out = fpm_forward(scaled, q, plan);
  }
  for (auto& v : out.data) v = std::clamp(v / scale, T{0}, T{1});
  return out;
}

}  // namespace

template <typename T>
Tensor<T> fpm_quantized_coefficients(const Tensor<T>& stack, const Tensor<T>& q, const DctPlan& plan) {
  check_table(stack, q);
  return quantize(dct3(stack, plan), q);
}

template <typename T>
Tensor<T> fpm_forward(const Tensor<T>& stack, const Tensor<T>& q, const DctPlan& plan) {
  return idct3(fpm_quantized_coefficients(stack, q, plan), plan);
}

template <typename T>
ad::Var<T> fpm_soft(ad::Var<T> coeffs, ad::Var<T> q, const DctPlan& plan, bool slices2d,
                    ad::RoundingGradient rounding, const Tensor<T>* residual) {
  const std::size_t depth = coeffs.shape().back();
  auto table = slices2d ? ad::expand_trailing(q, depth) : q;
  const bool full = table.shape() == coeffs.shape();
  auto u = full ? ad::div(coeffs, table) : ad::div_leading(coeffs, table);
  auto r = residual ? u + u.tape->constant(*residual) : ad::soft_round(u, rounding);
  auto phi = full ? ad::mul(r, table) : ad::mul_leading(r, table);
  return slices2d ? ad::idct2_slices(phi, plan) : ad::idct3(phi, plan);
}

template <typename T>
AttackObjective<T> frequency_attack_objective(const Volume& x, const LabelField& y, const SegModel<T>& model,
                                              const AttackConfig& cfg, const Tensor<T>& q, bool with_grad,
                                              const Tensor<T>* linearize_at) {
  const auto grid = make_grid(x.extent(), {cfg.patch, cfg.patch, cfg.patch});
  const DctPlan plan({cfg.patch, cfg.patch, cfg.patch});
  const bool two_d = cfg.kind == AttackKind::kVafa2d;
  const T scale = static_cast<T>(cfg.coeff_scale);

  const auto stack = split_patches<T>(to_tensor<T>(x).data, grid);
  Tensor<T> scaled = stack;
  for (auto& v : scaled.data) v *= scale;
  auto coeffs = two_d ? dct2_slices(scaled, plan) : dct3(scaled, plan);

  std::optional<Tensor<T>> residual;
  if (linearize_at) {
    const auto qa = two_d ? expand_table(*linearize_at, cfg.patch) : *linearize_at;
    residual.emplace(coeffs.shape);
    const std::size_t m = qa.size();
    for (std::size_t i = 0; i < coeffs.size(); ++i) {
      const T u = coeffs.data[i] / qa.data[i % m];
      residual->data[i] = std::round(u) - u;
    }
  }

  ad::Tape<T> tape;
  auto c = tape.constant(std::move(coeffs));
  auto qv = tape.leaf(q, with_grad);
  auto soft = fpm_soft(c, qv, plan, two_d, cfg.rounding, residual ? &*residual : nullptr);
  auto adv_stack = ad::clamp(soft * (T{1} / scale), T{0}, T{1});
  auto logits = model.forward(as_input(ad::merge_patches(adv_stack, grid)), model.bind(tape, false));
  auto dice = dice_loss(logits, tape.constant(y.one_hot<T>()));
  auto ssim = ssim_loss(tape.constant(stack), adv_stack);
  auto obj = dice.node - ssim.node * static_cast<T>(cfg.ssim_weight);

  AttackObjective<T> out;
  out.objective = static_cast<double>(obj.value().data[0]);
  out.dice = dice.value();
  out.ssim_loss = ssim.value();
  if (with_grad) {
    tape.backward(obj);
    out.grad_q = tape.grad(qv);
  }
  return out;
}

namespace {

template <typename T>
AttackResult frequency_attack(const Volume& x, const LabelField& y, const SegModel<T>& model, const AttackConfig& cfg) {
  cfg.validate();
  if (x.extent() != y.extent()) throw ShapeError("attack: volume and labels differ in extent");
  const auto grid = make_grid(x.extent(), {cfg.patch, cfg.patch, cfg.patch});
  auto table = QuantTable::ones(table_shape(cfg, grid.count()), cfg.q_lo, cfg.q_max);
  const double step = cfg.resolved_step();
  AttackResult res;
  for (int s = 0; s < cfg.steps; ++s) {
    auto o = frequency_attack_objective(x, y, model, cfg, table.q.template cast<T>());
    require_finite<T>(o.objective, "frequency attack objective");
    res.objective_trace.push_back(o.objective);
    res.dice_trace.push_back(o.dice);
    for (std::size_t i = 0; i < table.q.size(); ++i) {
      const T g = o.grad_q.data[i];
      table.q.data[i] += step * static_cast<double>((g > 0) - (g < 0));
    }
    table.project();
  }
  if (cfg.snap_integer) {
    for (auto& v : table.q.data) v = std::round(v);
    table.project();
  }
  const auto qt = table.q.template cast<T>();
  auto last = frequency_attack_objective(x, y, model, cfg, qt, false);
  require_finite<T>(last.objective, "frequency attack objective");
  res.objective_trace.push_back(last.objective);
  res.dice_trace.push_back(last.dice);

  const DctPlan plan({cfg.patch, cfg.patch, cfg.patch});
  const auto stack = split_patches<T>(to_tensor<T>(x).data, grid);
  const auto adv = merge_patches<T>(frequency_stack(stack, qt, plan, cfg).data, grid);
  res.adversarial = to_volume(adv, x.extent());
  res.ssim = mean_patch_ssim(x, res.adversarial, cfg.patch);
  res.table = std::move(table);
  return res;
}

template <typename T>
Tensor<T> project_linf(const Tensor<T>& adv, const Tensor<T>& clean, double eps) {
  Tensor<T> out(adv.shape);
  const T e = static_cast<T>(eps);
  for (std::size_t i = 0; i < out.size(); ++i) {
    out.data[i] = std::clamp(std::clamp(adv.data[i], clean.data[i] - e, clean.data[i] + e), T{0}, T{1});
  }
  return out;
}

template <typename T>
AttackResult finish_voxel(const Volume& x, const LabelField& y, const SegModel<T>& model, const AttackConfig& cfg,
                          const Tensor<T>& adv, AttackResult res) {
  res.adversarial = to_volume(adv, x.extent());
  auto [loss, unused] = dice_input_gradient(res.adversarial, y, model);
  (void)unused;
  res.dice_trace.push_back(loss);
  res.objective_trace.push_back(loss);
  res.ssim = mean_patch_ssim(x, res.adversarial, std::min({cfg.patch, x.extent().h, x.extent().w, x.extent().d}));
  return res;
}

// Iterated signed-gradient ascent; random_start selects PGD over BIM.
template <typename T>
AttackResult iterative_voxel(const Volume& x, const LabelField& y, const SegModel<T>& model, const AttackConfig& cfg,
                             bool random_start, int steps, double step) {
  cfg.validate();
  const auto clean = to_tensor<T>(x);
  Tensor<T> adv = clean;
  if (random_start) {
    Rng rng(derive_seed(cfg.seed, "pgd-start"));
    for (auto& v : adv.data) v += static_cast<T>(rng.uniform(-cfg.epsilon, cfg.epsilon));
    adv = project_linf(adv, clean, cfg.epsilon);
  }
  AttackResult res;
  for (int s = 0; s < steps; ++s) {
    auto [loss, g] = dice_input_gradient(to_volume(adv, x.extent()), y, model);
    require_finite<T>(loss, "voxel attack loss");
    res.dice_trace.push_back(loss);
    res.objective_trace.push_back(loss);
    for (std::size_t i = 0; i < adv.size(); ++i) {
      adv.data[i] += static_cast<T>(step) * static_cast<T>((g.data[i] > 0) - (g.data[i] < 0));
    }
    adv = project_linf(adv, clean, cfg.epsilon);
  }
  return finish_voxel(x, y, model, cfg, adv, std::move(res));
}

}  // namespace

template <typename T>
std::pair<double, Tensor<T>> dice_input_gradient(const Volume& x, const LabelField& y, const SegModel<T>& model) {
  const auto& e = x.extent();
  ad::Tape<T> tape;
  auto xv = tape.leaf(Tensor<T>({1, e.h, e.w, e.d}, to_tensor<T>(x).data), true);
  auto logits = model.forward(xv, model.bind(tape, false));
  auto loss = dice_loss(logits, tape.constant(y.one_hot<T>()));
  tape.backward(loss.node);
  auto g = tape.grad(xv);
  g.shape = e.shape();
  return {loss.value(), std::move(g)};
}

template <typename T>
AttackResult vafa(const Volume& x, const LabelField& y, const SegModel<T>& model, const AttackConfig& cfg) {
  auto c = cfg;
  c.kind = AttackKind::kVafa;
  return frequency_attack(x, y, model, c);
}

template <typename T>
AttackResult vafa2d(const Volume& x, const LabelField& y, const SegModel<T>& model, const AttackConfig& cfg) {
  auto c = cfg;
  c.kind = AttackKind::kVafa2d;
  return frequency_attack(x, y, model, c);
}

template <typename T>
AttackResult pgd(const Volume& x, const LabelField& y, const SegModel<T>& model, const AttackConfig& cfg) {
  auto c = cfg;
  c.kind = AttackKind::kPgd;
  return iterative_voxel(x, y, model, c, true, c.steps, c.resolved_step());
}

template <typename T>
AttackResult bim(const Volume& x, const LabelField& y, const SegModel<T>& model, const AttackConfig& cfg) {
  auto c = cfg;
  c.kind = AttackKind::kBim;
  return iterative_voxel(x, y, model, c, false, c.steps, c.resolved_step());
}

template <typename T>
AttackResult fgsm(const Volume& x, const LabelField& y, const SegModel<T>& model, const AttackConfig& cfg) {
  auto c = cfg;
  c.kind = AttackKind::kFgsm;
  return iterative_voxel(x, y, model, c, false, 1, c.epsilon);
}

template <typename T>
AttackResult gaussian_noise(const Volume& x, const LabelField& y, const SegModel<T>& model, const AttackConfig& cfg) {
  cfg.validate();
  const auto clean = to_tensor<T>(x);
  Tensor<T> adv = clean;
  Rng rng(derive_seed(cfg.seed, "gaussian-noise"));
  const double e = cfg.epsilon;
  for (auto& v : adv.data) v += static_cast<T>(std::clamp(e * rng.normal(), -e, e));
  adv = project_linf(adv, clean, e);
  return finish_voxel(x, y, model, cfg, adv, AttackResult{});
}

template <typename T>
AttackResult run_attack(const Volume& x, const LabelField& y, const SegModel<T>& model, const AttackConfig& cfg) {
  switch (cfg.kind) {
    case AttackKind::kVafa: return vafa(x, y, model, cfg);
    case AttackKind::kVafa2d: return vafa2d(x, y, model, cfg);
    case AttackKind::kPgd: return pgd(x, y, model, cfg);
    case AttackKind::kFgsm: return fgsm(x, y, model, cfg);
    case AttackKind::kBim: return bim(x, y, model, cfg);
    case AttackKind::kGaussianNoise: return gaussian_noise(x, y, model, cfg);
  }
  throw std::invalid_argument("unknown attack kind");
}

#define VOLFREQ_INSTANTIATE_ATTACKS(T)                                                                              \
  template Tensor<T> fpm_forward(const Tensor<T>&, const Tensor<T>&, const DctPlan&);                               \
  template Tensor<T> fpm_quantized_coefficients(const Tensor<T>&, const Tensor<T>&, const DctPlan&);                \
  template ad::Var<T> fpm_soft(ad::Var<T>, ad::Var<T>, const DctPlan&, bool, ad::RoundingGradient, const Tensor<T>*); \
  template AttackObjective<T> frequency_attack_objective(const Volume&, const LabelField&, const SegModel<T>&,       \
                                                         const AttackConfig&, const Tensor<T>&, bool,               \
                                                         const Tensor<T>*);                                         \
  template AttackResult vafa(const Volume&, const LabelField&, const SegModel<T>&, const AttackConfig&);            \
  template AttackResult vafa2d(const Volume&, const LabelField&, const SegModel<T>&, const AttackConfig&);          \
  template AttackResult pgd(const Volume&, const LabelField&, const SegModel<T>&, const AttackConfig&);             \
  template AttackResult fgsm(const Volume&, const LabelField&, const SegModel<T>&, const AttackConfig&);            \
  template AttackResult bim(const Volume&, const LabelField&, const SegModel<T>&, const AttackConfig&);             \
  template AttackResult gaussian_noise(const Volume&, const LabelField&, const SegModel<T>&, const AttackConfig&);  \
  template AttackResult run_attack(const Volume&, const LabelField&, const SegModel<T>&, const AttackConfig&);      \
  template std::pair<double, Tensor<T>> dice_input_gradient(const Volume&, const LabelField&, const SegModel<T>&);

VOLFREQ_INSTANTIATE_ATTACKS(float)
VOLFREQ_INSTANTIATE_ATTACKS(double)

}  // namespace volfreq
