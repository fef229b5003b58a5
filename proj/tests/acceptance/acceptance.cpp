// End-to-end acceptance run. Prints one PASS/FAIL line per criterion and
// exits non-zero when any criterion fails. Criteria ids given on the command
// line restrict the run (for example `volfreq_acceptance A1 A3`).

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "oracles.hpp"
#include "volfreq/attacks.hpp"
#include "volfreq/config.hpp"
#include "volfreq/dct.hpp"
#include "volfreq/gradcheck.hpp"
#include "volfreq/losses.hpp"
#include "volfreq/metrics.hpp"
#include "volfreq/parallel.hpp"
#include "volfreq/pipeline.hpp"
#include "volfreq/rng.hpp"
#include "volfreq/synth.hpp"
#include "volfreq/training.hpp"

using namespace volfreq;
namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;
using Model = SegModel<float>;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

struct Outcome {
  bool pass = false;
  std::string detail;
};

int workers() { return static_cast<int>(std::max(1u, std::thread::hardware_concurrency())); }

double max_abs_diff(const std::vector<double>& a, const std::vector<double>& b) {
  double m = 0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

// --- shared benchmark state ---------------------------------------------------

struct Scores {
  double dsc = 0;
  double ssim = 0;
};

class Bench {
 public:
  const Dataset& data() {
    if (!data_) data_ = generate(synth_spec_from(Config{}, kSeed));
    return *data_;
  }

  const Model& standard() {
    if (!standard_) {
      const auto t0 = Clock::now();
      Model m = Model::init(data().train.front().y.num_class(), derive_seed(kSeed, "init"));
      train_standard(m, data().train, train_config_from(Config{}, kSeed));
      standard_seconds_ = seconds_since(t0);
      standard_ = std::move(m);
    }
    return *standard_;
  }
  double standard_seconds() const { return standard_seconds_; }

  double clean_dsc(const Model& m) {
    std::vector<double> d(data().test.size());
    parallel_for(d.size(), workers(), [&](std::size_t i) {
      const auto& s = data().test[i];
      d[i] = evaluate_segmentation(predict_labels(m, s.x), s.y).mean_dsc;
    });
    return mean(d);
  }

  /// Mean adversarial DSC and SSIM(X, X') over the test split; the config
  /// text overrides the defaults of `kind`.
  Scores attacked(const Model& m, AttackKind kind, const std::string& overrides = "", std::uint64_t salt = 0) {
    const auto cfg = attack_config_from(Config::parse(overrides), kind, derive_seed(kSeed, "attack", salt));
    std::vector<double> dsc(data().test.size()), ssim(dsc.size());
    parallel_for(dsc.size(), workers(), [&](std::size_t i) {
      const auto& s = data().test[i];
      auto c = cfg;
      c.seed = derive_seed(cfg.seed, s.name, i);
      const auto r = run_attack(s.x, s.y, m, c);
      dsc[i] = evaluate_segmentation(predict_labels(m, r.adversarial), s.y).mean_dsc;
      ssim[i] = r.ssim;
    });
    return {mean(dsc), mean(ssim)};
  }

  /// Adversarial fine-tuning from the standard model.
  Model finetune(TrainMode mode, double lambda_fr) {
    Model m = standard();
    std::string text = fmt("[train]\nepochs = %d\nlambda_fr = %g\n[attack]\nsteps = %d\n[attack.pgd]\nepsilon = 4\n",
                           kFinetuneEpochs, lambda_fr, kFinetuneAttackSteps);
    auto cfg = train_config_from(Config::parse(text), derive_seed(kSeed, "finetune", static_cast<int>(mode)));
    cfg.mode = mode;
    train(m, data().train, cfg);
    return m;
  }

  static constexpr std::uint64_t kSeed = 7;
  static constexpr int kFinetuneEpochs = 4;
  static constexpr int kFinetuneAttackSteps = 5;

 private:
  static double mean(const std::vector<double>& v) {
    double s = 0;
    for (double x : v) s += x;
    return v.empty() ? 0.0 : s / static_cast<double>(v.size());
  }

  std::optional<Dataset> data_;
  std::optional<Model> standard_;
  double standard_seconds_ = 0;
};

// --- criteria -------------------------------------------------------------------

Outcome a1_dct() {
  const auto t0 = Clock::now();
  double brute = 0;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng(seed);
    std::vector<double> x(64);
    for (auto& v : x) v = rng.uniform(-1, 1);
    const auto c = dct3(Tensor<double>({4, 4, 4}, x), DctPlan({4, 4, 4}));
    brute = std::max(brute, max_abs_diff(c.data, oracles::naive_dct3(x, 4, 4, 4)));
  }
  Rng rng(99);
  std::vector<double> x(32 * 32 * 32);
  for (auto& v : x) v = rng.uniform();
  const DctPlan plan({32, 32, 32});
  const Tensor<double> t({32, 32, 32}, x);
  const auto c = dct3(t, plan);
  const double roundtrip = max_abs_diff(idct3(c, plan).data, x);
  double ex = 0, ec = 0;
  for (double v : x) ex += v * v;
  for (double v : c.data) ec += v * v;
  const double parseval = std::abs(ex - ec) / ex;
  const double secs = seconds_since(t0);
  return {brute <= 1e-9 && roundtrip <= 1e-6 && parseval <= 1e-6 && secs < 10,
          fmt("brute-force max|diff| %.2e (<=1e-9), round trip %.2e (<=1e-6), Parseval rel %.2e (<=1e-6), %.2fs (<10s)",
              brute, roundtrip, parseval, secs)};
}

Outcome a2_gradients() {
  const auto t0 = Clock::now();
  const auto results = run_gradcheck();
  const double secs = seconds_since(t0);
  bool ok = secs < 120;
  int failed = 0, primitives = 0, composites = 0;
  double worst_p = 0, worst_c = 0;
  for (const auto& r : results) {
    const bool good = r.passed() && r.instances >= 20;
    ok = ok && good;
    failed += !good;
    (r.composite ? composites : primitives)++;
    (r.composite ? worst_c : worst_p) = std::max(r.composite ? worst_c : worst_p, r.max_rel_error);
    if (!good) std::cout << "  gradcheck " << r.name << " rel " << r.max_rel_error << " tol " << r.tolerance << "\n";
  }
  return {ok && failed == 0, fmt("%d primitive (worst %.2e <1e-4), %d composite (worst %.2e <1e-3), %d failing, %.1fs (<120s)",
                                 primitives, worst_p, composites, worst_c, failed, secs)};
}

Outcome a3_fpm() {
  const DctPlan plan({8, 8, 8});
  Rng rng(3);
  // Exact multiples of q.
  double worst_multiple = 0;
  for (int trial = 0; trial < 20; ++trial) {
    Tensor<double> stack({2, 8, 8, 8}), q({8, 8, 8});
    for (auto& v : stack.data) v = rng.uniform(0, 255);
    for (auto& v : q.data) v = 1 + std::floor(rng.uniform(0, 20));
    const auto k = fpm_quantized_coefficients(stack, q, plan);
    for (std::size_t i = 0; i < k.data.size(); ++i) {
      const double ratio = k.data[i] / q.data[i % q.data.size()];
      worst_multiple = std::max(worst_multiple, std::abs(ratio - std::round(ratio)));
    }
  }
  // q = 1 on integer coefficients leaves the patch unchanged.
  Tensor<double> coeffs({8, 8, 8});
  for (auto& v : coeffs.data) v = std::round(rng.uniform(-300, 300));
  const auto x = idct3(coeffs, plan);
  Tensor<double> stack({1, 8, 8, 8}, x.data), ones({8, 8, 8});
  std::fill(ones.data.begin(), ones.data.end(), 1.0);
  const double identity = max_abs_diff(fpm_forward(stack, ones, plan).data, x.data);
  // A huge table removes every coefficient, leaving a constant patch.
  Tensor<double> huge({8, 8, 8});
  std::fill(huge.data.begin(), huge.data.end(), 1e12);
  for (auto& v : stack.data) v = rng.uniform(0, 255);
  const auto flat = fpm_forward(stack, huge, plan);
  const auto [lo, hi] = std::minmax_element(flat.data.begin(), flat.data.end());
  const double spread = *hi - *lo;
  return {worst_multiple <= 1e-9 && identity <= 1e-9 && spread <= 1e-9,
          fmt("multiple residue %.1e, q=1 identity %.1e, huge-q spread %.1e (all <=1e-9)", worst_multiple, identity,
              spread)};
}

Outcome a4_trainability(Bench& b) {
  const double dsc = b.clean_dsc(b.standard());
  const double minutes = b.standard_seconds() / 60;
  return {dsc >= 0.90 && minutes < 30, fmt("clean mean DSC %.4f (>=0.90), training %.1f min (<30)", dsc, minutes)};
}

struct AttackTable {
  double clean = 0;
  std::map<std::string, Scores> s;
};

AttackTable& standard_attacks(Bench& b) {
  static std::optional<AttackTable> t;
  if (!t) {
    t.emplace();
    const auto& m = b.standard();
    t->clean = b.clean_dsc(m);
    t->s["vafa"] = b.attacked(m, AttackKind::kVafa);
    t->s["vafa2d"] = b.attacked(m, AttackKind::kVafa2d);
    t->s["pgd"] = b.attacked(m, AttackKind::kPgd);
    t->s["gn"] = b.attacked(m, AttackKind::kGaussianNoise);
  }
  return *t;
}

Outcome a5_effectiveness(Bench& b) {
  const auto& t = standard_attacks(b);
  const double vafa = t.s.at("vafa").dsc, vafa2d = t.s.at("vafa2d").dsc;
  const double pgd = t.s.at("pgd").dsc, gn = t.s.at("gn").dsc;
  const bool drop = t.clean - vafa >= 0.20, order = vafa <= vafa2d, voxel = pgd <= gn - 0.05;
  return {drop && order && voxel,
          fmt("clean %.4f; VAFA %.4f (drop %.4f, need >=0.20: %s); VAFA-2D %.4f (VAFA<=VAFA-2D: %s); "
              "PGD %.4f vs GN %.4f (PGD<=GN-0.05: %s); SSIM VAFA %.4f",
              t.clean, vafa, t.clean - vafa, drop ? "yes" : "no", vafa2d, order ? "yes" : "no", pgd, gn,
              voxel ? "yes" : "no", t.s.at("vafa").ssim)};
}

Outcome a6_ablation(Bench& b) {
  constexpr double kSlack = 0.01;
  const auto& m = b.standard();
  const Scores q20 = standard_attacks(b).s.at("vafa");
  const Scores q10 = b.attacked(m, AttackKind::kVafa, "[attack]\nq_max = 10\n");
  const Scores q30 = b.attacked(m, AttackKind::kVafa, "[attack]\nq_max = 30\n");
  const Scores s5 = b.attacked(m, AttackKind::kVafa, "[attack]\nsteps = 5\n");
  const Scores s10 = b.attacked(m, AttackKind::kVafa, "[attack]\nsteps = 10\n");
  auto non_increasing = [](double a, double b2, double c) { return b2 <= a + kSlack && c <= b2 + kSlack; };
  const bool qd = non_increasing(q10.dsc, q20.dsc, q30.dsc);
  const bool qs = non_increasing(q10.ssim, q20.ssim, q30.ssim);
  const bool sd = non_increasing(s5.dsc, s10.dsc, q20.dsc);
  return {qd && qs && sd,
          fmt("q_max 10/20/30 DSC %.4f/%.4f/%.4f (%s), SSIM %.4f/%.4f/%.4f (%s); steps 5/10/20 DSC %.4f/%.4f/%.4f (%s)",
              q10.dsc, q20.dsc, q30.dsc, qd ? "ok" : "rises", q10.ssim, q20.ssim, q30.ssim, qs ? "ok" : "rises",
              s5.dsc, s10.dsc, q20.dsc, sd ? "ok" : "rises")};
}

Outcome a7_vaft(Bench& b) {
  const double standard_vafa = standard_attacks(b).s.at("vafa").dsc;
  const Model vaft = b.finetune(TrainMode::kVaft, 0.0);
  const Model vaft_fr = b.finetune(TrainMode::kVaftFr, 1.0);
  const Model pgd_at = b.finetune(TrainMode::kAdvVoxel, 0.0);
  // Fresh attack seeds, distinct from any used during training.
  const double vaft_vafa = b.attacked(vaft, AttackKind::kVafa, "", 101).dsc;
  const double pgd_at_vafa = b.attacked(pgd_at, AttackKind::kVafa, "", 102).dsc;
  const double vaft_clean = b.clean_dsc(vaft), vaft_fr_clean = b.clean_dsc(vaft_fr);
  const bool robust = vaft_vafa >= standard_vafa + 0.10;
  const bool voxel = pgd_at_vafa <= vaft_vafa;
  const bool fr = vaft_fr_clean >= vaft_clean - 0.02;
  return {robust && voxel && fr,
          fmt("under VAFA: standard %.4f, VAFT %.4f (gain %.4f, need >=0.10: %s), PGD-AT %.4f (<=VAFT: %s); "
              "clean VAFT-FR %.4f vs VAFT %.4f (>= -0.02: %s); fine-tuned %d epochs, %d-step training attacks",
              standard_vafa, vaft_vafa, vaft_vafa - standard_vafa, robust ? "yes" : "no", pgd_at_vafa,
              voxel ? "yes" : "no", vaft_fr_clean, vaft_clean, fr ? "yes" : "no", Bench::kFinetuneEpochs,
              Bench::kFinetuneAttackSteps)};
}

Outcome a8_metrics() {
  int mismatches = 0, asymmetric = 0;
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    Rng rng(seed + 5000);
    const Extent e{2 + rng.below(11), 2 + rng.below(11), 2 + rng.below(11)};
    const int nc = 2 + static_cast<int>(rng.below(3));
    const auto p = oracles::blobby_labels(e, nc, seed * 2 + 1);
    const auto g = oracles::blobby_labels(e, nc, seed * 2 + 2);
    mismatches += dice_per_class(p, g) != oracles::oracle_dice(p, g);
    const auto h = hd95(p, g), back = hd95(g, p);
    asymmetric += h.per_class != back.per_class || h.mean != back.mean;
    for (int c = 0; c < nc; ++c) {
      const auto sp = oracles::oracle_surface(p, c), sg = oracles::oracle_surface(g, c);
      std::optional<double> want;
      if (sp.empty() && sg.empty()) want = 0.0;
      if (!sp.empty() && !sg.empty())
        want = std::max(oracles::oracle_p95(oracles::directed(sp, sg)), oracles::oracle_p95(oracles::directed(sg, sp)));
      mismatches += h.per_class[static_cast<std::size_t>(c)] != want;
    }
  }
  int not_one = 0;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    Rng rng(seed + 9000);
    std::vector<double> v(16 * 16 * 16);
    for (auto& x : v) x = rng.uniform();
    const Volume x({16, 16, 16}, v);
    not_one += mean_patch_ssim(x, x, 8) != 1.0;
  }
  return {mismatches == 0 && asymmetric == 0 && not_one == 0,
          fmt("50 mask pairs: %d oracle mismatches, %d asymmetric HD95; SSIM(x,x) != 1 on %d of 10", mismatches,
              asymmetric, not_one)};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

Outcome a9_determinism() {
  const fs::path dir = fs::temp_directory_path() / "volfreq_acceptance_a9";
  fs::remove_all(dir);
  fs::create_directories(dir);
  const std::string base = R"(
[data]
extent = 16, 16, 16
num_class = 3
train_count = 2
test_count = 2
radius_min = 3
radius_max = 5
min_class_voxels = 8
[attack]
patch_size = 8
steps = 2
[train]
epochs = 1
[gradcheck]
instances = 1
)";
  auto run_twice = [&](const std::string& cmd, const std::string& extra, bool& same) {
    std::string reports[2];
    for (int i = 0; i < 2; ++i) {
      RunRequest r;
      r.command = cmd;
      r.config = Config::parse(base + extra);
      r.out = dir / (cmd + std::to_string(i));
      r.seed = 11;
      r.precision = 64;
      std::ostringstream log;
      if (run(r, log) != kExitOk) {
        same = false;
        return fs::path{};
      }
      reports[i] = slurp(r.out / "report.json");
    }
    same = same && !reports[0].empty() && reports[0] == reports[1];
    return dir / (cmd + "0");
  };
  std::vector<std::string> differing;
  auto check = [&](const std::string& cmd, const std::string& extra = "") {
    bool same = true;
    auto out = run_twice(cmd, extra, same);
    if (!same) differing.push_back(cmd);
    return out;
  };
  check("gen-data");
  const auto trained = check("train");
  const std::string with_model = "[model]\ncheckpoint = " + (trained / "model.ckpt").string() + "\n";
  check("attack", with_model);
  check("eval", with_model);
  check("compare", "[compare]\nmodels = a:" + (trained / "model.ckpt").string() + "\nattacks = clean, vafa, pgd\n");
  check("gradcheck");
  fs::remove_all(dir);
  std::string which;
  for (const auto& d : differing) which += " " + d;
  return {differing.empty(), differing.empty() ? "report.json byte-identical across re-runs for all 6 commands"
                                               : "differing or failing:" + which};
}

}  // namespace

int main(int argc, char** argv) {
  std::set<std::string> only(argv + 1, argv + argc);
  Bench bench;
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
      {"A1", a1_dct},
      {"A2", a2_gradients},
      {"A3", a3_fpm},
      {"A4", [&] { return a4_trainability(bench); }},
      {"A5", [&] { return a5_effectiveness(bench); }},
      {"A6", [&] { return a6_ablation(bench); }},
      {"A7", [&] { return a7_vaft(bench); }},
      {"A8", a8_metrics},
      {"A9", a9_determinism},
  };
  int failures = 0;
  for (const auto& [id, check] : criteria) {
    if (!only.empty() && !only.contains(id)) continue;
    const auto t0 = Clock::now();
    Outcome o;
    try {
      o = check();
    } catch (const std::exception& e) {
      o = {false, std::string("error: ") + e.what()};
    }
    failures += !o.pass;
    std::cout << id << " " << (o.pass ? "PASS" : "FAIL") << " " << o.detail << fmt(" [%.0fs]", seconds_since(t0))
              << std::endl;
  }
  return failures == 0 ? 0 : 1;
}
