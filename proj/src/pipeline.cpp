#include "volfreq/pipeline.hpp"

#include <cinttypes>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <ostream>
#include <sstream>

#include "json.hpp"
#include "volfreq/gradcheck.hpp"
#include "volfreq/metrics.hpp"
#include "volfreq/parallel.hpp"
#include "volfreq/render.hpp"
#include "volfreq/rng.hpp"

namespace volfreq {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

namespace {

class ThresholdFailure : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Context {
  const Config& cfg;
  fs::path stage;
  std::uint64_t seed = 0;
  int workers = 1;
  int precision = 32;
  std::ostream& log;
};

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

void write_file(const fs::path& path, const std::string& bytes) {
  fs::create_directories(path.parent_path());
  std::ofstream f(path, std::ios::binary);
  if (!f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()))) {
    throw std::runtime_error("cannot write " + path.string());
  }
}

void write_json(const fs::path& path, const json& j) { write_file(path, j.dump(2) + "\n"); }

void require_path(const Config& c, const std::string& key) {
  if (const auto p = c.find(key); p && !fs::exists(*p)) throw ConfigError(key + ": path '" + *p + "' does not exist");
}

json to_json(const SynthSpec& s) {
  std::vector<double> intensities;
  for (int c = 0; c < s.num_class; ++c) intensities.push_back(s.intensity(c));
  return {{"extent", {s.extent.h, s.extent.w, s.extent.d}},
          {"num_class", s.num_class},
          {"train_count", s.train_count},
          {"test_count", s.test_count},
          {"seed", s.seed},
          {"background", s.background},
          {"class_intensity", intensities},
          {"noise_sigma", s.noise_sigma},
          {"texture_amplitude", s.texture_amplitude},
          {"texture_frequency", s.texture_frequency},
          {"radius_min", s.radius_min},
          {"radius_max", s.radius_max}};
}

json to_json(const AttackConfig& a) {
  const bool freq = a.kind == AttackKind::kVafa || a.kind == AttackKind::kVafa2d;
  json j = {{"kind", to_string(a.kind)}, {"steps", a.steps}, {"seed", a.seed}};
  if (freq) {
    j["q_max"] = a.q_max;
    j["q_lo"] = a.q_lo;
    j["patch_size"] = a.patch;
    j["step_size"] = a.resolved_step();
    j["coeff_scale"] = a.coeff_scale;
    j["ssim_weight"] = a.ssim_weight;
    j["rounding"] = to_string(a.rounding);
    j["snap_integer"] = a.snap_integer;
    j["per_patch_tables"] = a.per_patch_tables;
  } else {
    j["epsilon_255"] = a.epsilon * 255.0;
    j["step_size_255"] = a.resolved_step() * 255.0;
  }
  return j;
}

json to_json(const TrainConfig& t) {
  json j = {{"mode", to_string(t.mode)},
            {"epochs", t.epochs},
            {"batch_size", t.batch_size},
            {"optimizer", to_string(t.optimizer)},
            {"learning_rate", t.learning_rate},
            {"momentum", t.momentum},
            {"seed", t.seed}};
  if (t.optimizer == Optimizer::kAdam) j["beta2"] = t.beta2;
  if (t.mode == TrainMode::kVaftFr) j["lambda_fr"] = t.lambda_fr;
  if (t.mode != TrainMode::kStandard) j["attack"] = to_json(t.attack);
  return j;
}

Dataset obtain_dataset(const Context& ctx) {
  if (const auto dir = ctx.cfg.find("data.dir")) {
    ctx.log << "loading dataset from " << *dir << "\n";
    return load_dataset(*dir);
  }
  const auto spec = synth_spec_from(ctx.cfg, ctx.seed);
  ctx.log << "generating " << spec.train_count << " + " << spec.test_count << " synthetic samples\n";
  return generate(spec);
}

std::vector<const Sample*> pick_split(const Context& ctx, const Dataset& ds) {
  const auto split = ctx.cfg.get_string("eval.split", "test");
  if (split != "test" && split != "train") throw ConfigError("eval.split: expected test or train, got '" + split + "'");
  const auto& pool = split == "test" ? ds.test : ds.train;
  const auto limit = ctx.cfg.get_int("eval.max_samples", static_cast<std::int64_t>(pool.size()));
  if (limit < 1) throw ConfigError("eval.max_samples: must be >= 1");
  std::vector<const Sample*> out;
  for (std::size_t i = 0; i < pool.size() && i < static_cast<std::size_t>(limit); ++i) out.push_back(&pool[i]);
  if (out.empty()) throw ConfigError("eval.split: the " + split + " split is empty");
  return out;
}

struct Outcome {
  SampleRow row;
  Volume input;
  LabelField prediction;
  std::vector<double> objective_trace;
  std::vector<double> dice_trace;
};

template <typename T>
Outcome evaluate_sample(const SegModel<T>& model, const std::string& model_name, const std::string& split,
                        const Sample& s, const std::optional<AttackConfig>& attack) {
  Outcome o{{}, s.x, {}, {}, {}};
  o.row.model = model_name;
  o.row.attack = attack ? to_string(attack->kind) : "clean";
  o.row.split = split;
  o.row.sample = s.name;
  if (attack) {
    auto a = *attack;
    a.seed = derive_seed(attack->seed, s.name);
    auto res = run_attack(s.x, s.y, model, a);
    o.input = std::move(res.adversarial);
    o.row.ssim = res.ssim;
    o.objective_trace = std::move(res.objective_trace);
    o.dice_trace = std::move(res.dice_trace);
  }
  o.prediction = predict_labels(model, o.input);
  const auto m = evaluate_segmentation(o.prediction, s.y);
  o.row.dsc = m.mean_dsc;
  o.row.hd95 = m.mean_hd95;
  o.row.hd95_undefined = m.hd95_undefined;
  o.row.dsc_per_class = m.per_class_dsc;
  return o;
}

template <typename T>
std::vector<Outcome> evaluate_all(const Context& ctx, const SegModel<T>& model, const std::string& model_name,
                                  const std::vector<const Sample*>& samples, const std::optional<AttackConfig>& attack) {
  std::vector<Outcome> out(samples.size());
  const auto split = ctx.cfg.get_string("eval.split", "test");
  parallel_for(samples.size(), ctx.workers,
               [&](std::size_t i) { out[i] = evaluate_sample(model, model_name, split, *samples[i], attack); });
  return out;
}

void write_slices(const Context& ctx, const std::string& prefix, const Sample& s, const Outcome& o, bool attacked) {
  const auto dir = ctx.stage / "slices";
  const std::size_t mid = s.x.extent().d / 2;
  write_file(dir / (prefix + "_x.pgm"), encode_pgm(render_slice(s.x, 2, mid)));
  if (attacked) write_file(dir / (prefix + "_adv.pgm"), encode_pgm(render_slice(o.input, 2, mid)));
  write_file(dir / (prefix + "_pred.pgm"), encode_pgm(render_slice(o.prediction, 2, mid)));
  write_file(dir / (prefix + "_gt.pgm"), encode_pgm(render_slice(s.y, 2, mid)));
}

void write_outcome_slices(const Context& ctx, const std::vector<const Sample*>& samples,
                          const std::vector<Outcome>& outcomes) {
  const auto n = static_cast<std::size_t>(std::max<std::int64_t>(0, ctx.cfg.get_int("eval.slice_samples", 1)));
  for (std::size_t i = 0; i < outcomes.size() && i < n; ++i) {
    const auto& r = outcomes[i].row;
    write_slices(ctx, r.model + "_" + r.attack + "_" + r.sample, *samples[i], outcomes[i], r.attack != "clean");
  }
}

json summarize(const std::vector<Outcome>& outcomes) {
  double dsc = 0, hd = 0, ssim = 0;
  for (const auto& o : outcomes) {
    dsc += o.row.dsc;
    hd += o.row.hd95;
    ssim += o.row.ssim;
  }
  const auto n = static_cast<double>(outcomes.size());
  return {{"samples", outcomes.size()}, {"mean_dsc", dsc / n}, {"mean_hd95", hd / n}, {"mean_ssim", ssim / n}};
}

std::vector<SampleRow> rows_of(const std::vector<Outcome>& outcomes) {
  std::vector<SampleRow> rows;
  for (const auto& o : outcomes) rows.push_back(o.row);
  return rows;
}

std::string model_label(const Config& c, const std::string& path_key) {
  if (const auto n = c.find("model.name")) return *n;
  return fs::path(c.get_string(path_key, "model")).stem().string();
}

template <typename T>
SegModel<T> load_model(const Config& c, const std::string& key) {
  const auto path = c.find(key);
  if (!path) throw ConfigError(key + ": a model checkpoint is required");
  return load_checkpoint<T>(*path);
}

AttackConfig parse_attack(const Context& ctx, const std::string& name) {
  AttackKind kind;
  try {
    kind = parse_attack_kind(name);
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("attack.kind: ") + e.what());
  }
  return attack_config_from(ctx.cfg, kind, ctx.seed);
}

// --- commands ---------------------------------------------------------------

int cmd_gen_data(const Context& ctx) {
  const auto spec = synth_spec_from(ctx.cfg, ctx.seed);
  const auto ds = generate(spec);
  const auto entries = save_dataset(ctx.stage / "dataset", ds);
  json manifest = json::array();
  for (const auto& e : entries) {
    char crc[16];
    std::snprintf(crc, sizeof crc, "%08" PRIx32, e.crc);
    manifest.push_back({{"split", e.split}, {"file", e.file}, {"crc32", crc}});
  }
  write_json(ctx.stage / "report.json", {{"command", "gen-data"}, {"spec", to_json(spec)}, {"manifest", manifest}});
  ctx.log << "wrote " << entries.size() << " samples\n";
  return kExitOk;
}

template <typename T>
int cmd_train(const Context& ctx) {
  const auto tc = train_config_from(ctx.cfg, ctx.seed);
  const auto ds = obtain_dataset(ctx);
  if (ds.train.empty()) throw ConfigError("data.train_count: training needs at least one sample");
  const int num_class = ds.train.front().y.num_class();
  SegModel<T> model;
  if (ctx.cfg.has("train.init_checkpoint")) {
    model = load_model<T>(ctx.cfg, "train.init_checkpoint");
    if (model.num_class() != num_class) throw ConfigError("train.init_checkpoint: class count differs from the data");
  } else {
    const auto hidden = ctx.cfg.get_int("model.hidden", 8);
    if (hidden < 1) throw ConfigError("model.hidden: must be >= 1");
    model = SegModel<T>::init(num_class, ctx.cfg.get_u64("model.init_seed", derive_seed(ctx.seed, "model-init")),
                              static_cast<std::size_t>(hidden));
  }
  const auto every = ctx.cfg.get_int("train.checkpoint_every", 0);
  if (every < 0) throw ConfigError("train.checkpoint_every: must be >= 0");
  const auto eval_attack = ctx.cfg.get_string("train.eval_attack", "vafa");
  std::optional<AttackConfig> final_attack;
  if (eval_attack != "none") final_attack = parse_attack(ctx, eval_attack);

  std::ostringstream curve;
  curve << "epoch,clean_loss,adv_loss,fr_loss,total_loss\n";
  const auto report = train(model, ds.train, tc, [&](const EpochLog& l, const SegModel<T>& m) {
    ctx.log << "epoch " << l.epoch << "  clean " << l.clean_loss << "  adv " << l.adv_loss << "  fr " << l.fr_loss
            << "\n";
    curve << l.epoch << ',' << num(l.clean_loss) << ',' << num(l.adv_loss) << ',' << num(l.fr_loss) << ','
          << num(l.total_loss) << '\n';
    if (every > 0 && l.epoch % every == 0) {
      char name[32];
      std::snprintf(name, sizeof name, "epoch_%03d.ckpt", l.epoch);
      fs::create_directories(ctx.stage / "checkpoints");
      save_checkpoint(m, ctx.stage / "checkpoints" / name);
    }
  });
  save_checkpoint(model, ctx.stage / "model.ckpt");
  write_file(ctx.stage / "train_log.csv", curve.str());

  const auto name = ctx.cfg.get_string("model.name", to_string(tc.mode));
  std::vector<const Sample*> test;
  for (const auto& s : ds.test) test.push_back(&s);
  json final_metrics = json::object();
  std::vector<Outcome> outcomes;
  if (!test.empty()) {
    outcomes = evaluate_all(ctx, model, name, test, std::nullopt);
    final_metrics["clean"] = summarize(outcomes);
    if (final_attack) {
      auto adv = evaluate_all(ctx, model, name, test, final_attack);
      final_metrics["adversarial"] = summarize(adv);
      final_metrics["adversarial"]["attack"] = to_json(*final_attack);
      outcomes.insert(outcomes.end(), adv.begin(), adv.end());
    }
    write_file(ctx.stage / "per_sample.csv", per_sample_csv(rows_of(outcomes)));
  }
  json epochs = json::array();
  for (const auto& l : report.epochs) {
    epochs.push_back({{"epoch", l.epoch},
                      {"clean_loss", l.clean_loss},
                      {"adv_loss", l.adv_loss},
                      {"fr_loss", l.fr_loss},
                      {"total_loss", l.total_loss}});
  }
  write_json(ctx.stage / "report.json", {{"command", "train"},
                                         {"precision", ctx.precision},
                                         {"model", name},
                                         {"train", to_json(tc)},
                                         {"epochs", epochs},
                                         {"final", final_metrics}});
  write_json(ctx.stage / "timing.json", {{"train_seconds", report.seconds}});
  return kExitOk;
}

template <typename T>
int cmd_eval(const Context& ctx, bool attacked) {
  const auto model = load_model<T>(ctx.cfg, "model.checkpoint");
  const auto name = model_label(ctx.cfg, "model.checkpoint");
  std::optional<AttackConfig> attack;
  if (attacked) attack = parse_attack(ctx, ctx.cfg.get_string("attack.kind", "vafa"));
  const auto ds = obtain_dataset(ctx);
  const auto samples = pick_split(ctx, ds);

  auto outcomes = evaluate_all(ctx, model, name, samples, std::nullopt);
  json report = {{"command", attacked ? "attack" : "eval"}, {"precision", ctx.precision}, {"model", name},
                 {"split", ctx.cfg.get_string("eval.split", "test")}};
  report["clean"] = summarize(outcomes);
  const double clean_dsc = report["clean"]["mean_dsc"];
  if (attacked) {
    auto adv = evaluate_all(ctx, model, name, samples, attack);
    report["attack"] = to_json(*attack);
    report["adversarial"] = summarize(adv);
    const double adv_dsc = report["adversarial"]["mean_dsc"];
    report["dsc_drop"] = clean_dsc - adv_dsc;
    std::ostringstream diag;
    diag << "sample,step,objective,dice_loss\n";
    for (const auto& o : adv) {
      for (std::size_t k = 0; k < o.objective_trace.size(); ++k) {
        diag << o.row.sample << ',' << k << ',' << num(o.objective_trace[k]) << ',' << num(o.dice_trace[k]) << '\n';
      }
    }
    write_file(ctx.stage / "diagnostics.csv", diag.str());
    write_outcome_slices(ctx, samples, adv);
    outcomes.insert(outcomes.end(), adv.begin(), adv.end());
  } else {
    write_outcome_slices(ctx, samples, outcomes);
  }
  write_file(ctx.stage / "per_sample.csv", per_sample_csv(rows_of(outcomes)));
  write_json(ctx.stage / "report.json", report);
  ctx.log << "clean DSC " << clean_dsc;
  if (attacked) ctx.log << "  adversarial DSC " << static_cast<double>(report["adversarial"]["mean_dsc"]);
  ctx.log << "\n";

  if (const auto min_clean = ctx.cfg.find("eval.min_clean_dsc");
      min_clean && clean_dsc < ctx.cfg.get_double("eval.min_clean_dsc", 0)) {
    throw ThresholdFailure("clean DSC " + num(clean_dsc) + " below eval.min_clean_dsc " + *min_clean);
  }
  if (attacked && ctx.cfg.has("eval.max_adv_dsc")) {
    const double adv_dsc = report["adversarial"]["mean_dsc"];
    if (adv_dsc > ctx.cfg.get_double("eval.max_adv_dsc", 1)) {
      throw ThresholdFailure("adversarial DSC " + num(adv_dsc) + " above eval.max_adv_dsc");
    }
  }
  return kExitOk;
}

struct ModelEntry {
  std::string name;
  std::string path;
};

std::vector<ModelEntry> compare_models(const Config& c) {
  std::vector<ModelEntry> entries;
  for (const auto& item : c.get_list("compare.models", {})) {
    const auto colon = item.find(':');
    if (colon == std::string::npos || colon == 0) {
      throw ConfigError("compare.models: expected name:path entries, got '" + item + "'");
    }
    entries.push_back({item.substr(0, colon), item.substr(colon + 1)});
    if (!fs::exists(entries.back().path)) {
      throw ConfigError("compare.models: path '" + entries.back().path + "' does not exist");
    }
  }
  if (entries.empty()) throw ConfigError("compare.models: list at least one name:path entry");
  return entries;
}

template <typename T>
int cmd_compare(const Context& ctx) {
  const auto entries = compare_models(ctx.cfg);
  const auto attack_names =
      ctx.cfg.get_list("compare.attacks", {"clean", "fgsm", "pgd", "bim", "gn", "vafa"});
  std::vector<std::optional<AttackConfig>> attacks;
  for (const auto& a : attack_names) {
    if (a == "clean") {
      attacks.emplace_back();
    } else {
      attacks.emplace_back(parse_attack(ctx, a));
    }
  }
  const auto ds = obtain_dataset(ctx);
  const auto samples = pick_split(ctx, ds);

  std::vector<SampleRow> rows;
  json grid = json::object();
  std::ostringstream table;
  table << std::left << std::setw(12) << "model";
  for (const auto& a : attack_names) table << std::setw(20) << (a == "clean" ? "clean*" : a);
  table << "\n";
  for (const auto& e : entries) {
    const auto model = load_checkpoint<T>(e.path);
    table << std::setw(12) << e.name;
    for (std::size_t k = 0; k < attacks.size(); ++k) {
      ctx.log << "compare " << e.name << " / " << attack_names[k] << "\n";
      const auto outcomes = evaluate_all(ctx, model, e.name, samples, attacks[k]);
      auto cell = summarize(outcomes);
      cell["clean"] = !attacks[k].has_value();
      grid[e.name][attack_names[k]] = cell;
      const auto r = rows_of(outcomes);
      rows.insert(rows.end(), r.begin(), r.end());
      char buf[64];
      std::snprintf(buf, sizeof buf, "%.4f / %.2f", static_cast<double>(cell["mean_dsc"]),
                    static_cast<double>(cell["mean_hd95"]));
      table << std::setw(20) << buf;
      if (!outcomes.empty() && ctx.cfg.get_int("eval.slice_samples", 1) > 0) {
        write_slices(ctx, e.name + "_" + attack_names[k] + "_" + outcomes[0].row.sample, *samples[0], outcomes[0],
                     attacks[k].has_value());
      }
    }
    table << "\n";
  }
  table << "cells: mean DSC / mean HD95 over " << samples.size() << " samples; * marks clean inputs\n";
  json attack_cfg = json::object();
  for (std::size_t k = 0; k < attacks.size(); ++k) {
    if (attacks[k]) attack_cfg[attack_names[k]] = to_json(*attacks[k]);
  }
  json models = json::array();
  for (const auto& e : entries) models.push_back(e.name);
  write_file(ctx.stage / "per_sample.csv", per_sample_csv(rows));
  write_file(ctx.stage / "compare.txt", table.str());
  write_json(ctx.stage / "report.json", {{"command", "compare"},
                                         {"precision", ctx.precision},
                                         {"models", models},
                                         {"attacks", attack_names},
                                         {"attack_config", attack_cfg},
                                         {"split", ctx.cfg.get_string("eval.split", "test")},
                                         {"grid", grid}});
  ctx.log << table.str();
  return kExitOk;
}

int cmd_gradcheck(const Context& ctx) {
  GradcheckOptions o;
  o.instances = static_cast<int>(ctx.cfg.get_int("gradcheck.instances", o.instances));
  if (o.instances < 1) throw ConfigError("gradcheck.instances: must be >= 1");
  o.primitive_tolerance = ctx.cfg.get_double("gradcheck.primitive_tolerance", o.primitive_tolerance);
  o.composite_tolerance = ctx.cfg.get_double("gradcheck.tolerance", o.composite_tolerance);
  o.seed = ctx.cfg.get_u64("gradcheck.seed", ctx.seed);
  const auto results = run_gradcheck(o);
  json ops = json::array();
  bool ok = true;
  for (const auto& r : results) {
    char line[160];
    std::snprintf(line, sizeof line, "%-42s %-9s max rel err %.3e (tol %.0e) %s\n", r.name.c_str(),
                  r.composite ? "composite" : "op", r.max_rel_error, r.tolerance, r.passed() ? "ok" : "FAIL");
    ctx.log << line;
    ops.push_back({{"name", r.name},
                   {"composite", r.composite},
                   {"instances", r.instances},
                   {"max_rel_error", r.max_rel_error},
                   {"tolerance", r.tolerance},
                   {"passed", r.passed()}});
    ok = ok && r.passed();
  }
  write_json(ctx.stage / "report.json", {{"command", "gradcheck"}, {"passed", ok}, {"checks", ops}});
  if (!ok) throw ThresholdFailure("gradient check above tolerance");
  return kExitOk;
}

template <typename T>
int dispatch(const std::string& command, const Context& ctx) {
  if (command == "gen-data") return cmd_gen_data(ctx);
  if (command == "train") return cmd_train<T>(ctx);
  if (command == "attack") return cmd_eval<T>(ctx, true);
  if (command == "eval") return cmd_eval<T>(ctx, false);
  if (command == "compare") return cmd_compare<T>(ctx);
  if (command == "gradcheck") return cmd_gradcheck(ctx);
  throw ConfigError("unknown command '" + command + "'");
}

// Surfaces config errors before any artifact is written.
void preflight(const std::string& command, const Context& ctx) {
  const auto& c = ctx.cfg;
  const bool needs_data = command != "gen-data" && command != "gradcheck";
  if (command == "gen-data" || (needs_data && !c.has("data.dir"))) synth_spec_from(c, ctx.seed);
  if (needs_data) pick_split(ctx, Dataset{{}, {Sample{}}});
  if (command == "train") {
    train_config_from(c, ctx.seed);
    if (c.get_int("model.hidden", 8) < 1) throw ConfigError("model.hidden: must be >= 1");
    if (c.get_int("train.checkpoint_every", 0) < 0) throw ConfigError("train.checkpoint_every: must be >= 0");
    if (const auto a = c.get_string("train.eval_attack", "vafa"); a != "none") parse_attack(ctx, a);
  }
  if (command == "attack" || command == "eval") {
    if (!c.has("model.checkpoint")) throw ConfigError("model.checkpoint: a model checkpoint is required");
  }
  if (command == "attack") parse_attack(ctx, c.get_string("attack.kind", "vafa"));
  if (command == "compare") {
    compare_models(c);
    for (const auto& a : c.get_list("compare.attacks", {})) {
      if (a != "clean") parse_attack(ctx, a);
    }
  }
  if (command == "gradcheck" && c.get_int("gradcheck.instances", 20) < 1) {
    throw ConfigError("gradcheck.instances: must be >= 1");
  }
  for (const auto* key : {"eval.min_clean_dsc", "eval.max_adv_dsc"}) c.get_double(key, 0);
}

// Output directories we are willing to replace: empty ones and earlier runs.
void check_replaceable(const fs::path& out) {
  if (!fs::exists(out)) return;
  if (!fs::is_directory(out)) throw ConfigError("--out: '" + out.string() + "' exists and is not a directory");
  if (fs::is_empty(out) || fs::exists(out / "report.json") || fs::exists(out / "FAILED")) return;
  throw ConfigError("--out: '" + out.string() + "' is a non-empty directory that is not a previous run");
}

}  // namespace

std::string per_sample_csv(const std::vector<SampleRow>& rows) {
  std::size_t classes = 0;
  for (const auto& r : rows) classes = std::max(classes, r.dsc_per_class.size());
  std::ostringstream out;
  out << "model,attack,split,sample,dsc,hd95,hd95_undefined,ssim";
  for (std::size_t c = 0; c < classes; ++c) out << ",dsc_class_" << c;
  out << '\n';
  for (const auto& r : rows) {
    out << r.model << ',' << r.attack << ',' << r.split << ',' << r.sample << ',' << num(r.dsc) << ',' << num(r.hd95)
        << ',' << r.hd95_undefined << ',' << num(r.ssim);
    for (std::size_t c = 0; c < classes; ++c) out << ',' << (c < r.dsc_per_class.size() ? num(r.dsc_per_class[c]) : "");
    out << '\n';
  }
  return out.str();
}

int run(const RunRequest& req, std::ostream& log) {
  fs::path stage;
  auto fail = [&](const std::string& what, int code) {
    log << "error: " << what << "\n";
    if (!stage.empty() && fs::exists(stage)) {
      write_file(stage / "FAILED", what + "\n");
      std::error_code ec;
      fs::remove_all(req.out, ec);
      fs::rename(stage, req.out, ec);
    }
    return code;
  };
  try {
    Config c = req.config;
    if (req.seed) c.set("run.seed", std::to_string(*req.seed));
    if (std::find(kCommands.begin(), kCommands.end(), req.command) == kCommands.end()) {
      throw ConfigError("unknown command '" + req.command + "'");
    }
    if (req.out.empty()) throw ConfigError("--out: an output directory is required");
    const auto seed = req.seed ? *req.seed : c.get_u64("run.seed", 0);
    const auto workers = req.workers ? *req.workers : static_cast<int>(c.get_int("run.workers", 1));
    if (workers < 1) throw ConfigError("run.workers: must be >= 1");
    const auto precision = req.precision ? *req.precision : static_cast<int>(c.get_int("run.precision", 32));
    if (precision != 32 && precision != 64) throw ConfigError("run.precision: expected 32 or 64");
    for (const auto* key : {"data.dir", "model.checkpoint", "train.init_checkpoint"}) require_path(c, key);
    check_replaceable(req.out);
    const auto out = fs::absolute(req.out);
    Context ctx{c, {}, seed, workers, precision, log};
    preflight(req.command, ctx);

    stage = out.parent_path() / ("." + out.filename().string() + ".partial");
    fs::remove_all(stage);
    fs::create_directories(stage);
    ctx.stage = stage;
    const int code = precision == 64 ? dispatch<double>(req.command, ctx) : dispatch<float>(req.command, ctx);
    fs::remove_all(out);
    fs::rename(stage, out);
    return code;
  } catch (const ThresholdFailure& e) {
    log << "threshold failure: " << e.what() << "\n";
    std::error_code ec;
    fs::remove_all(req.out, ec);
    fs::rename(stage, req.out, ec);
    return kExitThreshold;
  } catch (const ConfigError& e) {
    return fail(std::string("config: ") + e.what(), kExitConfig);
  } catch (const NumericalError& e) {
    return fail(std::string("numerical failure: ") + e.what(), kExitNumerical);
  } catch (const std::exception& e) {
    return fail(e.what(), kExitFailure);
  }
}

}  // namespace volfreq
