#include <iostream>

#include "CLI11.hpp"
#include "volfreq/pipeline.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Frequency-domain attacks and adversarial training for volumetric segmentation"};
  volfreq::RunRequest req;
  std::string config_path;
  std::uint64_t seed = 0;
  int workers = 1;
  int precision = 32;
  app.add_option("command", req.command, "gen-data | train | attack | eval | compare | gradcheck")
      ->required()
      ->check(CLI::IsMember(volfreq::kCommands));
  app.add_option("--config", config_path, "INI-style config file")->check(CLI::ExistingFile);
  app.add_option("--out", req.out, "output directory")->required();
  auto* seed_opt = app.add_option("--seed", seed, "base seed for every stream without its own seed key");
  auto* workers_opt = app.add_option("--workers", workers, "per-sample evaluation threads")->check(CLI::PositiveNumber);
  auto* precision_opt =
      app.add_option("--precision", precision, "32 (float) or 64 (double)")->check(CLI::IsMember({32, 64}));
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : volfreq::kExitConfig;
  }
  try {
    if (!config_path.empty()) req.config = volfreq::Config::load(config_path);
    req.config.apply_process_env();
  } catch (const volfreq::ConfigError& e) {
    std::cerr << "error: config: " << e.what() << "\n";
    return volfreq::kExitConfig;
  }
  if (*seed_opt) req.seed = seed;
  if (*workers_opt) req.workers = workers;
  if (*precision_opt) req.precision = precision;
  return volfreq::run(req, std::cerr);
}
