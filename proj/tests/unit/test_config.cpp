#include <doctest.h>

#include "volfreq/config.hpp"

using namespace volfreq;

TEST_CASE("sections, comments and top-level keys") {
  const auto c = Config::parse(R"(
seed = 5
# comment
[attack]
q_max = 30   ; trailing comment
steps=10
[attack.pgd]
epsilon = 4
)");
  CHECK(c.get_u64("run.seed", 0) == 5);
  CHECK(c.get_double("attack.q_max", 0) == 30.0);
  CHECK(c.get_int("attack.steps", 0) == 10);
  CHECK(c.get_string("attack.missing", "x") == "x");
  CHECK_FALSE(c.has("attack.missing"));
}

TEST_CASE("malformed text names the line") {
  CHECK_THROWS_AS(Config::parse("[attack\nq=1"), ConfigError);
  CHECK_THROWS_AS(Config::parse("[a]\nno equals sign"), ConfigError);
  try {
    Config::parse("[a]\nx = 1\n = 2\n", "f.ini");
    FAIL("empty key accepted");
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).find("f.ini") != std::string::npos);
  }
}

TEST_CASE("typed getters report the key") {
  const auto c = Config::parse("[train]\nepochs = ten\nflag = maybe\nlr = 1e-3\n");
  try {
    (void)c.get_int("train.epochs", 0);
    FAIL("bad integer accepted");
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).find("train.epochs") != std::string::npos);
  }
  CHECK_THROWS_AS((void)c.get_bool("train.flag", false), ConfigError);
  CHECK(c.get_double("train.lr", 0) == 1e-3);
}

TEST_CASE("lists split on commas") {
  const auto c = Config::parse("[compare]\nattacks = clean, pgd ,vafa\n");
  CHECK(c.get_list("compare.attacks", {}) == std::vector<std::string>{"clean", "pgd", "vafa"});
  CHECK(c.get_list("compare.none", {"a"}) == std::vector<std::string>{"a"});
}

TEST_CASE("environment overrides") {
  auto c = Config::parse("[attack]\nq_max = 20\n");
  c.apply_env([] {
    return std::vector<std::pair<std::string, std::string>>{
        {"VOLFREQ_ATTACK_Q_MAX", "30"}, {"VOLFREQ_TRAIN_EPOCHS", "3"}, {"PATH", "/bin"}, {"VOLFREQX_A_B", "1"}};
  });
  CHECK(c.get_double("attack.q_max", 0) == 30.0);
  CHECK(c.get_int("train.epochs", 0) == 3);
  CHECK(c.entries().size() == 2);
}

TEST_CASE("attack configs resolve per-kind overrides and budget units") {
  const auto c = Config::parse("[attack]\nepsilon = 8\nsteps = 7\n[attack.pgd]\nepsilon = 4\n");
  const auto pgd = attack_config_from(c, AttackKind::kPgd, 1);
  CHECK(pgd.epsilon == doctest::Approx(4.0 / 255));
  CHECK(pgd.steps == 7);
  const auto bim = attack_config_from(c, AttackKind::kBim, 1);
  CHECK(bim.epsilon == doctest::Approx(8.0 / 255));
  const auto v = attack_config_from(c, AttackKind::kVafa, 1);
  CHECK(v.q_max == 20.0);
  CHECK(v.patch == 32);
  CHECK(attack_config_from(Config::parse("[attack]\nrounding = cubic\n"), AttackKind::kVafa, 1).rounding == ad::RoundingGradient::kCubic);
  CHECK_THROWS_AS(attack_config_from(Config::parse("[attack]\nrounding = quartic\n"), AttackKind::kVafa, 1), ConfigError);
  CHECK_THROWS_AS(attack_config_from(Config::parse("[attack]\nq_max = 0.1\n"), AttackKind::kVafa, 1), ConfigError);
}

TEST_CASE("synth and train views validate") {
  const auto s = synth_spec_from(Config::parse("[data]\nextent = 16,16,24\nnum_class = 3\nradius_min = 3\nradius_max = 5\n"), 9);
  CHECK(s.extent == Extent{16, 16, 24});
  CHECK(s.num_class == 3);
  CHECK_THROWS_AS(synth_spec_from(Config::parse("[data]\nextent = 16,16\n"), 1), ConfigError);
  CHECK_THROWS_AS(synth_spec_from(Config::parse("[data]\nnoise_sigma = -1\n"), 1), ConfigError);

  const auto t = train_config_from(Config::parse("[train]\nmode = vaft\nlambda_fr = 0\noptimizer = sgd\n"), 2);
  CHECK(t.mode == TrainMode::kVaft);
  CHECK(t.optimizer == Optimizer::kMomentumSgd);
  CHECK_THROWS_AS(train_config_from(Config::parse("[train]\nmode = vaft-fr\nlambda_fr = 0\n"), 1), ConfigError);
  CHECK_THROWS_AS(train_config_from(Config::parse("[train]\nmode = magic\n"), 1), ConfigError);
}
