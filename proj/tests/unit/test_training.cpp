#include <doctest.h>

#include <cmath>

#include "helpers.hpp"
#include "volfreq/training.hpp"

using namespace volfreq;

namespace {

std::vector<Sample> tiny_data(std::size_t n) {
  auto spec = testing::tiny_spec();
  spec.train_count = n;
  return generate(spec).train;
}

TrainConfig quick(int epochs) {
  TrainConfig c;
  c.epochs = epochs;
  c.batch_size = 2;
  c.attack.patch = 8;
  c.attack.steps = 2;
  return c;
}

}  // namespace

TEST_CASE("modes and optimizers parse and print") {
  for (auto m : {TrainMode::kStandard, TrainMode::kAdvVoxel, TrainMode::kVaft, TrainMode::kVaftFr}) {
    CHECK(parse_train_mode(to_string(m)) == m);
  }
  CHECK(parse_optimizer("sgd") == Optimizer::kMomentumSgd);
  CHECK(parse_optimizer("adam") == Optimizer::kAdam);
  CHECK_THROWS(parse_optimizer("lbfgs"));
}

TEST_CASE("config validation") {
  TrainConfig c;
  c.lambda_fr = -1;
  CHECK_THROWS(c.validate());
  c = {};
  c.mode = TrainMode::kVaftFr;
  c.lambda_fr = 0;
  CHECK_THROWS(c.validate());
  c = {};
  c.batch_size = 0;
  CHECK_THROWS(c.validate());
  auto m = SegModel<float>::init(3, 1);
  CHECK_THROWS(train(m, {}, TrainConfig{}));
}

TEST_CASE("zero epochs leave the parameters unchanged") {
  const auto data = tiny_data(2);
  auto m = SegModel<float>::init(3, 1);
  const auto before = m;
  const auto r = train(m, data, quick(0));
  CHECK(m == before);
  CHECK(r.epochs.empty());
}

TEST_CASE("a single sample can be overfit") {
  const auto data = tiny_data(1);
  auto m = SegModel<float>::init(3, 4);
  auto c = quick(150);
  c.learning_rate = 0.01;
  const auto r = train(m, data, c);
  CHECK(r.epochs.back().clean_loss < 0.05);
}

TEST_CASE("training is deterministic under the seed") {
  const auto data = tiny_data(3);
  auto a = SegModel<float>::init(3, 1), b = SegModel<float>::init(3, 1);
  train(a, data, quick(2));
  train(b, data, quick(2));
  CHECK(a == b);
  // A different seed reshuffles single-sample batches.
  auto c = SegModel<float>::init(3, 1), d = SegModel<float>::init(3, 1);
  auto cfg = quick(2);
  cfg.batch_size = 1;
  train(c, data, cfg);
  cfg.seed = 99;
  train(d, data, cfg);
  CHECK_FALSE(c == d);
}

TEST_CASE("logged total equals the sum of its components") {
  const auto data = tiny_data(2);
  for (auto mode : {TrainMode::kVaft, TrainMode::kVaftFr, TrainMode::kAdvVoxel}) {
    auto m = SegModel<double>::init(3, 1);
    auto c = quick(1);
    c.mode = mode;
    c.lambda_fr = 0.01;
    const auto r = train(m, data, c);
    const auto& l = r.epochs.back();
    CHECK(std::abs(l.total_loss - (l.clean_loss + l.adv_loss + l.fr_loss)) < 1e-6);
    CHECK(l.adv_loss > 0);
    CHECK((l.fr_loss > 0) == (mode == TrainMode::kVaftFr));
  }
}

TEST_CASE("training loss decomposes into its three terms") {
  const auto data = tiny_data(1);
  const auto m = SegModel<double>::init(3, 1);
  AttackConfig a;
  a.patch = 8;
  a.steps = 2;
  const auto adv = run_attack(data[0].x, data[0].y, m, a).adversarial;
  const auto l = training_loss<double>(m, data[0], &adv, 0.5, nullptr);
  CHECK(std::abs(l.total - (l.clean + l.adv + l.fr)) < 1e-9);
  const auto clean_only = training_loss<double>(m, data[0], nullptr, 0.5, nullptr);
  CHECK(clean_only.adv == 0.0);
  CHECK(clean_only.total == l.clean);
}

TEST_CASE("a degenerate frequency adversary tracks standard training") {
  // Zero attack steps keep q at ones, so X' ~ X and the objective is about
  // twice the clean Dice loss; Adam is invariant to that scale.
  const auto data = tiny_data(2);
  auto std_model = SegModel<float>::init(3, 1), vaft_model = SegModel<float>::init(3, 1);
  auto c = quick(3);
  const auto rs = train_standard(std_model, data, c);
  c.attack.steps = 0;
  c.lambda_fr = 0;
  const auto rv = train_vaft(vaft_model, data, c);
  for (std::size_t e = 0; e < rs.epochs.size(); ++e) {
    CHECK(std::abs(rv.epochs[e].clean_loss - rs.epochs[e].clean_loss) < 0.01);
    CHECK(std::abs(rv.epochs[e].adv_loss - rv.epochs[e].clean_loss) < 0.01);
  }
}

TEST_CASE("momentum sgd remains available") {
  const auto data = tiny_data(2);
  auto m = SegModel<float>::init(3, 1);
  const auto before = m;
  auto c = quick(1);
  c.optimizer = Optimizer::kMomentumSgd;
  c.learning_rate = 0.01;
  train(m, data, c);
  CHECK_FALSE(m == before);
}

TEST_CASE("epoch callback sees every epoch") {
  const auto data = tiny_data(2);
  auto m = SegModel<float>::init(3, 1);
  int calls = 0;
  train(m, data, quick(3), [&](const EpochLog& l, const SegModel<float>&) { CHECK(l.epoch == ++calls); });
  CHECK(calls == 3);
}
