#include <cmath>

#include "doctest.h"
#include "padchannel/trainer.hpp"

using namespace padchannel;

namespace {

RunLog curve(std::vector<double> top1) {
  RunLog log{"x", 0, {}};
  for (std::size_t i = 0; i < top1.size(); ++i) log.records.push_back({static_cast<std::int64_t>(i), 1.0, top1[i], 0.1, 0.0});
  return log;
}

struct Tiny {
  Dataset train, val;
  AugmentConfig augment;
  ModelSpec spec{Family::tiny_vgg, false, 2, 3, 16};
  TrainConfig cfg;
  Tiny() {
    Rng rng(0);
    auto all = gen_border_task(160, 16, rng);
    std::tie(train, val) = split(all, 0.25, rng);
    augment.scale_min = augment.scale_max = 1.0;
    augment.ratio_min = augment.ratio_max = 1.0;
    augment.train_crop_size = augment.resize_size = augment.center_crop_size = 16;
    augment.normalization = channel_stats(train);
    cfg.base_lr = 0.01;
    cfg.epochs = 2;
    cfg.batch_size = 16;
  }
};

}  // namespace

TEST_CASE("step schedule") {
  TrainConfig cfg;
  CHECK(lr_at(0, cfg) == 0.00125);
  CHECK(lr_at(29, cfg) == 0.00125);
  CHECK(lr_at(30, cfg) == doctest::Approx(0.000125).epsilon(1e-12));
  CHECK(lr_at(60, cfg) == doctest::Approx(1.25e-5).epsilon(1e-12));
  CHECK(lr_at(99, cfg) == doctest::Approx(1.25e-6).epsilon(1e-12));
  CHECK_THROWS_AS(lr_at(100, cfg), ArgumentError);
}

TEST_CASE("property: schedule is non-increasing and changes only at step multiples") {
  for (std::int64_t step : {1, 3, 7, 30}) {
    TrainConfig cfg;
    cfg.lr_step = step;
    for (std::int64_t e = 1; e < cfg.epochs; ++e) {
      CHECK(lr_at(e, cfg) <= lr_at(e - 1, cfg));
      CHECK((lr_at(e, cfg) != lr_at(e - 1, cfg)) == (e % step == 0));
    }
  }
}

TEST_CASE("sgd step rules") {
  auto w = Tensor::from({2}, std::vector<double>{1.0, -2.0});
  auto g = Tensor::from({2}, std::vector<double>{0.5, 0.25});
  Tensor v({2}, DType::f64);
  sgd_step(w, g, v, 0.1, 0.0, 0.0);
  CHECK(w.item(0) == doctest::Approx(0.95));
  CHECK(w.item(1) == doctest::Approx(-2.025));

  auto fixed = Tensor::from({1}, std::vector<double>{3.0});
  Tensor zero({1}, DType::f64), v0({1}, DType::f64);
  sgd_step(fixed, zero, v0, 0.5, 0.9, 0.0);
  CHECK(fixed.item(0) == 3.0);

  // Scalar recurrence: v1 = g, v2 = 0.9 g + g.
  auto w2 = Tensor::from({1}, std::vector<double>{0.0});
  auto g2 = Tensor::from({1}, std::vector<double>{2.0});
  Tensor v2({1}, DType::f64);
  sgd_step(w2, g2, v2, 0.1, 0.9, 0.0);
  const double after_one = w2.item(0);
  sgd_step(w2, g2, v2, 0.1, 0.9, 0.0);
  CHECK(after_one == doctest::Approx(-0.2));
  CHECK(w2.item(0) - after_one == doctest::Approx(-0.1 * 1.9 * 2.0));

  auto wd = Tensor::from({1}, std::vector<double>{2.0});
  Tensor vd({1}, DType::f64);
  sgd_step(wd, Tensor({1}, DType::f64), vd, 0.5, 0.0, 0.1);
  CHECK(wd.item(0) == doctest::Approx(2.0 - 0.5 * 0.2));

  auto nan = Tensor::from({1}, std::vector<double>{std::nan("")});
  CHECK_THROWS_AS(sgd_step(wd, nan, vd, 0.1, 0.0, 0.0), TrainingDivergedError);
}

TEST_CASE("property: one plain step on half the squared norm shrinks by 1 - lr") {
  Rng rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    Tensor w({5}, DType::f64);
    for (auto& x : w.data<double>()) x = rng.normal();
    const Tensor before = w;
    const double lr = rng.uniform(0.01, 0.9);
    Tensor v({5}, DType::f64);
    sgd_step(w, before, v, lr, 0.0, 0.0);  // gradient of 0.5*|w|^2 is w
    for (std::int64_t i = 0; i < 5; ++i) CHECK(w.item(i) == before.item(i) - lr * before.item(i));
  }
}

TEST_CASE("top-1 and tie breaking") {
  auto onehot = Tensor::from({3, 3}, std::vector<double>{1, 0, 0, 0, 1, 0, 0, 0, 1});
  std::vector<int> labels{0, 1, 2};
  CHECK(top1(onehot, labels) == 100.0);
  auto flat = fill({10, 10}, 0.5, DType::f64);
  std::vector<int> uniform{0, 1, 2, 3, 4, 5, 6, 7, 8, 9};
  CHECK(top1(flat, uniform) == 10.0);
  auto five = Tensor::from({5, 2}, std::vector<double>{1, 0, 1, 0, 0, 1, 0, 1, 1, 0});
  std::vector<int> l5{0, 0, 1, 0, 1};
  CHECK(top1(five, l5) == 60.0);
}

TEST_CASE("best epoch and threshold crossing") {
  CHECK(best_epoch(curve({70.1, 70.5, 70.3})) == 1);
  CHECK(best_epoch(curve({50, 60, 60})) == 1);
  std::vector<double> c(100);
  for (int e = 0; e < 100; ++e) c[e] = e < 73 ? 60.0 + 0.2 * e : 75.75 + 0.001 * (e - 73);
  const auto log = curve(c);
  CHECK(epochs_to_threshold(log, 75.75) == 73);
  CHECK_FALSE(epochs_to_threshold(log, 99.0).has_value());
  CHECK(epochs_to_threshold(log, 0.0) == 0);
}

TEST_CASE("run log csv round trip and validation") {
  auto log = curve({10, 20.5});
  log.spec_id = "tinyvgg-pc";
  log.seed = 3;
  const auto back = parse_runlog_csv(to_csv(log));
  CHECK(back.spec_id == "tinyvgg-pc");
  CHECK(back.seed == 3);
  CHECK(back.records.size() == 2);
  CHECK(back.records[1].val_top1 == 20.5);
  CHECK_THROWS_AS(parse_runlog_csv("spec_id,seed,epoch,train_loss,val_top1,lr,wall_seconds\nx,0,1,1,1,1,1\n"), DataError);
  CHECK_THROWS_AS(parse_runlog_csv("spec_id,seed,epoch,train_loss,val_top1,lr,wall_seconds\nx,0,0,1,101,1,1\n"), DataError);
}

TEST_CASE("train_run is deterministic and its checkpoint re-evaluates exactly") {
  Tiny t;
  const auto a = train_run(t.spec, t.cfg, t.train, t.val, t.augment, 11);
  const auto b = train_run(t.spec, t.cfg, t.train, t.val, t.augment, 11);
  REQUIRE(a.log.records.size() == 2);
  for (std::size_t i = 0; i < 2; ++i) {
    CHECK(a.log.records[i].train_loss == b.log.records[i].train_loss);
    CHECK(a.log.records[i].val_top1 == b.log.records[i].val_top1);
  }
  CHECK(a.best.state == b.best.state);
  CHECK(a.best.epoch == *best_epoch(a.log));

  Rng rng(0);
  auto model = build_model(t.spec, rng);
  model.load_state_dict(a.best.state);
  CHECK(evaluate(model, t.val, t.augment) == a.best.val_top1);

  const auto c = train_run(t.spec, t.cfg, t.train, t.val, t.augment, 12);
  CHECK(c.log.records[0].train_loss != a.log.records[0].train_loss);
}

TEST_CASE("train_run guards and divergence keeps the partial log") {
  Tiny t;
  CHECK_THROWS_AS(train_run(t.spec, t.cfg, t.train, Dataset{}, t.augment, 0), ArgumentError);
  t.cfg.base_lr = 1e30;
  t.cfg.epochs = 5;
  try {
    train_run(t.spec, t.cfg, t.train, t.val, t.augment, 0);
    FAIL("expected divergence");
  } catch (const TrainingDivergedError& e) {
    CHECK(e.log.records.size() < 5);
    CHECK(e.log.spec_id == "tinyvgg");
  }
}

TEST_CASE("early stop ends the run at the first epoch reaching the target") {
  Tiny t;
  t.cfg.epochs = 4;
  t.cfg.stop_at_top1 = 0.0;
  const auto r = train_run(t.spec, t.cfg, t.train, t.val, t.augment, 1);
  CHECK(r.log.records.size() == 1);
}

TEST_CASE("config validation") {
  TrainConfig c;
  c.momentum = 1.0;
  CHECK_THROWS_AS(c.validate(), ArgumentError);
  c = TrainConfig{};
  c.lr_step = 0;
  CHECK_THROWS_AS(c.validate(), ArgumentError);
  c = TrainConfig{};
  c.base_lr = 0;
  CHECK_THROWS_AS(c.validate(), ArgumentError);
}
