#include "doctest.h"
#include "padchannel/experiment.hpp"

using namespace padchannel;

namespace {
const char* kMinimal = R"({"arch": "tinyvgg", "dataset": {"kind": "border", "n": 100, "size": 16}})";
}

TEST_CASE("minimal config gets defaults") {
  const auto cfg = parse_experiment_config(kMinimal, "/base");
  CHECK(cfg.model.family == Family::tiny_vgg);
  CHECK(cfg.model.num_classes == 2);
  CHECK_FALSE(cfg.model.pad_channel);
  CHECK(cfg.train.base_lr == 0.00125);
  CHECK(cfg.train.batch_size == 32);
  CHECK(cfg.train.seeds.size() == 5);
  CHECK(cfg.out_dir == std::filesystem::path("/base/runs"));
  CHECK_FALSE(cfg.normalization_set);
}

TEST_CASE("unknown keys are rejected at every level") {
  CHECK_THROWS_AS(parse_experiment_config(R"({"arch": "tinyvgg", "dataset": {"kind": "border"}, "lr": 1})"), ConfigError);
  CHECK_THROWS_AS(parse_experiment_config(R"({"arch": "tinyvgg", "dataset": {"kind": "border", "path": "x"}})"),
                  ConfigError);
  CHECK_THROWS_AS(parse_experiment_config(R"({"arch": "tinyvgg", "dataset": {"kind": "border"}, "train": {"lr": 1}})"),
                  ConfigError);
  CHECK_THROWS_AS(
      parse_experiment_config(R"({"arch": "tinyvgg", "dataset": {"kind": "border"}, "augment": {"jitter": 1}})"),
      ConfigError);
}

TEST_CASE("schema violations") {
  CHECK_THROWS_AS(parse_experiment_config("{"), ConfigError);
  CHECK_THROWS_AS(parse_experiment_config(R"({"dataset": {"kind": "border"}})"), ConfigError);
  CHECK_THROWS_AS(parse_experiment_config(R"({"arch": "nonesuch", "dataset": {"kind": "border"}})"), ConfigError);
  CHECK_THROWS_AS(parse_experiment_config(R"({"arch": "tinyvgg", "dataset": {"kind": "imagenet"}})"), ConfigError);
  CHECK_THROWS_AS(parse_experiment_config(R"({"arch": "tinyvgg", "dataset": {"kind": "border"}, "train": {"epochs": "ten"}})"),
                  ConfigError);
  CHECK_THROWS_AS(parse_experiment_config(R"({"arch": "tinyvgg", "dataset": {"kind": "border"}, "train": {"momentum": 1.5}})"),
                  ConfigError);
  CHECK_THROWS_AS(
      parse_experiment_config(R"({"arch": "tinyvgg", "pad_channel": true, "padding_mode": "reflect", "dataset": {"kind": "border"}})"),
      IncompatiblePaddingError);
  CHECK_THROWS_AS(parse_experiment_config(R"({"arch": "tinyvgg", "dataset": {"kind": "cifar-binary", "train_path": "a"}})"),
                  ConfigError);
}

TEST_CASE("resolved config round-trips through JSON") {
  auto cfg = parse_experiment_config(kMinimal, "/base");
  auto data = load_experiment_data(cfg);
  CHECK(cfg.normalization_set);
  CHECK(data.train.size() == 80);
  CHECK(data.val.size() == 20);
  const auto text = to_json(cfg);
  const auto back = parse_experiment_config(text);
  CHECK(to_json(back) == text);
  CHECK(back.augment.normalization.mean == cfg.augment.normalization.mean);
}

TEST_CASE("missing dataset files are data errors") {
  auto cfg = parse_experiment_config(
      R"({"arch": "resnet18", "dataset": {"kind": "cifar-binary", "train_path": "nope.bin", "val_path": "nope.bin"}})",
      "/nonexistent");
  CHECK(cfg.model.num_classes == 10);
  CHECK_THROWS_AS(load_experiment_data(cfg), DataError);
}
