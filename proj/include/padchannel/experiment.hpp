#pragma once

#include <filesystem>
#include <optional>
#include <string>

#include "padchannel/data.hpp"
#include "padchannel/model.hpp"
#include "padchannel/trainer.hpp"

namespace padchannel {

/// Malformed or schema-violating experiment config.
class ConfigError : public ArgumentError {
 public:
  using ArgumentError::ArgumentError;
};

struct DatasetConfig {
  enum class Kind { border, cifar_binary };
  Kind kind = Kind::border;
  // border
  std::int64_t n = 10000;
  std::int64_t size = 32;
  std::uint64_t seed = 0;
  double val_fraction = 0.2;
  // cifar-binary
  std::filesystem::path train_path;
  std::filesystem::path val_path;
};

struct ExperimentConfig {
  ModelSpec model;
  DatasetConfig dataset;
  TrainConfig train;
  AugmentConfig augment;
  /// false until mean/std are given or computed from the training set.
  bool normalization_set = false;
  std::filesystem::path out_dir = "runs";

  void validate() const;
};

/// Parses the JSON document. Unknown keys anywhere are rejected. Relative
/// paths resolve against `base_dir`.
ExperimentConfig parse_experiment_config(const std::string& json_text, const std::filesystem::path& base_dir = {});
ExperimentConfig load_experiment_config(const std::filesystem::path& path);
/// Fully resolved document (every field present), stable key order.
std::string to_json(const ExperimentConfig& cfg);

struct ExperimentData {
  Dataset train;
  Dataset val;
};

/// Loads or generates the datasets. Fills in normalization from the
/// training set when the config leaves it unset.
ExperimentData load_experiment_data(ExperimentConfig& cfg);

std::filesystem::path run_directory(const ExperimentConfig& cfg, std::uint64_t seed);

/// Trains one seed, writing runlog.csv (after every epoch), best.ckpt and
/// config.json under out_dir/{spec_id}/{seed}/.
RunResult run_experiment(const ExperimentConfig& cfg, const ExperimentData& data, std::uint64_t seed);

}  // namespace padchannel
