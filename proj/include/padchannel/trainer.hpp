#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "padchannel/checkpoint.hpp"
#include "padchannel/data.hpp"
#include "padchannel/model.hpp"

namespace padchannel {

struct TrainConfig {
  double base_lr = 0.00125;
  double momentum = 0.9;
  double weight_decay = 1e-4;
  std::int64_t epochs = 100;
  std::int64_t lr_step = 30;
  double lr_gamma = 0.1;
  std::int64_t batch_size = 32;
  std::vector<std::uint64_t> seeds = {0, 1, 2, 3, 4};
  /// Ends the run after the first epoch whose val top-1 reaches this value.
  std::optional<double> stop_at_top1;

  void validate() const;
};

/// base_lr * gamma^floor(epoch / lr_step)
double lr_at(std::int64_t epoch, const TrainConfig& cfg);

/// v <- momentum * v + (g + wd * w);  w <- w - lr * v.  Throws
/// TrainingDivergedError on a non-finite gradient.
void sgd_step(Tensor& w, const Tensor& g, Tensor& v, double lr, double momentum, double weight_decay);

struct EpochRecord {
  std::int64_t epoch = 0;
  double train_loss = 0.0;
  double val_top1 = 0.0;
  double lr = 0.0;
  double wall_seconds = 0.0;
};

struct RunLog {
  std::string spec_id;
  std::uint64_t seed = 0;
  std::vector<EpochRecord> records;
};

/// Columns: spec_id, seed, epoch, train_loss, val_top1, lr, wall_seconds.
std::string to_csv(const RunLog& log);
RunLog parse_runlog_csv(const std::string& text);
RunLog read_runlog(const std::filesystem::path& path);

/// Epoch with the highest val_top1; the earliest one on ties.
std::optional<std::int64_t> best_epoch(const RunLog& log);
double best_top1(const RunLog& log);
/// First epoch with val_top1 >= threshold.
std::optional<std::int64_t> epochs_to_threshold(const RunLog& log, double threshold);

/// The run ended on a non-finite loss or gradient. `log` holds the epochs
/// completed before that.
class TrainingDivergedError : public NumericError {
 public:
  TrainingDivergedError(const std::string& what, RunLog log) : NumericError(what), log(std::move(log)) {}
  RunLog log;
};

/// argmax per row with ties to the lowest index.
std::vector<int> predict_labels(const Tensor& logits);
/// 100 * correct / N.
double top1(const Tensor& logits, std::span<const int> labels);

/// Eval-mode top-1 over a dataset using the eval transforms.
double evaluate(Model& model, const Dataset& data, const AugmentConfig& augment, std::int64_t batch_size = 256);

struct RunResult {
  RunLog log;
  Checkpoint best;
};

using EpochCallback = std::function<void(const RunLog& log, const Checkpoint* improved)>;

/// Full protocol for one seed: build and init the model, then per epoch
/// shuffle, augment, SGD over mini-batches, evaluate, keep the best
/// checkpoint. Everything random derives from `seed`. `on_epoch` sees the
/// log after every epoch and the new best checkpoint when it changed.
RunResult train_run(const ModelSpec& spec, const TrainConfig& cfg, const Dataset& train, const Dataset& val,
                    const AugmentConfig& augment, std::uint64_t seed, const EpochCallback& on_epoch = {});

}  // namespace padchannel
