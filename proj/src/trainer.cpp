#include "padchannel/trainer.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>

namespace padchannel {

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream in(line);
  while (std::getline(in, cell, ',')) out.push_back(cell);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

double parse_number(const std::string& s, const char* what) {
  try {
    std::size_t used = 0;
    const double v = std::stod(s, &used);
    if (used != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw DataError(std::string("run log: bad ") + what + " '" + s + "'");
  }
}

}  // namespace

void TrainConfig::validate() const {
  if (!(base_lr > 0)) throw ArgumentError("base_lr must be > 0");
  if (!(momentum >= 0 && momentum < 1)) throw ArgumentError("momentum must be in [0, 1)");
  if (!(weight_decay >= 0)) throw ArgumentError("weight_decay must be >= 0");
  if (epochs < 1) throw ArgumentError("epochs must be >= 1");
  if (lr_step < 1) throw ArgumentError("lr_step must be >= 1");
  if (!(lr_gamma > 0)) throw ArgumentError("lr_gamma must be > 0");
  if (batch_size < 1) throw ArgumentError("batch_size must be >= 1");
  if (seeds.empty()) throw ArgumentError("seeds must not be empty");
  if (stop_at_top1 && !(*stop_at_top1 >= 0 && *stop_at_top1 <= 100)) {
    throw ArgumentError("stop_at_top1 must be a percentage");
  }
}

double lr_at(std::int64_t epoch, const TrainConfig& cfg) {
  if (epoch < 0 || epoch >= cfg.epochs) throw ArgumentError("epoch outside [0, epochs)");
  return cfg.base_lr * std::pow(cfg.lr_gamma, static_cast<double>(epoch / cfg.lr_step));
}

void sgd_step(Tensor& w, const Tensor& g, Tensor& v, double lr, double momentum, double weight_decay) {
  if (w.shape() != g.shape() || w.shape() != v.shape()) throw ShapeError("sgd_step: shapes differ");
  if (w.dtype() != g.dtype() || w.dtype() != v.dtype()) throw ArgumentError("sgd_step: dtypes differ");
  if (!all_finite(g)) throw TrainingDivergedError("non-finite gradient", {});
  visit_dtype(w.dtype(), [&]<class T>(T) {
    auto ws = w.data<T>();
    auto gs = g.data<T>();
    auto vs = v.data<T>();
    const T m = static_cast<T>(momentum), wd = static_cast<T>(weight_decay), step = static_cast<T>(lr);
    for (std::size_t i = 0; i < ws.size(); ++i) {
      vs[i] = m * vs[i] + (gs[i] + wd * ws[i]);
      ws[i] -= step * vs[i];
    }
  });
}

std::string to_csv(const RunLog& log) {
  std::string out = "spec_id,seed,epoch,train_loss,val_top1,lr,wall_seconds\n";
  char buf[256];
  for (const auto& r : log.records) {
    std::snprintf(buf, sizeof buf, "%s,%llu,%lld,%.17g,%.17g,%.17g,%.3f\n", log.spec_id.c_str(),
                  static_cast<unsigned long long>(log.seed), static_cast<long long>(r.epoch), r.train_loss,
                  r.val_top1, r.lr, r.wall_seconds);
    out += buf;
  }
  return out;
}

RunLog parse_runlog_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line)) throw DataError("run log is empty");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != "spec_id,seed,epoch,train_loss,val_top1,lr,wall_seconds") throw DataError("run log: unexpected header");
  RunLog log;
  bool first = true;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto cells = split_csv_line(line);
    if (cells.size() != 7) throw DataError("run log: expected 7 columns");
    const auto seed = static_cast<std::uint64_t>(parse_number(cells[1], "seed"));
    if (first) {
      log.spec_id = cells[0];
      log.seed = seed;
      first = false;
    } else if (cells[0] != log.spec_id || seed != log.seed) {
      throw DataError("run log mixes runs");
    }
    EpochRecord r;
    r.epoch = static_cast<std::int64_t>(parse_number(cells[2], "epoch"));
    r.train_loss = parse_number(cells[3], "train_loss");
    r.val_top1 = parse_number(cells[4], "val_top1");
    r.lr = parse_number(cells[5], "lr");
    r.wall_seconds = parse_number(cells[6], "wall_seconds");
    if (r.epoch != static_cast<std::int64_t>(log.records.size())) throw DataError("run log: epochs not contiguous from 0");
    if (!(r.val_top1 >= 0 && r.val_top1 <= 100)) throw DataError("run log: val_top1 outside [0, 100]");
    log.records.push_back(r);
  }
  if (log.records.empty()) throw DataError("run log has no epochs");
  return log;
}

RunLog read_runlog(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw DataError("cannot open run log " + path.string());
  std::stringstream ss;
  ss << f.rdbuf();
  try {
    return parse_runlog_csv(ss.str());
  } catch (const DataError& e) {
    throw DataError(path.string() + ": " + e.what());
  }
}

std::optional<std::int64_t> best_epoch(const RunLog& log) {
  std::optional<std::int64_t> best;
  double best_value = 0;
  for (const auto& r : log.records) {
    if (!best || r.val_top1 > best_value) {
      best = r.epoch;
      best_value = r.val_top1;
    }
  }
  return best;
}

double best_top1(const RunLog& log) {
  const auto e = best_epoch(log);
  if (!e) throw ArgumentError("run log has no epochs");
  for (const auto& r : log.records) {
    if (r.epoch == *e) return r.val_top1;
  }
  return 0.0;
}

std::optional<std::int64_t> epochs_to_threshold(const RunLog& log, double threshold) {
  for (const auto& r : log.records) {
    if (r.val_top1 >= threshold) return r.epoch;
  }
  return std::nullopt;
}

std::vector<int> predict_labels(const Tensor& logits) {
  if (logits.rank() != 2) throw ShapeError("logits must be (N, K)");
  const auto n = logits.dim(0), k = logits.dim(1);
  std::vector<int> out(static_cast<std::size_t>(n));
  for (std::int64_t i = 0; i < n; ++i) {
    int arg = 0;
    double best = logits.item(i * k);
    for (std::int64_t j = 1; j < k; ++j) {
      const double v = logits.item(i * k + j);
      if (v > best) {
        best = v;
        arg = static_cast<int>(j);
      }
    }
    out[static_cast<std::size_t>(i)] = arg;
  }
  return out;
}

double top1(const Tensor& logits, std::span<const int> labels) {
  const auto pred = predict_labels(logits);
  if (pred.size() != labels.size()) throw ShapeError("top1: logits and labels differ in count");
  if (pred.empty()) throw ArgumentError("top1 of an empty batch");
  std::size_t correct = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) correct += pred[i] == labels[i];
  return 100.0 * static_cast<double>(correct) / static_cast<double>(pred.size());
}

double evaluate(Model& model, const Dataset& data, const AugmentConfig& augment, std::int64_t batch_size) {
  if (data.empty()) throw ArgumentError("evaluate: empty dataset");
  std::size_t correct = 0;
  const auto n = data.size();
  for (std::size_t start = 0; start < n; start += static_cast<std::size_t>(batch_size)) {
    const auto end = std::min(n, start + static_cast<std::size_t>(batch_size));
    std::vector<Tensor> images;
    std::vector<int> labels;
    for (std::size_t i = start; i < end; ++i) {
      images.push_back(augment_eval(data.items[i], augment));
      labels.push_back(data.items[i].label);
    }
    Tensor batch = stack(images);
    if (model.dtype() != DType::f32) batch = batch.to(model.dtype());
    const auto pred = predict_labels(model.predict(batch, Mode::eval));
    for (std::size_t i = 0; i < pred.size(); ++i) correct += pred[i] == labels[i];
  }
  return 100.0 * static_cast<double>(correct) / static_cast<double>(n);
}

RunResult train_run(const ModelSpec& spec, const TrainConfig& cfg, const Dataset& train, const Dataset& val,
                    const AugmentConfig& augment, std::uint64_t seed, const EpochCallback& on_epoch) {
  if (train.empty()) throw ArgumentError("training set is empty");
  if (val.empty()) throw ArgumentError("validation set is empty");
  spec.validate();
  cfg.validate();
  augment.validate();
  for (const auto* d : {&train, &val}) {
    for (const auto& item : d->items) {
      if (item.label < 0 || item.label >= spec.num_classes) {
        throw ArgumentError("label " + std::to_string(item.label) + " outside [0, num_classes)");
      }
    }
  }

  Rng root(seed);
  Rng init_rng = root.fork(1);
  Rng shuffle_rng = root.fork(2);
  Rng augment_rng = root.fork(3);
  Rng dropout_rng = root.fork(4);

  Model model = build_model(spec, init_rng);
  std::vector<Tensor> velocity;
  for (const auto& [name, p] : model.parameters()) velocity.emplace_back(p.shape(), p.dtype());

  RunResult result;
  result.log.spec_id = spec.id();
  result.log.seed = seed;
  bool have_best = false;

  const auto t0 = std::chrono::steady_clock::now();
  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), 0);
  const auto batch_size = static_cast<std::size_t>(cfg.batch_size);

  for (std::int64_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    const double lr = lr_at(epoch, cfg);
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[shuffle_rng.below(i)]);

    double loss_sum = 0.0;
    std::size_t seen = 0;
    for (std::size_t start = 0; start < order.size(); start += batch_size) {
      const auto end = std::min(order.size(), start + batch_size);
      // A lone trailing sample would give BatchNorm a single value per channel.
      if (end - start < 2 && start > 0) break;
      std::vector<Tensor> images;
      std::vector<int> labels;
      for (std::size_t i = start; i < end; ++i) {
        const auto& item = train.items[order[i]];
        images.push_back(augment_train(item, augment, augment_rng));
        labels.push_back(item.label);
      }
      model.zero_grad();
      Tape tape;
      Variable x(stack(images));
      Variable logits = model.forward(tape, x, Mode::train, &dropout_rng);
      Variable loss = softmax_cross_entropy(tape, logits, labels);
      const double loss_value = loss.value().item();
      if (!std::isfinite(loss_value)) {
        throw TrainingDivergedError("non-finite loss at epoch " + std::to_string(epoch), result.log);
      }
      loss_sum += loss_value * static_cast<double>(end - start);
      seen += end - start;
      backward(loss, tape);
      auto& params = model.parameters();
      for (std::size_t k = 0; k < params.size(); ++k) {
        auto& p = params[k].second;
        try {
          sgd_step(p.mutable_value(), p.grad(), velocity[k], lr, cfg.momentum, cfg.weight_decay);
        } catch (const TrainingDivergedError&) {
          throw TrainingDivergedError("non-finite gradient for " + params[k].first + " at epoch " + std::to_string(epoch),
                                      result.log);
        }
      }
    }

    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_loss = loss_sum / static_cast<double>(seen);
    rec.val_top1 = evaluate(model, val, augment);
    rec.lr = lr;
    rec.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    result.log.records.push_back(rec);

    const bool improved = !have_best || rec.val_top1 > result.best.val_top1;
    if (improved) {
      result.best = Checkpoint{model.state_dict(), epoch, rec.val_top1};
      have_best = true;
    }
    if (on_epoch) on_epoch(result.log, improved ? &result.best : nullptr);
    if (cfg.stop_at_top1 && rec.val_top1 >= *cfg.stop_at_top1) break;
  }
  return result;
}

}  // namespace padchannel
