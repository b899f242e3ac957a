#include "padchannel/experiment.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include "json.hpp"

namespace padchannel {

namespace {

using nlohmann::json;

void only_keys(const json& obj, const std::string& where, std::initializer_list<const char*> allowed) {
  if (!obj.is_object()) throw ConfigError(where + " must be an object");
  std::set<std::string> ok(allowed.begin(), allowed.end());
  for (const auto& [key, value] : obj.items()) {
    if (!ok.count(key)) throw ConfigError("unknown key '" + key + "' in " + where);
  }
}

template <class T>
void read(const json& obj, const char* key, const std::string& where, T& out) {
  if (!obj.contains(key)) return;
  try {
    out = obj.at(key).get<T>();
  } catch (const json::exception&) {
    throw ConfigError(where + "." + key + " has the wrong type");
  }
}

template <class T>
T required(const json& obj, const char* key, const std::string& where) {
  if (!obj.contains(key)) throw ConfigError("missing required key " + where + "." + key);
  T out{};
  read(obj, key, where, out);
  return out;
}

std::array<double, 2> read_range(const json& obj, const char* key, const std::string& where,
                                 std::array<double, 2> fallback) {
  read(obj, key, where, fallback);
  return fallback;
}

std::filesystem::path resolve(const std::filesystem::path& base, const std::filesystem::path& p) {
  if (p.empty() || p.is_absolute() || base.empty()) return p;
  return base / p;
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f) throw DataError("cannot write " + tmp);
    f << text;
    if (!f) throw DataError("failed writing " + tmp);
  }
  std::filesystem::rename(tmp, path);
}

}  // namespace

void ExperimentConfig::validate() const {
  model.validate();
  if (model.num_classes < 2) throw ConfigError("num_classes must be >= 2");
  if (model.input_size < 1) throw ConfigError("input_size must be >= 1");
  train.validate();
  augment.validate();
  if (dataset.kind == DatasetConfig::Kind::border) {
    if (dataset.n < 2) throw ConfigError("dataset.n must be >= 2");
    if (dataset.size < 8) throw ConfigError("dataset.size must be >= 8");
    if (!(dataset.val_fraction > 0 && dataset.val_fraction < 1)) throw ConfigError("dataset.val_fraction must be in (0, 1)");
  } else if (dataset.train_path.empty() || dataset.val_path.empty()) {
    throw ConfigError("cifar-binary datasets need train_path and val_path");
  }
  if (out_dir.empty()) throw ConfigError("out_dir must not be empty");
}

ExperimentConfig parse_experiment_config(const std::string& json_text, const std::filesystem::path& base_dir) {
  json doc;
  try {
    doc = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  only_keys(doc, "config",
            {"arch", "pad_channel", "padding_mode", "num_classes", "input_size", "dataset", "train", "augment", "out_dir"});
  ExperimentConfig cfg;
  try {
    cfg.model.family = parse_family(required<std::string>(doc, "arch", "config"));
    std::string mode = "zero";
    read(doc, "padding_mode", "config", mode);
    cfg.model.padding_mode = parse_padding_mode(mode);
  } catch (const ConfigError&) {
    throw;
  } catch (const ArgumentError& e) {
    throw ConfigError(e.what());
  }
  read(doc, "pad_channel", "config", cfg.model.pad_channel);
  cfg.model.input_size = 32;
  read(doc, "input_size", "config", cfg.model.input_size);

  const json& ds = doc.contains("dataset") ? doc.at("dataset") : throw ConfigError("missing required key config.dataset");
  if (!ds.is_object()) throw ConfigError("config.dataset must be an object");
  const auto kind = required<std::string>(ds, "kind", "dataset");
  if (kind == "border") {
    only_keys(ds, "dataset", {"kind", "n", "size", "seed", "val_fraction"});
    cfg.dataset.kind = DatasetConfig::Kind::border;
    read(ds, "n", "dataset", cfg.dataset.n);
    read(ds, "size", "dataset", cfg.dataset.size);
    read(ds, "seed", "dataset", cfg.dataset.seed);
    read(ds, "val_fraction", "dataset", cfg.dataset.val_fraction);
    cfg.model.num_classes = 2;
  } else if (kind == "cifar-binary") {
    only_keys(ds, "dataset", {"kind", "train_path", "val_path"});
    cfg.dataset.kind = DatasetConfig::Kind::cifar_binary;
    cfg.dataset.train_path = resolve(base_dir, required<std::string>(ds, "train_path", "dataset"));
    cfg.dataset.val_path = resolve(base_dir, required<std::string>(ds, "val_path", "dataset"));
    cfg.model.num_classes = 10;
  } else {
    throw ConfigError("dataset.kind must be 'border' or 'cifar-binary', got '" + kind + "'");
  }
  read(doc, "num_classes", "config", cfg.model.num_classes);

  if (doc.contains("train")) {
    const auto& t = doc.at("train");
    only_keys(t, "train",
              {"base_lr", "momentum", "weight_decay", "epochs", "lr_step", "lr_gamma", "batch_size", "seeds",
               "stop_at_top1"});
    read(t, "base_lr", "train", cfg.train.base_lr);
    read(t, "momentum", "train", cfg.train.momentum);
    read(t, "weight_decay", "train", cfg.train.weight_decay);
    read(t, "epochs", "train", cfg.train.epochs);
    read(t, "lr_step", "train", cfg.train.lr_step);
    read(t, "lr_gamma", "train", cfg.train.lr_gamma);
    read(t, "batch_size", "train", cfg.train.batch_size);
    read(t, "seeds", "train", cfg.train.seeds);
    if (t.contains("stop_at_top1") && !t.at("stop_at_top1").is_null()) {
      cfg.train.stop_at_top1 = required<double>(t, "stop_at_top1", "train");
    }
  }

  if (doc.contains("augment")) {
    const auto& a = doc.at("augment");
    only_keys(a, "augment", {"crop_size", "scale", "ratio", "flip_prob", "resize_size", "center_crop_size", "mean", "std"});
    auto& ag = cfg.augment;
    read(a, "crop_size", "augment", ag.train_crop_size);
    const auto scale = read_range(a, "scale", "augment", {ag.scale_min, ag.scale_max});
    ag.scale_min = scale[0];
    ag.scale_max = scale[1];
    const auto ratio = read_range(a, "ratio", "augment", {ag.ratio_min, ag.ratio_max});
    ag.ratio_min = ratio[0];
    ag.ratio_max = ratio[1];
    read(a, "flip_prob", "augment", ag.flip_prob);
    read(a, "resize_size", "augment", ag.resize_size);
    read(a, "center_crop_size", "augment", ag.center_crop_size);
    if (a.contains("mean") != a.contains("std")) throw ConfigError("augment.mean and augment.std go together");
    if (a.contains("mean")) {
      read(a, "mean", "augment", ag.normalization.mean);
      read(a, "std", "augment", ag.normalization.std);
      cfg.normalization_set = true;
    }
  }

  std::string out_dir = "runs";
  read(doc, "out_dir", "config", out_dir);
  cfg.out_dir = resolve(base_dir, out_dir);
  try {
    cfg.validate();
  } catch (const ConfigError&) {
    throw;
  } catch (const IncompatiblePaddingError&) {
    throw;
  } catch (const ArgumentError& e) {
    throw ConfigError(e.what());
  }
  return cfg;
}

ExperimentConfig load_experiment_config(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw ConfigError("cannot open config " + path.string());
  std::stringstream ss;
  ss << f.rdbuf();
  return parse_experiment_config(ss.str(), path.parent_path());
}

std::string to_json(const ExperimentConfig& cfg) {
  json doc = json::object();
  doc["arch"] = to_string(cfg.model.family);
  doc["pad_channel"] = cfg.model.pad_channel;
  doc["padding_mode"] = to_string(cfg.model.padding_mode);
  doc["num_classes"] = cfg.model.num_classes;
  doc["input_size"] = cfg.model.input_size;
  json ds = json::object();
  if (cfg.dataset.kind == DatasetConfig::Kind::border) {
    ds["kind"] = "border";
    ds["n"] = cfg.dataset.n;
    ds["size"] = cfg.dataset.size;
    ds["seed"] = cfg.dataset.seed;
    ds["val_fraction"] = cfg.dataset.val_fraction;
  } else {
    ds["kind"] = "cifar-binary";
    ds["train_path"] = cfg.dataset.train_path.string();
    ds["val_path"] = cfg.dataset.val_path.string();
  }
  doc["dataset"] = ds;
  const auto& t = cfg.train;
  doc["train"] = {{"base_lr", t.base_lr},   {"momentum", t.momentum}, {"weight_decay", t.weight_decay},
                  {"epochs", t.epochs},     {"lr_step", t.lr_step},   {"lr_gamma", t.lr_gamma},
                  {"batch_size", t.batch_size}, {"seeds", t.seeds}};
  doc["train"]["stop_at_top1"] = t.stop_at_top1 ? json(*t.stop_at_top1) : json(nullptr);
  const auto& a = cfg.augment;
  doc["augment"] = {{"crop_size", a.train_crop_size},
                    {"scale", {a.scale_min, a.scale_max}},
                    {"ratio", {a.ratio_min, a.ratio_max}},
                    {"flip_prob", a.flip_prob},
                    {"resize_size", a.resize_size},
                    {"center_crop_size", a.center_crop_size}};
  if (cfg.normalization_set) {
    doc["augment"]["mean"] = a.normalization.mean;
    doc["augment"]["std"] = a.normalization.std;
  }
  doc["out_dir"] = cfg.out_dir.string();
  return doc.dump(2) + "\n";
}

ExperimentData load_experiment_data(ExperimentConfig& cfg) {
  ExperimentData data;
  if (cfg.dataset.kind == DatasetConfig::Kind::border) {
    Rng rng(cfg.dataset.seed);
    Rng gen = rng.fork(1);
    Rng order = rng.fork(2);
    auto all = gen_border_task(cfg.dataset.n, cfg.dataset.size, gen);
    std::tie(data.train, data.val) = split(all, cfg.dataset.val_fraction, order);
  } else {
    data.train = load_cifar_binary(cfg.dataset.train_path);
    data.val = load_cifar_binary(cfg.dataset.val_path);
  }
  if (data.train.empty() || data.val.empty()) throw DataError("dataset split left an empty side");
  if (!cfg.normalization_set) {
    cfg.augment.normalization = channel_stats(data.train);
    cfg.normalization_set = true;
  }
  return data;
}

std::filesystem::path run_directory(const ExperimentConfig& cfg, std::uint64_t seed) {
  return cfg.out_dir / cfg.model.id() / std::to_string(seed);
}

RunResult run_experiment(const ExperimentConfig& cfg, const ExperimentData& data, std::uint64_t seed) {
  cfg.validate();
  if (!cfg.normalization_set) throw ConfigError("normalization unresolved; load the data first");
  const auto dir = run_directory(cfg, seed);
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw DataError("cannot create " + dir.string() + ": " + ec.message());
  write_text(dir / "config.json", to_json(cfg));
  std::filesystem::remove(dir / "runlog.csv", ec);
  std::filesystem::remove(dir / "best.ckpt", ec);

  auto on_epoch = [&](const RunLog& log, const Checkpoint* improved) {
    if (improved) save_checkpoint(dir / "best.ckpt", *improved);
    write_text(dir / "runlog.csv", to_csv(log));
  };
  try {
    return train_run(cfg.model, cfg.train, data.train, data.val, cfg.augment, seed, on_epoch);
  } catch (const TrainingDivergedError& e) {
    write_text(dir / "runlog.csv", to_csv(e.log));
    throw;
  }
}

}  // namespace padchannel
