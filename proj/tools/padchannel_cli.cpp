// padchannel: cost tables, training runs, run comparison and utilities.

#include <glob.h>

#include <cstdio>
#include <fstream>
#include <future>
#include <iostream>
#include <map>
#include <sstream>

#include "CLI11.hpp"
#include "padchannel/checkpoint.hpp"
#include "padchannel/cost.hpp"
#include "padchannel/experiment.hpp"
#include "padchannel/gradcheck.hpp"
#include "padchannel/stats.hpp"

namespace pc = padchannel;

namespace {

enum Exit { ok = 0, usage = 1, data = 2, numeric = 3 };

void write_file(const std::string& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw pc::DataError("cannot write " + path);
  f << text;
}

std::vector<std::string> expand_glob(const std::string& pattern) {
  glob_t g{};
  std::vector<std::string> out;
  if (::glob(pattern.c_str(), 0, nullptr, &g) == 0) {
    for (std::size_t i = 0; i < g.gl_pathc; ++i) out.emplace_back(g.gl_pathv[i]);
  }
  globfree(&g);
  return out;
}

// ---- cost

struct CostArgs {
  std::string arch;
  bool pad_channel = false;
  bool all = false;
  bool layers = false;
  std::int64_t input_size = 224;
  std::int64_t num_classes = 0;
  std::string format = "text";
  std::string convention = "profiler";
  std::string out;
};

int cmd_cost(const CostArgs& a) {
  const auto convention = a.convention == "kernel-only" ? pc::MacConvention::kernel_only : pc::MacConvention::profiler;
  if (a.all == !a.arch.empty()) throw pc::ArgumentError("give exactly one of --arch or --all");
  std::string text;
  if (a.layers) {
    if (a.all) throw pc::ArgumentError("--layers needs --arch");
    pc::ModelSpec spec;
    spec.family = pc::parse_family(a.arch);
    spec.pad_channel = a.pad_channel;
    const bool tiny = spec.family == pc::Family::tiny_vgg || spec.family == pc::Family::tiny_resnet;
    spec.num_classes = a.num_classes > 0 ? a.num_classes : (tiny ? 10 : 1000);
    const auto cost = pc::analyze(pc::describe(spec), a.input_size, convention);
    std::ostringstream o;
    o << "layer,kind,params,macs\n";
    for (const auto& r : cost.rows) o << r.layer << ',' << pc::to_string(r.kind) << ',' << r.params << ',' << r.macs << '\n';
    o << "total,," << cost.total_params << ',' << cost.total_macs << '\n';
    text = o.str();
  } else {
    const auto families = a.all ? pc::reference_families() : std::vector<pc::Family>{pc::parse_family(a.arch)};
    const auto report = pc::cost_table(families, a.input_size, convention, a.num_classes);
    text = a.format == "csv" ? pc::to_csv(report) : pc::to_text(report);
  }
  if (a.out.empty()) {
    std::cout << text;
  } else {
    write_file(a.out, text);
  }
  return ok;
}

// ---- train

struct TrainArgs {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string seeds;
  std::string out_dir;
  bool parallel = false;
};

std::vector<std::uint64_t> parse_seed_range(const std::string& s) {
  const auto dots = s.find("..");
  try {
    if (dots == std::string::npos) return {std::stoull(s)};
    const auto lo = std::stoull(s.substr(0, dots)), hi = std::stoull(s.substr(dots + 2));
    if (hi < lo) throw pc::ArgumentError("empty seed range " + s);
    std::vector<std::uint64_t> out;
    for (auto v = lo; v <= hi; ++v) out.push_back(v);
    return out;
  } catch (const std::logic_error&) {
    throw pc::ArgumentError("bad seed range '" + s + "', expected a..b");
  }
}

int cmd_train(const TrainArgs& a) {
  auto cfg = pc::load_experiment_config(a.config);
  if (!a.out_dir.empty()) cfg.out_dir = a.out_dir;
  std::vector<std::uint64_t> seeds = cfg.train.seeds;
  if (a.seed) seeds = {*a.seed};
  if (!a.seeds.empty()) seeds = parse_seed_range(a.seeds);
  auto data = pc::load_experiment_data(cfg);

  auto report = [&](std::uint64_t seed, const pc::RunResult& r) {
    const auto hit = cfg.train.stop_at_top1 ? pc::epochs_to_threshold(r.log, *cfg.train.stop_at_top1) : std::nullopt;
    std::printf("%s seed %llu: best top-1 %.3f at epoch %lld (%zu epochs)%s -> %s\n", cfg.model.id().c_str(),
                static_cast<unsigned long long>(seed), r.best.val_top1, static_cast<long long>(r.best.epoch),
                r.log.records.size(), hit ? (" threshold reached at epoch " + std::to_string(*hit)).c_str() : "",
                pc::run_directory(cfg, seed).string().c_str());
    std::fflush(stdout);
  };
  if (a.parallel && seeds.size() > 1) {
    std::vector<std::future<pc::RunResult>> runs;
    for (auto s : seeds) runs.push_back(std::async(std::launch::async, [&, s] { return pc::run_experiment(cfg, data, s); }));
    for (std::size_t i = 0; i < seeds.size(); ++i) report(seeds[i], runs[i].get());
  } else {
    for (auto s : seeds) report(s, pc::run_experiment(cfg, data, s));
  }
  return ok;
}

// ---- compare

struct CompareArgs {
  std::vector<std::string> runs_a;
  std::vector<std::string> runs_b;
  std::string out;
  std::string svg;
  bool welch = false;
};

std::string strip_pc_suffix(const std::string& id) {
  if (id.size() > 3 && id.compare(id.size() - 3, 3, "-pc") == 0) return id.substr(0, id.size() - 3);
  return id;
}

// Either a run log (one run) or a summary with columns arch,run,best_top1.
void collect(const std::string& path, pc::Variant variant, std::map<std::string, pc::RunGroup>& groups,
             std::vector<std::string>& order) {
  std::ifstream f(path);
  if (!f) throw pc::DataError("cannot open " + path);
  std::stringstream ss;
  ss << f.rdbuf();
  const auto text = ss.str();
  auto add = [&](const std::string& arch, double v) {
    auto& g = groups[arch];
    if (g.best_top1.empty() && g.arch.empty()) {
      g.arch = arch;
      g.variant = variant;
      order.push_back(arch);
    }
    g.best_top1.push_back(v);
  };
  if (text.rfind("spec_id,", 0) == 0) {
    const auto log = pc::parse_runlog_csv(text);
    add(strip_pc_suffix(log.spec_id), pc::best_top1(log));
    return;
  }
  std::istringstream in(text);
  std::string line;
  std::getline(in, line);
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != "arch,run,best_top1") throw pc::DataError(path + ": neither a run log nor an arch,run,best_top1 summary");
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto c1 = line.find(','), c2 = line.rfind(',');
    if (c1 == std::string::npos || c1 == c2) throw pc::DataError(path + ": malformed row '" + line + "'");
    try {
      add(strip_pc_suffix(line.substr(0, c1)), std::stod(line.substr(c2 + 1)));
    } catch (const std::logic_error&) {
      throw pc::DataError(path + ": bad best_top1 in '" + line + "'");
    }
  }
}

int cmd_compare(const CompareArgs& a) {
  std::vector<pc::RunGroup> groups;
  for (auto [patterns, variant] : {std::pair{&a.runs_a, pc::Variant::base}, std::pair{&a.runs_b, pc::Variant::pc}}) {
    std::map<std::string, pc::RunGroup> by_arch;
    std::vector<std::string> order;
    std::size_t files = 0;
    for (const auto& pattern : *patterns) {
      for (const auto& path : expand_glob(pattern)) {
        collect(path, variant, by_arch, order);
        ++files;
      }
    }
    if (files == 0) throw pc::ArgumentError("no run files match the " + std::string(variant == pc::Variant::base ? "--runs-a" : "--runs-b") + " pattern");
    for (const auto& arch : order) groups.push_back(by_arch[arch]);
  }
  // A single architecture per side pairs up even when the ids differ.
  std::size_t n_base = 0;
  for (const auto& g : groups) n_base += g.variant == pc::Variant::base;
  if (n_base == 1 && groups.size() == 2 && groups[0].arch != groups[1].arch) {
    groups[1].arch = groups[0].arch = groups[0].arch + " vs " + groups[1].arch;
  }
  const auto report = pc::summarize(groups, a.welch);
  std::cout << pc::to_text(report);
  if (!a.out.empty()) write_file(a.out, pc::to_csv(report));
  if (!a.svg.empty()) write_file(a.svg, pc::to_svg(report));
  return ok;
}

// ---- gradcheck

int cmd_gradcheck(int trials, std::uint64_t seed, double tolerance) {
  bool pass = true;
  for (const auto& r : pc::run_gradcheck_suite(trials, seed)) {
    const bool good = r.max_error < tolerance;
    pass = pass && good;
    std::printf("%-30s max rel error %.3e over %d trials  %s\n", r.name.c_str(), r.max_error, r.trials,
                good ? "ok" : "FAIL");
  }
  return pass ? ok : numeric;
}

// ---- gen-data

struct GenArgs {
  std::string task = "border";
  std::int64_t n = 1000;
  std::int64_t size = 32;
  std::uint64_t seed = 0;
  std::string out;
};

int cmd_gen_data(const GenArgs& a) {
  if (a.task != "border") throw pc::ArgumentError("unknown task '" + a.task + "'");
  if (a.size != pc::kCifarSide) throw pc::ArgumentError("the binary record format stores 32x32 images only");
  pc::Rng rng(a.seed);
  const auto ds = pc::gen_border_task(a.n, a.size, rng);
  pc::save_cifar_binary(ds, a.out);
  std::size_t positives = 0;
  for (const auto& item : ds.items) positives += item.label == 1;
  std::printf("wrote %lld images (%zu touching the border) to %s\n", static_cast<long long>(a.n), positives, a.out.c_str());
  return ok;
}

// ---- eval

int cmd_eval(const std::string& checkpoint_path, const std::string& config_path) {
  auto cfg = pc::load_experiment_config(config_path);
  const auto data = pc::load_experiment_data(cfg);
  const auto ckpt = pc::load_checkpoint(checkpoint_path);
  pc::Rng rng(0);
  auto model = pc::build_model(cfg.model, rng);
  model.load_state_dict(ckpt.state);
  const double top1 = pc::evaluate(model, data.val, cfg.augment);
  std::printf("%s val top-1 %.17g (recorded %.17g at epoch %lld)%s\n", cfg.model.id().c_str(), top1, ckpt.val_top1,
              static_cast<long long>(ckpt.epoch), top1 == ckpt.val_top1 ? "" : "  MISMATCH");
  return top1 == ckpt.val_top1 ? ok : numeric;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"PadChannel experiments: cost tables, training, comparison"};
  app.require_subcommand(1);

  CostArgs cost;
  auto* c = app.add_subcommand("cost", "Parameter and MAC counts, baseline vs PadChannel");
  c->add_option("--arch", cost.arch, "vgg11-bn | vgg16-bn | resnet18 | resnet50 | tinyvgg | tinyresnet");
  c->add_flag("--all", cost.all, "All four reference architectures");
  c->add_flag("--pad-channel", cost.pad_channel, "With --layers: break down the PadChannel variant");
  c->add_flag("--layers", cost.layers, "Per-layer CSV for one variant");
  c->add_option("--input-size", cost.input_size, "Square input side")->check(CLI::PositiveNumber);
  c->add_option("--num-classes", cost.num_classes, "Classifier width (default 1000, tiny nets 10)");
  c->add_option("--format", cost.format, "csv | text")->check(CLI::IsMember({"csv", "text"}));
  c->add_option("--convention", cost.convention, "profiler | kernel-only")
      ->check(CLI::IsMember({"profiler", "kernel-only"}));
  c->add_option("--out", cost.out, "Write to a file instead of stdout");

  TrainArgs train;
  auto* t = app.add_subcommand("train", "Train one config for one or more seeds");
  t->add_option("--config", train.config, "Experiment JSON")->required();
  t->add_option("--seed", train.seed, "Single seed");
  t->add_option("--seeds", train.seeds, "Seed range a..b");
  t->add_option("--out-dir", train.out_dir, "Override out_dir");
  t->add_flag("--parallel", train.parallel, "Run seeds concurrently");

  CompareArgs cmp;
  auto* m = app.add_subcommand("compare", "Means, stdevs and one-sided t-test, baseline (a) vs PadChannel (b)");
  m->add_option("--runs-a", cmp.runs_a, "Glob(s) of baseline run logs or arch,run,best_top1 CSVs")->required();
  m->add_option("--runs-b", cmp.runs_b, "Glob(s) of PadChannel run logs or summaries")->required();
  m->add_option("--out", cmp.out, "Report CSV");
  m->add_option("--svg", cmp.svg, "Bar chart SVG");
  m->add_flag("--welch", cmp.welch, "Welch test instead of pooled variance");

  int gc_trials = 10;
  std::uint64_t gc_seed = 0;
  double gc_tol = 1e-4;
  auto* g = app.add_subcommand("gradcheck", "Finite-difference gradient checks of every layer");
  g->add_option("--trials", gc_trials, "Random trials per layer")->check(CLI::PositiveNumber);
  g->add_option("--seed", gc_seed, "Seed");
  g->add_option("--tolerance", gc_tol, "Max relative error");

  GenArgs gen;
  auto* d = app.add_subcommand("gen-data", "Write a synthetic dataset in the CIFAR-10 binary format");
  d->add_option("--task", gen.task, "border");
  d->add_option("--n", gen.n, "Number of images")->check(CLI::PositiveNumber);
  d->add_option("--size", gen.size, "Image side (32)");
  d->add_option("--seed", gen.seed, "Seed");
  d->add_option("--out", gen.out, "Output file")->required();

  std::string eval_ckpt, eval_config;
  auto* e = app.add_subcommand("eval", "Evaluate a checkpoint on the config's validation set");
  e->add_option("--checkpoint", eval_ckpt, "best.ckpt")->required();
  e->add_option("--config", eval_config, "Experiment JSON (a run's config.json works)")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& err) {
    const int code = app.exit(err);
    return code == 0 ? ok : usage;
  }

  try {
    if (c->parsed()) return cmd_cost(cost);
    if (t->parsed()) return cmd_train(train);
    if (m->parsed()) return cmd_compare(cmp);
    if (g->parsed()) return cmd_gradcheck(gc_trials, gc_seed, gc_tol);
    if (d->parsed()) return cmd_gen_data(gen);
    if (e->parsed()) return cmd_eval(eval_ckpt, eval_config);
  } catch (const pc::DataError& err) {
    std::cerr << "data error: " << err.what() << '\n';
    return data;
  } catch (const pc::NumericError& err) {
    std::cerr << "numeric error: " << err.what() << '\n';
    return numeric;
  } catch (const pc::Error& err) {
    std::cerr << "error: " << err.what() << '\n';
    return usage;
  } catch (const std::filesystem::filesystem_error& err) {
    std::cerr << "data error: " << err.what() << '\n';
    return data;
  }
  return usage;
}
