#include "padchannel/cost.hpp"

#include <cmath>
#include <cstdio>
#include <sstream>

namespace padchannel {

namespace {

std::int64_t row_macs(const LayerTrace& t, MacConvention convention) {
  const bool profiler = convention == MacConvention::profiler;
  switch (t.kind) {
    case LayerKind::conv: {
      const auto out_elems = shape_numel(t.output);
      const auto kernel = t.kernel_h * t.kernel_w * t.input[1];
      return kernel * out_elems + (profiler && t.bias ? out_elems : 0);
    }
    case LayerKind::linear:
      return t.input[1] * t.output[1] + (profiler ? t.output[1] : 0);
    case LayerKind::batchnorm:
    case LayerKind::relu:
    case LayerKind::maxpool:
    case LayerKind::avgpool:
      return profiler ? 2 * shape_numel(t.input) : 0;
    case LayerKind::attach_pad_channel:
    case LayerKind::flatten:
    case LayerKind::dropout:
    case LayerKind::add:
      return 0;
  }
  return 0;
}

std::string printf_string(const char* fmt, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, fmt, v);
  return buf;
}

}  // namespace

ModelCost analyze(const Architecture& arch, std::int64_t input_size, MacConvention convention) {
  ModelCost cost{arch.spec, input_size, {}, 0, 0};
  for (const auto& t : trace(arch, input_size)) {
    CostRow row{t.name, t.kind, t.params, row_macs(t, convention)};
    cost.total_params += row.params;
    cost.total_macs += row.macs;
    cost.rows.push_back(std::move(row));
  }
  return cost;
}

std::int64_t count_params(const Model& model) {
  std::int64_t total = 0;
  for (const auto& [name, v] : model.parameters()) total += v.value().numel();
  return total;
}

std::int64_t count_params(const Architecture& arch) {
  std::int64_t total = 0;
  for (const auto& t : trace(arch, arch.spec.input_size)) total += t.params;
  return total;
}

std::int64_t count_macs(const Architecture& arch, std::int64_t input_size, MacConvention convention) {
  return analyze(arch, input_size, convention).total_macs;
}

std::int64_t count_macs(const Model& model, std::int64_t input_size, MacConvention convention) {
  return count_macs(model.architecture(), input_size, convention);
}

double CostPair::params_pct() const {
  return 100.0 * static_cast<double>(params_delta()) / static_cast<double>(base.total_params);
}

double CostPair::macs_pct() const {
  return 100.0 * static_cast<double>(macs_delta()) / static_cast<double>(base.total_macs);
}

CostReport cost_table(const std::vector<Family>& families, std::int64_t input_size, MacConvention convention,
                      std::int64_t num_classes) {
  CostReport report{input_size, convention, {}};
  for (auto family : families) {
    ModelSpec spec;
    spec.family = family;
    spec.input_size = input_size;
    const bool tiny = family == Family::tiny_vgg || family == Family::tiny_resnet;
    spec.num_classes = num_classes > 0 ? num_classes : (tiny ? 10 : 1000);
    spec.pad_channel = false;
    auto base = analyze(describe(spec), input_size, convention);
    spec.pad_channel = true;
    auto pc = analyze(describe(spec), input_size, convention);
    report.pairs.push_back({std::move(base), std::move(pc)});
  }
  return report;
}

std::string format_millions(std::int64_t count) {
  return printf_string("%.1fM", static_cast<double>(count) / 1e6);
}

std::string format_gmacs(std::int64_t macs) { return printf_string("%.2f", static_cast<double>(macs) / 1e9); }

std::string format_pct(double pct) {
  int decimals = 3;
  while (decimals < 8 && pct != 0.0 && std::abs(pct) < 0.5 * std::pow(10.0, -decimals)) ++decimals;
  char fmt[16];
  std::snprintf(fmt, sizeof fmt, "%%+.%df%%%%", decimals);
  return printf_string(fmt, pct);
}

std::string to_csv(const CostReport& report) {
  std::ostringstream out;
  out << "family,variant,params,params_delta,params_pct,gmacs,gmacs_delta,gmacs_pct\n";
  for (const auto& p : report.pairs) {
    const auto family = to_string(p.base.spec.family);
    out << family << ",base," << p.base.total_params << ",,," << printf_string("%.9f", p.base.total_macs / 1e9)
        << ",,\n";
    out << family << ",pc," << p.pc.total_params << ',' << p.params_delta() << ','
        << printf_string("%.6f", p.params_pct()) << ',' << printf_string("%.9f", p.pc.total_macs / 1e9) << ','
        << printf_string("%.9f", p.macs_delta() / 1e9) << ',' << printf_string("%.6f", p.macs_pct()) << '\n';
  }
  return out.str();
}

std::string to_text(const CostReport& report) {
  std::ostringstream out;
  char line[160];
  out << "Parameters (input " << report.input_size << "x" << report.input_size << ")\n";
  std::snprintf(line, sizeof line, "%-12s %10s %10s %8s %10s\n", "Architecture", "w/o PC", "w/ PC", "Diff", "% Diff");
  out << line;
  for (const auto& p : report.pairs) {
    std::snprintf(line, sizeof line, "%-12s %10s %10s %+8lld %10s\n", to_string(p.base.spec.family).c_str(),
                  format_millions(p.base.total_params).c_str(), format_millions(p.pc.total_params).c_str(),
                  static_cast<long long>(p.params_delta()), format_pct(p.params_pct()).c_str());
    out << line;
  }
  out << "\nGMACs (input " << report.input_size << "x" << report.input_size << ")\n";
  std::snprintf(line, sizeof line, "%-12s %10s %10s %8s %10s\n", "Architecture", "w/o PC", "w/ PC", "Diff", "% Diff");
  out << line;
  for (const auto& p : report.pairs) {
    std::snprintf(line, sizeof line, "%-12s %10s %10s %8s %10s\n", to_string(p.base.spec.family).c_str(),
                  format_gmacs(p.base.total_macs).c_str(), format_gmacs(p.pc.total_macs).c_str(),
                  ("+" + format_gmacs(p.macs_delta())).c_str(), format_pct(p.macs_pct()).c_str());
    out << line;
  }
  return out.str();
}

}  // namespace padchannel
