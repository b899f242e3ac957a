#include "padchannel/stats.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <sstream>

namespace padchannel {

namespace {

std::string fmt(const char* spec, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, spec, v);
  return buf;
}

// Continued fraction for I_x(a, b), modified Lentz.
double beta_cf(double a, double b, double x) {
  constexpr double tiny = 1e-300;
  constexpr double tol = 1e-12;
  constexpr int max_iter = 300;
  const double qab = a + b, qap = a + 1, qam = a - 1;
  double c = 1.0;
  double d = 1.0 - qab * x / qap;
  if (std::fabs(d) < tiny) d = tiny;
  d = 1.0 / d;
  double h = d;
  for (int m = 1; m <= max_iter; ++m) {
    const double m2 = 2.0 * m;
    double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
    d = 1.0 + aa * d;
    if (std::fabs(d) < tiny) d = tiny;
    c = 1.0 + aa / c;
    if (std::fabs(c) < tiny) c = tiny;
    d = 1.0 / d;
    h *= d * c;
    aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
    d = 1.0 + aa * d;
    if (std::fabs(d) < tiny) d = tiny;
    c = 1.0 + aa / c;
    if (std::fabs(c) < tiny) c = tiny;
    d = 1.0 / d;
    const double del = d * c;
    h *= del;
    if (std::fabs(del - 1.0) < tol) return h;
  }
  throw NumericError("incomplete beta continued fraction did not converge");
}

struct Moments {
  double mean, var;
  std::size_t n;
};

Moments moments(std::span<const double> xs) {
  const double s = sample_stdev(xs);
  return {mean(xs), s * s, xs.size()};
}

TTest from_t(double diff, double se, double df) {
  TTest r;
  r.df = df;
  if (se == 0.0) {
    if (diff == 0.0) return r;
    r.t = diff > 0 ? std::numeric_limits<double>::infinity() : -std::numeric_limits<double>::infinity();
    r.p_one_sided = diff > 0 ? 0.0 : 1.0;
    return r;
  }
  r.t = diff / se;
  r.p_one_sided = student_t_cdf(-r.t, df);
  return r;
}

}  // namespace

double mean(std::span<const double> xs) {
  if (xs.empty()) throw DegenerateSampleError("mean of an empty sample");
  double s = 0.0;
  for (double x : xs) s += x;
  return s / static_cast<double>(xs.size());
}

double sample_stdev(std::span<const double> xs) {
  if (xs.size() < 2) throw DegenerateSampleError("sample stdev needs at least 2 values");
  const double m = mean(xs);
  double ss = 0.0;
  for (double x : xs) ss += (x - m) * (x - m);
  return std::sqrt(ss / static_cast<double>(xs.size() - 1));
}

double incomplete_beta(double a, double b, double x) {
  if (!(a > 0 && b > 0)) throw ArgumentError("incomplete beta needs a, b > 0");
  if (!(x >= 0 && x <= 1)) throw ArgumentError("incomplete beta needs x in [0, 1]");
  if (x == 0.0 || x == 1.0) return x;
  const double log_front =
      std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) + a * std::log(x) + b * std::log1p(-x);
  const double front = std::exp(log_front);
  // The fraction converges fast for x < (a + 1) / (a + b + 2); use symmetry otherwise.
  if (x < (a + 1.0) / (a + b + 2.0)) return front * beta_cf(a, b, x) / a;
  return 1.0 - front * beta_cf(b, a, 1.0 - x) / b;
}

double student_t_cdf(double t, double df) {
  if (!(df > 0)) throw ArgumentError("student t needs df > 0");
  if (std::isnan(t)) throw NumericError("student t CDF of NaN");
  if (t == 0.0) return 0.5;
  if (std::isinf(t)) return t > 0 ? 1.0 : 0.0;
  const double x = df / (df + t * t);
  const double tail = 0.5 * incomplete_beta(df / 2.0, 0.5, x);
  return t > 0 ? 1.0 - tail : tail;
}

TTest pooled_t_one_sided(std::span<const double> base, std::span<const double> pc) {
  const auto a = moments(base), b = moments(pc);
  const double df = static_cast<double>(a.n + b.n - 2);
  const double sp2 = ((a.n - 1) * a.var + (b.n - 1) * b.var) / df;
  const double se = std::sqrt(sp2 * (1.0 / a.n + 1.0 / b.n));
  return from_t(b.mean - a.mean, se, df);
}

TTest welch_t_one_sided(std::span<const double> base, std::span<const double> pc) {
  const auto a = moments(base), b = moments(pc);
  const double va = a.var / a.n, vb = b.var / b.n;
  const double se = std::sqrt(va + vb);
  double df = static_cast<double>(a.n + b.n - 2);
  if (se > 0) df = (va + vb) * (va + vb) / (va * va / (a.n - 1) + vb * vb / (b.n - 1));
  return from_t(b.mean - a.mean, se, df);
}

ComparisonReport summarize(const std::vector<RunGroup>& groups, bool welch) {
  std::vector<std::string> order;
  for (const auto& g : groups) {
    if (std::find(order.begin(), order.end(), g.arch) == order.end()) order.push_back(g.arch);
  }
  ComparisonReport report;
  report.welch = welch;
  for (const auto& arch : order) {
    const RunGroup* base = nullptr;
    const RunGroup* pc = nullptr;
    for (const auto& g : groups) {
      if (g.arch != arch) continue;
      auto& slot = g.variant == Variant::base ? base : pc;
      if (slot) throw ArgumentError("duplicate " + std::string(g.variant == Variant::base ? "base" : "pc") + " group for " + arch);
      slot = &g;
    }
    if (!base || !pc) throw ArgumentError("missing pair: " + arch + " has no " + (base ? "pc" : "base") + " group");
    ComparisonRow row;
    row.arch = arch;
    row.n_base = base->best_top1.size();
    row.n_pc = pc->best_top1.size();
    row.mean_base = mean(base->best_top1);
    row.mean_pc = mean(pc->best_top1);
    row.mean_diff = row.mean_pc - row.mean_base;
    row.stdev_base = sample_stdev(base->best_top1);
    row.stdev_pc = sample_stdev(pc->best_top1);
    row.stdev_diff = row.stdev_pc - row.stdev_base;
    row.test = welch ? welch_t_one_sided(base->best_top1, pc->best_top1) : pooled_t_one_sided(base->best_top1, pc->best_top1);
    report.rows.push_back(row);
  }
  return report;
}

std::string to_csv(const ComparisonReport& report) {
  std::ostringstream out;
  out << "arch,n,mean_base,mean_pc,mean_diff,stdev_base,stdev_pc,stdev_diff,t,p_one_sided\n";
  for (const auto& r : report.rows) {
    out << r.arch << ',' << r.n_base;
    if (r.n_pc != r.n_base) out << '/' << r.n_pc;
    for (double v : {r.mean_base, r.mean_pc, r.mean_diff, r.stdev_base, r.stdev_pc, r.stdev_diff, r.test.t, r.test.p_one_sided}) {
      out << ',' << fmt("%.17g", v);
    }
    out << '\n';
  }
  return out.str();
}

std::string to_text(const ComparisonReport& report) {
  std::ostringstream out;
  char line[256];
  std::snprintf(line, sizeof line, "%-12s %9s %9s %9s %9s %9s %9s %8s %8s\n", "arch", "mean", "mean-pc", "diff",
                "stdev", "stdev-pc", "diff", "t", report.welch ? "p(welch)" : "p");
  out << line;
  for (const auto& r : report.rows) {
    std::snprintf(line, sizeof line, "%-12s %9.3f %9.3f %+9.3f %9.3f %9.3f %+9.3f %8.4f %8.4f\n", r.arch.c_str(),
                  r.mean_base, r.mean_pc, r.mean_diff, r.stdev_base, r.stdev_pc, r.stdev_diff, r.test.t,
                  r.test.p_one_sided);
    out << line;
  }
  return out.str();
}

std::string to_svg(const ComparisonReport& report) {
  const double panel_w = 360, panel_h = 240, margin = 40, gap = 40;
  const double width = 2 * panel_w + gap + 2 * margin, height = panel_h + 2 * margin + 30;
  std::ostringstream out;
  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << height
      << "\" font-family=\"sans-serif\" font-size=\"11\">\n";
  out << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";

  auto panel = [&](double x0, const char* title, auto base_of, auto pc_of) {
    double lo = std::numeric_limits<double>::infinity(), hi = -lo;
    for (const auto& r : report.rows) {
      lo = std::min({lo, base_of(r), pc_of(r)});
      hi = std::max({hi, base_of(r), pc_of(r)});
    }
    // Bars start a little below the smallest value, as accuracy differences are tiny.
    double floor = lo - 0.1 * std::max(hi - lo, 1e-3);
    if (lo >= 0 && floor < 0) floor = 0;
    const double span = std::max(hi - floor, 1e-9);
    const double y_base = margin + panel_h;
    out << "<text x=\"" << x0 + panel_w / 2 << "\" y=\"" << margin - 12 << "\" text-anchor=\"middle\">" << title
        << "</text>\n";
    out << "<line x1=\"" << x0 << "\" y1=\"" << y_base << "\" x2=\"" << x0 + panel_w << "\" y2=\"" << y_base
        << "\" stroke=\"black\"/>\n";
    const double slot = panel_w / std::max<std::size_t>(report.rows.size(), 1);
    const double bar = slot * 0.35;
    for (std::size_t i = 0; i < report.rows.size(); ++i) {
      const auto& r = report.rows[i];
      const double cx = x0 + slot * (static_cast<double>(i) + 0.5);
      int k = 0;
      for (double v : {base_of(r), pc_of(r)}) {
        const double h = panel_h * (v - floor) / span;
        const double x = cx - bar + k * bar;
        out << "<rect x=\"" << x << "\" y=\"" << y_base - h << "\" width=\"" << bar * 0.95 << "\" height=\"" << h
            << "\" fill=\"" << (k == 0 ? "#7f7f7f" : "#1f77b4") << "\"><title>" << fmt("%.3f", v)
            << "</title></rect>\n";
        ++k;
      }
      out << "<text x=\"" << cx << "\" y=\"" << y_base + 14 << "\" text-anchor=\"middle\">" << r.arch << "</text>\n";
    }
    out << "<text x=\"" << x0 << "\" y=\"" << margin - 2 << "\">" << fmt("axis from %.3f", floor) << "</text>\n";
  };
  panel(margin, "mean best top-1 (%)", [](const ComparisonRow& r) { return r.mean_base; },
        [](const ComparisonRow& r) { return r.mean_pc; });
  panel(margin + panel_w + gap, "stdev best top-1 (%)", [](const ComparisonRow& r) { return r.stdev_base; },
        [](const ComparisonRow& r) { return r.stdev_pc; });
  const double ly = height - 14;
  out << "<rect x=\"" << margin << "\" y=\"" << ly - 9 << "\" width=\"10\" height=\"10\" fill=\"#7f7f7f\"/>"
      << "<text x=\"" << margin + 14 << "\" y=\"" << ly << "\">baseline</text>\n";
  out << "<rect x=\"" << margin + 90 << "\" y=\"" << ly - 9 << "\" width=\"10\" height=\"10\" fill=\"#1f77b4\"/>"
      << "<text x=\"" << margin + 104 << "\" y=\"" << ly << "\">PadChannel</text>\n";
  out << "</svg>\n";
  return out.str();
}

}  // namespace padchannel
