#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "padchannel/error.hpp"

namespace padchannel {

/// Too few observations for the requested statistic.
class DegenerateSampleError : public ArgumentError {
 public:
  using ArgumentError::ArgumentError;
};

double mean(std::span<const double> xs);
/// Bessel-corrected (n - 1).
double sample_stdev(std::span<const double> xs);

/// Regularized incomplete beta I_x(a, b) by Lentz's continued fraction.
double incomplete_beta(double a, double b, double x);
/// Student t CDF with `df` degrees of freedom (df may be fractional).
double student_t_cdf(double t, double df);

struct TTest {
  double t = 0.0;
  double df = 0.0;
  /// P(T >= t) under the null; alternative "second group mean is larger".
  double p_one_sided = 0.5;
};

/// Pooled-variance two-sample t, df = n_base + n_pc - 2. With zero pooled
/// variance: equal means give t = 0, p = 0.5; otherwise t = +-inf and p is 0
/// (pc larger) or 1.
TTest pooled_t_one_sided(std::span<const double> base, std::span<const double> pc);
/// Welch's unequal-variance variant with Welch-Satterthwaite df.
TTest welch_t_one_sided(std::span<const double> base, std::span<const double> pc);

enum class Variant { base, pc };

struct RunGroup {
  std::string arch;
  Variant variant = Variant::base;
  std::vector<double> best_top1;
};

struct ComparisonRow {
  std::string arch;
  std::size_t n_base = 0;
  std::size_t n_pc = 0;
  double mean_base = 0, mean_pc = 0, mean_diff = 0;
  double stdev_base = 0, stdev_pc = 0, stdev_diff = 0;
  TTest test;
};

struct ComparisonReport {
  std::vector<ComparisonRow> rows;
  bool welch = false;
};

/// Pairs base and pc groups by arch, in order of first appearance. Throws
/// ArgumentError("missing pair") for a group without its counterpart.
ComparisonReport summarize(const std::vector<RunGroup>& groups, bool welch = false);

/// Columns: arch, n, mean_base, mean_pc, mean_diff, stdev_base, stdev_pc,
/// stdev_diff, t, p_one_sided. `n` is "5" or "5/4" when the sides differ.
std::string to_csv(const ComparisonReport& report);
std::string to_text(const ComparisonReport& report);

/// Paired bars per arch: left panel means, right panel stdevs.
std::string to_svg(const ComparisonReport& report);

}  // namespace padchannel
