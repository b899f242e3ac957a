#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "padchannel/model.hpp"

namespace padchannel {

/// How non-convolutional work is charged.
///
/// `profiler` matches common profiler output for these models: conv/linear kernel MACs,
/// plus one op per bias add, plus two ops per element for BatchNorm, ReLU and
/// for the input of every max/avg pool. `kernel_only` charges conv and linear
/// kernels alone (k_h*k_w*C_in*C_out*H_out*W_out and in*out).
///
/// The PadChannel delta is identical under both: only the first conv changes.
enum class MacConvention { profiler, kernel_only };

struct CostRow {
  std::string layer;
  LayerKind kind;
  std::int64_t params = 0;
  std::int64_t macs = 0;
};

struct ModelCost {
  ModelSpec spec;
  std::int64_t input_size = 0;
  std::vector<CostRow> rows;
  std::int64_t total_params = 0;
  std::int64_t total_macs = 0;
};

ModelCost analyze(const Architecture& arch, std::int64_t input_size, MacConvention convention = MacConvention::profiler);

std::int64_t count_params(const Model& model);
std::int64_t count_params(const Architecture& arch);
std::int64_t count_macs(const Architecture& arch, std::int64_t input_size,
                        MacConvention convention = MacConvention::profiler);
std::int64_t count_macs(const Model& model, std::int64_t input_size,
                        MacConvention convention = MacConvention::profiler);

/// Baseline and PadChannel costs of one family. Percentages are computed on
/// demand from the exact integer totals.
struct CostPair {
  ModelCost base;
  ModelCost pc;

  std::int64_t params_delta() const { return pc.total_params - base.total_params; }
  std::int64_t macs_delta() const { return pc.total_macs - base.total_macs; }
  double params_pct() const;
  double macs_pct() const;
};

struct CostReport {
  std::int64_t input_size = 0;
  MacConvention convention = MacConvention::profiler;
  std::vector<CostPair> pairs;
};

/// Reference families use 1000 classes, tiny ones 10, unless overridden.
CostReport cost_table(const std::vector<Family>& families, std::int64_t input_size,
                      MacConvention convention = MacConvention::profiler, std::int64_t num_classes = 0);

/// CSV columns: family, variant, params, params_delta, params_pct, gmacs,
/// gmacs_delta, gmacs_pct. Base rows leave the delta columns empty.
std::string to_csv(const CostReport& report);
/// Parameter and GMAC tables: w/o PC, w/ PC, Diff, % Diff per family.
std::string to_text(const CostReport& report);

/// "132.9M" style display (millions, one decimal).
std::string format_millions(std::int64_t count);
/// value / 1e9 with two decimals.
std::string format_gmacs(std::int64_t macs);
/// Signed percentage with three decimals, or more when three would print zero.
std::string format_pct(double pct);

}  // namespace padchannel
