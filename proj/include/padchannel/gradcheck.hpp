#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace padchannel {

struct GradCheckResult {
  std::string name;
  double max_error = 0.0;
  int trials = 0;
};

/// Central-difference checks in f64 for every differentiable layer: conv
/// (zero, reflect, replicate; input, weight and bias), batchnorm in train
/// mode, relu, max/avg pools, linear, softmax cross-entropy and a full
/// TinyResNet. Each scalar loss is <layer output, fixed random tensor>.
std::vector<GradCheckResult> run_gradcheck_suite(int trials = 10, std::uint64_t seed = 0, double eps = 1e-5);

}  // namespace padchannel
