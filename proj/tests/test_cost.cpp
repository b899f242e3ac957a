#include <fstream>

#include "doctest.h"
#include "json.hpp"
#include "padchannel/cost.hpp"

using namespace padchannel;

TEST_CASE("MAC totals agree with torchvision forward-hook counts") {
  std::ifstream f(std::string(TEST_DATA_DIR) + "/torchvision_manifest.json");
  const auto m = nlohmann::json::parse(f);
  for (auto family : reference_families()) {
    for (bool pc : {false, true}) {
      ModelSpec spec{family, pc};
      const auto arch = describe(spec);
      CHECK(count_macs(arch, 224, MacConvention::kernel_only) == m.at(spec.id()).at("macs_kernel_only").get<std::int64_t>());
      CHECK(count_macs(arch, 224, MacConvention::profiler) == m.at(spec.id()).at("macs_profiler").get<std::int64_t>());
    }
  }
}

TEST_CASE("PadChannel delta is exactly the first conv's extra input channel") {
  // VGG: 64 filters x 3x3 x 224^2 positions; ResNet: 64 x 7x7 x 112^2.
  const auto report = cost_table(reference_families(), 224);
  REQUIRE(report.pairs.size() == 4);
  const std::int64_t vgg = 64LL * 9 * 224 * 224, resnet = 64LL * 49 * 112 * 112;
  const std::int64_t expected_macs[] = {vgg, vgg, resnet, resnet};
  const std::int64_t expected_params[] = {64 * 9, 64 * 9, 64 * 49, 64 * 49};
  for (std::size_t i = 0; i < 4; ++i) {
    CHECK(report.pairs[i].macs_delta() == expected_macs[i]);
    CHECK(report.pairs[i].params_delta() == expected_params[i]);
  }
  const auto kernel = cost_table(reference_families(), 224, MacConvention::kernel_only);
  for (std::size_t i = 0; i < 4; ++i) CHECK(kernel.pairs[i].macs_delta() == expected_macs[i]);
}

TEST_CASE("MAC count scales with input area for a conv-only prefix") {
  ModelSpec spec{Family::resnet18};
  const auto a = count_macs(describe(spec), 224, MacConvention::kernel_only);
  const auto b = count_macs(describe(spec), 448, MacConvention::kernel_only);
  // Everything but the final fc (512*1000) scales by 4.
  CHECK(b - 512 * 1000 == 4 * (a - 512 * 1000));
}

TEST_CASE("display formatting") {
  CHECK(format_millions(132868840) == "132.9M");
  CHECK(format_millions(11689512) == "11.7M");
  CHECK(format_gmacs(7658538984) == "7.66");
  CHECK(format_pct(0.026827) == "+0.027%");
  CHECK(format_pct(0.000434) == "+0.0004%");
  CHECK(format_pct(2.155135) == "+2.155%");
}

TEST_CASE("csv has a base and a pc row per family") {
  const auto csv = to_csv(cost_table({Family::resnet18}, 224));
  CHECK(csv.find("resnet18,base,11689512,,,") != std::string::npos);
  CHECK(csv.find("resnet18,pc,11692648,3136,") != std::string::npos);
}

TEST_CASE("per-layer rows sum to the totals") {
  const auto cost = analyze(describe(ModelSpec{Family::resnet50, true}), 224);
  std::int64_t p = 0, m = 0;
  for (const auto& r : cost.rows) {
    p += r.params;
    m += r.macs;
  }
  CHECK(p == cost.total_params);
  CHECK(m == cost.total_macs);
}
