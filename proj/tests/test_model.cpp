#include <filesystem>
#include <fstream>

#include "doctest.h"
#include "json.hpp"
#include "padchannel/checkpoint.hpp"
#include "padchannel/cost.hpp"
#include "padchannel/model.hpp"

using namespace padchannel;

namespace {

nlohmann::json manifest() {
  std::ifstream f(std::string(TEST_DATA_DIR) + "/torchvision_manifest.json");
  REQUIRE(f.good());
  return nlohmann::json::parse(f);
}

std::vector<std::vector<std::int64_t>> shapes_of(const std::vector<std::pair<std::string, Tensor>>& named,
                                                 bool running) {
  std::vector<std::vector<std::int64_t>> out;
  for (const auto& [name, t] : named) {
    const bool is_running = name.find(".running_") != std::string::npos;
    if (is_running == running) out.push_back(t.shape());
  }
  return out;
}

}  // namespace

TEST_CASE("reference architectures match torchvision parameter and buffer shapes") {
  const auto m = manifest();
  for (auto family : reference_families()) {
    for (bool pc : {false, true}) {
      ModelSpec spec{family, pc};
      Rng rng(0);
      const auto model = build_model(spec, rng);
      const auto& ref = m.at(spec.id());
      const auto state = model.state_dict();
      CHECK_MESSAGE(shapes_of(state, false) == ref.at("param_shapes").get<std::vector<std::vector<std::int64_t>>>(),
                    spec.id());
      CHECK_MESSAGE(shapes_of(state, true) == ref.at("buffer_shapes").get<std::vector<std::vector<std::int64_t>>>(),
                    spec.id());
      CHECK(count_params(model) == ref.at("total_params").get<std::int64_t>());
    }
  }
}

TEST_CASE("family names parse loosely and reject unknown names") {
  CHECK(parse_family("VGG16_BN") == Family::vgg16_bn);
  CHECK(parse_family("resnet-50") == Family::resnet50);
  CHECK(parse_family("TinyResNet") == Family::tiny_resnet);
  CHECK_THROWS_AS(parse_family("nonesuch"), ArgumentError);
  CHECK(ModelSpec{Family::resnet18, true}.id() == "resnet18-pc");
}

TEST_CASE("PadChannel with reflect or replicate padding is rejected") {
  for (auto mode : {PaddingMode::reflect, PaddingMode::replicate}) {
    ModelSpec spec{Family::tiny_resnet, true, 10, 3, 32, mode};
    CHECK_THROWS_AS(describe(spec), IncompatiblePaddingError);
    Rng rng(0);
    CHECK_THROWS_AS(build_model(spec, rng), IncompatiblePaddingError);
    spec.pad_channel = false;
    CHECK_NOTHROW(describe(spec));
  }
}

TEST_CASE("trace propagates reference geometry") {
  const auto t = trace(describe(ModelSpec{Family::resnet18}), 224);
  CHECK(t.front().output == Shape{1, 64, 112, 112});
  bool saw_pool = false;
  for (const auto& r : t) {
    if (r.kind == LayerKind::avgpool) {
      CHECK(r.input == Shape{1, 512, 7, 7});
      saw_pool = true;
    }
  }
  CHECK(saw_pool);
  CHECK(t.back().output == Shape{1, 1000});
  CHECK_THROWS_AS(trace(describe(ModelSpec{Family::vgg11_bn}), 16), ShapeError);
}

TEST_CASE("tiny models produce logits for small inputs") {
  for (auto family : {Family::tiny_vgg, Family::tiny_resnet}) {
    for (bool pc : {false, true}) {
      ModelSpec spec{family, pc, 2, 3, 32};
      Rng rng(1);
      auto model = build_model(spec, rng);
      Tensor x({3, 3, 32, 32}, DType::f32);
      CHECK(model.predict(x).shape() == Shape{3, 2});
      CHECK_THROWS_AS(model.predict(Tensor({3, 4, 32, 32}, DType::f32)), ShapeError);
    }
  }
}

TEST_CASE("initialization follows the stated rules") {
  Rng rng(2);
  auto model = build_model(ModelSpec{Family::tiny_vgg, false, 10, 3, 32}, rng);
  for (auto v : model.parameter("features.conv0.bias").value().data<float>()) CHECK(v == 0.0f);
  for (auto v : model.parameter("features.bn0.weight").value().data<float>()) CHECK(v == 1.0f);
  const auto& fc = model.parameter("classifier.fc3.weight").value();
  const double bound = 1.0 / std::sqrt(static_cast<double>(fc.dim(1)));
  for (auto v : fc.data<float>()) CHECK(std::abs(v) <= bound);
}

TEST_CASE("same seed gives the same model") {
  Rng a(3), b(3);
  CHECK(build_model(ModelSpec{Family::tiny_resnet, true, 2, 3, 32}, a).state_dict() ==
        build_model(ModelSpec{Family::tiny_resnet, true, 2, 3, 32}, b).state_dict());
}

TEST_CASE("state dict and checkpoint round-trip bit-exactly") {
  Rng rng(4);
  ModelSpec spec{Family::tiny_resnet, true, 2, 3, 32};
  auto model = build_model(spec, rng);
  // Perturb running stats so they are not the defaults.
  Tensor x({4, 3, 32, 32}, DType::f32);
  for (auto& v : x.data<float>()) v = static_cast<float>(rng.normal());
  model.predict(x, Mode::train);

  const auto path = std::filesystem::temp_directory_path() / "padchannel_test_ckpt.bin";
  save_checkpoint(path, Checkpoint{model.state_dict(), 7, 98.25});
  const auto loaded = load_checkpoint(path);
  CHECK(loaded.epoch == 7);
  CHECK(loaded.val_top1 == 98.25);
  CHECK(loaded.state == model.state_dict());

  Rng other(99);
  auto fresh = build_model(spec, other);
  fresh.load_state_dict(loaded.state);
  CHECK(fresh.predict(x) == model.predict(x));

  auto broken = loaded.state;
  broken.pop_back();
  CHECK_THROWS_AS(fresh.load_state_dict(broken), DataError);
  std::filesystem::remove(path);
}

TEST_CASE("checkpoint decoding rejects corrupt bytes") {
  NamedTensors t{{"a", Tensor::from({2}, std::vector<double>{1.5, -2})}, {"b", Tensor({1, 2, 1, 1}, DType::f32)}};
  auto bytes = encode_tensors(t);
  CHECK(bytes.substr(0, 4) == "PDCH");
  CHECK(decode_tensors(bytes) == t);
  CHECK_THROWS_AS(decode_tensors(bytes.substr(0, bytes.size() - 1)), DataError);
  CHECK_THROWS_AS(decode_tensors("XXXX" + bytes.substr(4)), DataError);
  CHECK_THROWS_AS(decode_tensors(bytes + "z"), DataError);
}

TEST_CASE("f64 conversion keeps values") {
  Rng rng(5);
  auto model = build_model(ModelSpec{Family::tiny_vgg, false, 2, 3, 32}, rng);
  auto m64 = model.converted(DType::f64);
  CHECK(m64.dtype() == DType::f64);
  CHECK(m64.parameter("classifier.fc1.weight").value().to(DType::f32) == model.parameter("classifier.fc1.weight").value());
}
