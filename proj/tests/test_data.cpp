#include <filesystem>
#include <fstream>

#include "doctest.h"
#include "json.hpp"
#include "padchannel/data.hpp"

using namespace padchannel;

namespace {

std::filesystem::path temp_file(const char* name) { return std::filesystem::temp_directory_path() / name; }

// Locates the all-ones 3x3 patch by scanning channel 0.
std::pair<std::int64_t, std::int64_t> find_patch(const Tensor& img) {
  const auto s = img.dim(1);
  for (std::int64_t r = 0; r + 2 < s; ++r)
    for (std::int64_t c = 0; c + 2 < s; ++c) {
      bool all = true;
      for (std::int64_t i = 0; i < 9 && all; ++i) all = img.item((r + i / 3) * s + c + i % 3) == 1.0;
      if (all) return {r, c};
    }
  return {-1, -1};
}

}  // namespace

TEST_CASE("border task labels follow the ring rule") {
  Rng rng(1);
  const auto ds = gen_border_task(300, 12, rng);
  CHECK(ds.num_classes == 2);
  for (const auto& item : ds.items) {
    CHECK(item.pixels.shape() == Shape{3, 12, 12});
    const auto [r, c] = find_patch(item.pixels);
    REQUIRE(r >= 0);
    const bool near = r < 2 || c < 2 || r + 2 >= 10 || c + 2 >= 10;
    CHECK(item.label == (near ? 1 : 0));
    for (auto v : item.pixels.data<float>()) CHECK((v == 1.0f || (v >= 0.0f && v <= 0.2f + 1e-7f)));
  }
  CHECK_THROWS_AS(gen_border_task(10, 7, rng), ArgumentError);
}

TEST_CASE("border task class balance matches the anchor distribution") {
  Rng rng(2);
  const auto ds = gen_border_task(20000, 32, rng);
  double zeros = 0;
  for (const auto& item : ds.items) zeros += item.label == 0;
  // 30 anchor positions per axis, 26 of them clear of the ring.
  const double expect = (26.0 / 30.0) * (26.0 / 30.0);
  CHECK(zeros / 20000 == doctest::Approx(expect).epsilon(0.02));
}

TEST_CASE("border generation is deterministic per seed") {
  Rng a(7), b(7), c(8);
  CHECK(encode_cifar_binary(gen_border_task(50, 32, a)) == encode_cifar_binary(gen_border_task(50, 32, b)));
  Rng a2(7);
  CHECK(encode_cifar_binary(gen_border_task(50, 32, a2)) != encode_cifar_binary(gen_border_task(50, 32, c)));
}

TEST_CASE("CIFAR binary round trip is exact for quantized pixels") {
  Rng rng(3);
  const auto ds = gen_border_task(20, 32, rng);
  const auto path = temp_file("padchannel_cifar.bin");
  save_cifar_binary(ds, path);
  CHECK(std::filesystem::file_size(path) == 20 * 3073);
  const auto back = load_cifar_binary(path);
  REQUIRE(back.size() == 20);
  for (std::size_t i = 0; i < 20; ++i) {
    CHECK(back.items[i].label == ds.items[i].label);
    CHECK(back.items[i].pixels == ds.items[i].pixels);
  }
  std::filesystem::remove(path);
}

TEST_CASE("CIFAR loader rejects truncated files and bad labels") {
  const auto path = temp_file("padchannel_bad.bin");
  {
    std::ofstream f(path, std::ios::binary);
    f << std::string(3072, '\0');
  }
  CHECK_THROWS_AS(load_cifar_binary(path), DataError);
  {
    std::ofstream f(path, std::ios::binary);
    f << std::string(1, '\x0c') << std::string(3072, '\0');
  }
  CHECK_THROWS_AS(load_cifar_binary(path), DataError);
  CHECK_THROWS_AS(load_cifar_binary(temp_file("padchannel_missing.bin")), DataError);
  std::filesystem::remove(path);
}

TEST_CASE("bilinear resize matches the half-pixel reference values") {
  std::ifstream f(std::string(TEST_DATA_DIR) + "/bilinear_oracle.json");
  const auto j = nlohmann::json::parse(f);
  const auto in = j.at("input").get<std::vector<double>>();
  std::vector<float> px(in.begin(), in.end());
  const auto img = Tensor::from({3, 4, 5}, px);
  for (auto [h, w] : {std::pair{6, 7}, std::pair{3, 2}, std::pair{8, 8}}) {
    const auto expect = j.at(std::to_string(h) + "x" + std::to_string(w)).get<std::vector<double>>();
    const auto got = resize_bilinear(img, h, w);
    REQUIRE(got.numel() == static_cast<std::int64_t>(expect.size()));
    for (std::size_t i = 0; i < expect.size(); ++i) CHECK(got.item(static_cast<std::int64_t>(i)) == doctest::Approx(expect[i]).epsilon(1e-6));
  }
}

TEST_CASE("crop, flip and normalize") {
  auto img = Tensor::from({3, 2, 3}, std::vector<float>{0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 12, 13, 14, 15, 16, 17});
  const auto fl = hflip(img);
  CHECK(fl.item(0) == 2);
  CHECK(fl.item(3) == 5);
  CHECK(hflip(fl) == img);
  const auto cr = crop(img, 1, 1, 1, 2);
  CHECK(cr.shape() == Shape{3, 1, 2});
  CHECK(cr.item(0) == 4);
  CHECK(cr.item(2) == 10);
  CHECK_THROWS_AS(crop(img, 1, 2, 2, 2), ArgumentError);
  Normalization n{{1, 2, 3}, {2, 4, 0.5}};
  const auto z = normalize(img, n);
  CHECK(z.item(0) == doctest::Approx(-0.5));
  CHECK(z.item(6) == doctest::Approx((6 - 2) / 4.0));
  CHECK(z.item(12) == doctest::Approx((12 - 3) / 0.5));
}

TEST_CASE("augmentations keep geometry and the identity settings are exact") {
  Rng rng(4);
  const auto ds = gen_border_task(5, 32, rng);
  AugmentConfig cfg;
  cfg.train_crop_size = 24;
  for (const auto& item : ds.items) CHECK(augment_train(item, cfg, rng).shape() == Shape{3, 24, 24});
  CHECK(augment_eval(ds.items[0], cfg).shape() == Shape{3, 32, 32});

  AugmentConfig ident;
  ident.scale_min = ident.scale_max = 1.0;
  ident.ratio_min = ident.ratio_max = 1.0;
  ident.flip_prob = 0.0;
  ident.resize_size = 32;
  for (const auto& item : ds.items) {
    CHECK(augment_train(item, ident, rng) == item.pixels);
    CHECK(augment_eval(item, ident) == item.pixels);
  }
  AugmentConfig bad;
  bad.center_crop_size = 40;
  CHECK_THROWS_AS(bad.validate(), ArgumentError);
}

TEST_CASE("channel stats of a known dataset") {
  Dataset d;
  d.items.push_back({fill({3, 2, 2}, 0.0f), 0});
  d.items.push_back({fill({3, 2, 2}, 1.0f), 1});
  const auto s = channel_stats(d);
  for (int c = 0; c < 3; ++c) {
    CHECK(s.mean[c] == doctest::Approx(0.5));
    CHECK(s.std[c] == doctest::Approx(0.5));
  }
}

TEST_CASE("split is a seeded partition") {
  Rng g(5);
  const auto ds = gen_border_task(100, 8, g);
  Rng a(1), b(1);
  const auto [tr, va] = split(ds, 0.2, a);
  const auto [tr2, va2] = split(ds, 0.2, b);
  CHECK(tr.size() == 80);
  CHECK(va.size() == 20);
  for (std::size_t i = 0; i < va.size(); ++i) CHECK(va.items[i].pixels == va2.items[i].pixels);
}

TEST_CASE("stack builds a batch") {
  const auto b = stack({fill({3, 2, 2}, 1.0f), fill({3, 2, 2}, 2.0f)});
  CHECK(b.shape() == Shape{2, 3, 2, 2});
  CHECK(b.item(12) == 2.0);
  CHECK_THROWS_AS(stack({fill({3, 2, 2}, 1.0f), fill({3, 3, 2}, 1.0f)}), ShapeError);
}
