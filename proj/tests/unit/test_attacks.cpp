#include <cmath>

#include "doctest.h"
#include "gfp/attacks.hpp"
#include "gfp/jpeg.hpp"
#include "gfp/rng.hpp"
#include "gfp/synth.hpp"

using namespace gfp;
using attacks::AttackKind;
using attacks::AttackSpec;

namespace {

Tensor random_image(std::uint64_t seed, int h, int w, int c) {
  Rng rng(seed);
  Tensor t({h, w, c});
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = static_cast<float>(rng.uniform());
  return t;
}

// Smooth gradient image.
Tensor ramp(int size) {
  Tensor t({size, size, 3});
  for (int y = 0; y < size; ++y)
    for (int x = 0; x < size; ++x)
      for (int c = 0; c < 3; ++c)
        t[(y * size + x) * 3 + c] = static_cast<float>(0.2 + 0.6 * (x + y + c) / (2.0 * size + 2));
  return t;
}

}  // namespace

TEST_SUITE("attacks") {
  TEST_CASE("spec text round trips and rejects bad values") {
    const auto s = AttackSpec::parse("crop:min=0.1,max=0.3,seed=3");
    CHECK(s.kind == AttackKind::Crop);
    CHECK(s.crop_min == doctest::Approx(0.1));
    CHECK(s.crop_max == doctest::Approx(0.3));
    CHECK(s.seed == 3);
    CHECK(AttackSpec::parse(s.to_string()).to_string() == s.to_string());
    CHECK(AttackSpec::parse("blur:kernels=3/5,seed=1").blur_kernels == std::vector<int>{3, 5});
    CHECK_THROWS_AS(AttackSpec::parse("melt"), ArgumentError);
    CHECK_THROWS_AS(AttackSpec::parse("noise:bogus=1"), ArgumentError);
    CHECK_THROWS_AS(AttackSpec::parse("crop:min=0.4,max=0.2"), ArgumentError);
    CHECK_THROWS_AS(AttackSpec::parse("blur:kernels=4"), ArgumentError);
  }

  TEST_CASE("blur") {
    CHECK(attacks::blur_sigma(3) == doctest::Approx(0.8));
    CHECK(attacks::blur_sigma(3) < attacks::blur_sigma(5));
    CHECK(attacks::blur_sigma(5) < attacks::blur_sigma(9));
    const auto img = random_image(1, 12, 12, 3);
    CHECK(attacks::gaussian_blur(img, 1) == img);
    const Tensor flat({12, 12, 3}, 0.37f);
    CHECK(image::max_abs_diff(attacks::gaussian_blur(flat, 7), flat) < 1e-6);
    // Blurring lowers the total variation of a noise image.
    auto tv = [](const Tensor& t) {
      double s = 0;
      for (int y = 0; y < 12; ++y)
        for (int x = 0; x + 1 < 12; ++x)
          for (int c = 0; c < 3; ++c) s += std::abs(t[(y * 12 + x + 1) * 3 + c] - t[(y * 12 + x) * 3 + c]);
      return s;
    };
    CHECK(tv(attacks::gaussian_blur(img, 5)) < 0.5 * tv(img));
  }

  TEST_CASE("noise has the requested spread") {
    Rng rng(5);
    const Tensor mid({64, 64, 3}, 0.5f);
    CHECK(attacks::add_gaussian_noise(mid, 0.0, rng) == mid);
    const auto noisy = attacks::add_gaussian_noise(mid, 10.0 / 255, rng);
    double m = 0, v = 0;
    for (float x : noisy.vec()) m += x;
    m /= noisy.size();
    for (float x : noisy.vec()) v += (x - m) * (x - m);
    const double sd = std::sqrt(v / noisy.size());
    CHECK(std::abs(m - 0.5) < 0.002);
    CHECK(sd == doctest::Approx(10.0 / 255).epsilon(0.05));
    const auto loud = attacks::add_gaussian_noise(mid, 2.0, rng);
    for (float x : loud.vec()) {
      CHECK(x >= 0.0f);
      CHECK(x <= 1.0f);
    }
  }

  TEST_CASE("crop and resize") {
    const auto img = random_image(2, 16, 16, 3);
    CHECK(image::max_abs_diff(attacks::crop_resize(img, {}), img) < 1e-6);
    const Tensor flat({16, 16, 3}, 0.6f);
    const auto out = attacks::crop_resize(flat, {2, 3, 1, 4});
    CHECK(out.dims() == Dims{16, 16, 3});
    CHECK(image::max_abs_diff(out, flat) < 1e-6);
    CHECK_THROWS_AS(attacks::crop_resize(img, {8, 8, 0, 0}), ArgumentError);
  }

  TEST_CASE("relighting gain field") {
    const attacks::RelightCoeffs zero{};
    for (double g : attacks::gain_field(5, 7, zero)) CHECK(g == 1.0);
    const auto img = random_image(3, 8, 8, 3);
    CHECK(image::max_abs_diff(attacks::relight(img, zero), img) < 1e-7);
    // gain = 1 + 0.3 x: pixel centres at x = (2j + 1) / w - 1.
    const auto field = attacks::gain_field(1, 4, {0.3, 0, 0, 0, 0});
    for (int j = 0; j < 4; ++j) CHECK(field[j] == doctest::Approx(1.0 + 0.3 * ((2.0 * j + 1) / 4 - 1)));
    for (double g : attacks::gain_field(6, 6, {3, 3, 3, 3, 3})) {
      CHECK(g >= 0.5);
      CHECK(g <= 1.5);
    }
  }

  TEST_CASE("combination is deterministic and traces every stage") {
    AttackSpec s = AttackSpec::parse("combo:seed=11");
    const auto img = random_image(4, 32, 32, 3);
    attacks::Trace t1, t2;
    Rng r1(9), r2(9);
    const auto a = attacks::apply(img, s, r1, &t1);
    const auto b = attacks::apply(img, s, r2, &t2);
    CHECK(a == b);
    REQUIRE(t1.size() == attacks::kCombinationOrder.size());
    for (std::size_t i = 0; i < t1.size(); ++i) {
      CHECK(t1[i].stage == attacks::kind_name(attacks::kCombinationOrder[i]));
      CHECK(t1[i].applied == t2[i].applied);
      CHECK(t1[i].sub_seed == t2[i].sub_seed);
    }
    s.combo_p = 0.0;
    Rng r3(9);
    CHECK(attacks::apply(img, s, r3) == img);
  }

  TEST_CASE("attacked datasets are quantized and reproducible") {
    const auto srcs = synth::seeded_sources(1, 2, 0.02);
    const auto ds = synth::sample_dataset(srcs, 3, 4, 16, true);
    const auto spec = AttackSpec::parse("noise:seed=7");
    std::vector<attacks::Trace> traces;
    const auto a = attacks::attack_dataset(ds, spec, &traces);
    const auto b = attacks::attack_dataset(ds, spec);
    REQUIRE(a.size() == ds.size());
    CHECK(traces.size() == ds.size());
    CHECK(a.classes == ds.classes);
    for (std::size_t i = 0; i < a.size(); ++i) {
      CHECK(a.records[i].image == b.records[i].image);
      CHECK(a.records[i].label == ds.records[i].label);
      for (float v : a.records[i].image.vec()) CHECK(std::abs(v * 255.0f - std::round(v * 255.0f)) < 1e-3f);
    }
  }

  TEST_CASE("jpeg tables and zigzag") {
    const auto q50 = jpeg::quant_table(false, 50);
    CHECK(q50[0] == 16);
    CHECK(q50[1] == 11);
    CHECK(q50[63] == 99);
    CHECK(jpeg::quant_table(true, 50)[0] == 17);
    for (int v : jpeg::quant_table(false, 100)) CHECK(v == 1);
    for (int v : jpeg::quant_table(true, 1)) CHECK(v <= 255);
    std::array<int, 64> seen{};
    for (int k : jpeg::kZigzag) ++seen[k];
    for (int s : seen) CHECK(s == 1);
    CHECK(jpeg::kZigzag[1] == 1);
    CHECK(jpeg::kZigzag[2] == 8);
  }

  TEST_CASE("jpeg round trip quality") {
    const auto img = ramp(32);
    const auto hi = jpeg::round_trip(img, {100, false});
    CHECK(image::psnr(img, hi) >= 40.0);
    const Tensor gray({16, 16, 3}, 128.0f / 255);
    CHECK(image::max_abs_diff(jpeg::round_trip(gray, {75, true}), gray) <= 1.0 / 255 + 1e-6);
    const auto noise = random_image(6, 32, 32, 3);
    double prev = 0.0;
    for (int q : {10, 30, 50, 75, 95}) {
      const double p = image::psnr(noise, jpeg::round_trip(noise, {q, true}));
      CHECK(p > prev);
      prev = p;
    }
    const auto one = jpeg::round_trip(Tensor({9, 13, 1}, 0.3f));
    CHECK(one.dims() == Dims{9, 13, 1});
  }

  TEST_CASE("jpeg stream framing") {
    const auto bytes = jpeg::encode(ramp(16));
    REQUIRE(bytes.size() > 4);
    CHECK(bytes[0] == 0xFF);
    CHECK(bytes[1] == 0xD8);
    CHECK(bytes[bytes.size() - 2] == 0xFF);
    CHECK(bytes[bytes.size() - 1] == 0xD9);
    CHECK(jpeg::encode(ramp(16)) == bytes);
  }
}
