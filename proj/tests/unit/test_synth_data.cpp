#include <cmath>
#include <set>

#include "doctest.h"
#include "gfp/dataset_io.hpp"
#include "gfp/fingerprint_vis.hpp"
#include "gfp/image.hpp"
#include "gfp/rng.hpp"
#include "gfp/synth.hpp"

using namespace gfp;

namespace {

double mean_of(const Tensor& t) {
  double s = 0.0;
  for (float v : t.vec()) s += v;
  return s / static_cast<double>(t.size());
}

}  // namespace

TEST_SUITE("synth_data") {
  TEST_CASE("base images are deterministic and in range") {
    const auto a = synth::gen_base_images(5, 8, 32), b = synth::gen_base_images(5, 8, 32);
    REQUIRE(a.size() == 8);
    for (std::size_t i = 0; i < a.size(); ++i) {
      CHECK(a[i] == b[i]);
      CHECK(a[i].dims() == Dims{32, 32, 3});
      for (float v : a[i].vec()) {
        CHECK(v >= 0.0f);
        CHECK(v <= 1.0f);
      }
    }
  }

  TEST_CASE("base image means are mostly mid-range") {
    const auto imgs = synth::gen_base_images(11, 1000, 16);
    int inside = 0;
    for (const auto& im : imgs) {
      const double m = mean_of(im);
      if (m >= 0.2 && m <= 0.8) ++inside;
    }
    CHECK(inside >= 990);
  }

  TEST_CASE("different seeds give different images") {
    const auto a = synth::gen_base_images(1, 20, 32), b = synth::gen_base_images(2, 20, 32);
    double d = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) d += image::mean_abs_diff(a[i], b[i]);
    CHECK(d / a.size() > 0.05);
  }

  TEST_CASE("zero amplitude and zero filter is the identity transform") {
    synth::SourceSpec s;
    s.seed = 3;
    s.pattern_amplitude = 0.0;
    s.filter_strength = 0.0;
    const auto t = synth::make_source(s, 32);
    const auto img = synth::gen_base_image(9, 0, 32);
    CHECK(t.apply(img) == img);
  }

  TEST_CASE("transform is deterministic and adds the scaled pattern") {
    synth::SourceSpec s;
    s.seed = 77;
    s.pattern_amplitude = 0.02;
    const auto t1 = synth::make_source(s, 32), t2 = synth::make_source(s, 32);
    Tensor mid({32, 32, 3}, 0.5f);
    const auto out = t1.apply(mid);
    CHECK(out == t2.apply(mid));
    for (std::size_t i = 0; i < out.size(); ++i)
      CHECK(out[i] == doctest::Approx(std::clamp(0.5f + 0.02f * t1.pattern()[i], 0.0f, 1.0f)).epsilon(1e-6));
  }

  TEST_CASE("patterns are zero-mean, unit-variance and nearly orthogonal") {
    std::vector<Tensor> pats;
    for (int k = 0; k < 16; ++k) pats.push_back(synth::high_pass_pattern(mix_seed(5, k), 32, 32, 3));
    for (const auto& p : pats) {
      double m = 0, v = 0;
      for (float x : p.vec()) m += x;
      m /= p.size();
      for (float x : p.vec()) v += (x - m) * (x - m);
      v /= p.size();
      CHECK(std::abs(m) < 1e-5);
      CHECK(v == doctest::Approx(1.0).epsilon(1e-4));
    }
    double worst = 0.0;
    for (std::size_t i = 0; i < pats.size(); ++i)
      for (std::size_t j = i + 1; j < pats.size(); ++j) worst = std::max(worst, std::abs(vis::corr(pats[i], pats[j])));
    CHECK(worst < 0.15);
    CHECK(std::abs(vis::corr(pats[0], pats[1])) < 0.1);
  }

  TEST_CASE("sample_dataset layout") {
    const auto srcs = synth::seeded_sources(1, 4, 0.02);
    const auto ds = synth::sample_dataset(srcs, 8, 10, 16, true);
    CHECK(ds.num_classes() == 2);
    CHECK(ds.classes[0] == "real");
    CHECK(ds.class_counts() == std::vector<int>{10, 10});
    CHECK_THROWS_AS(synth::sample_dataset(srcs, 8, 0, 16, true), ArgumentError);
  }

  TEST_CASE("train and test draw disjoint base images") {
    const auto srcs = synth::seeded_sources(3, 4, 0.02);
    const auto split = synth::sample_split(srcs, 8, 12, 5, 16, true);
    std::set<std::int64_t> train_idx;
    for (const auto& r : split.train.records) train_idx.insert(r.base_index);
    CHECK(train_idx.size() == split.train.size());
    for (const auto& r : split.test.records) CHECK(train_idx.count(r.base_index) == 0);
    CHECK(split.test.class_counts() == std::vector<int>{5, 5, 5, 5});
  }

  TEST_CASE("GFPD round trip and errors") {
    const auto srcs = synth::seeded_sources(2, 4, 0.02);
    const auto ds = synth::sample_dataset(srcs, 8, 3, 16, true);
    const auto bytes = synth::encode_dataset(ds);
    // header: magic, version, H, W, C, count, class count, names, then 9 records
    std::size_t header = 4 + 1 + 2 + 2 + 1 + 4 + 1;
    for (const auto& c : ds.classes) header += 2 + c.size();
    CHECK(bytes.size() == header + 9 * (1 + 16 * 16 * 3));
    const auto back = synth::decode_dataset(bytes);
    CHECK(back.classes == ds.classes);
    REQUIRE(back.size() == ds.size());
    for (std::size_t i = 0; i < ds.size(); ++i) {
      CHECK(back.records[i].label == ds.records[i].label);
      CHECK(image::max_abs_diff(back.records[i].image, ds.records[i].image) <= 0.5 / 255 + 1e-7);
    }
    CHECK(synth::encode_dataset(back) == bytes);

    auto bad = bytes;
    bad.resize(bad.size() - 1);
    CHECK_THROWS_AS(synth::decode_dataset(bad), FormatError);
    bad = bytes;
    bad[1] = 'X';
    CHECK_THROWS_AS(synth::decode_dataset(bad), FormatError);
  }
}
