#include <cmath>

#include "doctest.h"
#include "gfp/baselines.hpp"
#include "gfp/fingerprint_vis.hpp"
#include "gfp/rng.hpp"
#include "gfp/synth.hpp"

using namespace gfp;

namespace {

synth::LabeledDataset points(const std::vector<std::pair<float, int>>& pts, int classes) {
  synth::LabeledDataset ds;
  for (int c = 0; c < classes; ++c) ds.classes.push_back("c" + std::to_string(c));
  for (const auto& [v, y] : pts) ds.records.push_back({Tensor({1, 1, 1}, v), y, -1});
  return ds;
}

Tensor pixel(float v) { return Tensor({1, 1, 1}, v); }

}  // namespace

TEST_SUITE("baselines") {
  TEST_CASE("knn on scalar points") {
    const auto ds = points({{0.0f, 0}, {0.1f, 0}, {0.5f, 1}, {0.6f, 1}, {0.9f, 2}}, 3);
    const auto m = baselines::knn_fit(ds);
    CHECK(baselines::knn_classify(m, pixel(0.04f), 1) == 0);
    CHECK(baselines::knn_classify(m, pixel(0.52f), 1) == 1);
    CHECK(baselines::knn_classify(m, pixel(0.85f), 1) == 2);
    // Neighbours of 0.75 with k=3: 0.6(1), 0.9(2), 0.5(1) -> class 1.
    CHECK(baselines::knn_classify(m, pixel(0.75f), 3) == 1);
    // k=2 at 0.8: one vote each for 1 (0.6, d=0.2) and 2 (0.9, d=0.1); closer mean wins.
    CHECK(baselines::knn_classify(m, pixel(0.8f), 2) == 2);
    // k=4 at 0.2: classes 0 and 1 tie 2:2, class 0 has the smaller mean distance.
    CHECK(baselines::knn_classify(m, pixel(0.2f), 4) == 0);
    CHECK_THROWS_AS(baselines::knn_classify(m, pixel(0.2f), 6), ArgumentError);
    CHECK_THROWS_AS(baselines::knn_classify(m, pixel(0.2f), 0), ArgumentError);
  }

  TEST_CASE("knn with k=1 recovers the training labels") {
    const auto srcs = synth::seeded_sources(2, 6, 0.02);
    const auto ds = synth::sample_dataset(srcs, 3, 6, 16, true);
    const auto m = baselines::knn_fit(ds);
    std::vector<Tensor> imgs;
    for (const auto& r : ds.records) imgs.push_back(r.image);
    const auto pred = baselines::knn_classify_batch(m, imgs, 1);
    CHECK(baselines::accuracy(pred, ds) == 1.0);
    for (std::size_t i = 0; i < imgs.size(); ++i) CHECK(pred[i] == baselines::knn_classify(m, imgs[i], 1));
  }

  TEST_CASE("eigenface basis is orthonormal and reconstructs in-span images") {
    const auto srcs = synth::seeded_sources(1, 2, 0.02);
    const auto ds = synth::sample_dataset(srcs, 9, 5, 16, true);
    const auto m = baselines::eigenface_fit(ds, 4);
    REQUIRE(m.basis.cols() == 4);
    const Eigen::MatrixXd gram = m.basis.transpose() * m.basis;
    CHECK((gram - Eigen::MatrixXd::Identity(4, 4)).cwiseAbs().maxCoeff() < 1e-9);

    // Ten images span at most nine centered directions.
    const auto full = baselines::eigenface_fit(ds, 50);
    CHECK(full.requested_k == 50);
    CHECK(full.basis.cols() <= 9);
    const auto rec = baselines::eigenface_reconstruct(full, ds.records[3].image);
    const auto gray = image::to_grayscale(ds.records[3].image);
    CHECK(image::max_abs_diff(rec, gray) < 1e-5);

    Tensor mean_img({16, 16, 3});
    for (int i = 0; i < 256; ++i)
      for (int c = 0; c < 3; ++c) mean_img[i * 3 + c] = static_cast<float>(m.mean[i]);
    CHECK(baselines::eigenface_project(m, mean_img).cwiseAbs().maxCoeff() < 1e-5);
  }

  TEST_CASE("eigenface classifies by nearest centroid") {
    // Two well separated brightness clusters.
    synth::LabeledDataset ds;
    ds.classes = {"dark", "bright"};
    Rng rng(3);
    for (int i = 0; i < 8; ++i)
      for (int y = 0; y < 2; ++y) {
        Tensor img({8, 8, 3});
        for (std::size_t j = 0; j < img.size(); ++j) img[j] = static_cast<float>((y ? 0.7 : 0.3) + rng.uniform(-0.05, 0.05));
        ds.records.push_back({img, y, -1});
      }
    const auto m = baselines::eigenface_fit(ds);
    CHECK(baselines::eigenface_classify(m, Tensor({8, 8, 3}, 0.25f)) == 0);
    CHECK(baselines::eigenface_classify(m, Tensor({8, 8, 3}, 0.8f)) == 1);
    CHECK_THROWS_AS(baselines::eigenface_classify(m, Tensor({8, 8, 1}, 0.8f)), ShapeError);
  }

  TEST_CASE("prnu residual and attribution") {
    CHECK(image::max_abs_diff(baselines::prnu_residual(Tensor({8, 8, 3}, 0.4f)), Tensor({8, 8, 3})) < 1e-6);

    const auto srcs = synth::seeded_sources(3, 5, 0.1);
    const auto split = synth::sample_split(srcs, 2, 30, 10, 16, false);
    const auto m = baselines::prnu_fit(split.train);
    REQUIRE(m.fingerprints.size() == 3);
    int correct = 0;
    for (const auto& r : split.test.records) correct += baselines::prnu_classify(m, r.image) == r.label;
    CHECK(correct >= 27);
    CHECK(baselines::prnu_classify(m, Tensor({16, 16, 3}, 0.5f)) == 0);

    // Class fingerprint is the mean residual of its members.
    std::vector<Tensor> res;
    for (const auto& r : split.train.records) res.push_back(baselines::prnu_residual(r.image));
    const auto m2 = baselines::prnu_fit_residuals(split.train, res, baselines::kPrnuSigma);
    for (int c = 0; c < 3; ++c) CHECK(image::max_abs_diff(m.fingerprints[c], m2.fingerprints[c]) < 1e-7);
    Tensor mean0({16, 16, 3});
    int n0 = 0;
    for (std::size_t i = 0; i < res.size(); ++i)
      if (split.train.records[i].label == 0) {
        ++n0;
        for (std::size_t j = 0; j < mean0.size(); ++j) mean0[j] += res[i][j];
      }
    for (std::size_t j = 0; j < mean0.size(); ++j) mean0[j] /= n0;
    CHECK(image::max_abs_diff(mean0, m.fingerprints[0]) < 1e-6);
  }

  TEST_CASE("model serialization round trips") {
    const auto srcs = synth::seeded_sources(1, 2, 0.02);
    const auto ds = synth::sample_dataset(srcs, 9, 5, 16, true);
    const auto e = baselines::eigenface_fit(ds, 3);
    const auto e2 = baselines::decode_eigen(baselines::encode_eigen(e), baselines::eigen_sidecar(e));
    CHECK(e2.requested_k == 3);
    CHECK((e2.basis - e.basis).cwiseAbs().maxCoeff() < 1e-6);
    CHECK(baselines::eigenface_classify(e2, ds.records[4].image) == baselines::eigenface_classify(e, ds.records[4].image));

    const auto p = baselines::prnu_fit(ds);
    const auto p2 = baselines::decode_prnu(baselines::encode_prnu(p), baselines::prnu_sidecar(p));
    CHECK(p2.sigma == p.sigma);
    REQUIRE(p2.fingerprints.size() == p.fingerprints.size());
    for (std::size_t c = 0; c < p.fingerprints.size(); ++c) CHECK(p2.fingerprints[c] == p.fingerprints[c]);
  }

  TEST_CASE("empty training sets are rejected") {
    synth::LabeledDataset empty;
    empty.classes = {"a", "b"};
    CHECK_THROWS_AS(baselines::knn_fit(empty), ArgumentError);
    CHECK_THROWS_AS(baselines::eigenface_fit(empty), ArgumentError);
    CHECK_THROWS_AS(baselines::prnu_fit(empty), ArgumentError);
  }
}
