#include <benchmark/benchmark.h>

#include "gfp/classifier.hpp"
#include "gfp/jpeg.hpp"
#include "gfp/metrics.hpp"
#include "gfp/ops.hpp"
#include "gfp/rng.hpp"
#include "gfp/synth.hpp"
#include "gfp/trainer.hpp"

using namespace gfp;

namespace {

Tensor random_tensor(Dims dims, std::uint64_t seed) {
  Tensor t(std::move(dims));
  Rng rng(seed);
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = static_cast<float>(rng.uniform(-1, 1));
  return t;
}

void BM_Conv2d(benchmark::State& state) {
  const int size = static_cast<int>(state.range(0));
  const auto x = random_tensor({8, size, size, 16}, 1);
  const auto k = random_tensor({3, 3, 16, 16}, 2);
  for (auto _ : state) benchmark::DoNotOptimize(fn::conv2d(x, k, 1, 1));
  state.SetItemsProcessed(state.iterations() * 8);
}
BENCHMARK(BM_Conv2d)->Arg(16)->Arg(32)->Unit(benchmark::kMillisecond);

void BM_TrainEpoch(benchmark::State& state) {
  const auto ds = synth::sample_dataset(synth::seeded_sources(2, 42, 0.02), 7, 32, 32, true);
  attr::ArchConfig arch;
  arch.input_size = 32;
  arch.num_classes = 3;
  attr::TrainHyper h;
  h.epochs = 1;
  for (auto _ : state) {
    attr::Classifier net(arch, 1);
    benchmark::DoNotOptimize(attr::train(net, ds, h));
  }
  state.SetItemsProcessed(state.iterations() * ds.size());
}
BENCHMARK(BM_TrainEpoch)->Unit(benchmark::kMillisecond);

void BM_FrechetFactored(benchmark::State& state) {
  const int dim = static_cast<int>(state.range(0));
  Rng rng(3);
  Eigen::MatrixXd a(100, dim), b(100, dim);
  for (int i = 0; i < 100; ++i)
    for (int j = 0; j < dim; ++j) {
      a(i, j) = rng.normal();
      b(i, j) = rng.normal(0.2, 1.1);
    }
  const auto fa = metrics::gaussian_fit(a), fb = metrics::gaussian_fit(b);
  for (auto _ : state) benchmark::DoNotOptimize(metrics::frechet_distance(fa, fb));
}
BENCHMARK(BM_FrechetFactored)->Arg(512)->Arg(3072)->Unit(benchmark::kMillisecond);

void BM_JpegRoundTrip(benchmark::State& state) {
  auto img = random_tensor({64, 64, 3}, 4);
  for (std::size_t i = 0; i < img.size(); ++i) img[i] = 0.5f + 0.5f * img[i];
  const jpeg::Options opt{static_cast<int>(state.range(0)), true};
  for (auto _ : state) benchmark::DoNotOptimize(jpeg::round_trip(img, opt));
}
BENCHMARK(BM_JpegRoundTrip)->Arg(50)->Arg(95);

}  // namespace
BENCHMARK_MAIN();
